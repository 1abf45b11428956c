//! First-order change of pairwise visual cosine similarity under one raw
//! feature gradient step of the cross-modal loss.
//!
//! Features are treated as free parameters and updated without
//! renormalization, so the predicted change differs from the exact one by a
//! term quadratic in the learning rate.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{axpy, check_dim, dot, softmax_into, Matrix};
use crate::losses::check_labels;

/// Per-sample gradient of `-log softmax(f·Tᵀ/τ)[label]` with respect to `f`:
/// `(Σ_k p_k t_k − t_label) / τ`.
pub fn grad_vlm_wrt_feature(f: &[f64], text: &Matrix, label: usize, tau: f64) -> Result<Vec<f64>> {
    check_dim(text.cols(), f.len())?;
    check_labels(&[label], text.rows())?;
    if !(tau > 0.0) {
        return Err(crate::Error::NonPositiveTemperature(tau));
    }
    let probs = probabilities(f, text, tau);
    // Σ_{k≠label} p_k (t_k − t_label): same value, no cancellation when p_label ≈ 1.
    let mut g = vec![0.0; f.len()];
    let t_label = text.row(label);
    for (k, &p) in probs.iter().enumerate() {
        if k != label {
            for ((gj, &tk), &ty) in g.iter_mut().zip(text.row(k)).zip(t_label) {
                *gj += p * (tk - ty);
            }
        }
    }
    g.iter_mut().for_each(|v| *v /= tau);
    Ok(g)
}

fn probabilities(f: &[f64], text: &Matrix, tau: f64) -> Vec<f64> {
    let logits = text.matvec(f);
    let mut p = vec![0.0; logits.len()];
    softmax_into(&logits, tau, &mut p);
    p
}

/// One sample of a pair: its feature, class label and probability row.
#[derive(Debug, Clone, Copy)]
pub struct PairSide<'a> {
    pub feature: &'a [f64],
    pub label: usize,
    pub probs: &'a [f64],
}

/// `(η/τ)(f_i·t_k − Σ_j p_kj f_i·t_j + f_k·t_i − Σ_j p_ij f_k·t_j)`
pub fn predicted_delta_cos(
    i: PairSide<'_>,
    k: PairSide<'_>,
    text: &Matrix,
    eta: f64,
    tau: f64,
) -> f64 {
    let cross = |f: &[f64], label: usize, probs: &[f64]| {
        let target = dot(f, text.row(label));
        let expected: f64 = probs
            .iter()
            .enumerate()
            .map(|(j, p)| p * dot(f, text.row(j)))
            .sum();
        target - expected
    };
    let term = cross(i.feature, k.label, k.probs) + cross(k.feature, i.label, i.probs);
    (eta / tau) * term
}

/// Applies `f ← f − η ∇L` to both features (no renormalization) and returns
/// `f_i'·f_k' − f_i·f_k`.
pub fn delta_cos_actual(
    fi: &[f64],
    fk: &[f64],
    text: &Matrix,
    labels: (usize, usize),
    eta: f64,
    tau: f64,
) -> Result<f64> {
    let gi = grad_vlm_wrt_feature(fi, text, labels.0, tau)?;
    let gk = grad_vlm_wrt_feature(fk, text, labels.1, tau)?;
    let mut ni = fi.to_vec();
    let mut nk = fk.to_vec();
    axpy(-eta, &gi, &mut ni);
    axpy(-eta, &gk, &mut nk);
    Ok(dot(&ni, &nk) - dot(fi, fk))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub i: usize,
    pub k: usize,
    pub same_class: bool,
    pub delta_cos_actual: f64,
    pub delta_cos_predicted: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub pairs: Vec<PairRecord>,
    pub eta: f64,
    pub tau: f64,
}

impl TheoremReport {
    pub fn max_residual(&self) -> f64 {
        self.pairs.iter().map(|p| p.residual).fold(0.0, f64::max)
    }

    /// Fraction of different-class pairs whose similarity decreased.
    pub fn diff_class_negative_fraction(&self) -> Option<f64> {
        let diff: Vec<_> = self.pairs.iter().filter(|p| !p.same_class).collect();
        if diff.is_empty() {
            return None;
        }
        let neg = diff.iter().filter(|p| p.delta_cos_actual < 0.0).count();
        Some(neg as f64 / diff.len() as f64)
    }
}

/// Actual and predicted cosine changes for every pair `i < k`.
pub fn theorem_report(
    features: &Matrix,
    text: &Matrix,
    labels: &[usize],
    eta: f64,
    tau: f64,
) -> Result<TheoremReport> {
    check_dim(features.rows(), labels.len())?;
    check_dim(text.cols(), features.cols())?;
    check_labels(labels, text.rows())?;
    let probs: Vec<Vec<f64>> = features
        .iter_rows()
        .map(|f| probabilities(f, text, tau))
        .collect();
    let mut pairs = Vec::new();
    for i in 0..features.rows() {
        for k in (i + 1)..features.rows() {
            let a = PairSide {
                feature: features.row(i),
                label: labels[i],
                probs: &probs[i],
            };
            let b = PairSide {
                feature: features.row(k),
                label: labels[k],
                probs: &probs[k],
            };
            let predicted = predicted_delta_cos(a, b, text, eta, tau);
            let actual = delta_cos_actual(a.feature, b.feature, text, (a.label, b.label), eta, tau)?;
            pairs.push(PairRecord {
                i,
                k,
                same_class: labels[i] == labels[k],
                delta_cos_actual: actual,
                delta_cos_predicted: predicted,
                residual: (actual - predicted).abs(),
            });
        }
    }
    Ok(TheoremReport { pairs, eta, tau })
}

/// `r(η/2) / r(η)` for the pair `(i, k)` where `r` is the first-order
/// residual, or `None` if `r(η)` is too close to rounding noise to measure.
pub fn residual_ratio(
    features: &Matrix,
    text: &Matrix,
    labels: &[usize],
    pair: (usize, usize),
    eta: f64,
    tau: f64,
) -> Result<Option<f64>> {
    let (i, k) = pair;
    let residual = |eta: f64| -> Result<f64> {
        let pi = probabilities(features.row(i), text, tau);
        let pk = probabilities(features.row(k), text, tau);
        let predicted = predicted_delta_cos(
            PairSide {
                feature: features.row(i),
                label: labels[i],
                probs: &pi,
            },
            PairSide {
                feature: features.row(k),
                label: labels[k],
                probs: &pk,
            },
            text,
            eta,
            tau,
        );
        let actual = delta_cos_actual(features.row(i), features.row(k), text, (labels[i], labels[k]), eta, tau)?;
        Ok((actual - predicted).abs())
    };
    let full = residual(eta)?;
    if !(full > 1e3 * f64::EPSILON) {
        return Ok(None);
    }
    Ok(Some(residual(eta / 2.0)? / full))
}
