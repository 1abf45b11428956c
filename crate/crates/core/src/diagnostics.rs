//! Modality-gap shifting, cosine-change traces and the visual-learning probe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{term_loss_and_grad, EpisodeInputs, LossTerm};
use crate::linalg::{check_dim, gram_matrix, l2_normalize, Matrix};
use crate::losses::{accuracy, vlm_loss, LossConfig};
use crate::train::{mean_delta_cos, Snapshot};

/// `mean(F) − mean(T)` over paired rows.
pub fn gap_vector(features: &Matrix, text_expanded: &Matrix) -> Result<Vec<f64>> {
    check_dim(features.rows(), text_expanded.rows())?;
    check_dim(features.cols(), text_expanded.cols())?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::InsufficientSamples {
            needed: 1,
            available: 0,
        });
    }
    let mut gap = vec![0.0; features.cols()];
    for (f, t) in features.iter_rows().zip(text_expanded.iter_rows()) {
        for ((g, a), b) in gap.iter_mut().zip(f).zip(t) {
            *g += a - b;
        }
    }
    gap.iter_mut().for_each(|g| *g /= n as f64);
    Ok(gap)
}

fn shifted(m: &Matrix, direction: &[f64], step: f64) -> Result<Matrix> {
    check_dim(m.cols(), direction.len())?;
    let rows = m
        .iter_rows()
        .map(|r| {
            let moved: Vec<f64> = r.iter().zip(direction).map(|(x, d)| x + step * d).collect();
            l2_normalize(&moved)
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, m.cols()));
    }
    Matrix::from_rows(&rows)
}

/// Moves visual rows by `−αΔ` and text rows by `+αΔ`, then renormalizes.
pub fn gap_shift(features: &Matrix, text_expanded: &Matrix, alpha: f64) -> Result<(Matrix, Matrix)> {
    let gap = gap_vector(features, text_expanded)?;
    Ok((shifted(features, &gap, -alpha)?, shifted(text_expanded, &gap, alpha)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub alphas: Vec<f64>,
    pub loss: Vec<f64>,
    /// Accuracy in percent.
    pub acc: Vec<f64>,
    pub gap_norm: f64,
    /// `loss(0) − min_α loss(α)`
    pub gap: f64,
    pub alpha_star: f64,
}

impl GapReport {
    fn zero_index(&self) -> usize {
        self.alphas.iter().position(|&a| a == 0.0).expect("grid contains 0")
    }

    pub fn loss_at_zero(&self) -> f64 {
        self.loss[self.zero_index()]
    }

    pub fn acc_at_zero(&self) -> f64 {
        self.acc[self.zero_index()]
    }

    pub fn acc_at_star(&self) -> f64 {
        let i = self.alphas.iter().position(|&a| a == self.alpha_star).expect("α* on grid");
        self.acc[i]
    }

    /// Unshifted accuracy and the Gap metric, e.g. `95.80 / 0.014`.
    pub fn summary_line(&self) -> String {
        format_acc_gap(self.acc_at_zero(), self.gap)
    }
}

pub fn format_acc_gap(acc: f64, gap: f64) -> String {
    format!("{acc:.2} / {gap:.3}")
}

/// Plot-ready text: one `x y` pair per line.
pub fn two_column(xs: &[f64], ys: &[f64]) -> String {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| format!("{x} {y}\n"))
        .collect()
}

/// `−1.0, −0.95, …, 1.5`
pub fn default_alpha_grid() -> Vec<f64> {
    (-20..=30).map(|k| k as f64 / 20.0).collect()
}

/// Evaluates the cross-modal loss and accuracy while shifting both
/// modalities along the gap vector. `Δ` is measured against per-sample text
/// rows; classification uses the class text rows, each shifted once.
pub fn gap_sweep(
    features: &Matrix,
    labels: &[usize],
    text: &Matrix,
    alphas: &[f64],
    tau: f64,
) -> Result<GapReport> {
    if !alphas.contains(&0.0) {
        return Err(Error::InvalidConfig("gap sweep grid must contain 0".into()));
    }
    crate::losses::check_labels(labels, text.rows())?;
    let gap = gap_vector(features, &text.select_rows(labels))?;
    let gap_norm = crate::linalg::norm(&gap);
    let evals = alphas
        .iter()
        .map(|&alpha| {
            let f = shifted(features, &gap, -alpha)?;
            let t = shifted(text, &gap, alpha)?;
            let (loss, _) = vlm_loss(&f, &t, labels, tau)?;
            Ok((loss, 100.0 * accuracy(&f, &t, labels)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss, acc): (Vec<f64>, Vec<f64>) = evals.into_iter().unzip();
    if let Some(bad) = loss.iter().find(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLoss(*bad));
    }
    let min = loss.iter().copied().fold(f64::INFINITY, f64::min);
    // ties within 1e-12 go to the smallest shift
    let star = (0..alphas.len())
        .filter(|&i| loss[i] - min <= 1e-12)
        .min_by(|&a, &b| alphas[a].abs().total_cmp(&alphas[b].abs()))
        .expect("non-empty grid");
    let zero = alphas.iter().position(|&a| a == 0.0).expect("checked above");
    Ok(GapReport {
        alphas: alphas.to_vec(),
        gap: loss[zero] - min,
        alpha_star: alphas[star],
        loss,
        acc,
        gap_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaCosPoint {
    /// Epoch of the later snapshot of the pair.
    pub epoch: usize,
    pub same: Option<f64>,
    pub diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCosTrace {
    pub points: Vec<DeltaCosPoint>,
    /// False when no two support samples share a class (one shot).
    pub has_same_class_pairs: bool,
}

impl DeltaCosTrace {
    /// Fraction of points where different-class similarity decreased.
    pub fn negative_diff_fraction(&self) -> Option<f64> {
        let diffs: Vec<f64> = self.points.iter().filter_map(|p| p.diff).collect();
        (!diffs.is_empty()).then(|| diffs.iter().filter(|&&d| d < 0.0).count() as f64 / diffs.len() as f64)
    }
}

/// Pairwise cosine changes of the adapted support features between
/// consecutive snapshots.
pub fn delta_cos_trace(snapshots: &[Snapshot], support: &Matrix, labels: &[usize]) -> Result<DeltaCosTrace> {
    let adapted = snapshots
        .iter()
        .map(|s| s.adapter.apply_visual(support))
        .collect::<Result<Vec<_>>>()?;
    let points = snapshots
        .windows(2)
        .zip(adapted.windows(2))
        .map(|(s, f)| {
            let (same, diff) = mean_delta_cos(&f[0], &f[1], labels);
            DeltaCosPoint {
                epoch: s[1].epoch,
                same,
                diff,
            }
        })
        .collect();
    let has_same_class_pairs = (0..labels.len()).any(|i| labels[i + 1..].contains(&labels[i]));
    Ok(DeltaCosTrace {
        points,
        has_same_class_pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub epoch: usize,
    pub vlm_before: f64,
    pub vlm_after: f64,
    /// `vlm_after − vlm_before`
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeReport {
    pub records: Vec<ProbeRecord>,
}

impl ProbeReport {
    /// Fraction of records in the first half of the snapshots whose
    /// cross-modal loss dropped.
    pub fn early_drop_fraction(&self) -> Option<f64> {
        let half = self.records.len().div_ceil(2);
        let early = &self.records[..half];
        (!early.is_empty())
            .then(|| early.iter().filter(|r| r.delta < 0.0).count() as f64 / early.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub tau: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            lr: 1e-2,
            tau: 0.01,
        }
    }
}

/// From every snapshot, takes `steps` gradient steps on the visual loss with
/// class-prototype weights and records the change of the cross-modal loss on
/// the support set. Snapshots are not modified.
pub fn visual_probe(
    snapshots: &[Snapshot],
    support: &Matrix,
    labels: &[usize],
    text: &Matrix,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let anchor = gram_matrix(support);
    let text_gram = gram_matrix(text);
    let inputs = EpisodeInputs {
        support,
        labels,
        text,
        anchor_gram: &anchor,
        text_gram: &text_gram,
    };
    let loss_cfg = LossConfig {
        tau: cfg.tau,
        ..LossConfig::plain()
    };
    let vlm = |a: &crate::adapter::LowRankAdapter| -> Result<f64> {
        let (l, _) = vlm_loss(&a.apply_visual(support)?, &a.apply_text(text)?, labels, cfg.tau)?;
        Ok(l)
    };
    let records = snapshots
        .par_iter()
        .map(|snap| {
            let mut probe = snap.adapter.clone();
            let before = vlm(&probe)?;
            if cfg.lr != 0.0 {
                for _ in 0..cfg.steps {
                    let (_, g) = term_loss_and_grad(&probe, &inputs, LossTerm::VisualPrototype, &loss_cfg)?;
                    probe.sgd_step(&g, cfg.lr)?;
                }
            }
            let after = vlm(&probe)?;
            Ok(ProbeRecord {
                epoch: snap.epoch,
                vlm_before: before,
                vlm_after: after,
                delta: after - before,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport { records })
}
