//! Closed-form gradients of every loss with respect to the features, the
//! chain rule through the low-rank adapter, the central-difference oracle,
//! and the one-step cosine-change analysis.
//!
//! Gradient code here never calls back into itself to produce reference
//! values: the finite-difference oracle evaluates the forward losses from
//! [`crate::losses`] only.

mod finite_diff;
mod theorem;

pub use finite_diff::{check_gradient, finite_difference_grad, GradCheckResult, DEFAULT_STEP};
pub use theorem::{
    delta_cos_actual, grad_vlm_wrt_feature, predicted_delta_cos, residual_ratio, theorem_report,
    PairRecord, PairSide, TheoremReport,
};

use crate::adapter::{AdapterGrad, LowRankAdapter};
use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot, gram_matrix, log_softmax, normalize_in_place, Matrix};
use crate::losses::{
    self, class_means, cross_entropy, relation_target, total_loss, AntiVisualDraw, LossBreakdown,
    LossComponents, LossConfig, PhaseState,
};

/// Gradients of `mean_i CE(softmax(a_i · Bᵀ / τ), y_i)` with respect to both
/// factors of the logits.
struct CrossEntropyGrads {
    loss: f64,
    d_left: Matrix,
    d_right: Matrix,
}

fn cross_entropy_grads(
    left: &Matrix,
    right: &Matrix,
    labels: &[usize],
    tau: f64,
) -> Result<CrossEntropyGrads> {
    let (loss, mut d_logits) = cross_entropy(left, right, labels, tau)?;
    let scale = 1.0 / (labels.len() as f64 * tau);
    for (i, &y) in labels.iter().enumerate() {
        let off_label: f64 = d_logits
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, p)| p)
            .sum();
        d_logits[(i, y)] = -off_label;
        d_logits.row_mut(i).iter_mut().for_each(|v| *v *= scale);
    }
    Ok(CrossEntropyGrads {
        loss,
        d_left: d_logits.matmul(right)?,
        d_right: d_logits.transpose().matmul(left)?,
    })
}

/// `(loss, ∂L/∂F, ∂L/∂T)` for the cross-modal loss.
pub fn vlm_feature_grads(
    features: &Matrix,
    text: &Matrix,
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Matrix, Matrix)> {
    let g = cross_entropy_grads(features, text, labels, tau)?;
    Ok((g.loss, g.d_left, g.d_right))
}

/// `(loss, ∂L/∂F)` for the visual loss against fixed weights.
pub fn visual_weight_grads(
    features: &Matrix,
    weights: &Matrix,
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Matrix)> {
    let g = cross_entropy_grads(features, weights, labels, tau)?;
    Ok((g.loss, g.d_left))
}

/// `(loss, ∂L/∂F)` for the visual loss whose weights are the normalized class
/// means of `features` themselves; the gradient flows through the means.
pub fn visual_prototype_grads(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    tau: f64,
) -> Result<(f64, Matrix)> {
    let (mut protos, counts) = class_means(features, labels, classes)?;
    let mut norms = Vec::with_capacity(classes);
    for j in 0..classes {
        norms.push(normalize_in_place(protos.row_mut(j))?);
    }
    let g = cross_entropy_grads(features, &protos, labels, tau)?;
    let mut d_features = g.d_left;
    // back through w = m/‖m‖ and m = mean of the class rows
    let mut d_means = Matrix::zeros(classes, features.cols());
    for j in 0..classes {
        let w = protos.row(j);
        let dw = g.d_right.row(j);
        let wd = dot(w, dw);
        let scale = 1.0 / (norms[j] * counts[j] as f64);
        for ((dm, &wk), &dwk) in d_means.row_mut(j).iter_mut().zip(w).zip(dw) {
            *dm = (dwk - wk * wd) * scale;
        }
    }
    for (i, &y) in labels.iter().enumerate() {
        crate::linalg::axpy(1.0, d_means.row(y), d_features.row_mut(i));
    }
    Ok((g.loss, d_features))
}

/// `(loss, ∂L/∂F)` for the anti-visual loss under a fixed draw.
pub fn anti_visual_feature_grads(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    draw: &AntiVisualDraw,
    tau: f64,
) -> Result<(f64, Matrix)> {
    match draw {
        AntiVisualDraw::ClassShuffle(idx) => {
            check_dim(classes, idx.len())?;
            let weights = features.select_rows(idx);
            let g = cross_entropy_grads(features, &weights, labels, tau)?;
            let mut d = g.d_left;
            for (slot, &j) in idx.iter().enumerate() {
                crate::linalg::axpy(1.0, g.d_right.row(slot), d.row_mut(j));
            }
            Ok((g.loss, d))
        }
        AntiVisualDraw::NegLv => {
            let (loss, mut d) = visual_prototype_grads(features, labels, classes, tau)?;
            d.scale(-1.0);
            Ok((-loss, d))
        }
        AntiVisualDraw::NoiseProto(w) => {
            check_dim(classes, w.rows())?;
            visual_weight_grads(features, w, labels, tau)
        }
    }
}

/// `(loss, ∂L/∂F)` for `KL(softmax(F Fᵀ/τ) ‖ softmax(target/τ))` with the
/// target held constant.
pub fn ra_feature_grads(features: &Matrix, target: &Matrix, tau_ra: f64) -> Result<(f64, Matrix)> {
    let current = gram_matrix(features);
    let loss = losses::ra_loss(&current, target, tau_ra)?;
    let n = current.rows();
    let mut d_gram = Matrix::zeros(n, n);
    let scale = 1.0 / (n as f64 * tau_ra);
    for i in 0..n {
        let lp = log_softmax(current.row(i), tau_ra);
        let lq = log_softmax(target.row(i), tau_ra);
        let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let r: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
        // p_j (r_j − Σ_k p_k r_k) written as p_j Σ_{k≠j} p_k (r_j − r_k)
        for j in 0..n {
            let spread: f64 = (0..n).filter(|&k| k != j).map(|k| p[k] * (r[j] - r[k])).sum();
            d_gram[(i, j)] = scale * p[j] * spread;
        }
    }
    // ∂(F Fᵀ) contributes (G + Gᵀ) F
    let mut sym = d_gram.clone();
    sym.add_scaled(1.0, &d_gram.transpose())?;
    Ok((loss, sym.matmul(features)?))
}

/// Raw episode inputs the adapter acts on.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeInputs<'a> {
    /// Un-adapted, unit-norm support features.
    pub support: &'a Matrix,
    pub labels: &'a [usize],
    /// Un-adapted class text features, one row per episode class.
    pub text: &'a Matrix,
    /// Gram matrix of the un-adapted support features.
    pub anchor_gram: &'a Matrix,
    /// Gram matrix of the un-adapted class text features.
    pub text_gram: &'a Matrix,
}

impl<'a> EpisodeInputs<'a> {
    pub fn classes(&self) -> usize {
        self.text.rows()
    }
}

/// A single loss term evaluated through the adapter.
#[derive(Debug, Clone, Copy)]
pub enum LossTerm<'a> {
    Vlm,
    /// Visual loss against class prototypes of the adapted features.
    VisualPrototype,
    AntiVisual(&'a AntiVisualDraw),
    /// Relation alignment against a constant target.
    Relation(&'a Matrix),
}

struct Adapted {
    features: Matrix,
    text: Matrix,
    fwd_visual: Option<crate::adapter::AdapterForward>,
    fwd_text: Option<crate::adapter::AdapterForward>,
}

fn adapt(adapter: &LowRankAdapter, inputs: &EpisodeInputs<'_>) -> Result<Adapted> {
    let fwd_visual = if adapter.branch.adapts_visual() {
        Some(adapter.forward(inputs.support)?)
    } else {
        None
    };
    let fwd_text = if adapter.branch.adapts_text() {
        Some(adapter.forward(inputs.text)?)
    } else {
        None
    };
    Ok(Adapted {
        features: fwd_visual
            .as_ref()
            .map_or_else(|| inputs.support.clone(), |f| f.output.clone()),
        text: fwd_text
            .as_ref()
            .map_or_else(|| inputs.text.clone(), |f| f.output.clone()),
        fwd_visual,
        fwd_text,
    })
}

fn backprop(
    adapter: &LowRankAdapter,
    inputs: &EpisodeInputs<'_>,
    adapted: &Adapted,
    d_features: &Matrix,
    d_text: Option<&Matrix>,
) -> Result<AdapterGrad> {
    let mut grad = AdapterGrad::zeros_like(adapter);
    if let Some(fwd) = &adapted.fwd_visual {
        adapter.backward(inputs.support, fwd, d_features, &mut grad)?;
    }
    if let (Some(fwd), Some(dt)) = (&adapted.fwd_text, d_text) {
        adapter.backward(inputs.text, fwd, dt, &mut grad)?;
    }
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(grad)
}

fn term_feature_grads(
    adapted: &Adapted,
    inputs: &EpisodeInputs<'_>,
    term: LossTerm<'_>,
    cfg: &LossConfig,
) -> Result<(f64, Matrix, Option<Matrix>)> {
    let f = &adapted.features;
    Ok(match term {
        LossTerm::Vlm => {
            let (l, df, dt) = vlm_feature_grads(f, &adapted.text, inputs.labels, cfg.tau)?;
            (l, df, Some(dt))
        }
        LossTerm::VisualPrototype => {
            let (l, df) = visual_prototype_grads(f, inputs.labels, inputs.classes(), cfg.tau)?;
            (l, df, None)
        }
        LossTerm::AntiVisual(draw) => {
            let (l, df) =
                anti_visual_feature_grads(f, inputs.labels, inputs.classes(), draw, cfg.tau)?;
            (l, df, None)
        }
        LossTerm::Relation(target) => {
            let (l, df) = ra_feature_grads(f, target, cfg.tau_ra)?;
            (l, df, None)
        }
    })
}

/// Loss value and adapter gradient of one term.
pub fn term_loss_and_grad(
    adapter: &LowRankAdapter,
    inputs: &EpisodeInputs<'_>,
    term: LossTerm<'_>,
    cfg: &LossConfig,
) -> Result<(f64, AdapterGrad)> {
    let adapted = adapt(adapter, inputs)?;
    let (loss, df, dt) = term_feature_grads(&adapted, inputs, term, cfg)?;
    let grad = backprop(adapter, inputs, &adapted, &df, dt.as_ref())?;
    Ok((loss, grad))
}

/// Loss value of one term from the forward losses only. This is the function
/// the finite-difference oracle differentiates.
pub fn term_loss(
    adapter: &LowRankAdapter,
    inputs: &EpisodeInputs<'_>,
    term: LossTerm<'_>,
    cfg: &LossConfig,
) -> Result<f64> {
    let f = adapter.apply_visual(inputs.support)?;
    let classes = inputs.classes();
    match term {
        LossTerm::Vlm => {
            let t = adapter.apply_text(inputs.text)?;
            Ok(losses::vlm_loss(&f, &t, inputs.labels, cfg.tau)?.0)
        }
        LossTerm::VisualPrototype => {
            let w = losses::class_prototypes(&f, inputs.labels, classes)?;
            losses::visual_loss(&f, &w, inputs.labels, cfg.tau)
        }
        LossTerm::AntiVisual(draw) => {
            let g = gram_matrix(&f);
            losses::anti_visual_loss_with(&f, inputs.labels, classes, draw, &g, cfg.tau)
        }
        LossTerm::Relation(target) => losses::ra_loss(&gram_matrix(&f), target, cfg.tau_ra),
    }
}

/// Relation target for the current phase, if alignment is enabled.
pub fn phase_relation_target(
    inputs: &EpisodeInputs<'_>,
    cfg: &LossConfig,
    phase: &PhaseState,
) -> Result<Option<Matrix>> {
    relation_target(
        cfg.ra,
        inputs.anchor_gram,
        inputs.text_gram,
        inputs.labels,
        phase.progress(),
    )
}

/// Per-term values and gradients plus the weighted total.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub breakdown: LossBreakdown,
    pub grad: AdapterGrad,
    /// Adapted support features at which the objective was evaluated.
    pub features: Matrix,
    /// Adapted class text rows at which the objective was evaluated.
    pub text: Matrix,
}

/// Two-phase objective and its adapter gradient. Auxiliary terms are only
/// evaluated when the phase window is active and their weight is positive;
/// `draw` must be supplied in that case for the anti-visual term.
pub fn objective(
    adapter: &LowRankAdapter,
    inputs: &EpisodeInputs<'_>,
    cfg: &LossConfig,
    phase: &PhaseState,
    draw: Option<&AntiVisualDraw>,
) -> Result<ObjectiveEval> {
    let adapted = adapt(adapter, inputs)?;
    let (vlm, mut d_features, d_text) =
        term_feature_grads(&adapted, inputs, LossTerm::Vlm, cfg)?;
    let mut components = LossComponents {
        vlm,
        ad: None,
        ra: None,
    };
    if phase.auxiliary_active() {
        if cfg.ra_enabled() {
            let target = phase_relation_target(inputs, cfg, phase)?
                .expect("enabled relation strategy has a target");
            let (l, df, _) =
                term_feature_grads(&adapted, inputs, LossTerm::Relation(&target), cfg)?;
            components.ra = Some(l);
            d_features.add_scaled(cfg.beta, &df)?;
        }
        if cfg.svl_enabled() {
            let draw = draw.ok_or_else(|| {
                Error::InvalidConfig("anti-visual term active without a draw".into())
            })?;
            let (l, df, _) =
                term_feature_grads(&adapted, inputs, LossTerm::AntiVisual(draw), cfg)?;
            components.ad = Some(l);
            d_features.add_scaled(cfg.lambda, &df)?;
        }
    }
    let breakdown = total_loss(components, cfg, phase);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss(breakdown.total));
    }
    let grad = backprop(adapter, inputs, &adapted, &d_features, d_text.as_ref())?;
    Ok(ObjectiveEval {
        breakdown,
        grad,
        features: adapted.features,
        text: adapted.text,
    })
}
