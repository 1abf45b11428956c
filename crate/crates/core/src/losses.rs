//! Loss values: cross-modal cross-entropy, visual (prototype) cross-entropy,
//! the anti-visual perturbation, the fused relation target and its KL
//! alignment loss, and the two-phase weighted total.
//!
//! These are forward values only. Gradients live in [`crate::gradients`].

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, cross_gram, dot, log_softmax, softmax_into, Matrix};

pub fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(tau))
    }
}

/// Mean cross-entropy of `softmax(F Wᵀ / tau)` against `labels`, plus the
/// probability matrix. Shared by the cross-modal and visual losses.
pub fn cross_entropy(
    features: &Matrix,
    weights: &Matrix,
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Matrix)> {
    check_tau(tau)?;
    check_dim(features.rows(), labels.len())?;
    check_labels(labels, weights.rows())?;
    let logits = cross_gram(features, weights)?;
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        total -= log_softmax(row, tau)[y];
        softmax_into(row, tau, probs.row_mut(i));
    }
    let n = labels.len().max(1) as f64;
    Ok((total / n, probs))
}

/// Cross-modal fine-tuning loss: image features against class text features.
pub fn vlm_loss(
    features: &Matrix,
    text: &Matrix,
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Matrix)> {
    cross_entropy(features, text, labels, tau)
}

/// Visual classification loss against explicit classifier weights.
pub fn visual_loss(
    features: &Matrix,
    weights: &Matrix,
    labels: &[usize],
    tau: f64,
) -> Result<f64> {
    cross_entropy(features, weights, labels, tau).map(|(loss, _)| loss)
}

/// Normalized per-class mean of `features`. Every class in `0..classes`
/// needs at least one sample.
pub fn class_prototypes(features: &Matrix, labels: &[usize], classes: usize) -> Result<Matrix> {
    let (means, _) = class_means(features, labels, classes)?;
    means.normalized_rows()
}

/// Unnormalized per-class means and the per-class sample counts.
pub(crate) fn class_means(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
) -> Result<(Matrix, Vec<usize>)> {
    check_dim(features.rows(), labels.len())?;
    check_labels(labels, classes)?;
    let mut sums = Matrix::zeros(classes, features.cols());
    let mut counts = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        crate::linalg::axpy(1.0, features.row(i), sums.row_mut(y));
    }
    if counts.contains(&0) {
        return Err(Error::InsufficientSamples {
            needed: classes,
            available: counts.iter().filter(|&&c| c > 0).count(),
        });
    }
    for (j, &c) in counts.iter().enumerate() {
        sums.row_mut(j).iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok((sums, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SvlStrategy {
    Off,
    /// Weights are the features of randomly drawn support samples.
    #[default]
    ClassShuffle,
    /// Negated prototype visual loss.
    NegLv,
    /// Random unit Gaussian weights.
    NoiseProto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RaStrategy {
    Off,
    /// Epoch-scheduled blend of the frozen visual and the text relations.
    #[default]
    Fused,
    /// Frozen visual relations only.
    OnlyVision,
    /// Text relations only, no schedule.
    OnlyText,
}

/// One realization of the anti-visual classifier, drawn once per step so the
/// loss and its gradient see the same weights.
#[derive(Debug, Clone, PartialEq)]
pub enum AntiVisualDraw {
    /// Support-row index used as the weight of each class slot.
    ClassShuffle(Vec<usize>),
    NegLv,
    NoiseProto(Matrix),
}

impl AntiVisualDraw {
    pub fn draw<R: Rng + ?Sized>(
        strategy: SvlStrategy,
        support_count: usize,
        classes: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        Ok(match strategy {
            SvlStrategy::Off => None,
            SvlStrategy::ClassShuffle => {
                if support_count < classes {
                    return Err(Error::InsufficientSamples {
                        needed: classes,
                        available: support_count,
                    });
                }
                Some(Self::ClassShuffle(
                    sample(rng, support_count, classes).into_vec(),
                ))
            }
            SvlStrategy::NegLv => Some(Self::NegLv),
            SvlStrategy::NoiseProto => {
                let data: Vec<f64> = (0..classes * dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Some(Self::NoiseProto(
                    Matrix::from_vec(classes, dim, data)?.normalized_rows()?,
                ))
            }
        })
    }
}

/// Anti-visual loss for a fixed draw. For the class-shuffle draw the logits
/// are the columns `gram[:, indices]` of the current visual gram matrix.
pub fn anti_visual_loss_with(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    draw: &AntiVisualDraw,
    gram: &Matrix,
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    check_dim(features.rows(), labels.len())?;
    check_labels(labels, classes)?;
    match draw {
        AntiVisualDraw::ClassShuffle(idx) => {
            check_dim(classes, idx.len())?;
            check_dim(features.rows(), gram.rows())?;
            check_dim(features.rows(), gram.cols())?;
            let mut total = 0.0;
            let mut logits = vec![0.0; idx.len()];
            for (i, &y) in labels.iter().enumerate() {
                for (slot, &j) in idx.iter().enumerate() {
                    logits[slot] = gram[(i, j)];
                }
                total -= log_softmax(&logits, tau)[y];
            }
            Ok(total / labels.len().max(1) as f64)
        }
        AntiVisualDraw::NegLv => {
            let protos = class_prototypes(features, labels, classes)?;
            Ok(-visual_loss(features, &protos, labels, tau)?)
        }
        AntiVisualDraw::NoiseProto(w) => {
            check_dim(classes, w.rows())?;
            visual_loss(features, w, labels, tau)
        }
    }
}

/// Draws from `rng` and evaluates the anti-visual loss. Returns `0.0` for
/// [`SvlStrategy::Off`].
pub fn anti_visual_loss<R: Rng + ?Sized>(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    strategy: SvlStrategy,
    rng: &mut R,
    gram: &Matrix,
    tau: f64,
) -> Result<f64> {
    match AntiVisualDraw::draw(strategy, features.rows(), classes, features.cols(), rng)? {
        Some(draw) => anti_visual_loss_with(features, labels, classes, &draw, gram, tau),
        None => Ok(0.0),
    }
}

/// Half-open epoch range in which the auxiliary losses are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochWindow {
    pub start: usize,
    pub end: usize,
}

impl EpochWindow {
    pub const EMPTY: EpochWindow = EpochWindow { start: 0, end: 0 };

    pub fn contains(&self, epoch: usize) -> bool {
        self.start <= epoch && epoch < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseState {
    pub epoch: usize,
    pub total_epochs: usize,
    pub aux_window: EpochWindow,
}

impl PhaseState {
    /// Auxiliary losses active for epochs `[0, init_epochs)`.
    pub fn new(epoch: usize, total_epochs: usize, init_epochs: usize) -> Result<Self> {
        Self::with_window(
            epoch,
            total_epochs,
            EpochWindow {
                start: 0,
                end: init_epochs,
            },
        )
    }

    /// `epoch == total_epochs` is accepted so the schedule endpoint can be
    /// evaluated; training itself stops at `total_epochs - 1`.
    pub fn with_window(epoch: usize, total_epochs: usize, aux_window: EpochWindow) -> Result<Self> {
        if total_epochs == 0 {
            return Err(Error::InvalidConfig("total epochs must be positive".into()));
        }
        if epoch > total_epochs || aux_window.end > total_epochs {
            return Err(Error::InvalidConfig(format!(
                "epoch {epoch} / window {}..{} outside 0..={total_epochs}",
                aux_window.start, aux_window.end
            )));
        }
        Ok(Self {
            epoch,
            total_epochs,
            aux_window,
        })
    }

    /// `e / E`
    pub fn progress(&self) -> f64 {
        self.epoch as f64 / self.total_epochs as f64
    }

    pub fn auxiliary_active(&self) -> bool {
        self.aux_window.contains(self.epoch)
    }
}

/// `(1 - e/E) A_anchor + (e/E) A_t[L, L]`
pub fn fuse_matrix(
    anchor: &Matrix,
    text_gram: &Matrix,
    labels: &[usize],
    phase: &PhaseState,
) -> Result<Matrix> {
    fuse_with_weight(anchor, text_gram, labels, phase.progress())
}

pub(crate) fn fuse_with_weight(
    anchor: &Matrix,
    text_gram: &Matrix,
    labels: &[usize],
    w: f64,
) -> Result<Matrix> {
    check_dim(anchor.rows(), labels.len())?;
    check_dim(anchor.cols(), labels.len())?;
    check_dim(text_gram.rows(), text_gram.cols())?;
    check_labels(labels, text_gram.rows())?;
    let n = labels.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (1.0 - w) * anchor[(i, j)] + w * text_gram[(labels[i], labels[j])];
        }
    }
    Ok(out)
}

/// Relation target for a given strategy, or `None` when alignment is off.
pub fn relation_target(
    strategy: RaStrategy,
    anchor: &Matrix,
    text_gram: &Matrix,
    labels: &[usize],
    progress: f64,
) -> Result<Option<Matrix>> {
    Ok(match strategy {
        RaStrategy::Off => None,
        RaStrategy::Fused => Some(fuse_with_weight(anchor, text_gram, labels, progress)?),
        RaStrategy::OnlyVision => Some(fuse_with_weight(anchor, text_gram, labels, 0.0)?),
        RaStrategy::OnlyText => Some(fuse_with_weight(anchor, text_gram, labels, 1.0)?),
    })
}

/// Mean row-wise `KL(softmax(current/τ) ‖ softmax(target/τ))`.
pub fn ra_loss(current: &Matrix, target: &Matrix, tau_ra: f64) -> Result<f64> {
    check_tau(tau_ra)?;
    check_dim(current.rows(), target.rows())?;
    check_dim(current.cols(), target.cols())?;
    let mut total = 0.0;
    for i in 0..current.rows() {
        let lp = log_softmax(current.row(i), tau_ra);
        let lq = log_softmax(target.row(i), tau_ra);
        total += lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>();
    }
    Ok(total / current.rows().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Temperature of the cross-modal and visual softmax.
    pub tau: f64,
    /// Temperature turning similarity rows into distributions for the KL.
    pub tau_ra: f64,
    pub lambda: f64,
    pub beta: f64,
    pub svl: SvlStrategy,
    pub ra: RaStrategy,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            tau_ra: 1.0,
            lambda: 0.1,
            beta: 3.0,
            svl: SvlStrategy::ClassShuffle,
            ra: RaStrategy::Fused,
        }
    }
}

impl LossConfig {
    /// Weight used when the anti-visual term acts on the text branch.
    pub const TEXT_BRANCH_LAMBDA: f64 = 0.001;
    /// Alternative relation weight used by some reference configurations.
    pub const ALT_BETA: f64 = 0.5;

    /// Only the cross-modal term.
    pub fn plain() -> Self {
        Self {
            lambda: 0.0,
            beta: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.tau_ra > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperatures must be positive (tau={}, tau_ra={})",
                self.tau, self.tau_ra
            )));
        }
        if !(self.lambda >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be non-negative (lambda={}, beta={})",
                self.lambda, self.beta
            )));
        }
        Ok(())
    }

    pub fn svl_enabled(&self) -> bool {
        self.lambda > 0.0 && self.svl != SvlStrategy::Off
    }

    pub fn ra_enabled(&self) -> bool {
        self.beta > 0.0 && self.ra != RaStrategy::Off
    }
}

/// Component values fed to [`total_loss`]. Auxiliary terms may be absent when
/// they were not evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub vlm: f64,
    pub ad: Option<f64>,
    pub ra: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vlm: f64,
    pub ad: f64,
    pub ra: f64,
    pub total: f64,
}

/// Two-phase objective: `L_vlm + β L_ra + λ L_ad` inside the auxiliary window,
/// `L_vlm` outside it.
pub fn total_loss(
    components: LossComponents,
    config: &LossConfig,
    phase: &PhaseState,
) -> LossBreakdown {
    if !phase.auxiliary_active() {
        return LossBreakdown {
            vlm: components.vlm,
            ad: 0.0,
            ra: 0.0,
            total: components.vlm,
        };
    }
    let ad = components.ad.unwrap_or(0.0);
    let ra = components.ra.unwrap_or(0.0);
    let mut total = components.vlm;
    if config.ra_enabled() {
        total += config.beta * ra;
    }
    if config.svl_enabled() {
        total += config.lambda * ad;
    }
    LossBreakdown {
        vlm: components.vlm,
        ad,
        ra,
        total,
    }
}

/// Fraction of rows whose arg-max of `F Wᵀ` matches the label.
pub fn accuracy(features: &Matrix, weights: &Matrix, labels: &[usize]) -> Result<f64> {
    check_dim(features.cols(), weights.cols())?;
    check_dim(features.rows(), labels.len())?;
    let mut hits = 0usize;
    let mut scores = vec![0.0; weights.rows()];
    for (i, &y) in labels.iter().enumerate() {
        for (j, s) in scores.iter_mut().enumerate() {
            *s = dot(features.row(i), weights.row(j));
        }
        if crate::linalg::argmax(&scores) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len().max(1) as f64)
}
