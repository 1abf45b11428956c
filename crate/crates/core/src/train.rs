//! Two-phase episode fine-tuning of a [`LowRankAdapter`] with plain
//! full-batch gradient descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adapter::{Branch, LowRankAdapter};
use crate::error::{Error, Result};
use crate::gradients::{objective, EpisodeInputs};
use crate::linalg::{check_dim, gram_matrix, Matrix};
use crate::losses::{accuracy, check_labels, AntiVisualDraw, EpochWindow, LossConfig, PhaseState};

/// When the auxiliary losses are switched on during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    No,
    #[default]
    Begin,
    Middle,
    Last,
    All,
}

impl PhaseMode {
    /// `begin = [0, 3E/5)`, `middle = [E/5, 4E/5)`, `last = [2E/5, E)`,
    /// `all = [0, E)`, `no = ∅`, with integer division.
    pub fn window(self, epochs: usize) -> EpochWindow {
        let (start, end) = match self {
            PhaseMode::No => return EpochWindow::EMPTY,
            PhaseMode::Begin => (0, 3 * epochs / 5),
            PhaseMode::Middle => (epochs / 5, 4 * epochs / 5),
            PhaseMode::Last => (2 * epochs / 5, epochs),
            PhaseMode::All => (0, epochs),
        };
        EpochWindow { start, end }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Gradient-descent step size.
    pub lr: f64,
    pub epochs: usize,
    /// Epochs in which `L_vlm + β L_ra + λ L_ad` is optimized; `L_vlm` alone
    /// elsewhere.
    pub aux_window: EpochWindow,
    pub loss: LossConfig,
    pub rank: usize,
    pub alpha: f64,
    pub branch: Branch,
    pub seed: u64,
    pub steps_per_epoch: usize,
    /// Standard deviation of Gaussian jitter added to the support features
    /// before every step (then renormalized). `0` disables it.
    pub jitter: f64,
    /// Keep an adapter snapshot every this many epochs; `0` keeps none.
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_init_epochs(250, 150)
    }
}

impl TrainConfig {
    pub const DEFAULT_LR: f64 = 3e-2;

    /// Default hyper-parameters with the auxiliary window `[0, init_epochs)`.
    pub fn with_init_epochs(epochs: usize, init_epochs: usize) -> Self {
        Self {
            lr: Self::DEFAULT_LR,
            epochs,
            aux_window: EpochWindow {
                start: 0,
                end: init_epochs,
            },
            loss: LossConfig::default(),
            rank: LowRankAdapter::DEFAULT_RANK,
            alpha: LowRankAdapter::DEFAULT_ALPHA,
            branch: Branch::Visual,
            seed: 0,
            steps_per_epoch: 1,
            jitter: 0.0,
            snapshot_every: 0,
        }
    }

    /// `⌊3E/5⌋`
    pub fn default_init_epochs(epochs: usize) -> usize {
        3 * epochs / 5
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.aux_window.end > self.epochs {
            return bad(format!(
                "auxiliary window ends at {} but training has {} epochs",
                self.aux_window.end, self.epochs
            ));
        }
        if self.rank == 0 {
            return bad("adapter rank must be at least 1".into());
        }
        if self.steps_per_epoch == 0 {
            return bad("steps per epoch must be at least 1".into());
        }
        if !(self.jitter >= 0.0) {
            return bad(format!("jitter must be non-negative, got {}", self.jitter));
        }
        Ok(())
    }
}

/// Copy of `config` whose auxiliary window follows `mode`.
pub fn disturb_phase_variant(config: &TrainConfig, mode: PhaseMode) -> TrainConfig {
    TrainConfig {
        aux_window: mode.window(config.epochs),
        ..config.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub vlm: f64,
    pub ad: f64,
    pub ra: f64,
    pub total: f64,
    /// Support accuracy in `[0, 1]` before the epoch's update.
    pub support_acc: f64,
    /// Mean change of pairwise cosine similarity of the adapted support
    /// features over the epoch; `None` when there are no such pairs.
    pub delta_cos_same: Option<f64>,
    pub delta_cos_diff: Option<f64>,
    /// Index into [`TrainTrajectory::snapshots`] if one was taken this epoch.
    pub snapshot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// The adapter after this epoch's update.
    pub epoch: usize,
    pub adapter: LowRankAdapter,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrajectory {
    pub records: Vec<EpochRecord>,
    pub snapshots: Vec<Snapshot>,
}

/// Mean change of `f_i · f_k` from `before` to `after`, split by whether the
/// pair shares a label.
pub fn mean_delta_cos(before: &Matrix, after: &Matrix, labels: &[usize]) -> (Option<f64>, Option<f64>) {
    let (a, b) = (gram_matrix(before), gram_matrix(after));
    let mut same = (0.0, 0usize);
    let mut diff = (0.0, 0usize);
    for i in 0..labels.len() {
        for k in (i + 1)..labels.len() {
            let acc = if labels[i] == labels[k] { &mut same } else { &mut diff };
            acc.0 += b[(i, k)] - a[(i, k)];
            acc.1 += 1;
        }
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    (mean(same), mean(diff))
}

fn jittered<R: Rng + ?Sized>(support: &Matrix, sigma: f64, rng: &mut R) -> Result<Matrix> {
    let mut out = support.clone();
    for v in out.as_mut_slice() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    out.normalized_rows()
}

/// Fine-tunes a fresh adapter on one support set.
///
/// The adapter is initialized and every random draw is taken from a single
/// stream seeded with `config.seed`. Anti-visual draws happen only in steps
/// where that term is evaluated, so a configuration with the auxiliary terms
/// disabled replays the plain fine-tune exactly.
pub fn train_episode(
    support: &Matrix,
    labels: &[usize],
    text: &Matrix,
    config: &TrainConfig,
) -> Result<(LowRankAdapter, TrainTrajectory)> {
    config.validate()?;
    if support.rows() == 0 {
        return Err(Error::InsufficientSamples {
            needed: 1,
            available: 0,
        });
    }
    check_dim(support.rows(), labels.len())?;
    check_dim(support.cols(), text.cols())?;
    check_labels(labels, text.rows())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adapter =
        LowRankAdapter::init(support.cols(), config.rank, config.alpha, config.branch, &mut rng)?;
    let anchor_gram = gram_matrix(support);
    let text_gram = gram_matrix(text);
    let classes = text.rows();
    let cfg = &config.loss;

    let mut trajectory = TrainTrajectory::default();
    let mut previous = adapter.apply_visual(support)?;
    for epoch in 0..config.epochs {
        let phase = PhaseState::with_window(epoch, config.epochs, config.aux_window)?;
        let mut first = None;
        for _ in 0..config.steps_per_epoch {
            let step_support = if config.jitter > 0.0 {
                jittered(support, config.jitter, &mut rng)?
            } else {
                support.clone()
            };
            let inputs = EpisodeInputs {
                support: &step_support,
                labels,
                text,
                anchor_gram: &anchor_gram,
                text_gram: &text_gram,
            };
            let draw = if phase.auxiliary_active() && cfg.svl_enabled() {
                AntiVisualDraw::draw(cfg.svl, step_support.rows(), classes, support.cols(), &mut rng)?
            } else {
                None
            };
            let eval = objective(&adapter, &inputs, cfg, &phase, draw.as_ref())?;
            adapter.sgd_step(&eval.grad, config.lr)?;
            if first.is_none() {
                first = Some(eval);
            }
        }
        let eval = first.expect("at least one step per epoch");
        let current = adapter.apply_visual(support)?;
        let (delta_cos_same, delta_cos_diff) = mean_delta_cos(&previous, &current, labels);
        previous = current;

        let snapshot = if config.snapshot_every > 0 && (epoch + 1) % config.snapshot_every == 0 {
            trajectory.snapshots.push(Snapshot {
                epoch,
                adapter: adapter.clone(),
            });
            Some(trajectory.snapshots.len() - 1)
        } else {
            None
        };
        let b = eval.breakdown;
        trajectory.records.push(EpochRecord {
            epoch,
            vlm: b.vlm,
            ad: b.ad,
            ra: b.ra,
            total: b.total,
            support_acc: accuracy(&eval.features, &eval.text, labels)?,
            delta_cos_same,
            delta_cos_diff,
            snapshot,
        });
    }
    Ok((adapter, trajectory))
}
