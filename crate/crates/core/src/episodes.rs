//! N-way K-shot episodes and the seeded multi-task benchmark.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingDataset;
use crate::diagnostics::{default_alpha_grid, gap_sweep, visual_probe, ProbeConfig, ProbeReport};
use crate::error::{Error, Result};
use crate::linalg::{argmax, check_dim, cross_gram, Matrix};
use crate::losses::vlm_loss;
use crate::train::{train_episode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Matrix,
    /// Episode-local labels in `[0, N)`.
    pub support_labels: Vec<usize>,
    pub query: Matrix,
    pub query_labels: Vec<usize>,
    /// Dataset class of each episode label.
    pub classes: Vec<usize>,
    /// Dataset row of each support and query sample.
    pub support_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
    /// Text row of each episode class.
    pub text: Matrix,
}

/// Samples `n_way` classes and, within each, `k_shot + m_query` distinct
/// samples, all uniformly without replacement. The first `k_shot` of each
/// class form the support set.
pub fn sample_episode<R: Rng + ?Sized>(
    ds: &EmbeddingDataset,
    n_way: usize,
    k_shot: usize,
    m_query: usize,
    rng: &mut R,
) -> Result<Episode> {
    if n_way == 0 || k_shot == 0 {
        return Err(Error::InvalidConfig("episodes need N >= 1 and K >= 1".into()));
    }
    if n_way > ds.num_classes() {
        return Err(Error::InsufficientClasses {
            needed: n_way,
            available: ds.num_classes(),
        });
    }
    let classes = sample(rng, ds.num_classes(), n_way).into_vec();
    let per_class = k_shot + m_query;
    let mut support_ids = Vec::with_capacity(n_way * k_shot);
    let mut query_ids = Vec::with_capacity(n_way * m_query);
    let mut support_labels = Vec::with_capacity(n_way * k_shot);
    let mut query_labels = Vec::with_capacity(n_way * m_query);
    for (slot, &class) in classes.iter().enumerate() {
        let members = ds.members(class);
        if members.len() < per_class {
            return Err(Error::InsufficientSamples {
                needed: per_class,
                available: members.len(),
            });
        }
        let picks = sample(rng, members.len(), per_class).into_vec();
        for (j, &p) in picks.iter().enumerate() {
            if j < k_shot {
                support_ids.push(members[p]);
                support_labels.push(slot);
            } else {
                query_ids.push(members[p]);
                query_labels.push(slot);
            }
        }
    }
    Ok(Episode {
        support: ds.features().select_rows(&support_ids),
        query: ds.features().select_rows(&query_ids),
        text: ds.text().select_rows(&classes),
        support_labels,
        query_labels,
        classes,
        support_ids,
        query_ids,
    })
}

/// Most probable class of each row of `softmax(F Tᵀ / τ)`; ties go to the
/// lowest class index.
pub fn classify(features: &Matrix, text: &Matrix, tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let logits = cross_gram(features, text)?;
    Ok(logits.iter_rows().map(argmax).collect())
}

/// Percentage of `predicted` equal to `labels`.
pub fn accuracy_percent(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    check_dim(labels.len(), predicted.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    ZeroShot,
    #[default]
    FineTune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub m_query: usize,
    pub tasks: usize,
    pub master_seed: u64,
    pub mode: EvalMode,
    /// Training hyper-parameters; the seed is replaced per task.
    pub train: TrainConfig,
    /// Also run a gap sweep on each task's adapted query set.
    pub measure_gap: bool,
    /// Worker threads; `1` runs serially. Results do not depend on it.
    pub threads: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            m_query: 15,
            tasks: 800,
            master_seed: 0,
            mode: EvalMode::FineTune,
            train: TrainConfig::default(),
            measure_gap: false,
            threads: 1,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::InvalidConfig("task count must be positive".into()));
        }
        if self.n_way == 0 || self.k_shot == 0 || self.m_query == 0 {
            return Err(Error::InvalidConfig("N, K and M must all be positive".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: usize,
    pub classes: Vec<usize>,
    /// Query accuracy in percent.
    pub accuracy: f64,
    /// Query cross-modal loss after adaptation.
    pub query_loss: f64,
    /// Gap metric of the adapted query set, if requested.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub tasks: Vec<TaskResult>,
    pub task_count: usize,
    /// Mean query accuracy in percent.
    pub mean: f64,
    /// `1.96 · σ / √T` with the population standard deviation.
    pub ci95: f64,
    pub mean_gap: Option<f64>,
}

impl BenchmarkResult {
    pub fn from_tasks(tasks: Vec<TaskResult>) -> Self {
        let accs: Vec<f64> = tasks.iter().map(|t| t.accuracy).collect();
        let (mean, ci95) = mean_ci95(&accs);
        let gaps: Option<Vec<f64>> = tasks.iter().map(|t| t.gap).collect();
        Self {
            task_count: tasks.len(),
            mean_gap: gaps.filter(|g| !g.is_empty()).map(|g| g.iter().sum::<f64>() / g.len() as f64),
            tasks,
            mean,
            ci95,
        }
    }

    /// `mean ± ci95` with two decimals, as in result tables.
    pub fn summary_line(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.ci95)
    }
}

/// Mean and `1.96 · σ / √n`.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Random stream of one task: the master seed with the task index as the
/// ChaCha stream id, so tasks are independent of execution order.
pub fn task_rng(master_seed: u64, task: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(task as u64);
    rng
}

/// The episode of task `task` and the seed its training run uses.
pub fn task_episode(ds: &EmbeddingDataset, cfg: &BenchmarkConfig, task: usize) -> Result<(Episode, u64)> {
    let mut rng = task_rng(cfg.master_seed, task);
    let ep = sample_episode(ds, cfg.n_way, cfg.k_shot, cfg.m_query, &mut rng)?;
    Ok((ep, rng.random()))
}

/// Samples, optionally trains, and evaluates one task.
pub fn run_task(ds: &EmbeddingDataset, cfg: &BenchmarkConfig, task: usize) -> Result<TaskResult> {
    let (ep, train_seed) = task_episode(ds, cfg, task)?;
    let tau = cfg.train.loss.tau;
    let (query, text) = match cfg.mode {
        EvalMode::ZeroShot => (ep.query.clone(), ep.text.clone()),
        EvalMode::FineTune => {
            let tcfg = TrainConfig {
                seed: train_seed,
                snapshot_every: 0,
                ..cfg.train.clone()
            };
            let (adapter, _) = train_episode(&ep.support, &ep.support_labels, &ep.text, &tcfg)?;
            (adapter.apply_visual(&ep.query)?, adapter.apply_text(&ep.text)?)
        }
    };
    let predicted = classify(&query, &text, tau)?;
    let (query_loss, _) = vlm_loss(&query, &text, &ep.query_labels, tau)?;
    let gap = if cfg.measure_gap {
        Some(gap_sweep(&query, &ep.query_labels, &text, &default_alpha_grid(), tau)?.gap)
    } else {
        None
    };
    Ok(TaskResult {
        task,
        classes: ep.classes,
        accuracy: accuracy_percent(&predicted, &ep.query_labels)?,
        query_loss,
        gap,
    })
}

/// Trains task `task` of the benchmark with snapshots every
/// `snapshot_every` epochs and probes each snapshot with visual learning.
pub fn probe_task(
    ds: &EmbeddingDataset,
    cfg: &BenchmarkConfig,
    task: usize,
    snapshot_every: usize,
    probe: &ProbeConfig,
) -> Result<ProbeReport> {
    if snapshot_every == 0 {
        return Err(Error::InvalidConfig("probing needs snapshot_every > 0".into()));
    }
    let (ep, seed) = task_episode(ds, cfg, task)?;
    let tcfg = TrainConfig {
        seed,
        snapshot_every,
        ..cfg.train.clone()
    };
    let (_, traj) = train_episode(&ep.support, &ep.support_labels, &ep.text, &tcfg)?;
    visual_probe(&traj.snapshots, &ep.support, &ep.support_labels, &ep.text, probe)
}

/// Runs `cfg.tasks` independent tasks, on `cfg.threads` workers when more
/// than one, and aggregates them in task order.
pub fn run_benchmark(ds: &EmbeddingDataset, cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    cfg.validate()?;
    let tasks = if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..cfg.tasks)
                .into_par_iter()
                .map(|t| run_task(ds, cfg, t))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..cfg.tasks).map(|t| run_task(ds, cfg, t)).collect::<Result<Vec<_>>>()?
    };
    Ok(BenchmarkResult::from_tasks(tasks))
}
