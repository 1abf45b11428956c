//! Resolved run configurations. Every command starts from defaults or from a
//! `--config` file, applies the flags given on the command line, validates
//! the result and writes it next to its outputs as `run_config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xmod_core::{
    BenchmarkConfig, Branch, EpochWindow, Error, EvalMode, LossConfig, PhaseMode, ProbeConfig,
    Result, SyntheticConfig, TrainConfig,
};

use crate::cli::{ExperimentArgs, GapShiftArgs, GenSynthArgs, ProbeArgs, SweepArgs, TheoremArgs};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    GenSynth(GenSynthRun),
    Benchmark(BenchmarkRun),
    VerifyTheorem(TheoremRun),
    GapShift(GapShiftRun),
    Probe(ProbeRun),
    Sweep(SweepRun),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::GenSynth(_) => "gen-synth",
            RunConfig::Benchmark(_) => "benchmark",
            RunConfig::VerifyTheorem(_) => "verify-theorem",
            RunConfig::GapShift(_) => "gap-shift",
            RunConfig::Probe(_) => "probe",
            RunConfig::Sweep(_) => "sweep",
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| Error::InvalidConfig(format!("cannot serialize run config: {e}")))?;
        let path = dir.join(RUN_CONFIG_FILE);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Error::InvalidConfig(format!("missing --{flag}")))
}

fn mismatch(expected: &str, found: &RunConfig) -> Error {
    Error::InvalidConfig(format!(
        "--config describes a {} run, not {expected}",
        found.name()
    ))
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v.into();
        }
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSynthRun {
    pub out: PathBuf,
    pub synthetic: SyntheticConfig,
}

impl GenSynthRun {
    pub fn resolve(args: GenSynthArgs, base: Option<RunConfig>) -> Result<Self> {
        let (out, mut synthetic) = match base {
            None => (None, SyntheticConfig::default()),
            Some(RunConfig::GenSynth(r)) => (Some(r.out), r.synthetic),
            Some(other) => return Err(mismatch("gen-synth", &other)),
        };
        set!(synthetic.classes, args.classes);
        set!(synthetic.per_class, args.per_class);
        set!(synthetic.dim, args.dim);
        set!(synthetic.sigma, args.sigma);
        set!(synthetic.gap, args.gap);
        set!(synthetic.rotation, args.rotation);
        set!(synthetic.seed, args.seed);
        synthetic.validate()?;
        Ok(Self {
            out: required(args.out.or(out), "out")?,
            synthetic,
        })
    }
}

/// Benchmark settings plus the phase choice that produced the auxiliary
/// window stored in `benchmark.train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub data: PathBuf,
    pub out: PathBuf,
    pub phase: PhaseMode,
    pub init_epochs: usize,
    pub benchmark: BenchmarkConfig,
}

/// The auxiliary window of `phase`: `begin` spans the first `init_epochs`
/// epochs, the other phases are fixed fractions of training.
pub fn phase_window(phase: PhaseMode, epochs: usize, init_epochs: usize) -> EpochWindow {
    match phase {
        PhaseMode::Begin => EpochWindow { start: 0, end: init_epochs },
        other => other.window(epochs),
    }
}

impl Experiment {
    fn resolve(args: ExperimentArgs, base: Option<Experiment>) -> Result<Self> {
        let (data, out, mut phase, mut init_epochs, mut b) = match base {
            Some(e) => (Some(e.data), Some(e.out), e.phase, e.init_epochs, e.benchmark),
            None => {
                let b = BenchmarkConfig::default();
                let init = b.train.aux_window.end;
                (None, None, PhaseMode::Begin, init, b)
            }
        };
        set!(b.n_way, args.n);
        set!(b.k_shot, args.k);
        set!(b.m_query, args.m);
        set!(b.tasks, args.tasks);
        set!(b.master_seed, args.seed);
        set!(b.threads, args.parallel);
        if args.zero_shot {
            b.mode = EvalMode::ZeroShot;
        }
        if args.measure_gap {
            b.measure_gap = true;
        }

        let t = &mut b.train;
        if let Some(epochs) = args.epochs {
            t.epochs = epochs;
            init_epochs = TrainConfig::default_init_epochs(epochs);
        }
        set!(init_epochs, args.init_epochs);
        set!(phase, args.phase);
        set!(t.lr, args.lr);
        set!(t.rank, args.rank);
        set!(t.alpha, args.alpha);
        set!(t.steps_per_epoch, args.steps_per_epoch);
        set!(t.jitter, args.jitter);
        if let Some(branch) = args.branch {
            t.branch = branch.into();
            if t.branch == Branch::Text && args.lambda.is_none() {
                t.loss.lambda = LossConfig::TEXT_BRANCH_LAMBDA;
            }
        }
        set!(t.loss.lambda, args.lambda);
        set!(t.loss.beta, args.beta);
        set!(t.loss.tau, args.tau);
        set!(t.loss.tau_ra, args.tau_ra);
        set!(t.loss.svl, args.svl);
        set!(t.loss.ra, args.ra);

        if init_epochs > t.epochs {
            return Err(Error::InvalidConfig(format!(
                "--init-epochs {init_epochs} exceeds --epochs {}",
                t.epochs
            )));
        }
        if b.threads == 0 {
            return Err(Error::InvalidConfig("--parallel must be at least 1".into()));
        }
        t.aux_window = phase_window(phase, t.epochs, init_epochs);
        b.validate()?;
        Ok(Self {
            data: required(args.data.or(data), "data")?,
            out: required(args.out.or(out), "out")?,
            phase,
            init_epochs,
            benchmark: b,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub experiment: Experiment,
}

impl BenchmarkRun {
    pub fn resolve(args: ExperimentArgs, base: Option<RunConfig>) -> Result<Self> {
        let base = match base {
            None => None,
            Some(RunConfig::Benchmark(r)) => Some(r.experiment),
            Some(other) => return Err(mismatch("benchmark", &other)),
        };
        Ok(Self {
            experiment: Experiment::resolve(args, base)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremRun {
    pub out: PathBuf,
    pub instances: usize,
    pub classes: usize,
    pub shots: usize,
    pub dim: usize,
    pub eta: f64,
    pub tau: f64,
    pub seed: u64,
}

impl TheoremRun {
    pub fn resolve(args: TheoremArgs, base: Option<RunConfig>) -> Result<Self> {
        let mut run = match base {
            None => None,
            Some(RunConfig::VerifyTheorem(r)) => Some(r),
            Some(other) => return Err(mismatch("verify-theorem", &other)),
        };
        let out = required(args.out.or(run.as_ref().map(|r| r.out.clone())), "out")?;
        let mut r = run.take().unwrap_or(TheoremRun {
            out: out.clone(),
            instances: 50,
            classes: 5,
            shots: 2,
            dim: 16,
            eta: 0.01,
            tau: 1.0,
            seed: 0,
        });
        r.out = out;
        set!(r.instances, args.instances);
        set!(r.classes, args.classes);
        set!(r.shots, args.shots);
        set!(r.dim, args.dim);
        set!(r.eta, args.eta);
        set!(r.tau, args.tau);
        set!(r.seed, args.seed);
        if r.instances == 0 || r.classes < 2 || r.shots == 0 || r.dim < 2 {
            return Err(Error::InvalidConfig(
                "need at least one instance, two classes, one shot and two dimensions".into(),
            ));
        }
        if !(r.eta >= 0.0) || !r.eta.is_finite() {
            return Err(Error::InvalidConfig(format!("--eta must be finite and non-negative, got {}", r.eta)));
        }
        if !(r.tau > 0.0) {
            return Err(Error::NonPositiveTemperature(r.tau));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapShiftRun {
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<PathBuf>,
    pub tau: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_step: f64,
}

impl GapShiftRun {
    pub fn resolve(args: GapShiftArgs, base: Option<RunConfig>) -> Result<Self> {
        let base = match base {
            None => None,
            Some(RunConfig::GapShift(r)) => Some(r),
            Some(other) => return Err(mismatch("gap-shift", &other)),
        };
        let (data, out, adapter) = match &base {
            Some(b) => (Some(b.data.clone()), Some(b.out.clone()), b.adapter.clone()),
            None => (None, None, None),
        };
        let mut r = GapShiftRun {
            data: required(args.data.or(data), "data")?,
            out: required(args.out.or(out), "out")?,
            adapter: args.adapter.or(adapter),
            tau: base.as_ref().map_or(0.01, |b| b.tau),
            alpha_min: base.as_ref().map_or(-1.0, |b| b.alpha_min),
            alpha_max: base.as_ref().map_or(1.5, |b| b.alpha_max),
            alpha_step: base.as_ref().map_or(0.05, |b| b.alpha_step),
        };
        set!(r.tau, args.tau);
        set!(r.alpha_min, args.alpha_min);
        set!(r.alpha_max, args.alpha_max);
        set!(r.alpha_step, args.alpha_step);
        r.grid()?;
        Ok(r)
    }

    /// `k · step` for every integer `k` with `min ≤ k · step ≤ max`.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let (lo, hi, step) = (self.alpha_min, self.alpha_max, self.alpha_step);
        if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || !(lo <= 0.0 && 0.0 <= hi) {
            return Err(Error::InvalidConfig(format!(
                "alpha grid needs step > 0 and min ≤ 0 ≤ max, got {lo}..{hi} step {step}"
            )));
        }
        let first = (lo / step - 1e-9).ceil() as i64;
        let last = (hi / step + 1e-9).floor() as i64;
        if last - first > 100_000 {
            return Err(Error::InvalidConfig("alpha grid has more than 100000 points".into()));
        }
        Ok((first..=last).map(|k| (k as f64 * step * 1e12).round() / 1e12).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub experiment: Experiment,
    pub task: usize,
    pub snapshot_every: usize,
    pub probe: ProbeConfig,
}

impl ProbeRun {
    pub fn resolve(args: ProbeArgs, base: Option<RunConfig>) -> Result<Self> {
        let base = match base {
            None => None,
            Some(RunConfig::Probe(r)) => Some(r),
            Some(other) => return Err(mismatch("probe", &other)),
        };
        let (experiment, mut task, mut snapshot_every, mut probe) = match base {
            Some(r) => (Some(r.experiment), r.task, r.snapshot_every, r.probe),
            None => (None, 0, 10, ProbeConfig::default()),
        };
        let experiment = Experiment::resolve(args.experiment, experiment)?;
        set!(task, args.task);
        set!(snapshot_every, args.snapshot_every);
        set!(probe.steps, args.probe_steps);
        set!(probe.lr, args.probe_lr);
        probe.tau = experiment.benchmark.train.loss.tau;
        if snapshot_every == 0 {
            return Err(Error::InvalidConfig("--snapshot-every must be at least 1".into()));
        }
        if !(probe.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("--probe-lr must be non-negative, got {}", probe.lr)));
        }
        Ok(Self {
            experiment,
            task,
            snapshot_every,
            probe,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub experiment: Experiment,
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    pub init_epochs_grid: Vec<usize>,
}

impl SweepRun {
    pub fn resolve(args: SweepArgs, base: Option<RunConfig>) -> Result<Self> {
        let base = match base {
            None => None,
            Some(RunConfig::Sweep(r)) => Some(r),
            Some(other) => return Err(mismatch("sweep", &other)),
        };
        let (experiment, lambdas, betas, inits) = match base {
            Some(r) => (Some(r.experiment), r.lambdas, r.betas, Some(r.init_epochs_grid)),
            None => (None, vec![0.0, 0.01, 0.1, 0.5, 1.0], vec![0.0, 0.5, 1.0, 3.0, 5.0], None),
        };
        let init_flag_given = args.experiment.init_epochs.is_some() || args.experiment.epochs.is_some();
        let experiment = Experiment::resolve(args.experiment, experiment)?;
        let init_epochs_grid = match (args.init_epochs_grid, inits) {
            (Some(g), _) => g,
            (None, Some(g)) if !init_flag_given => g,
            _ => vec![experiment.init_epochs],
        };
        let run = Self {
            lambdas: args.lambdas.unwrap_or(lambdas),
            betas: args.betas.unwrap_or(betas),
            init_epochs_grid,
            experiment,
        };
        if run.lambdas.is_empty() || run.betas.is_empty() || run.init_epochs_grid.is_empty() {
            return Err(Error::InvalidConfig("every sweep axis needs at least one value".into()));
        }
        for &init in &run.init_epochs_grid {
            if init > run.experiment.benchmark.train.epochs {
                return Err(Error::InvalidConfig(format!(
                    "init epochs {init} exceed {} epochs",
                    run.experiment.benchmark.train.epochs
                )));
            }
        }
        Ok(run)
    }

    /// Benchmark configuration of one grid cell.
    pub fn cell(&self, lambda: f64, beta: f64, init_epochs: usize) -> Result<BenchmarkConfig> {
        let mut b = self.experiment.benchmark.clone();
        b.train.loss.lambda = lambda;
        b.train.loss.beta = beta;
        b.train.aux_window = phase_window(self.experiment.phase, b.train.epochs, init_epochs);
        b.validate()?;
        Ok(b)
    }
}
