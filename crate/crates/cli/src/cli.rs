use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xmod_core::{Branch, PhaseMode, RaStrategy, SvlStrategy};

#[derive(Debug, Parser)]
#[command(name = "xmod-align", version, about = "Cross-modal alignment lab for few-shot VLM adaptation")]
pub struct Cli {
    /// Resolved run configuration to start from (for example the
    /// `run_config.toml` of an earlier run); flags given on the command line
    /// override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic embedding dataset with a modality gap.
    GenSynth(GenSynthArgs),
    /// Run an N-way K-shot benchmark.
    Benchmark(BenchmarkArgs),
    /// Check the one-step cosine-change analysis on seeded instances.
    VerifyTheorem(TheoremArgs),
    /// Sweep a shift along the modality gap and report the Gap metric.
    GapShift(GapShiftArgs),
    /// Train one task with snapshots and probe each with visual learning.
    Probe(ProbeArgs),
    /// Benchmark a grid of loss weights.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Per-coordinate standard deviation of the intra-class noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Length of the constant offset added to every visual feature.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Domain rotation angle in radians.
    #[arg(long)]
    pub rotation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SvlArg {
    Off,
    Ours,
    NegLv,
    NoiseProto,
}

impl From<SvlArg> for SvlStrategy {
    fn from(v: SvlArg) -> Self {
        match v {
            SvlArg::Off => SvlStrategy::Off,
            SvlArg::Ours => SvlStrategy::ClassShuffle,
            SvlArg::NegLv => SvlStrategy::NegLv,
            SvlArg::NoiseProto => SvlStrategy::NoiseProto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RaArg {
    Off,
    Ours,
    OnlyVision,
    OnlyText,
}

impl From<RaArg> for RaStrategy {
    fn from(v: RaArg) -> Self {
        match v {
            RaArg::Off => RaStrategy::Off,
            RaArg::Ours => RaStrategy::Fused,
            RaArg::OnlyVision => RaStrategy::OnlyVision,
            RaArg::OnlyText => RaStrategy::OnlyText,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    No,
    Begin,
    Middle,
    Last,
    All,
}

impl From<PhaseArg> for PhaseMode {
    fn from(v: PhaseArg) -> Self {
        match v {
            PhaseArg::No => PhaseMode::No,
            PhaseArg::Begin => PhaseMode::Begin,
            PhaseArg::Middle => PhaseMode::Middle,
            PhaseArg::Last => PhaseMode::Last,
            PhaseArg::All => PhaseMode::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BranchArg {
    Visual,
    Text,
    Both,
}

impl From<BranchArg> for Branch {
    fn from(v: BranchArg) -> Self {
        match v {
            BranchArg::Visual => Branch::Visual,
            BranchArg::Text => Branch::Text,
            BranchArg::Both => Branch::Both,
        }
    }
}

/// Episode, training and loss settings shared by `benchmark`, `probe` and
/// `sweep`. Unset flags keep the value of `--config` or the default.
#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Classes per task [default: 5]
    #[arg(long)]
    pub n: Option<usize>,
    /// Support samples per class [default: 1]
    #[arg(long)]
    pub k: Option<usize>,
    /// Query samples per class [default: 15]
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of tasks [default: 800]
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Anti-visual weight [default: 0.1, or 0.001 with --branch text]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Relation-alignment weight [default: 3]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Softmax temperature of the cross-modal and visual losses [default: 0.01]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Softmax temperature of the relation alignment [default: 1]
    #[arg(long)]
    pub tau_ra: Option<f64>,
    /// Training epochs [default: 250]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs with the auxiliary losses under `--phase begin` [default: 3/5 of --epochs]
    #[arg(long)]
    pub init_epochs: Option<usize>,
    /// Gradient-descent step size [default: 0.03]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adapter rank [default: 4]
    #[arg(long)]
    pub rank: Option<usize>,
    /// Adapter residual scale [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Adapted modality [default: visual]
    #[arg(long, value_enum)]
    pub branch: Option<BranchArg>,
    /// Anti-visual strategy [default: ours]
    #[arg(long, value_enum)]
    pub svl: Option<SvlArg>,
    /// Relation-alignment strategy [default: ours]
    #[arg(long, value_enum)]
    pub ra: Option<RaArg>,
    /// Epochs in which the auxiliary losses are active [default: begin]
    #[arg(long, value_enum)]
    pub phase: Option<PhaseArg>,
    /// Gradient steps per epoch [default: 1]
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Gaussian jitter on the support features during training [default: 0]
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for tasks [default: 1]
    #[arg(long, env = "XMOD_ALIGN_THREADS")]
    pub parallel: Option<usize>,
    /// Evaluate the unadapted features instead of training.
    #[arg(long)]
    pub zero_shot: bool,
    /// Also compute the Gap metric of every adapted query set.
    #[arg(long)]
    pub measure_gap: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct TheoremArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random instances [default: 50]
    #[arg(long)]
    pub instances: Option<usize>,
    /// Classes per instance [default: 5]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Samples per class [default: 2]
    #[arg(long)]
    pub shots: Option<usize>,
    /// Feature dimension [default: 16]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Step size of the one-step update [default: 0.01]
    #[arg(long)]
    pub eta: Option<f64>,
    /// Softmax temperature [default: 1]
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GapShiftArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Adapter directory applied to the features before the sweep.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// [default: 0.01]
    #[arg(long)]
    pub tau: Option<f64>,
    /// [default: -1]
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_min: Option<f64>,
    /// [default: 1.5]
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_max: Option<f64>,
    /// [default: 0.05]
    #[arg(long)]
    pub alpha_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Task index whose episode is trained [default: 0]
    #[arg(long)]
    pub task: Option<usize>,
    /// Snapshot interval in epochs [default: 10]
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Visual-learning steps per snapshot [default: 10]
    #[arg(long)]
    pub probe_steps: Option<usize>,
    /// Visual-learning step size [default: 0.01]
    #[arg(long)]
    pub probe_lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// [default: 0,0.01,0.1,0.5,1]
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// [default: 0,0.5,1,3,5]
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Auxiliary-phase lengths to sweep as well [default: the --init-epochs value]
    #[arg(long, value_delimiter = ',')]
    pub init_epochs_grid: Option<Vec<usize>>,
}
