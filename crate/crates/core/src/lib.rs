//! Losses, gradients, low-rank adapters, episode benchmarks and diagnostics
//! for studying how cross-entropy fine-tuning of a vision-language model
//! trades cross-modal alignment for visual discriminability, and for
//! counteracting it with anti-visual and relation-alignment terms.
//!
//! All numerics run in `f64` on unit-norm embedding rows. Features come
//! either from [`data::gen_synthetic`] or from a dataset directory written by
//! an external feature exporter.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod data;
pub mod diagnostics;
pub mod episodes;
pub mod error;
pub mod gradients;
pub mod linalg;
pub mod losses;
pub mod train;

pub use adapter::{AdapterGrad, Branch, LowRankAdapter};
pub use data::{gen_synthetic, EmbeddingDataset, SyntheticConfig};
pub use diagnostics::{GapReport, ProbeConfig, ProbeReport};
pub use episodes::{BenchmarkConfig, BenchmarkResult, Episode, EvalMode, TaskResult};
pub use error::{Error, ErrorKind, Result};
pub use gradients::{GradCheckResult, TheoremReport};
pub use linalg::{FeatureMatrix, Matrix, SimilarityMatrix};
pub use losses::{EpochWindow, LossConfig, PhaseState, RaStrategy, SvlStrategy};
pub use train::{PhaseMode, TrainConfig, TrainTrajectory};
