//! Persisted datasets and adapters, and the synthetic dataset generator.

pub mod container;
mod adapter_io;
mod dataset;
mod synthetic;

pub use adapter_io::{load_adapter, save_adapter, AdapterManifest};
pub use dataset::{
    DatasetManifest, EmbeddingDataset, LoadReport, OffNormRow, Table, FEATURES_FILE, LABELS_FILE,
    NORM_TOLERANCE, TEXT_FILE,
};
pub use synthetic::{gen_synthetic, SyntheticConfig, MAX_ANCHOR_COSINE};
