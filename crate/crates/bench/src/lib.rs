//! Shared fixtures for the benches: one 5-way 1-shot episode drawn from a
//! synthetic dataset at the default geometry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xmod_core::episodes::sample_episode;
use xmod_core::{gen_synthetic, EmbeddingDataset, Episode, SyntheticConfig};

pub fn dataset() -> EmbeddingDataset {
    gen_synthetic(&SyntheticConfig::default()).expect("default synthetic config is valid")
}

pub fn episode(ds: &EmbeddingDataset, n_way: usize, k_shot: usize) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    sample_episode(ds, n_way, k_shot, 15, &mut rng).expect("dataset has enough samples")
}
