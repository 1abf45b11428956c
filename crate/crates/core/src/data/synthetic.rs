//! Synthetic embedding datasets with a controllable modality gap.
//!
//! Text features are random unit anchors. Each visual feature is its class
//! anchor seen through a fixed random rotation (a domain shift), plus
//! isotropic noise and a constant offset along a random unit direction (the
//! modality gap), renormalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, normalize_in_place, Matrix};

/// Anchors must have pairwise cosine below this.
pub const MAX_ANCHOR_COSINE: f64 = 0.95;
const ANCHOR_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub sigma: f64,
    /// Length of the constant offset added to every visual feature.
    pub gap: f64,
    /// Rotation angle in radians applied in `⌊dim/2⌋` random planes.
    pub rotation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            per_class: 40,
            dim: 64,
            sigma: 0.25,
            gap: 0.8,
            rotation: Self::DEFAULT_ROTATION,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub const DEFAULT_ROTATION: f64 = 1.0;

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim < 2 {
            return bad(format!("dimension must be at least 2, got {}", self.dim));
        }
        if self.classes == 0 || self.per_class == 0 {
            return bad("need at least one class and one sample per class".into());
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        if !(self.gap >= 0.0) || !self.gap.is_finite() {
            return bad(format!("gap must be finite and non-negative, got {}", self.gap));
        }
        if !self.rotation.is_finite() {
            return bad("rotation must be finite".into());
        }
        Ok(())
    }
}

fn gaussian_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

fn anchors<R: Rng>(rng: &mut R, classes: usize, dim: usize) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let accepted = (0..ANCHOR_ATTEMPTS).find_map(|_| {
            let v = gaussian_unit(rng, dim);
            rows.iter()
                .all(|r| dot(r, &v) < MAX_ANCHOR_COSINE)
                .then_some(v)
        });
        match accepted {
            Some(v) => rows.push(v),
            None => return Err(Error::AnchorRejectionExhausted { classes, dim }),
        }
    }
    Matrix::from_rows(&rows)
}

/// Random orthonormal basis by Gram-Schmidt on Gaussian vectors.
fn orthonormal_basis<R: Rng>(rng: &mut R, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p = dot(&v, b);
            axpy(-p, b, &mut v);
        }
        if normalize_in_place(&mut v).is_ok() {
            basis.push(v);
        }
    }
    basis
}

/// Rotation by `theta` in the planes spanned by consecutive basis pairs:
/// `I + Σ (cosθ−1)(aaᵀ + bbᵀ) + sinθ (baᵀ − abᵀ)`.
pub(crate) fn plane_rotation(basis: &[Vec<f64>], theta: f64) -> Matrix {
    let dim = basis.len();
    let mut r = Matrix::identity(dim);
    let (c, s) = (theta.cos() - 1.0, theta.sin());
    for pair in basis.chunks_exact(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for i in 0..dim {
            for j in 0..dim {
                r[(i, j)] += c * (a[i] * a[j] + b[i] * b[j]) + s * (b[i] * a[j] - a[i] * b[j]);
            }
        }
    }
    r
}

/// Generates a dataset; identical configurations give identical datasets.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<EmbeddingDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let text = anchors(&mut rng, cfg.classes, d)?;
    let offset = gaussian_unit(&mut rng, d);
    let rotation = plane_rotation(&orthonormal_basis(&mut rng, d), cfg.rotation);
    let rotated: Vec<Vec<f64>> = text.iter_rows().map(|t| rotation.matvec(t)).collect();

    let count = cfg.classes * cfg.per_class;
    let mut features = Matrix::zeros(count, d);
    let mut labels = Vec::with_capacity(count);
    for (class, center) in rotated.iter().enumerate() {
        for s in 0..cfg.per_class {
            let row = features.row_mut(class * cfg.per_class + s);
            row.copy_from_slice(center);
            for v in row.iter_mut() {
                *v += cfg.sigma * rng.sample::<f64, _>(StandardNormal);
            }
            axpy(cfg.gap, &offset, row);
            normalize_in_place(row)?;
            labels.push(class);
        }
    }
    let names = (0..cfg.classes).map(|c| format!("class_{c:03}")).collect();
    EmbeddingDataset::new(features, labels, names, text, "synthetic")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gram_matrix;

    #[test]
    fn degenerate_generator_reproduces_anchors() {
        let ds = gen_synthetic(&SyntheticConfig {
            classes: 6,
            per_class: 3,
            dim: 8,
            sigma: 0.0,
            gap: 0.0,
            rotation: 0.0,
            seed: 4,
        })
        .unwrap();
        for (i, &y) in ds.labels().iter().enumerate() {
            let diff = ds
                .features()
                .row(i)
                .iter()
                .zip(ds.text().row(y))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-15, "{diff}");
        }
    }

    #[test]
    fn deterministic_and_separated() {
        let cfg = SyntheticConfig {
            seed: 11,
            ..SyntheticConfig::default()
        };
        let a = gen_synthetic(&cfg).unwrap();
        assert_eq!(a, gen_synthetic(&cfg).unwrap());
        assert_ne!(a, gen_synthetic(&SyntheticConfig { seed: 12, ..cfg }).unwrap());
        let g = gram_matrix(a.text());
        for i in 0..g.rows() {
            for j in 0..g.rows() {
                if i != j {
                    assert!(g[(i, j)] < MAX_ANCHOR_COSINE);
                }
            }
        }
        assert_eq!(a.count(), 800);
        assert!(a.features().rows_unit_norm(1e-12));
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in [2, 5, 8] {
            let r = plane_rotation(&orthonormal_basis(&mut rng, d), 0.7);
            let rtr = r.transpose().matmul(&r).unwrap();
            assert!(rtr.max_abs_diff(&Matrix::identity(d)) < 1e-12);
        }
        let basis = orthonormal_basis(&mut rng, 4);
        assert_eq!(plane_rotation(&basis, 0.0), Matrix::identity(4));
    }

    #[test]
    fn rejection_exhausts_in_tiny_dimension() {
        let cfg = SyntheticConfig {
            classes: 40,
            dim: 2,
            ..SyntheticConfig::default()
        };
        assert!(matches!(
            gen_synthetic(&cfg),
            Err(Error::AnchorRejectionExhausted { classes: 40, dim: 2 })
        ));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SyntheticConfig { dim: 1, ..SyntheticConfig::default() },
            SyntheticConfig { sigma: -1.0, ..SyntheticConfig::default() },
            SyntheticConfig { gap: f64::NAN, ..SyntheticConfig::default() },
            SyntheticConfig { classes: 0, ..SyntheticConfig::default() },
        ] {
            assert!(matches!(gen_synthetic(&cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
