//! Residual low-rank feature adapter: `x ↦ normalize(x + α · up · (down · x))`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, check_dim, dot, normalize_in_place, Matrix};

/// Which modality rows the adapter is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    #[default]
    Visual,
    Text,
    Both,
}

impl Branch {
    pub fn adapts_visual(self) -> bool {
        matches!(self, Branch::Visual | Branch::Both)
    }

    pub fn adapts_text(self) -> bool {
        matches!(self, Branch::Text | Branch::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankAdapter {
    /// `r × d`
    pub down: Matrix,
    /// `d × r`
    pub up: Matrix,
    pub alpha: f64,
    pub branch: Branch,
}

/// Gradient with the same shapes as the adapter parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad {
    pub down: Matrix,
    pub up: Matrix,
}

impl AdapterGrad {
    pub fn zeros_like(adapter: &LowRankAdapter) -> Self {
        Self {
            down: Matrix::zeros(adapter.down.rows(), adapter.down.cols()),
            up: Matrix::zeros(adapter.up.rows(), adapter.up.cols()),
        }
    }

    pub fn add_scaled(&mut self, s: f64, other: &AdapterGrad) -> Result<()> {
        self.down.add_scaled(s, &other.down)?;
        self.up.add_scaled(s, &other.up)
    }

    pub fn is_finite(&self) -> bool {
        self.down.is_finite() && self.up.is_finite()
    }

    /// Flattened `down` followed by `up`, matching [`LowRankAdapter::params`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.down.as_slice().to_vec();
        v.extend_from_slice(self.up.as_slice());
        v
    }

    pub fn norm(&self) -> f64 {
        (dot(self.down.as_slice(), self.down.as_slice()) + dot(self.up.as_slice(), self.up.as_slice()))
            .sqrt()
    }
}

/// Cached forward pass for one input matrix.
#[derive(Debug, Clone)]
pub struct AdapterForward {
    /// Normalized outputs, one row per input row.
    pub output: Matrix,
    /// `down · x` per row.
    hidden: Matrix,
    /// `‖x + α up h‖` per row.
    pre_norm: Vec<f64>,
}

impl LowRankAdapter {
    pub const DEFAULT_RANK: usize = 4;
    pub const DEFAULT_ALPHA: f64 = 1.0;
    pub const INIT_STD: f64 = 0.02;

    /// `up = 0`, `down ~ N(0, 0.02²)`: the map starts as exact identity on
    /// normalized input.
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        rank: usize,
        alpha: f64,
        branch: Branch,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "adapter needs rank >= 1 and dim >= 1 (rank={rank}, dim={dim})"
            )));
        }
        let normal = Normal::new(0.0, Self::INIT_STD).expect("valid std");
        let down: Vec<f64> = (0..rank * dim).map(|_| normal.sample(rng)).collect();
        Ok(Self {
            down: Matrix::from_vec(rank, dim, down)?,
            up: Matrix::zeros(dim, rank),
            alpha,
            branch,
        })
    }

    pub fn zeros(dim: usize, rank: usize, alpha: f64, branch: Branch) -> Self {
        Self {
            down: Matrix::zeros(rank, dim),
            up: Matrix::zeros(dim, rank),
            alpha,
            branch,
        }
    }

    pub fn dim(&self) -> usize {
        self.down.cols()
    }

    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim() * self.rank()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.down.as_slice().to_vec();
        v.extend_from_slice(self.up.as_slice());
        v
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.param_count(), params.len())?;
        let split = self.down.as_slice().len();
        self.down.as_mut_slice().copy_from_slice(&params[..split]);
        self.up.as_mut_slice().copy_from_slice(&params[split..]);
        Ok(())
    }

    pub fn forward(&self, input: &Matrix) -> Result<AdapterForward> {
        check_dim(self.dim(), input.cols())?;
        let n = input.rows();
        let mut output = input.clone();
        let mut hidden = Matrix::zeros(n, self.rank());
        let mut pre_norm = Vec::with_capacity(n);
        for i in 0..n {
            let h = self.down.matvec(input.row(i));
            let z = output.row_mut(i);
            for (k, &hk) in h.iter().enumerate() {
                let s = self.alpha * hk;
                if s != 0.0 {
                    for (zj, uj) in z.iter_mut().zip(0..self.dim()) {
                        *zj += s * self.up[(uj, k)];
                    }
                }
            }
            pre_norm.push(normalize_in_place(z)?);
            hidden.row_mut(i).copy_from_slice(&h);
        }
        Ok(AdapterForward {
            output,
            hidden,
            pre_norm,
        })
    }

    /// Maps every row through the adapter and renormalizes.
    pub fn apply(&self, input: &Matrix) -> Result<Matrix> {
        self.forward(input).map(|f| f.output)
    }

    /// Adapted visual and text rows according to [`Branch`].
    pub fn apply_visual(&self, input: &Matrix) -> Result<Matrix> {
        if self.branch.adapts_visual() {
            self.apply(input)
        } else {
            Ok(input.clone())
        }
    }

    pub fn apply_text(&self, input: &Matrix) -> Result<Matrix> {
        if self.branch.adapts_text() {
            self.apply(input)
        } else {
            Ok(input.clone())
        }
    }

    /// Accumulates `∂L/∂params` given `∂L/∂output` for a cached forward pass.
    pub fn backward(
        &self,
        input: &Matrix,
        fwd: &AdapterForward,
        d_output: &Matrix,
        grad: &mut AdapterGrad,
    ) -> Result<()> {
        check_dim(input.rows(), d_output.rows())?;
        check_dim(self.dim(), d_output.cols())?;
        let r = self.rank();
        let mut d_hidden = vec![0.0; r];
        for i in 0..input.rows() {
            let f = fwd.output.row(i);
            let g = d_output.row(i);
            // Jacobian of z ↦ z/‖z‖ is (I - f fᵀ)/‖z‖.
            let fg = dot(f, g);
            let dz: Vec<f64> = g
                .iter()
                .zip(f)
                .map(|(gj, fj)| (gj - fj * fg) / fwd.pre_norm[i])
                .collect();
            let h = fwd.hidden.row(i);
            for (j, &dzj) in dz.iter().enumerate() {
                let urow = grad.up.row_mut(j);
                axpy(self.alpha * dzj, h, urow);
            }
            // d_hidden = α upᵀ dz
            d_hidden.iter_mut().for_each(|v| *v = 0.0);
            for (j, &dzj) in dz.iter().enumerate() {
                axpy(self.alpha * dzj, self.up.row(j), &mut d_hidden);
            }
            for (k, &dh) in d_hidden.iter().enumerate() {
                axpy(dh, input.row(i), grad.down.row_mut(k));
            }
        }
        Ok(())
    }

    /// `params ← params − lr · grad`
    pub fn sgd_step(&mut self, grad: &AdapterGrad, lr: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        if lr == 0.0 {
            return Ok(());
        }
        self.down.add_scaled(-lr, &grad.down)?;
        self.up.add_scaled(-lr, &grad.up)
    }
}
