//! Martingale-difference noise models with a known limiting covariance `Γ`.
//!
//! Every draw for step `n` is a function of the replication's stream, `n`
//! and the current state only: the generator is repositioned at the start of
//! the step's block before anything is drawn.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::Problem;
use crate::linalg::{semidefinite_cholesky, SymEigen};
use crate::rng::StepRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `D = L z`, `z` standard normal.
    GaussianIid,
    /// `D = sqrt(1 + g(d(x, M))) L z` with `g(d) = min(d, 1)`.
    StateDependent,
    /// `D = L ε`, `ε` a vector of independent signs.
    BoundedRademacher,
}

/// A noise model: kind, limiting covariance and its factor.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    kind: NoiseKind,
    gamma: DMatrix<f64>,
    factor: DMatrix<f64>,
    degenerate: bool,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, gamma: DMatrix<f64>) -> Result<Self> {
        let factor = factorize(&gamma)?;
        let degenerate = factor.iter().all(|&v| v == 0.0);
        Ok(Self { kind, gamma, factor, degenerate })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// `Γ`, the conditional covariance on `M`.
    pub fn gamma_limit(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// Variates one step may consume.
    pub fn draws_per_step(&self) -> usize {
        self.dim()
    }

    /// Covariance inflation `g(d) = min(d, 1)`; points outside the
    /// projection domain get the cap.
    pub fn state_factor(&self, prob: &Problem, x: &[f64]) -> f64 {
        match self.kind {
            NoiseKind::StateDependent => 1.0 + prob.distance_to_manifold(x).map_or(1.0, |d| d.min(1.0)),
            _ => 1.0,
        }
    }

    /// Conditional covariance at `x`.
    pub fn covariance_at(&self, prob: &Problem, x: &[f64]) -> DMatrix<f64> {
        self.state_factor(prob, x) * &self.gamma
    }

    /// Draw `D_n` at state `x` into `out`.
    pub fn sample_into(&self, prob: &Problem, x: &[f64], n: u64, rng: &mut StepRng, out: &mut [f64]) {
        if self.degenerate {
            out.fill(0.0);
            return;
        }
        rng.begin_step(n);
        let d = self.dim();
        let mut z = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if d <= z.len() {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        match self.kind {
            NoiseKind::GaussianIid | NoiseKind::StateDependent => rng.fill_standard_normal(z),
            NoiseKind::BoundedRademacher => z.iter_mut().for_each(|v| *v = rng.rademacher()),
        }
        let scale = self.state_factor(prob, x).sqrt();
        // lower-triangular product
        for i in 0..d {
            let mut s = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                s += self.factor[(i, j)] * zj;
            }
            out[i] = scale * s;
        }
    }

    pub fn sample(&self, prob: &Problem, x: &[f64], n: u64, rng: &mut StepRng) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(prob, x, n, rng, &mut out);
        out
    }
}

/// Lower-triangular `L` with `L Lᵀ = Γ`.
///
/// Eigenvalues down to `−1e−8·ρ(Γ)` are clipped to zero before a
/// semidefinite Cholesky; anything more negative is rejected.
pub fn factorize(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !gamma.is_square() {
        return Err(Error::InvalidParameter("noise covariance must be square".into()));
    }
    if crate::linalg::max_asymmetry(gamma) > 1e-12 * (1.0 + gamma.amax()) {
        return Err(Error::InvalidParameter("noise covariance must be symmetric".into()));
    }
    let d = gamma.nrows();
    let eig = SymEigen::new(gamma)?;
    let radius = eig.spectral_radius();
    if radius == 0.0 {
        return Ok(DMatrix::zeros(d, d));
    }
    let min = eig.values[0];
    if min < -1e-8 * radius {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let clipped = if min < 0.0 { eig.map(|v| v.max(0.0)) } else { crate::linalg::symmetrize(gamma) };
    Ok(semidefinite_cholesky(&clipped, 1e-13 * radius))
}
