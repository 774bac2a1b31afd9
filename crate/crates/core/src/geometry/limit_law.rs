//! Tangent/normal split at a manifold point and the Gaussian limit law of
//! the averaged iterates.

use nalgebra::DMatrix;

use crate::linalg::SymEigen;
use crate::schedules::c_rho;
use crate::{Error, Result};

use super::Problem;

/// Points further than this from `M` are rejected by the split.
const ON_MANIFOLD_TOL: f64 = 1e-8;

/// Spectral decomposition of `Df(m)` into kernel (tangent) and negative
/// (normal) eigenspaces.
#[derive(Debug, Clone)]
pub struct NormalSplit {
    /// Normal eigenvalues, ascending (all strictly negative).
    pub normal_values: Vec<f64>,
    /// Matching unit eigenvectors as columns, `d × d_θ`.
    pub normal_vectors: DMatrix<f64>,
    /// Kernel eigenvectors, `d × d_ζ`.
    pub tangent_vectors: DMatrix<f64>,
    /// Eigenvalues with magnitude at most this count as zero.
    pub threshold: f64,
}

impl NormalSplit {
    /// `Σ v vᵀ g(λ)` over the normal eigenpairs.
    pub fn normal_map(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.normal_vectors.nrows();
        let mut out = DMatrix::zeros(d, d);
        for (k, &lambda) in self.normal_values.iter().enumerate() {
            let v = self.normal_vectors.column(k);
            out += g(lambda) * v * v.transpose();
        }
        out
    }

    /// Stability constants: `L = min |λ|`, `C = max |λ|` over the normal block.
    pub fn stability(&self) -> (f64, f64) {
        let mags = self.normal_values.iter().map(|v| v.abs());
        let l = mags.clone().fold(f64::INFINITY, f64::min);
        let c = mags.fold(0.0, f64::max);
        (l, c)
    }
}

/// Split `Df(m)` at the manifold point `m`.
///
/// Eigenvalues in `[−t, t]`, `t = 1e−8·(1 + spectral radius)`, are tangent.
/// A positive eigenvalue above `t` raises [`Error::EigenGap`]; fewer than
/// `d_θ` negative eigenvalues raises [`Error::Singular`].
pub fn normal_split(prob: &Problem, m: &[f64]) -> Result<NormalSplit> {
    let residual = prob.manifold_residual(m);
    if !(residual <= ON_MANIFOLD_TOL) {
        return Err(Error::InvalidParameter(format!("point is not on the manifold (residual {residual:e})")));
    }
    let eig = SymEigen::new(&prob.hessian(m))?;
    let t = 1e-8 * (1.0 + eig.spectral_radius());
    if let Some(&pos) = eig.values.iter().find(|&&v| v > t) {
        return Err(Error::EigenGap(format!("positive Hessian eigenvalue {pos:e} above threshold {t:e} on the manifold")));
    }
    let d = prob.dim();
    let k = prob.normal_dim();
    let n_neg = eig.values.iter().filter(|&&v| v < -t).count();
    if n_neg < k {
        // weakest would-be normal direction
        return Err(Error::Singular(eig.values[k - 1]));
    }
    if n_neg > k {
        return Err(Error::EigenGap(format!("{n_neg} negative eigenvalues but the normal space has dimension {k}")));
    }
    // ascending order puts the normal block first
    Ok(NormalSplit {
        normal_values: eig.values[..k].to_vec(),
        normal_vectors: eig.vectors.columns(0, k).into_owned(),
        tangent_vectors: eig.vectors.columns(k, d - k).into_owned(),
        threshold: t,
    })
}

/// Orthogonal projector `Π` onto the normal space at `m`.
pub fn normal_projector(prob: &Problem, m: &[f64]) -> Result<DMatrix<f64>> {
    Ok(normal_split(prob, m)?.normal_map(|_| 1.0))
}

/// `B = (Df(m)|_N)⁻¹ Π`.
pub fn restricted_inverse(prob: &Problem, m: &[f64]) -> Result<DMatrix<f64>> {
    Ok(normal_split(prob, m)?.normal_map(|l| 1.0 / l))
}

/// The limit law at a limit point `m` for noise covariance `Γ`.
#[derive(Debug, Clone)]
pub struct LimitLaw {
    pub limit_point: Vec<f64>,
    pub rho: f64,
    pub c_rho: f64,
    /// Normal projector `Π`.
    pub projector: DMatrix<f64>,
    /// `B = (Df|_N)⁻¹ Π`.
    pub b: DMatrix<f64>,
    /// `B Γ Bᵀ`, the covariance before the weight factor.
    pub transform_cov: DMatrix<f64>,
    /// `c(ρ)² B Γ Bᵀ`.
    pub sigma: DMatrix<f64>,
    /// Eigenvalues of `c(ρ)² S Γ Sᵀ` on the normal block, descending, with
    /// `S = (−Df|_N)^{−1/2} Π`.
    pub perf_spectrum: Vec<f64>,
}

pub fn limit_law(prob: &Problem, m: &[f64], gamma: &DMatrix<f64>, rho: f64) -> Result<LimitLaw> {
    let d = prob.dim();
    if gamma.nrows() != d || gamma.ncols() != d {
        return Err(Error::InvalidParameter(format!(
            "noise covariance must be {d}x{d}, got {}x{}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    check_psd(gamma)?;
    let c = c_rho(rho)?;
    let split = normal_split(prob, m)?;
    let projector = split.normal_map(|_| 1.0);
    let b = split.normal_map(|l| 1.0 / l);
    let transform_cov = crate::linalg::symmetrize(&(&b * gamma * b.transpose()));
    let sigma = c * c * &transform_cov;

    let s = split.normal_map(|l| 1.0 / (-l).sqrt());
    let v = &split.normal_vectors;
    let block = crate::linalg::symmetrize(&(v.transpose() * &s * gamma * s.transpose() * v));
    let mut perf_spectrum: Vec<f64> =
        SymEigen::new(&block)?.values.into_iter().map(|x| (c * c * x).max(0.0)).collect();
    perf_spectrum.reverse();

    Ok(LimitLaw { limit_point: m.to_vec(), rho, c_rho: c, projector, b, transform_cov, sigma, perf_spectrum })
}

/// Symmetric with eigenvalues no lower than `−1e−8·spectral radius`.
pub(crate) fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if crate::linalg::max_asymmetry(m) > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::InvalidParameter("covariance must be symmetric".into()));
    }
    let eig = SymEigen::new(m)?;
    let min = eig.values.first().copied().unwrap_or(0.0);
    if min < -1e-8 * eig.spectral_radius() {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(())
}
