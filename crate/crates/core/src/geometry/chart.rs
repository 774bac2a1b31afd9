//! Analytic nice representations (Fermi-type charts) for the built-in
//! problems.
//!
//! A chart maps `x ↦ (ζ, θ)` with `M = {θ = 0}` and `Φ(ζ, θ) = Φ(ζ, 0) + P(θ)`
//! where `P` is an isometry onto the normal space, so `|θ|` is the distance
//! to `M`.

use std::f64::consts::FRAC_PI_2;

use crate::linalg::{dot, norm};
use crate::{Error, Result};

use super::{hyperbola_foot, hyperbola_normal};

/// Chart coordinates: position along `M` and normal offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    pub zeta: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NiceRepresentation {
    /// `(ζ, θ)` are the ambient coordinates themselves.
    Identity { zeta_dim: usize, dim: usize },
    /// Exponential chart of the unit sphere around `pole` (geodesic normal
    /// coordinates in the orthonormal `basis` of the tangent space at the
    /// pole) with the radial offset `θ = |x| − 1`. Covers the open
    /// hemisphere around the pole.
    Sphere { pole: Vec<f64>, basis: Vec<Vec<f64>>, max_offset: f64 },
    /// `ζ` is the first coordinate `a` of the foot point `(a, c/a)` (monotone
    /// in arc length), `θ` the signed offset along the unit normal.
    Hyperbola { c: f64, max_offset: f64, foot_range: (f64, f64) },
}

impl NiceRepresentation {
    pub fn identity(zeta_dim: usize, dim: usize) -> Self {
        Self::Identity { zeta_dim, dim }
    }

    /// Exponential chart centred at the unit vector `pole`.
    ///
    /// The tangent basis comes from Gram-Schmidt on the standard basis,
    /// dropping the coordinate direction most aligned with the pole.
    pub fn sphere(pole: &[f64], max_offset: f64) -> Self {
        let d = pole.len();
        let r = norm(pole);
        let pole: Vec<f64> = pole.iter().map(|v| v / r).collect();
        let drop = (0..d).max_by(|&i, &j| pole[i].abs().total_cmp(&pole[j].abs())).unwrap_or(0);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d.saturating_sub(1));
        for k in (0..d).filter(|&k| k != drop) {
            let mut v = vec![0.0; d];
            v[k] = 1.0;
            for u in std::iter::once(&pole).chain(basis.iter()) {
                let proj = dot(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
            }
            let len = norm(&v);
            basis.push(v.into_iter().map(|x| x / len).collect());
        }
        Self::Sphere { pole, basis, max_offset }
    }

    pub fn hyperbola(c: f64, max_offset: f64, foot_range: (f64, f64)) -> Self {
        Self::Hyperbola { c, max_offset, foot_range }
    }

    pub fn zeta_dim(&self) -> usize {
        match self {
            Self::Identity { zeta_dim, .. } => *zeta_dim,
            Self::Sphere { basis, .. } => basis.len(),
            Self::Hyperbola { .. } => 1,
        }
    }

    /// `Ψ(x) = (ζ, θ)`.
    pub fn psi(&self, x: &[f64]) -> Result<Coordinates> {
        match self {
            Self::Identity { zeta_dim, dim } => {
                if x.len() != *dim {
                    return Err(Error::InvalidParameter(format!("expected dimension {dim}, got {}", x.len())));
                }
                Ok(Coordinates { zeta: x[..*zeta_dim].to_vec(), theta: x[*zeta_dim..].to_vec() })
            }
            Self::Sphere { pole, basis, max_offset } => {
                let r = norm(x);
                let theta = r - 1.0;
                if !(theta.abs() < *max_offset) {
                    return Err(Error::ChartDomain(format!("radial offset {theta} outside (-{max_offset}, {max_offset})")));
                }
                let cos = dot(x, pole) / r;
                let w: Vec<f64> = basis.iter().map(|e| dot(x, e) / r).collect();
                let s = norm(&w);
                let angle = s.atan2(cos);
                if !(angle < FRAC_PI_2) {
                    return Err(Error::ChartDomain(format!("geodesic angle {angle} from the pole is not below pi/2")));
                }
                let zeta = if s > 0.0 { w.iter().map(|wi| angle * wi / s).collect() } else { vec![0.0; w.len()] };
                Ok(Coordinates { zeta, theta: vec![theta] })
            }
            Self::Hyperbola { c, max_offset, foot_range } => {
                let t = hyperbola_foot(*c, x).map_err(|e| Error::ChartDomain(e.to_string()))?;
                if t < foot_range.0 || t > foot_range.1 {
                    return Err(Error::ChartDomain(format!("foot parameter {t} outside {foot_range:?}")));
                }
                let nrm = hyperbola_normal(*c, t);
                let theta = (x[0] - t) * nrm[0] + (x[1] - c / t) * nrm[1];
                if !(theta.abs() < *max_offset) {
                    return Err(Error::ChartDomain(format!("normal offset {theta} outside the chart")));
                }
                Ok(Coordinates { zeta: vec![t], theta: vec![theta] })
            }
        }
    }

    /// `Φ(ζ, θ)`.
    pub fn phi(&self, zeta: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Identity { zeta_dim, dim } => {
                if zeta.len() != *zeta_dim || zeta.len() + theta.len() != *dim {
                    return Err(Error::InvalidParameter("coordinate dimensions do not match the chart".into()));
                }
                Ok(zeta.iter().chain(theta).copied().collect())
            }
            Self::Sphere { pole, basis, max_offset } => {
                let angle = norm(zeta);
                if !(angle < FRAC_PI_2) {
                    return Err(Error::ChartDomain(format!("|zeta| = {angle} is not below pi/2")));
                }
                if !(theta[0].abs() < *max_offset) {
                    return Err(Error::ChartDomain(format!("radial offset {} outside the chart", theta[0])));
                }
                let (s, c) = angle.sin_cos();
                let mut u: Vec<f64> = pole.iter().map(|p| c * p).collect();
                if angle > 0.0 {
                    for (z, e) in zeta.iter().zip(basis) {
                        for (ui, ei) in u.iter_mut().zip(e) {
                            *ui += s * z / angle * ei;
                        }
                    }
                }
                let scale = 1.0 + theta[0];
                Ok(u.into_iter().map(|v| scale * v).collect())
            }
            Self::Hyperbola { c, max_offset, foot_range } => {
                let t = zeta[0];
                if t < foot_range.0 || t > foot_range.1 {
                    return Err(Error::ChartDomain(format!("foot parameter {t} outside {foot_range:?}")));
                }
                if !(theta[0].abs() < *max_offset) {
                    return Err(Error::ChartDomain(format!("normal offset {} outside the chart", theta[0])));
                }
                let nrm = hyperbola_normal(*c, t);
                Ok(vec![t + theta[0] * nrm[0], c / t + theta[0] * nrm[1]])
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.psi(x).is_ok()
    }
}
