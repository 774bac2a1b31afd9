//! Small dense linear algebra on top of `nalgebra`.
//!
//! Everything here works on symmetric matrices of dimension at most a few
//! dozen, so clarity wins over blocking or in-place tricks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Eigenvalues in ascending order with matching unit eigenvectors as columns.
///
/// Each eigenvector is oriented so that its largest-magnitude component is
/// positive, which makes the decomposition reproducible across calls.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, f64::EPSILON)
    }

    pub fn with_tolerance(m: &DMatrix<f64>, eps: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidParameter(format!(
                "eigendecomposition needs a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
        }
        let d = m.nrows();
        if d == 0 {
            return Ok(Self { values: vec![], vectors: DMatrix::zeros(0, 0) });
        }
        let sym = symmetrize(m);
        let eig = SymmetricEigen::try_new(sym, eps, 0)
            .ok_or_else(|| Error::InvalidParameter("eigendecomposition did not converge".into()))?;
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::zeros(d, d);
        for (k, &i) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(i).into_owned();
            let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if pivot < 0.0 {
                col.neg_mut();
            }
            vectors.set_column(k, &col);
        }
        Ok(Self { values, vectors })
    }

    pub fn spectral_radius(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Rebuild `V diag(g(λ)) Vᵀ`.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.values.len();
        let mut out = DMatrix::zeros(d, d);
        for (k, &lambda) in self.values.iter().enumerate() {
            let w = g(lambda);
            if w == 0.0 {
                continue;
            }
            let v = self.vectors.column(k);
            out += w * v * v.transpose();
        }
        out
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest singular value, from the Gram matrix `mᵀm`.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let eig = SymEigen::with_tolerance(&gram, 1e-10).expect("Gram matrix is symmetric and finite");
    eig.values.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

pub fn outer(u: &[f64], v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

/// Lower-triangular `L` with `L Lᵀ = m` for a symmetric positive
/// semidefinite `m`; pivots below `tol` zero out their column.
pub fn semidefinite_cholesky(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let d = m.nrows();
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= tol {
            continue;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    l
}
