//! Estimators and goodness-of-fit statistics for comparing Monte Carlo output
//! with the predicted limit laws.
//!
//! The standard normal CDF is `Φ(x) = erfc(−x/√2)/2` with `libm`'s erfc
//! (the FreeBSD/musl rational approximations on five subintervals, error
//! below 1 ulp); the χ² CDF comes from `statrs` through the regularized
//! incomplete gamma function.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::linalg::SymEigen;
use crate::rng::{StepRng, AUX_STREAM};
use crate::summation::ExactSum;
use crate::{Error, Result};

/// Number of draws in the internal Monte Carlo reference of the F-gap law.
pub const F_GAP_REFERENCE_DRAWS: usize = 1_000_000;

/// Rank threshold for covariance matrices, relative to the spectral radius.
const RANK_TOL: f64 = 1e-10;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Unbiased sample covariance (divisor `R − 1`).
///
/// Means and cross products are accumulated with exact summation, so the
/// result is independent of the order of the samples bit for bit.
pub fn empirical_cov(samples: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("covariance needs at least 2 samples, got {}", samples.len())));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidParameter("samples have different dimensions".into()));
    }
    let r = samples.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| exact_mean(samples.iter().map(|s| s[k]), r)).collect();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut acc = ExactSum::new();
            for s in samples {
                acc.add((s[i] - mean[i]) * (s[j] - mean[j]));
            }
            let v = acc.value() / (r - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

fn exact_mean(values: impl Iterator<Item = f64>, count: f64) -> f64 {
    let mut acc = ExactSum::new();
    values.for_each(|v| acc.add(v));
    acc.value() / count
}

/// Sample mean and unbiased variance.
pub fn mean_variance(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("mean and variance need at least 2 samples".into()));
    }
    let r = samples.len() as f64;
    let mean = exact_mean(samples.iter().copied(), r);
    let mut acc = ExactSum::new();
    samples.iter().for_each(|v| acc.add((v - mean) * (v - mean)));
    Ok((mean, acc.value() / (r - 1.0)))
}

/// `‖A − B‖_F / ‖B‖_F`.
pub fn frobenius_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidParameter(format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    let nb = crate::linalg::frobenius(b);
    if nb == 0.0 {
        return Err(Error::InvalidParameter("reference matrix is zero".into()));
    }
    Ok(crate::linalg::frobenius(&(a - b)) / nb)
}

/// Least-squares line through `(log n, log v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual sum of squares in log space.
    pub residual: f64,
}

pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("rate fit needs at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(n, v)| !(n > 0.0) || !(v > 0.0)) {
        return Err(Error::InvalidParameter("rate fit needs positive indices and values".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(RateFit { slope, intercept, residual })
}

/// `sup |F_R − F|` for a continuous reference CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("KS statistic needs samples".into()));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("KS statistic got NaN samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / r - f).max(f - i as f64 / r);
    }
    Ok(d)
}

/// KS distance to `N(0, 1)` of samples that are already standardized by the
/// predicted standard deviation.
pub fn ks_normal(samples: &[f64]) -> Result<f64> {
    ks_statistic(samples, normal_cdf)
}

/// KS distance of `samples / sd` to `N(0, 1)`; `sd` is the predicted
/// standard deviation along the tested direction.
pub fn ks_normal_scaled(samples: &[f64], sd: f64) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(Error::InvalidParameter(format!("theoretical standard deviation must be positive, got {sd}")));
    }
    let z: Vec<f64> = samples.iter().map(|v| v / sd).collect();
    ks_normal(&z)
}

/// Kolmogorov limiting CDF `P(√R·D ≤ x)`.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (1.0 - 2.0 * s).clamp(0.0, 1.0)
}

/// Asymptotic critical value of the one-sample KS statistic at level `alpha`
/// for `r` samples, `K⁻¹(1 − α)/√r` (1.6276/√r at α = 0.01).
pub fn ks_critical_value(alpha: f64, r: usize) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0 && r > 0);
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < 1.0 - alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (r as f64).sqrt()
}

/// Two-sample KS distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("two-sample KS needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Range of a PSD matrix: eigenpairs above `1e−10·ρ(Σ)`.
#[derive(Debug, Clone)]
pub struct Whitener {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl Whitener {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let eig = SymEigen::new(sigma)?;
        let radius = eig.spectral_radius();
        if radius == 0.0 {
            return Err(Error::InvalidParameter("covariance is zero".into()));
        }
        if eig.values[0] < -1e-8 * radius {
            return Err(Error::NotPsd { min_eigenvalue: eig.values[0] });
        }
        let keep: Vec<usize> = (0..eig.values.len()).filter(|&k| eig.values[k] > RANK_TOL * radius).collect();
        let values = keep.iter().map(|&k| eig.values[k]).collect();
        let vectors = eig.vectors.select_columns(&keep);
        Ok(Self { values, vectors })
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Retained eigenvalues, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Matching eigenvectors as columns.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Coordinates `vₖᵀx/√λₖ` of the in-range part, plus the squared norm of
    /// the in-range part and of the out-of-range residual.
    pub fn whiten(&self, x: &[f64]) -> Whitened {
        let total: f64 = x.iter().map(|v| v * v).sum();
        let mut coords = Vec::with_capacity(self.rank());
        let mut in_range = 0.0;
        for (k, &lambda) in self.values.iter().enumerate() {
            let c: f64 = self.vectors.column(k).iter().zip(x).map(|(a, b)| a * b).sum();
            in_range += c * c;
            coords.push(c / lambda.sqrt());
        }
        Whitened { coords, in_range_energy: in_range, out_of_range_energy: (total - in_range).max(0.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitened {
    pub coords: Vec<f64>,
    pub in_range_energy: f64,
    pub out_of_range_energy: f64,
}

impl Whitened {
    pub fn mahalanobis_sq(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisReport {
    /// KS distance of the squared distances to `χ²_r`.
    pub statistic: f64,
    pub dof: usize,
    pub critical_value: f64,
    pub mean_distance_sq: f64,
    pub in_range_energy_mean: f64,
    pub out_of_range_energy_mean: f64,
}

/// Pool already whitened samples (possibly each with its own covariance)
/// into one `χ²_r` test.
pub fn gof_from_whitened(samples: &[Whitened]) -> Result<MahalanobisReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("goodness of fit needs samples".into()));
    }
    let dof = samples[0].coords.len();
    if dof == 0 || samples.iter().any(|s| s.coords.len() != dof) {
        return Err(Error::InvalidParameter("whitened samples need a common positive rank".into()));
    }
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let dist: Vec<f64> = samples.iter().map(Whitened::mahalanobis_sq).collect();
    let r = samples.len() as f64;
    Ok(MahalanobisReport {
        statistic: ks_statistic(&dist, |x| chi.cdf(x))?,
        dof,
        critical_value: ks_critical_value(0.01, samples.len()),
        mean_distance_sq: exact_mean(dist.iter().copied(), r),
        in_range_energy_mean: exact_mean(samples.iter().map(|s| s.in_range_energy), r),
        out_of_range_energy_mean: exact_mean(samples.iter().map(|s| s.out_of_range_energy), r),
    })
}

/// Squared Mahalanobis distances under the rank-`r` pseudo-inverse of
/// `sigma`, tested against `χ²_r`.
pub fn mahalanobis_gof(samples: &[Vec<f64>], sigma: &DMatrix<f64>) -> Result<MahalanobisReport> {
    let w = Whitener::new(sigma)?;
    let white: Vec<Whitened> = samples.iter().map(|s| w.whiten(s)).collect();
    gof_from_whitened(&white)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FGapReport {
    pub mean: f64,
    pub variance: f64,
    pub predicted_mean: f64,
    pub predicted_variance: f64,
    pub mean_rel_err: f64,
    pub variance_rel_err: f64,
    /// Two-sample KS distance to the Monte Carlo reference law.
    pub cdf_distance: f64,
}

/// Compare F-gap samples with `Σ λᵢ Zᵢ²`.
pub fn f_gap_check(samples: &[f64], spectrum: &[f64], seed: u64) -> Result<FGapReport> {
    f_gap_check_mixture(samples, &[spectrum.to_vec()], seed)
}

/// As [`f_gap_check`] for a random spectrum: the reference law is the
/// equal-weight mixture over the given spectra (one per replication).
pub fn f_gap_check_mixture(samples: &[f64], spectra: &[Vec<f64>], seed: u64) -> Result<FGapReport> {
    if spectra.is_empty() || spectra.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidParameter("F-gap check needs a non-empty spectrum".into()));
    }
    if spectra.iter().flatten().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidParameter("spectrum must be nonnegative".into()));
    }
    let (mean, variance) = mean_variance(samples)?;
    let k = spectra.len() as f64;
    let sums: Vec<f64> = spectra.iter().map(|s| s.iter().sum()).collect();
    let predicted_mean = sums.iter().sum::<f64>() / k;
    // total variance: mean conditional variance plus variance of the mean
    let cond_var = spectra.iter().map(|s| 2.0 * s.iter().map(|l| l * l).sum::<f64>()).sum::<f64>() / k;
    let var_of_mean = sums.iter().map(|s| (s - predicted_mean).powi(2)).sum::<f64>() / k;
    let predicted_variance = cond_var + var_of_mean;

    let width = spectra.iter().map(Vec::len).max().unwrap_or(1);
    let mut rng = StepRng::new(seed, 0, AUX_STREAM, width);
    let reference: Vec<f64> = (0..F_GAP_REFERENCE_DRAWS)
        .map(|i| {
            rng.begin_step(i as u64);
            spectra[i % spectra.len()]
                .iter()
                .map(|l| {
                    let z = rng.standard_normal();
                    l * z * z
                })
                .sum()
        })
        .collect();

    Ok(FGapReport {
        mean,
        variance,
        predicted_mean,
        predicted_variance,
        mean_rel_err: rel_err(mean, predicted_mean),
        variance_rel_err: rel_err(variance, predicted_variance),
        cdf_distance: ks_two_sample(samples, &reference)?,
    })
}

fn rel_err(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        value.abs()
    } else {
        (value - reference).abs() / reference.abs()
    }
}

/// Rows of a matrix, for serialization.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// How a rule compares its value with the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRule {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub passed: bool,
    /// Positive when passed.
    pub margin: f64,
}

impl AcceptanceRule {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        let margin = threshold - value;
        Self { name: name.into(), value, threshold, comparison: Comparison::AtMost, passed: value <= threshold, margin }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        let margin = value - threshold;
        Self { name: name.into(), value, threshold, comparison: Comparison::AtLeast, passed: value >= threshold, margin }
    }
}

/// Per-direction KS result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalKs {
    pub direction: Vec<f64>,
    pub predicted_sd: f64,
    pub statistic: f64,
    pub critical_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub mean_drift: f64,
    pub mean_normal_distance: f64,
    pub ratio: f64,
    pub mean_bound: f64,
    pub censored: usize,
}

/// Aggregated outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub total: usize,
    pub excluded: usize,
    pub exclusion_ceiling: f64,
    /// False when too many replications were excluded.
    pub valid: bool,
    pub horizon: Option<u64>,
    pub empirical_cov: Option<Vec<Vec<f64>>>,
    pub theoretical_cov: Option<Vec<Vec<f64>>>,
    pub frobenius_rel_err: Option<f64>,
    pub directional_ks: Vec<DirectionalKs>,
    pub mahalanobis: Option<MahalanobisReport>,
    pub f_gap: Option<FGapReport>,
    pub rate: Option<RateFit>,
    pub drift: Option<DriftSummary>,
    pub rules: Vec<AcceptanceRule>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, total: usize, excluded: usize, exclusion_ceiling: f64) -> Self {
        let valid = total > 0 && (excluded as f64) <= exclusion_ceiling * total as f64;
        Self { experiment: experiment.into(), total, excluded, exclusion_ceiling, valid, ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.valid && self.rules.iter().all(|r| r.passed)
    }

    pub fn rule(&self, name: &str) -> Option<&AcceptanceRule> {
        self.rules.iter().find(|r| r.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::NOISE_STREAM;
    use statrs::distribution::Normal;

    fn normals(seed: u64, count: usize) -> Vec<f64> {
        let mut rng = StepRng::new(seed, 0, NOISE_STREAM, 1);
        (0..count)
            .map(|i| {
                rng.begin_step(i as u64);
                rng.standard_normal()
            })
            .collect()
    }

    #[test]
    fn normal_cdf_matches_high_precision_values() {
        // reference values from a 50-digit evaluation of ½·erfc(−x/√2)
        let table = [
            (-8.0, 6.220960574271784e-16),
            (-3.0, 0.0013498980316300946),
            (-1.0, 0.15865525393145705),
            (0.0, 0.5),
            (0.5, 0.6914624612740131),
            (1.96, 0.9750021048517795),
            (4.0, 0.9999683287581669),
        ];
        for (x, want) in table {
            let got = normal_cdf(x);
            assert!((got - want).abs() <= 7e-16_f64.max(1e-13 * want), "{x}: {got} vs {want}");
        }
    }

    #[test]
    fn empirical_cov_examples() {
        let c = empirical_cov(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        let same = vec![vec![0.3, -1.2, 5.0]; 10];
        assert_eq!(empirical_cov(&same).unwrap(), DMatrix::zeros(3, 3));
        assert!(empirical_cov(&[vec![1.0]]).is_err());
    }

    #[test]
    fn empirical_cov_of_many_normals() {
        let z = normals(1, 2_000_000);
        let samples: Vec<Vec<f64>> = z.chunks_exact(2).map(|c| c.to_vec()).collect();
        let c = empirical_cov(&samples).unwrap();
        assert!((c - DMatrix::identity(2, 2)).amax() <= 0.005);
    }

    #[test]
    fn empirical_cov_is_permutation_invariant() {
        let z = normals(2, 3000);
        let samples: Vec<Vec<f64>> = z.chunks_exact(3).map(|c| vec![c[0] * 1e8, c[1], c[2] * 1e-6 + c[0]]).collect();
        let base = empirical_cov(&samples).unwrap();
        let mut rev = samples.clone();
        rev.reverse();
        assert_eq!(empirical_cov(&rev).unwrap(), base);
        let mut shuffled = samples.clone();
        let mut rng = StepRng::new(3, 0, AUX_STREAM, 1);
        for i in (1..shuffled.len()).rev() {
            rng.begin_step(i as u64);
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        assert_eq!(empirical_cov(&shuffled).unwrap(), base);
    }

    #[test]
    fn frobenius_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(frobenius_rel_err(&i2, &i2).unwrap(), 0.0);
        assert_eq!(frobenius_rel_err(&(2.0 * &i2), &i2).unwrap(), 1.0);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.5, 2.0, 2.0, 4.0]);
        let want = (0.25f64 + 1.0).sqrt() / (2.25f64 + 4.0 + 4.0 + 16.0).sqrt();
        assert!((frobenius_rel_err(&a, &b).unwrap() - want).abs() <= 1e-16);
        assert!(frobenius_rel_err(&a, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let ns = [1e3, 10f64.powf(3.5), 1e4, 10f64.powf(4.5), 1e5];
        let exact: Vec<(f64, f64)> = ns.iter().map(|&n| (n, n.powf(-0.8))).collect();
        let f = rate_fit(&exact).unwrap();
        assert!((f.slope + 0.8).abs() <= 1e-12 && f.residual <= 1e-24);
        let scaled: Vec<(f64, f64)> = ns.iter().map(|&n| (n, 3.0 * n.powf(-0.8))).collect();
        let f = rate_fit(&scaled).unwrap();
        assert!((f.slope + 0.8).abs() <= 1e-12 && (f.intercept - 3f64.ln()).abs() <= 1e-12);
        assert!(rate_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(rate_fit(&exact[..2]).is_err());

        // noisy synthetic data
        let z = normals(4, 40);
        let grid: Vec<f64> = (0..40).map(|k| 10f64.powf(2.0 + k as f64 * 0.1)).collect();
        let noisy: Vec<(f64, f64)> = grid.iter().zip(&z).map(|(&n, e)| (n, 2.0 * n.powf(-0.75) * (0.05 * e).exp())).collect();
        assert!((rate_fit(&noisy).unwrap().slope + 0.75).abs() <= 0.02);
    }

    #[test]
    fn rate_fit_solves_normal_equations() {
        let pts = [(10.0, 3.0), (30.0, 1.1), (100.0, 0.7), (250.0, 0.2), (900.0, 0.09)];
        let f = rate_fit(&pts).unwrap();
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { pts[i].0.ln() });
        let y = nalgebra::DVector::from_iterator(5, pts.iter().map(|p| p.1.ln()));
        let beta = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y;
        assert!((f.intercept - beta[0]).abs() <= 1e-12 && (f.slope - beta[1]).abs() <= 1e-12);
    }

    #[test]
    fn ks_normal_examples() {
        let r = 1000;
        let q = Normal::standard();
        let quantiles: Vec<f64> = (1..=r).map(|i| q.inverse_cdf((i as f64 - 0.5) / r as f64)).collect();
        assert!(ks_normal(&quantiles).unwrap() <= 0.5 / r as f64 + 1e-12);
        assert_eq!(ks_normal(&[0.0; 50]).unwrap(), 0.5);
        assert!(ks_normal_scaled(&[1.0], 0.0).is_err());
        assert!(ks_normal(&[]).is_err());
    }

    #[test]
    fn ks_critical_values() {
        assert!((ks_critical_value(0.01, 1) - 1.6276).abs() < 1e-4);
        assert!((ks_critical_value(0.05, 1) - 1.3581).abs() < 1e-4);
        assert!((ks_critical_value(0.01, 10_000) - 0.016276).abs() < 1e-6);
    }

    #[test]
    fn ks_normal_is_calibrated() {
        let crit = ks_critical_value(0.01, 10_000);
        let inside = (0..100).filter(|&k| ks_normal(&normals(100 + k, 10_000)).unwrap() < crit).count();
        assert!(inside >= 95, "{inside}/100");
    }

    #[test]
    fn mahalanobis_examples() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let w = Whitener::new(&sigma).unwrap().whiten(&[0.0, 5.0]);
        assert_eq!(w.mahalanobis_sq(), 0.0);
        assert_eq!(w.out_of_range_energy, 25.0);
        assert!(Whitener::new(&DMatrix::zeros(2, 2)).is_err());

        let chi = ChiSquared::new(2.0).unwrap();
        let r = 500;
        // points whose squared norms are exact χ²₂ quantiles
        let samples: Vec<Vec<f64>> = (1..=r)
            .map(|i| {
                let q = chi.inverse_cdf((i as f64 - 0.5) / r as f64);
                let a = i as f64;
                vec![q.sqrt() * a.cos(), q.sqrt() * a.sin()]
            })
            .collect();
        let rep = mahalanobis_gof(&samples, &DMatrix::identity(2, 2)).unwrap();
        assert!(rep.statistic <= 0.5 / r as f64 + 1e-9);
    }

    #[test]
    fn mahalanobis_full_rank_is_classical() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let inv = sigma.clone().try_inverse().unwrap();
        let w = Whitener::new(&sigma).unwrap();
        let z = normals(5, 300);
        for c in z.chunks_exact(3) {
            let x = nalgebra::DVector::from_column_slice(c);
            let classical = (x.transpose() * &inv * &x)[(0, 0)];
            assert!((w.whiten(c).mahalanobis_sq() - classical).abs() <= 1e-10 * (1.0 + classical));
        }
    }

    #[test]
    fn mahalanobis_is_calibrated_for_rank_deficient_sigma() {
        let mut rng = StepRng::new(6, 0, AUX_STREAM, 16);
        rng.begin_step(0);
        let f = DMatrix::from_fn(3, 2, |_, _| rng.standard_normal());
        let sigma = &f * f.transpose();
        let mut inside = 0;
        for rep in 0..100u64 {
            let z = normals(1000 + rep, 20_000);
            let samples: Vec<Vec<f64>> =
                z.chunks_exact(2).map(|c| crate::linalg::mat_vec(&f, c)).collect();
            let r = mahalanobis_gof(&samples, &sigma).unwrap();
            assert_eq!(r.dof, 2);
            assert!(r.out_of_range_energy_mean <= 1e-12 * r.in_range_energy_mean);
            if r.statistic < r.critical_value {
                inside += 1;
            }
        }
        assert!(inside >= 95, "{inside}/100");
    }

    #[test]
    fn f_gap_examples() {
        let chi = ChiSquared::new(1.0).unwrap();
        let r = 20_000;
        let exact: Vec<f64> = (1..=r).map(|i| chi.inverse_cdf((i as f64 - 0.5) / r as f64)).collect();
        let rep = f_gap_check(&exact, &[1.0], 1).unwrap();
        assert!(rep.mean_rel_err < 2e-3, "{rep:?}");
        assert!(rep.cdf_distance < 0.01);

        let rep = f_gap_check(&exact, &[1.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(rep.predicted_mean, 3.0);
        assert_eq!(rep.predicted_variance, 6.0);
        let rep = f_gap_check(&exact, &[0.5], 1).unwrap();
        assert_eq!((rep.predicted_mean, rep.predicted_variance), (0.5, 0.5));
        assert!(f_gap_check(&exact, &[], 1).is_err());
    }

    #[test]
    fn f_gap_mixture_moments() {
        let rep = f_gap_check_mixture(&[0.0, 1.0, 2.0], &[vec![1.0], vec![3.0]], 2).unwrap();
        assert_eq!(rep.predicted_mean, 2.0);
        // E[2λ²] + Var(λ) = (2 + 18)/2 + 1
        assert_eq!(rep.predicted_variance, 11.0);
    }

    #[test]
    fn report_validity() {
        let mut r = ExperimentReport::new("x", 100, 6, 0.05);
        assert!(!r.valid && !r.passed());
        r = ExperimentReport::new("x", 100, 5, 0.05);
        r.rules.push(AcceptanceRule::at_most("err", 0.1, 0.15));
        r.rules.push(AcceptanceRule::at_least("ratio", 3.5, 3.0));
        assert!(r.passed());
        r.rules.push(AcceptanceRule::at_most("bad", 0.2, 0.15));
        assert!(!r.passed());
        assert!((r.rule("bad").unwrap().margin + 0.05).abs() < 1e-15);
    }
}
