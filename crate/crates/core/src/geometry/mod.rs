//! Built-in manifold test problems.
//!
//! Every problem is an objective `F` whose gradient field `f = DF` vanishes
//! on a smooth manifold `M` of maximisers, with `Df` negative definite in the
//! normal directions. The stochastic approximation scheme ascends `F`, so the
//! iterates are attracted to `M`.
//!
//! | kind             | `F`                      | `M`                    |
//! |------------------|--------------------------|------------------------|
//! | `flat_quadratic` | `-½ θᵀAθ` on `(ζ, θ)`    | `{θ = 0}`              |
//! | `sphere_well`    | `-¼ (|x|² - 1)²`         | unit sphere            |
//! | `hyperbola_toy`  | `-½ (ab - c)²`           | `{ab = c, a > 0}`      |

mod chart;
mod limit_law;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm, SymEigen};
use crate::rng::StepRng;
use crate::{Error, Result};

pub use chart::{Coordinates, NiceRepresentation};
pub use limit_law::{limit_law, normal_projector, normal_split, restricted_inverse, LimitLaw, NormalSplit};

/// Serializable description of a built-in problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// Valley `{θ = 0}` in `R^{zeta_dim} × R^{d_θ}` with curvature matrix `a`.
    FlatQuadratic { zeta_dim: usize, a: Vec<Vec<f64>> },
    SphereWell { dim: usize },
    HyperbolaToy { c: f64 },
}

/// Attractor tube parameters.
///
/// `delta` is the inner margin of the attractor set and `radius` the tube
/// radius around `M` (kept apart from the weight exponent ρ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub delta: f64,
    pub radius: f64,
}

const HYPERBOLA_FOOT_RANGE: (f64, f64) = (0.5, 2.0);
const HYPERBOLA_MAX_NEWTON: usize = 60;

#[derive(Debug, Clone)]
enum Shape {
    Flat { zeta_dim: usize, a: DMatrix<f64> },
    Sphere { dim: usize },
    Hyperbola { c: f64 },
}

/// An immutable test problem.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ProblemSpec,
    shape: Shape,
    tube: Tube,
}

/// Build a problem from its description, validating parameters.
pub fn make_problem(spec: &ProblemSpec) -> Result<Problem> {
    match spec {
        ProblemSpec::FlatQuadratic { zeta_dim, a } => {
            let k = a.len();
            if k == 0 || a.iter().any(|row| row.len() != k) {
                return Err(Error::InvalidParameter("curvature matrix must be square and non-empty".into()));
            }
            let m = DMatrix::from_fn(k, k, |i, j| a[i][j]);
            if crate::linalg::max_asymmetry(&m) > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::InvalidParameter("curvature matrix must be symmetric".into()));
            }
            let eig = SymEigen::new(&m)?;
            if eig.values[0] <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "curvature matrix must be positive definite (smallest eigenvalue {})",
                    eig.values[0]
                )));
            }
            Ok(Problem {
                spec: spec.clone(),
                shape: Shape::Flat { zeta_dim: *zeta_dim, a: crate::linalg::symmetrize(&m) },
                tube: Tube { delta: f64::INFINITY, radius: 1.0 },
            })
        }
        ProblemSpec::SphereWell { dim } => {
            if *dim < 2 {
                return Err(Error::InvalidParameter(format!("sphere_well needs dim >= 2, got {dim}")));
            }
            Ok(Problem { spec: spec.clone(), shape: Shape::Sphere { dim: *dim }, tube: Tube { delta: 0.5, radius: 0.25 } })
        }
        ProblemSpec::HyperbolaToy { c } => {
            if *c == 0.0 || !c.is_finite() {
                return Err(Error::InvalidParameter("hyperbola_toy needs c != 0".into()));
            }
            Ok(Problem { spec: spec.clone(), shape: Shape::Hyperbola { c: *c }, tube: Tube { delta: 0.5, radius: 0.2 } })
        }
    }
}

impl Problem {
    pub fn flat_quadratic(zeta_dim: usize, a: &DMatrix<f64>) -> Result<Self> {
        let rows = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
        make_problem(&ProblemSpec::FlatQuadratic { zeta_dim, a: rows })
    }

    pub fn sphere_well(dim: usize) -> Result<Self> {
        make_problem(&ProblemSpec::SphereWell { dim })
    }

    pub fn hyperbola_toy(c: f64) -> Result<Self> {
        make_problem(&ProblemSpec::HyperbolaToy { c })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn tube(&self) -> Tube {
        self.tube
    }

    pub fn with_tube(mut self, tube: Tube) -> Self {
        self.tube = tube;
        self
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Flat { zeta_dim, a } => zeta_dim + a.nrows(),
            Shape::Sphere { dim } => *dim,
            Shape::Hyperbola { .. } => 2,
        }
    }

    /// `d_ζ`.
    pub fn manifold_dim(&self) -> usize {
        match &self.shape {
            Shape::Flat { zeta_dim, .. } => *zeta_dim,
            Shape::Sphere { dim } => dim - 1,
            Shape::Hyperbola { .. } => 1,
        }
    }

    /// `d_θ = d − d_ζ`.
    pub fn normal_dim(&self) -> usize {
        self.dim() - self.manifold_dim()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Flat { zeta_dim, a } => {
                let th = &x[*zeta_dim..];
                let k = th.len();
                let mut q = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        q += th[i] * a[(i, j)] * th[j];
                    }
                }
                -0.5 * q
            }
            Shape::Sphere { .. } => {
                let s = dot(x, x) - 1.0;
                -0.25 * s * s
            }
            Shape::Hyperbola { c } => {
                let s = x[0] * x[1] - c;
                -0.5 * s * s
            }
        }
    }

    /// Writes `f(x) = DF(x)` into `out`.
    #[inline]
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::Flat { zeta_dim, a } => {
                let zd = *zeta_dim;
                let k = a.nrows();
                out[..zd].fill(0.0);
                for i in 0..k {
                    let mut s = 0.0;
                    for j in 0..k {
                        s += a[(i, j)] * x[zd + j];
                    }
                    out[zd + i] = -s;
                }
            }
            Shape::Sphere { .. } => {
                let s = dot(x, x) - 1.0;
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -s * xi;
                }
            }
            Shape::Hyperbola { c } => {
                let s = x[0] * x[1] - c;
                out[0] = -s * x[1];
                out[1] = -s * x[0];
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }

    /// `Df(x)`, symmetric by construction.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        match &self.shape {
            Shape::Flat { zeta_dim, a } => {
                let zd = *zeta_dim;
                DMatrix::from_fn(d, d, |i, j| if i >= zd && j >= zd { -a[(i - zd, j - zd)] } else { 0.0 })
            }
            Shape::Sphere { .. } => {
                let s = dot(x, x) - 1.0;
                DMatrix::from_fn(d, d, |i, j| -2.0 * x[i] * x[j] - if i == j { s } else { 0.0 })
            }
            Shape::Hyperbola { c } => {
                let (a, b) = (x[0], x[1]);
                let off = -(2.0 * a * b - c);
                DMatrix::from_row_slice(2, 2, &[-b * b, off, off, -a * a])
            }
        }
    }

    /// Closest point of `M`.
    ///
    /// Fails with [`Error::OutsideTube`] where the closest point is not
    /// guaranteed unique: the sphere needs `|x| > 1 − δ`, the hyperbola needs
    /// the foot point `a ∈ [0.5, 2]` and distance below the tube radius. The
    /// flat valley projects everywhere.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match &self.shape {
            Shape::Flat { zeta_dim, .. } => {
                let mut m = x.to_vec();
                m[*zeta_dim..].fill(0.0);
                Ok(m)
            }
            Shape::Sphere { .. } => {
                let r = norm(x);
                if !(r > 1.0 - self.tube.delta) || !r.is_finite() {
                    return Err(Error::OutsideTube { point: x.to_vec() });
                }
                Ok(x.iter().map(|v| v / r).collect())
            }
            Shape::Hyperbola { c } => {
                let t = hyperbola_foot(*c, x)?;
                let m = [t, c / t];
                let dist = ((x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2)).sqrt();
                if t < HYPERBOLA_FOOT_RANGE.0 || t > HYPERBOLA_FOOT_RANGE.1 || !(dist < self.tube.radius) {
                    return Err(Error::OutsideTube { point: x.to_vec() });
                }
                Ok(m.to_vec())
            }
        }
    }

    pub fn distance_to_manifold(&self, x: &[f64]) -> Result<f64> {
        let m = self.project(x)?;
        Ok(x.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    /// Membership in the attractor tube `{distance < radius}` (plus the foot
    /// range for the hyperbola).
    pub fn in_tube(&self, x: &[f64]) -> bool {
        match self.distance_to_manifold(x) {
            Ok(d) => d < self.tube.radius,
            Err(_) => false,
        }
    }

    /// Residual `|x − project(x)|`, or infinity outside the projection domain.
    pub fn manifold_residual(&self, x: &[f64]) -> f64 {
        self.distance_to_manifold(x).unwrap_or(f64::INFINITY)
    }

    /// Chart with the default anchor (`e₁` for the sphere).
    pub fn nice_representation(&self) -> NiceRepresentation {
        match &self.shape {
            Shape::Sphere { dim } => {
                let mut pole = vec![0.0; *dim];
                pole[0] = 1.0;
                NiceRepresentation::sphere(&pole, self.tube.delta)
            }
            _ => self.chart_at(&[]).expect("flat and hyperbola charts are global"),
        }
    }

    /// Chart centred at the projection of `anchor`. The anchor only matters
    /// for the sphere, whose exponential chart covers an open hemisphere.
    pub fn chart_at(&self, anchor: &[f64]) -> Result<NiceRepresentation> {
        match &self.shape {
            Shape::Flat { zeta_dim, a } => Ok(NiceRepresentation::identity(*zeta_dim, zeta_dim + a.nrows())),
            Shape::Sphere { .. } => {
                let pole = self.project(anchor)?;
                Ok(NiceRepresentation::sphere(&pole, self.tube.delta))
            }
            Shape::Hyperbola { c } => Ok(NiceRepresentation::hyperbola(*c, self.tube.radius, HYPERBOLA_FOOT_RANGE)),
        }
    }

    /// A manifold point drawn from the replication's initial-condition stream.
    pub fn sample_manifold_point(&self, rng: &mut StepRng) -> Vec<f64> {
        match &self.shape {
            Shape::Flat { zeta_dim, a } => {
                let mut m = vec![0.0; zeta_dim + a.nrows()];
                for v in m[..*zeta_dim].iter_mut() {
                    *v = 2.0 * rng.uniform_open() - 1.0;
                }
                m
            }
            Shape::Sphere { dim } => loop {
                let mut z = vec![0.0; *dim];
                rng.fill_standard_normal(&mut z);
                let r = norm(&z);
                if r > 1e-12 {
                    break z.iter().map(|v| v / r).collect();
                }
            },
            Shape::Hyperbola { c } => {
                // stay clear of the ends of the foot range
                let t = 0.6 + 1.2 * rng.uniform_open();
                vec![t, c / t]
            }
        }
    }

    /// Random unit normal vector at the manifold point `m`.
    pub fn sample_unit_normal(&self, m: &[f64], rng: &mut StepRng) -> Vec<f64> {
        match &self.shape {
            Shape::Flat { zeta_dim, a } => loop {
                let k = a.nrows();
                let mut z = vec![0.0; k];
                rng.fill_standard_normal(&mut z);
                let r = norm(&z);
                if r > 1e-12 {
                    let mut v = vec![0.0; zeta_dim + k];
                    for (i, zi) in z.iter().enumerate() {
                        v[zeta_dim + i] = zi / r;
                    }
                    break v;
                }
            },
            Shape::Sphere { .. } => {
                let s = rng.rademacher();
                m.iter().map(|v| s * v).collect()
            }
            Shape::Hyperbola { c } => {
                let s = rng.rademacher();
                hyperbola_normal(*c, m[0]).iter().map(|v| s * v).collect()
            }
        }
    }

    /// A point at exact distance `offset` from `M`, with a uniformly drawn
    /// foot point and normal direction.
    pub fn sample_at_distance(&self, offset: f64, rng: &mut StepRng) -> Vec<f64> {
        let m = self.sample_manifold_point(rng);
        let v = self.sample_unit_normal(&m, rng);
        m.iter().zip(&v).map(|(a, b)| a + offset * b).collect()
    }

    /// A point in the tube at distance uniform in `[0, max_offset)`.
    pub fn sample_tube_point(&self, max_offset: f64, rng: &mut StepRng) -> Vec<f64> {
        let off = max_offset * rng.uniform_open();
        self.sample_at_distance(off, rng)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidParameter(format!("expected a point of dimension {}, got {}", self.dim(), x.len())));
        }
        Ok(())
    }
}

/// Unit normal `(c/t², 1)/|·|` of the hyperbola at the foot `(t, c/t)`.
pub(crate) fn hyperbola_normal(c: f64, t: f64) -> [f64; 2] {
    let nx = c / (t * t);
    let len = (nx * nx + 1.0).sqrt();
    [nx / len, 1.0 / len]
}

/// Foot parameter `t > 0` of the closest point `(t, c/t)` to `x`.
///
/// Stationarity of `|x − (t, c/t)|²` reads `h(t) = t − x₁ − c²/t³ + c x₂/t² = 0`.
/// `h → −∞` at `0⁺` and `h → +∞` at infinity, so a sign-change bracket always
/// exists; Newton steps are accepted while they stay inside it, otherwise the
/// bracket is bisected.
pub(crate) fn hyperbola_foot(c: f64, x: &[f64]) -> Result<f64> {
    let (x1, x2) = (x[0], x[1]);
    if !x1.is_finite() || !x2.is_finite() {
        return Err(Error::OutsideTube { point: x.to_vec() });
    }
    let h = |t: f64| t - x1 - c * c / (t * t * t) + c * x2 / (t * t);
    let dh = |t: f64| 1.0 + 3.0 * c * c / (t * t * t * t) - 2.0 * c * x2 / (t * t * t);

    let eps = 1e-3;
    let mut t = x1.max(eps);
    let mut lo = t;
    let mut hi = t;
    let mut guard = 0;
    while h(lo) >= 0.0 {
        lo *= 0.5;
        guard += 1;
        if guard > 200 {
            return Err(Error::ProjectionFailed { point: x.to_vec() });
        }
    }
    guard = 0;
    while h(hi) <= 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::ProjectionFailed { point: x.to_vec() });
        }
    }

    for _ in 0..HYPERBOLA_MAX_NEWTON {
        let ht = h(t);
        if ht == 0.0 {
            break;
        }
        if ht < 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
        let d = dh(t);
        let newton = t - ht / d;
        let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let done = (next - t).abs() <= 4.0 * f64::EPSILON * t.max(1.0);
        t = next;
        if done {
            break;
        }
    }
    if !(dh(t) > 0.0) {
        return Err(Error::ProjectionFailed { point: x.to_vec() });
    }
    Ok(t)
}
