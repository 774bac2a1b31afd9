//! Robbins-Monro driver with Ruppert-Polyak averaging after a burn-in.
//!
//! A replication keeps only `O(d·K)` state for `K` horizons: per averaging
//! exponent the compensated prefix sums `S_k = Σ b_i X_i` and `W_k = Σ b_i`,
//! plus the values of those sums captured at every burn-in index `n₀(n_h)`.
//! The average at horizon `n_h` is then
//! `(S_{n_h} − S_{n₀(n_h)}) / (W_{n_h} − W_{n₀(n_h)})`.

use serde::{Deserialize, Serialize};

use crate::geometry::{NiceRepresentation, Problem};
use crate::noise::NoiseModel;
use crate::rng::{StepRng, INIT_STREAM, NOISE_STREAM};
use crate::schedules::{burn_in, c_rho, drift_bound, sigma_n, step_size, weight, RegularityTriple, ScheduleParams};
use crate::summation::CompensatedSum;
use crate::{Error, Result};

/// One Robbins-Monro step `x + γ_n (f(x) + D_n)`.
///
/// The gradient is evaluated before the noise draw.
pub fn rm_step(
    x: &[f64],
    n: u64,
    prob: &Problem,
    p: &ScheduleParams,
    model: &NoiseModel,
    rng: &mut StepRng,
) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    let mut noise = vec![0.0; x.len()];
    step_in_place(&mut out, n, n, prob, p, model, rng, &mut grad, &mut noise)?;
    Ok(out)
}

/// Advance `x` in place. `schedule_index` selects `γ`, `n` the noise block.
#[allow(clippy::too_many_arguments)]
#[inline]
fn step_in_place(
    x: &mut [f64],
    n: u64,
    schedule_index: u64,
    prob: &Problem,
    p: &ScheduleParams,
    model: &NoiseModel,
    rng: &mut StepRng,
    grad: &mut [f64],
    noise: &mut [f64],
) -> Result<()> {
    prob.gradient_into(x, grad);
    model.sample_into(prob, x, n, rng, noise);
    let g = step_size(schedule_index, p);
    for i in 0..x.len() {
        x[i] += g * (grad[i] + noise[i]);
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step: n })
    }
}

/// How a replication starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Uniform foot point and normal direction, at this distance from `M`.
    Distance(f64),
    /// A fixed point.
    Point(Vec<f64>),
}

/// Everything a replication needs besides its seed.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub problem: Problem,
    pub noise: NoiseModel,
    /// Step sizes, burn-in and the primary weight exponent.
    pub params: ScheduleParams,
    /// Weight exponents averaged along the same path; the first one is
    /// `params.rho`.
    pub rhos: Vec<f64>,
    /// Strictly increasing, the last one is the run length.
    pub horizons: Vec<u64>,
    pub start: StartRule,
    /// Step `k` uses `γ_{k + start_index}`. Averaging and noise use `k`.
    pub start_index: u64,
    pub track_drift: bool,
    /// A replication converged when every horizon iterate lies in the tube
    /// and the final distance is below this threshold.
    pub convergence_radius: f64,
}

impl Simulation {
    pub fn new(problem: Problem, noise: NoiseModel, params: ScheduleParams, horizons: Vec<u64>) -> Result<Self> {
        let radius = problem.tube().radius;
        let sim = Self {
            problem,
            noise,
            params,
            rhos: vec![params.rho],
            horizons,
            start: StartRule::Distance(0.1),
            start_index: 0,
            track_drift: false,
            convergence_radius: radius,
        };
        sim.validate()?;
        Ok(sim)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.noise.dim() != self.problem.dim() {
            return Err(Error::InvalidParameter(format!(
                "noise dimension {} does not match problem dimension {}",
                self.noise.dim(),
                self.problem.dim()
            )));
        }
        if self.horizons.is_empty() || self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("horizons must be positive and strictly increasing".into()));
        }
        if self.rhos.first() != Some(&self.params.rho) {
            return Err(Error::InvalidParameter("the first averaging exponent must equal params.rho".into()));
        }
        for &r in &self.rhos {
            c_rho(r)?;
        }
        match &self.start {
            StartRule::Distance(d) if !(*d >= 0.0 && d.is_finite()) => {
                return Err(Error::InvalidParameter(format!("initial distance must be finite and >= 0, got {d}")))
            }
            StartRule::Point(p) if p.len() != self.problem.dim() => {
                return Err(Error::InvalidParameter("start point has the wrong dimension".into()))
            }
            _ => {}
        }
        if !(self.convergence_radius > 0.0) {
            return Err(Error::InvalidParameter("convergence radius must be positive".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> u64 {
        *self.horizons.last().expect("validated horizons")
    }

    fn start_point(&self, master_seed: u64, replication: u64) -> Vec<f64> {
        match &self.start {
            StartRule::Point(p) => p.clone(),
            StartRule::Distance(d) => {
                let mut rng = StepRng::new(master_seed, replication, INIT_STREAM, 4 * self.problem.dim() + 4);
                rng.begin_step(0);
                self.problem.sample_at_distance(*d, &mut rng)
            }
        }
    }

    fn noise_rng(&self, master_seed: u64, replication: u64) -> StepRng {
        StepRng::new(master_seed, replication, NOISE_STREAM, self.noise.draws_per_step())
    }
}

/// Averaged iterate for one weight exponent at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageSnapshot {
    pub rho: f64,
    /// `X̄_n`.
    pub mean: Vec<f64>,
    /// `X̄_n*`, absent when the average left the projection domain.
    pub projection: Option<Vec<f64>>,
    /// `F(X̄_n)`.
    pub objective: f64,
}

/// `sup_{n₀(n) < m ≤ n} |ζ_m − ζ_{n₀(n)}|` in a chart centred at `X*_{n₀(n)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub sup: f64,
    /// Some iterate of the window left the chart; `sup` covers the part
    /// before the exit.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub n: u64,
    pub burn_in: u64,
    /// `X_n`.
    pub x: Vec<f64>,
    /// `d(X_n, M)`, absent outside the projection domain.
    pub distance: Option<f64>,
    /// `F(X_n)`.
    pub objective: f64,
    pub averages: Vec<AverageSnapshot>,
    pub drift: Option<DriftRecord>,
}

/// Summary of one replication: snapshots at the horizons only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub replication: u64,
    pub start: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub final_x: Vec<f64>,
    /// Projection of the last iterate, the estimate of `X∞`.
    pub final_projection: Option<Vec<f64>>,
    pub converged: bool,
}

impl Trajectory {
    pub fn snapshot(&self, n: u64) -> Result<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| s.n == n)
            .ok_or_else(|| Error::InvalidParameter(format!("{n} is not a horizon of this trajectory")))
    }

    fn average(&self, n: u64, rho_index: usize) -> Result<&AverageSnapshot> {
        self.snapshot(n)?
            .averages
            .get(rho_index)
            .ok_or_else(|| Error::InvalidParameter(format!("no average with index {rho_index}")))
    }
}

struct DriftWindow {
    chart: Option<NiceRepresentation>,
    reference: Vec<f64>,
    sup: f64,
    censored: bool,
}

/// Run one replication up to the last horizon.
///
/// Divergence (a non-finite iterate) is an error carrying the step index;
/// leaving the tube only clears the convergence flag.
pub fn run_replication(sim: &Simulation, master_seed: u64, replication: u64) -> Result<Trajectory> {
    sim.validate()?;
    let prob = &sim.problem;
    let d = prob.dim();
    let horizons = &sim.horizons;
    let n_final = sim.horizon();
    let r_count = sim.rhos.len();
    let n0s: Vec<u64> = horizons.iter().map(|&h| burn_in(h, sim.params.beta)).collect();

    let start = sim.start_point(master_seed, replication);
    let mut x = start.clone();
    let mut rng = sim.noise_rng(master_seed, replication);
    let mut grad = vec![0.0; d];
    let mut noise = vec![0.0; d];

    // prefix sums per weight exponent
    let mut s: Vec<Vec<CompensatedSum>> = vec![vec![CompensatedSum::new(); d]; r_count];
    let mut w: Vec<CompensatedSum> = vec![CompensatedSum::new(); r_count];
    // captured (S, W) at n₀ per horizon and exponent
    let mut cap_s: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; d]; r_count]; horizons.len()];
    let mut cap_w: Vec<Vec<f64>> = vec![vec![0.0; r_count]; horizons.len()];

    let mut windows: Vec<Option<DriftWindow>> = (0..horizons.len()).map(|_| None).collect();
    let mut snapshots = Vec::with_capacity(horizons.len());
    let mut in_tube = true;

    let open_window = |x: &[f64]| -> DriftWindow {
        let chart = prob.chart_at(x).ok();
        let reference = chart.as_ref().and_then(|c| c.psi(x).ok()).map(|c| c.zeta);
        match reference {
            Some(reference) => DriftWindow { chart, reference, sup: 0.0, censored: false },
            None => DriftWindow { chart: None, reference: vec![], sup: 0.0, censored: true },
        }
    };
    if sim.track_drift {
        for (h, &n0) in n0s.iter().enumerate() {
            if n0 == 0 {
                windows[h] = Some(open_window(&x));
            }
        }
    }

    let mut next_h = 0;
    for k in 1..=n_final {
        step_in_place(&mut x, k, k + sim.start_index, prob, &sim.params, &sim.noise, &mut rng, &mut grad, &mut noise)?;

        for (ri, &rho) in sim.rhos.iter().enumerate() {
            let b = weight(k, rho);
            w[ri].add(b);
            for (acc, xi) in s[ri].iter_mut().zip(&x) {
                acc.add(b * xi);
            }
        }

        for (h, &n0) in n0s.iter().enumerate() {
            if n0 == k {
                for ri in 0..r_count {
                    cap_w[h][ri] = w[ri].value();
                    for (c, acc) in cap_s[h][ri].iter_mut().zip(&s[ri]) {
                        *c = acc.value();
                    }
                }
                if sim.track_drift {
                    windows[h] = Some(open_window(&x));
                }
            }
        }

        if sim.track_drift {
            for (h, win) in windows.iter_mut().enumerate() {
                let Some(win) = win else { continue };
                if k <= n0s[h] || k > horizons[h] || win.censored {
                    continue;
                }
                match win.chart.as_ref().map(|c| c.psi(&x)) {
                    Some(Ok(c)) => {
                        let dz = c.zeta.iter().zip(&win.reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                        win.sup = win.sup.max(dz);
                    }
                    _ => win.censored = true,
                }
            }
        }

        if k == horizons[next_h] {
            let h = next_h;
            let distance = prob.distance_to_manifold(&x).ok();
            if !distance.is_some_and(|v| v < prob.tube().radius) {
                in_tube = false;
            }
            let averages = (0..r_count)
                .map(|ri| {
                    let mass = w[ri].value() - cap_w[h][ri];
                    let mean: Vec<f64> = s[ri].iter().zip(&cap_s[h][ri]).map(|(acc, c)| (acc.value() - c) / mass).collect();
                    AverageSnapshot {
                        rho: sim.rhos[ri],
                        projection: prob.project(&mean).ok(),
                        objective: prob.objective(&mean),
                        mean,
                    }
                })
                .collect();
            let drift = windows[h].take().map(|win| DriftRecord { sup: win.sup, censored: win.censored });
            snapshots.push(Snapshot {
                n: k,
                burn_in: n0s[h],
                x: x.clone(),
                distance,
                objective: prob.objective(&x),
                averages,
                drift,
            });
            next_h += 1;
        }
    }

    let final_projection = prob.project(&x).ok();
    let final_distance = prob.distance_to_manifold(&x).unwrap_or(f64::INFINITY);
    let converged = in_tube && final_distance < sim.convergence_radius;
    Ok(Trajectory { replication, start, snapshots, final_x: x, final_projection, converged })
}

/// Every iterate `X_0, …, X_n` of a replication. Only meant for short runs.
pub fn run_path(sim: &Simulation, master_seed: u64, replication: u64, n: u64) -> Result<Vec<Vec<f64>>> {
    sim.validate()?;
    let d = sim.problem.dim();
    let mut x = sim.start_point(master_seed, replication);
    let mut rng = sim.noise_rng(master_seed, replication);
    let mut grad = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut path = Vec::with_capacity(n as usize + 1);
    path.push(x.clone());
    for k in 1..=n {
        step_in_place(&mut x, k, k + sim.start_index, &sim.problem, &sim.params, &sim.noise, &mut rng, &mut grad, &mut noise)?;
        path.push(x.clone());
    }
    Ok(path)
}

/// Scaling of the deviation of the average from its projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `σ_n⁻¹`, the exact finite-sample scale of the weighted average. The
    /// limit covariance is then `B Γ Bᵀ`.
    #[default]
    SigmaN,
    /// `√n`; the limit covariance is `c(ρ)² B Γ Bᵀ`, approached only as
    /// `n₀(n)/n → 0`.
    SqrtN,
}

impl Normalization {
    pub fn scale(&self, n: u64, p: &ScheduleParams) -> f64 {
        match self {
            Self::SigmaN => 1.0 / sigma_n(n, p),
            Self::SqrtN => (n as f64).sqrt(),
        }
    }

    /// Factor relating the limit covariance of the scaled deviation to
    /// `B Γ Bᵀ`.
    pub fn limit_factor(&self, rho: f64) -> Result<f64> {
        match self {
            Self::SigmaN => Ok(1.0),
            Self::SqrtN => c_rho(rho).map(|c| c * c),
        }
    }
}

/// `scale·(X̄_n − X̄_n*)` for the average with index `rho_index`.
///
/// `p` must carry that average's `ρ`. Fails when the average left the
/// projection domain.
pub fn rescaled_deviation(
    traj: &Trajectory,
    n: u64,
    rho_index: usize,
    p: &ScheduleParams,
    normalization: Normalization,
) -> Result<Vec<f64>> {
    let avg = traj.average(n, rho_index)?;
    let proj = avg.projection.as_ref().ok_or_else(|| Error::OutsideTube { point: avg.mean.clone() })?;
    let scale = normalization.scale(n, p);
    Ok(avg.mean.iter().zip(proj).map(|(a, b)| scale * (a - b)).collect())
}

/// `2·scale²·(F(x∞) − F(X̄_n))`.
pub fn f_gap_sample(
    prob: &Problem,
    traj: &Trajectory,
    n: u64,
    rho_index: usize,
    x_inf: &[f64],
    p: &ScheduleParams,
    normalization: Normalization,
) -> Result<f64> {
    let avg = traj.average(n, rho_index)?;
    let scale = normalization.scale(n, p);
    Ok(2.0 * scale * scale * (prob.objective(x_inf) - avg.objective))
}

/// Tangential drift over the averaging window of horizon `n`, with the bound
/// `ε_n` it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftDiagnostic {
    pub drift: f64,
    pub bound: f64,
    pub censored: bool,
}

pub fn tangential_drift(traj: &Trajectory, n: u64, p: &ScheduleParams, r: &RegularityTriple) -> Result<DriftDiagnostic> {
    let snap = traj.snapshot(n)?;
    let rec = snap
        .drift
        .ok_or_else(|| Error::InvalidParameter("drift was not tracked for this trajectory".into()))?;
    Ok(DriftDiagnostic { drift: rec.sup, bound: drift_bound(n, p, r), censored: rec.censored })
}
