//! Experiment drivers behind the subcommands.
//!
//! Replications are independent tasks on a bounded rayon pool. Their results
//! are collected in replication order and every aggregate is a serial fold
//! over that order, so reports do not depend on the worker count.

use std::collections::BTreeMap;

use manifold_sgd::geometry::limit_law;
use manifold_sgd::linear_oracle::{check_limit, xi_limit_covariance, ProductMatrices, XiSampler};
use manifold_sgd::rng::StepRng;
use manifold_sgd::schedules::{
    beta_lower_terms, check_assumptions, feasible_beta_interval, feasible_gamma_interval, feasible_rho_interval, gamma_lower_terms,
    sigma_n, OpenInterval, RegularityTriple, ScheduleParams,
};
use manifold_sgd::sgd::{f_gap_sample, rescaled_deviation, run_replication, tangential_drift, Simulation, Trajectory};
use manifold_sgd::stats::{
    empirical_cov, f_gap_check_mixture, frobenius_rel_err, gof_from_whitened, ks_critical_value, ks_normal,
    matrix_rows, mean_variance, rate_fit, AcceptanceRule, DirectionalKs, DriftSummary, ExperimentReport, RateFit,
    Whitened, Whitener,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{matrix, ExperimentConfig};
use crate::CliError;

/// First random stream used by the linear oracle; case `k` uses `ORACLE_STREAM + k`.
pub const ORACLE_STREAM: u64 = 16;

fn runtime(e: manifold_sgd::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

/// Run replications `0..count` of `sim`, results in replication order.
pub fn replicate(
    sim: &Simulation,
    seed: u64,
    count: usize,
    workers: usize,
) -> Result<Vec<manifold_sgd::Result<Trajectory>>, CliError> {
    with_pool(workers, || (0..count as u64).into_par_iter().map(|r| run_replication(sim, seed, r)).collect())
}

/// Tally of exclusion reasons, kept sorted for stable output.
#[derive(Default)]
struct Exclusions(BTreeMap<String, usize>);

impl Exclusions {
    fn add(&mut self, reason: impl Into<String>) {
        *self.0.entry(reason.into()).or_default() += 1;
    }

    fn count(&self) -> usize {
        self.0.values().sum()
    }

    fn notes(&self) -> Vec<String> {
        self.0.iter().map(|(k, v)| format!("excluded {v}: {k}")).collect()
    }
}

fn reason(e: &manifold_sgd::Error) -> String {
    match e {
        manifold_sgd::Error::Diverged { .. } => "diverged".into(),
        manifold_sgd::Error::OutsideTube { .. } | manifold_sgd::Error::ProjectionFailed { .. } => {
            "outside the projection domain".into()
        }
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub replication: u64,
    pub horizon: u64,
    pub components: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltOutcome {
    pub report: ExperimentReport,
    /// Scaled deviations at every horizon of the included replications.
    pub deviations: Vec<DeviationRow>,
    /// `(Φ⁻¹((i − ½)/m), i-th smallest whitened first coordinate)`.
    pub qq: Vec<(f64, f64)>,
}

struct CltSample {
    deviation: Vec<f64>,
    sigma: DMatrix<f64>,
    spectrum: Vec<f64>,
    f_gap: f64,
}

fn clt_sample(cfg: &ExperimentConfig, sim: &Simulation, traj: &Trajectory) -> manifold_sgd::Result<CltSample> {
    let p = sim.params;
    let n = sim.horizon();
    let prob = &sim.problem;
    let norm = cfg.normalization;
    let deviation = rescaled_deviation(traj, n, 0, &p, norm)?;
    let x_inf = traj
        .final_projection
        .as_ref()
        .ok_or_else(|| manifold_sgd::Error::OutsideTube { point: traj.final_x.clone() })?;
    let law = limit_law(prob, x_inf, sim.noise.gamma_limit(), p.rho)?;
    let factor = norm.limit_factor(p.rho)?;
    // perf_spectrum carries c(ρ)²; rescale to the chosen normalization
    let spectrum = law.perf_spectrum.iter().map(|l| l * factor / (law.c_rho * law.c_rho)).collect();
    Ok(CltSample {
        deviation,
        sigma: factor * &law.transform_cov,
        spectrum,
        f_gap: f_gap_sample(prob, traj, n, 0, x_inf, &p, norm)?,
    })
}

fn normal_qq(mut values: Vec<f64>) -> Vec<(f64, f64)> {
    values.sort_by(f64::total_cmp);
    let m = values.len() as f64;
    let normal = Normal::standard();
    values.into_iter().enumerate().map(|(i, v)| (normal.inverse_cdf((i as f64 + 0.5) / m), v)).collect()
}

/// Coefficient and F-performance CLT at the last horizon.
pub fn run_clt_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<CltOutcome, CliError> {
    let sim = cfg.simulation(cfg.schedule)?;
    let n = sim.horizon();
    let tol = cfg.tolerances;
    let trajectories = replicate(&sim, cfg.seed, cfg.replications, workers)?;

    let mut excluded = Exclusions::default();
    let mut samples = Vec::new();
    let mut included = Vec::new();
    let mut deviations = Vec::new();
    for (r, t) in trajectories.iter().enumerate() {
        let traj = match t {
            Ok(t) if t.converged => t,
            Ok(_) => {
                excluded.add("did not converge");
                continue;
            }
            Err(e) => {
                excluded.add(reason(e));
                continue;
            }
        };
        match clt_sample(cfg, &sim, traj) {
            Ok(s) => {
                for &h in &sim.horizons {
                    if let Ok(c) = rescaled_deviation(traj, h, 0, &sim.params, cfg.normalization) {
                        deviations.push(DeviationRow { replication: r as u64, horizon: h, components: c });
                    }
                }
                samples.push(s);
                included.push(traj);
            }
            Err(e) => excluded.add(reason(&e)),
        }
    }

    let mut report = ExperimentReport::new("clt-check", cfg.replications, excluded.count(), tol.exclusion_ceiling);
    report.horizon = Some(n);
    report.notes = excluded.notes();
    report.notes.push(format!("normalization: {:?}", cfg.normalization));
    if samples.len() < 2 {
        report.valid = false;
        report.notes.push("fewer than two usable replications".into());
        return Ok(CltOutcome { report, deviations, qq: vec![] });
    }

    let devs: Vec<Vec<f64>> = samples.iter().map(|s| s.deviation.clone()).collect();
    let empirical = empirical_cov(&devs).map_err(runtime)?;
    let d = empirical.nrows();
    let mut theory = DMatrix::zeros(d, d);
    for s in &samples {
        theory += &s.sigma;
    }
    theory /= samples.len() as f64;
    report.empirical_cov = Some(matrix_rows(&empirical));
    report.theoretical_cov = Some(matrix_rows(&theory));

    if theory.amax() == 0.0 {
        report.notes.push("degenerate limit covariance: the noise covariance vanishes on the normal space".into());
        return Ok(CltOutcome { report, deviations, qq: vec![] });
    }

    let fro = frobenius_rel_err(&empirical, &theory).map_err(runtime)?;
    report.frobenius_rel_err = Some(fro);
    report.rules.push(AcceptanceRule::at_most("covariance_frobenius", fro, tol.covariance_frobenius));

    // each replication is whitened by its own limit covariance
    let first = Whitener::new(&samples[0].sigma).map_err(runtime)?;
    let mut whitened: Vec<Whitened> = Vec::with_capacity(samples.len());
    for s in &samples {
        let w = Whitener::new(&s.sigma).map_err(runtime)?;
        if w.rank() != first.rank() {
            return Err(CliError::Runtime("limit covariance rank changes between replications".into()));
        }
        whitened.push(w.whiten(&s.deviation));
    }
    let mut mahal = gof_from_whitened(&whitened).map_err(runtime)?;
    mahal.critical_value = ks_critical_value(tol.ks_alpha, whitened.len());
    report.rules.push(AcceptanceRule::at_most("mahalanobis_ks", mahal.statistic, mahal.critical_value));
    let energy_ratio = mahal.out_of_range_energy_mean / mahal.in_range_energy_mean;
    report.rules.push(AcceptanceRule::at_most("tangential_energy", energy_ratio, tol.tangential_energy));
    report.mahalanobis = Some(mahal);

    let critical = ks_critical_value(tol.ks_alpha, whitened.len());
    for k in 0..first.rank() {
        let coords: Vec<f64> = whitened.iter().map(|w| w.coords[k]).collect();
        let statistic = ks_normal(&coords).map_err(runtime)?;
        report.rules.push(AcceptanceRule::at_most(format!("directional_ks_{k}"), statistic, critical));
        report.directional_ks.push(DirectionalKs {
            direction: first.vectors().column(k).iter().copied().collect(),
            predicted_sd: first.values()[k].sqrt(),
            statistic,
            critical_value: critical,
        });
    }
    let qq = normal_qq(whitened.iter().map(|w| w.coords[0]).collect());

    let gaps: Vec<f64> = samples.iter().map(|s| s.f_gap).collect();
    let spectra: Vec<Vec<f64>> = samples.iter().map(|s| s.spectrum.clone()).collect();
    let f_gap = f_gap_check_mixture(&gaps, &spectra, cfg.seed).map_err(runtime)?;
    report.rules.push(AcceptanceRule::at_most("f_gap_mean", f_gap.mean_rel_err, tol.f_gap_mean));
    report.rules.push(AcceptanceRule::at_most("f_gap_variance", f_gap.variance_rel_err, tol.f_gap_variance));
    report.f_gap = Some(f_gap);

    if sim.track_drift {
        let mut drift = Vec::new();
        let mut normal = Vec::new();
        let mut bound = Vec::new();
        let mut censored = 0;
        for traj in &included {
            let diag = tangential_drift(traj, n, &sim.params, &cfg.regularity).map_err(runtime)?;
            censored += diag.censored as usize;
            drift.push(diag.drift);
            bound.push(diag.bound);
            normal.push(traj.snapshot(n).map_err(runtime)?.distance.unwrap_or(f64::NAN));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let summary = DriftSummary {
            mean_drift: mean(&drift),
            mean_normal_distance: mean(&normal),
            ratio: mean(&drift) / mean(&normal),
            mean_bound: mean(&bound),
            censored,
        };
        report.rules.push(AcceptanceRule::at_least("drift_ratio", summary.ratio, tol.drift_ratio));
        report.drift = Some(summary);
    }

    Ok(CltOutcome { report, deviations, qq })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: u64,
    pub mean_sq_dist: f64,
    /// Standard error of the mean.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub gamma: f64,
    pub excluded: usize,
    pub points: Vec<RatePoint>,
    pub fit: RateFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOutcome {
    pub report: ExperimentReport,
    pub entries: Vec<RateEntry>,
}

/// Mean squared distance to the manifold over the horizon grid, fitted on
/// log-log axes, once per step exponent.
pub fn run_rate_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RateOutcome, CliError> {
    let gammas = if cfg.gammas.is_empty() { vec![cfg.schedule.gamma_exp] } else { cfg.gammas.clone() };
    let tol = cfg.tolerances;
    let mut excluded = Exclusions::default();
    let mut entries = Vec::new();
    let mut feasibility_notes = Vec::new();
    for &g in &gammas {
        let params = ScheduleParams::new(cfg.schedule.c_gamma, g, cfg.schedule.rho, cfg.schedule.beta)?;
        let failed: Vec<String> =
            check_assumptions(&params, &cfg.regularity).failures().iter().map(|i| i.name.clone()).collect();
        if !failed.is_empty() {
            // the L2 bound itself only needs 1/2 < gamma <= 1
            feasibility_notes.push(format!("gamma = {g} violates: {}", failed.join("; ")));
        }
        let sim = cfg.simulation(params)?;
        let mut sq: Vec<Vec<f64>> = vec![Vec::new(); sim.horizons.len()];
        let before = excluded.count();
        for t in replicate(&sim, cfg.seed, cfg.replications, workers)? {
            let traj = match t {
                Ok(t) if t.converged => t,
                Ok(_) => {
                    excluded.add("did not converge");
                    continue;
                }
                Err(e) => {
                    excluded.add(reason(&e));
                    continue;
                }
            };
            let dists: Option<Vec<f64>> = traj.snapshots.iter().map(|s| s.distance).collect();
            match dists {
                Some(ds) => ds.iter().zip(sq.iter_mut()).for_each(|(d, col)| col.push(d * d)),
                None => excluded.add("outside the projection domain"),
            }
        }
        let mut points = Vec::new();
        for (&n, col) in sim.horizons.iter().zip(&sq) {
            let (mean, var) = mean_variance(col).map_err(runtime)?;
            points.push(RatePoint { n, mean_sq_dist: mean, stderr: (var / col.len() as f64).sqrt() });
        }
        let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.mean_sq_dist)).collect();
        let fit = rate_fit(&pts).map_err(runtime)?;
        entries.push(RateEntry { gamma: g, excluded: excluded.count() - before, points, fit });
    }

    let mut report =
        ExperimentReport::new("rate-check", cfg.replications * gammas.len(), excluded.count(), tol.exclusion_ceiling);
    report.horizon = cfg.horizons.last().copied();
    report.notes = excluded.notes();
    report.notes.extend(feasibility_notes);
    report.rate = entries.first().map(|e| e.fit);
    for e in &entries {
        report.rules.push(AcceptanceRule::at_most(
            format!("slope_gamma_{}", e.gamma),
            (e.fit.slope + e.gamma).abs(),
            tol.rate_slope,
        ));
    }
    Ok(RateOutcome { report, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoEntry {
    pub rho: f64,
    pub empirical_cov: Vec<Vec<f64>>,
    pub trace: f64,
    /// `trace(ρ) / trace(ρ₀)`.
    pub ratio: f64,
    pub predicted_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSweepOutcome {
    pub report: ExperimentReport,
    pub entries: Vec<RhoEntry>,
}

/// Averages for several weight exponents along the same paths.
pub fn run_rho_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<RhoSweepOutcome, CliError> {
    let rhos = if cfg.rhos.is_empty() { vec![0.0, 0.5, 1.0] } else { cfg.rhos.clone() };
    let tol = cfg.tolerances;
    let base = cfg.schedule.with_rho(rhos[0]);
    let mut sim = cfg.simulation(base)?;
    sim.rhos = rhos.clone();
    let n = sim.horizon();

    let mut excluded = Exclusions::default();
    let mut devs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); rhos.len()];
    for t in replicate(&sim, cfg.seed, cfg.replications, workers)? {
        let traj = match t {
            Ok(t) if t.converged => t,
            Ok(_) => {
                excluded.add("did not converge");
                continue;
            }
            Err(e) => {
                excluded.add(reason(&e));
                continue;
            }
        };
        let per_rho: manifold_sgd::Result<Vec<Vec<f64>>> = rhos
            .iter()
            .enumerate()
            .map(|(i, &r)| rescaled_deviation(&traj, n, i, &base.with_rho(r), cfg.normalization))
            .collect();
        match per_rho {
            Ok(v) => v.into_iter().zip(devs.iter_mut()).for_each(|(d, col)| col.push(d)),
            Err(e) => excluded.add(reason(&e)),
        }
    }

    let mut report = ExperimentReport::new("rho-sweep", cfg.replications, excluded.count(), tol.exclusion_ceiling);
    report.horizon = Some(n);
    report.notes = excluded.notes();
    report.notes.push(format!("normalization: {:?}", cfg.normalization));
    if devs[0].len() < 2 {
        report.valid = false;
        return Ok(RhoSweepOutcome { report, entries: vec![] });
    }
    let base_factor = cfg.normalization.limit_factor(rhos[0]).map_err(runtime)?;
    let mut entries = Vec::new();
    for (&rho, col) in rhos.iter().zip(&devs) {
        let cov = empirical_cov(col).map_err(runtime)?;
        entries.push(RhoEntry {
            rho,
            empirical_cov: matrix_rows(&cov),
            trace: cov.trace(),
            ratio: 0.0,
            predicted_ratio: cfg.normalization.limit_factor(rho).map_err(runtime)? / base_factor,
        });
    }
    let base_trace = entries[0].trace;
    for e in &mut entries {
        e.ratio = e.trace / base_trace;
    }
    for e in entries.iter().skip(1) {
        report.rules.push(AcceptanceRule::at_most(
            format!("rho_ratio_{}", e.rho),
            (e.ratio / e.predicted_ratio - 1.0).abs(),
            tol.rho_ratio,
        ));
    }
    if entries.len() > 1 && entries.iter().skip(1).all(|e| e.predicted_ratio > 1.0) {
        let others = entries.iter().skip(1).map(|e| e.trace).fold(f64::INFINITY, f64::min);
        report.rules.push(AcceptanceRule::at_most("minimum_at_baseline", base_trace - others, 0.0));
    }
    Ok(RhoSweepOutcome { report, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCaseReport {
    pub name: String,
    /// Covariance of `σ_n⁻¹ Ξ_n` over the draws.
    pub empirical_cov: Vec<Vec<f64>>,
    /// Exact covariance of `σ_n⁻¹ Ξ_n` at the horizon.
    pub finite_cov: Vec<Vec<f64>>,
    /// `H⁻¹ Γ_θ H⁻ᵀ`.
    pub limit_cov: Vec<Vec<f64>>,
    pub frobenius_rel_err: f64,
    pub finite_frobenius_rel_err: f64,
    pub check_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub report: ExperimentReport,
    pub cases: Vec<OracleCaseReport>,
}

pub fn run_linear_oracle(cfg: &ExperimentConfig, workers: usize) -> Result<OracleOutcome, CliError> {
    let lo = cfg
        .linear_oracle
        .as_ref()
        .ok_or_else(|| CliError::Config("linear-oracle needs a linear_oracle section".into()))?;
    let tol = cfg.tolerances;
    let p = cfg.schedule;
    let n = lo.horizon;
    let scale = 1.0 / sigma_n(n, &p);
    let mut report = ExperimentReport::new("linear-oracle", lo.draws * lo.cases.len(), 0, tol.exclusion_ceiling);
    report.horizon = Some(n);
    let mut cases = Vec::new();
    for (k, case) in lo.cases.iter().enumerate() {
        let h = matrix(&case.h, "linear_oracle h")?;
        let gamma = matrix(&case.gamma_theta, "linear_oracle gamma_theta")?;
        let pm = ProductMatrices::new(h, p)?;
        let sampler = XiSampler::new(n, &pm, &gamma)?;
        let d = pm.dim();
        let stream = ORACLE_STREAM + k as u64;
        let draws: Vec<Vec<f64>> = with_pool(workers, || {
            (0..lo.draws as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = StepRng::new(cfg.seed, i, stream, d);
                    sampler.sample(&mut rng).into_iter().map(|v| scale * v).collect()
                })
                .collect()
        })?;
        let empirical = empirical_cov(&draws).map_err(runtime)?;
        let finite = sampler.finite_covariance() * (scale * scale);
        let limit = xi_limit_covariance(&pm, &gamma)?;
        let fro = frobenius_rel_err(&empirical, &limit).map_err(runtime)?;
        let cl = check_limit(lo.check_limit[0], lo.check_limit[1], &pm);
        report.rules.push(AcceptanceRule::at_most(format!("oracle_cov_{}", case.name), fro, tol.oracle_frobenius));
        report.rules.push(AcceptanceRule::at_most(format!("check_limit_{}", case.name), cl, tol.check_limit));
        cases.push(OracleCaseReport {
            name: case.name.clone(),
            empirical_cov: matrix_rows(&empirical),
            finite_cov: matrix_rows(&finite),
            limit_cov: matrix_rows(&limit),
            frobenius_rel_err: fro,
            finite_frobenius_rel_err: frobenius_rel_err(&finite, &limit).map_err(runtime)?,
            check_limit: cl,
        });
    }
    Ok(OracleOutcome { report, cases })
}

/// Admissible exponents for a regularity triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub regularity: RegularityTriple,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub gamma_interval: OpenInterval,
    pub gamma_lower_terms: [f64; 3],
    pub gamma: Option<f64>,
    pub rho_interval: Option<OpenInterval>,
    pub rho: Option<f64>,
    pub beta_interval: Option<OpenInterval>,
    pub beta_lower_terms: Option<Vec<f64>>,
}

pub fn feasible_region(r: RegularityTriple, gamma: Option<f64>, rho: Option<f64>) -> Result<FeasibleRegion, CliError> {
    let r = RegularityTriple::new(r.alpha_f, r.alpha_phi, r.alpha_psi)?;
    let gamma_interval = feasible_gamma_interval(&r)?;
    let mut region = FeasibleRegion {
        regularity: r,
        alpha: r.alpha(),
        alpha_prime: r.alpha_prime(),
        gamma_interval,
        gamma_lower_terms: gamma_lower_terms(&r),
        gamma,
        rho_interval: None,
        rho,
        beta_interval: None,
        beta_lower_terms: None,
    };
    if let Some(g) = gamma {
        region.rho_interval = Some(feasible_rho_interval(g, &r));
        if let Some(rho) = rho {
            let p = ScheduleParams { c_gamma: 1.0, gamma_exp: g, rho, beta: 1.0 };
            region.beta_lower_terms = Some(beta_lower_terms(&p, &r));
            region.beta_interval = Some(feasible_beta_interval(&p, &r)?);
        }
    }
    Ok(region)
}

fn interval(iv: &OpenInterval) -> String {
    format!("({}, {})", iv.lower, iv.upper)
}

impl FeasibleRegion {
    /// Human-readable summary, one condition per line.
    pub fn render(&self) -> String {
        let r = &self.regularity;
        let mut out = format!(
            "alpha = ({}, {}, {}), min {}, alpha' {}\ngamma in {}\n",
            r.alpha_f,
            r.alpha_phi,
            r.alpha_psi,
            self.alpha,
            self.alpha_prime,
            interval(&self.gamma_interval)
        );
        if let (Some(g), Some(iv)) = (self.gamma, &self.rho_interval) {
            out.push_str(&format!("rho in {} for gamma = {g}\n", interval(iv)));
        }
        if let (Some(g), Some(rho), Some(iv)) = (self.gamma, self.rho, &self.beta_interval) {
            out.push_str(&format!("beta in {} for gamma = {g}, rho = {rho}\n", interval(iv)));
        }
        out
    }
}

/// Plain replications with their horizon snapshots.
pub fn run_simulation(cfg: &ExperimentConfig, workers: usize) -> Result<(ExperimentReport, Vec<Trajectory>), CliError> {
    let sim = cfg.simulation(cfg.schedule)?;
    let mut excluded = Exclusions::default();
    let mut kept = Vec::new();
    for t in replicate(&sim, cfg.seed, cfg.replications, workers)? {
        match t {
            Ok(t) => {
                if !t.converged {
                    excluded.add("did not converge");
                }
                kept.push(t);
            }
            Err(e) => excluded.add(reason(&e)),
        }
    }
    let mut report =
        ExperimentReport::new("simulate", cfg.replications, excluded.count(), cfg.tolerances.exclusion_ceiling);
    report.horizon = Some(sim.horizon());
    report.notes = excluded.notes();
    Ok((report, kept))
}
