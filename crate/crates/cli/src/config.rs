//! Experiment configuration, read from and written to JSON.
//!
//! Optional fields fall back to the defaults below; unknown fields are
//! rejected so that typos fail loudly instead of being ignored.

use std::path::{Path, PathBuf};

use manifold_sgd::geometry::{make_problem, Problem, ProblemSpec, Tube};
use manifold_sgd::noise::{NoiseKind, NoiseModel};
use manifold_sgd::schedules::{c_rho, check_assumptions, AssumptionReport, RegularityTriple, ScheduleParams};
use manifold_sgd::sgd::{Normalization, Simulation, StartRule};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::output::to_json;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Limit covariance `Γ`, row by row.
    pub gamma: Vec<Vec<f64>>,
}

/// The linear averaged system driven by `linear-oracle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearOracleConfig {
    pub cases: Vec<OracleCase>,
    /// Draws of `Ξ_n` per case.
    pub draws: usize,
    pub horizon: u64,
    /// `(l, n)` at which `‖ℋ̄[l,n] + H⁻¹‖` is evaluated.
    pub check_limit: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCase {
    pub name: String,
    pub h: Vec<Vec<f64>>,
    pub gamma_theta: Vec<Vec<f64>>,
}

/// Acceptance thresholds. Every field can be overridden in the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Largest admissible share of excluded replications.
    pub exclusion_ceiling: f64,
    /// Level of the KS bands.
    pub ks_alpha: f64,
    pub covariance_frobenius: f64,
    /// Out-of-range energy relative to in-range energy.
    pub tangential_energy: f64,
    pub f_gap_mean: f64,
    pub f_gap_variance: f64,
    /// Relative error of the measured trace ratios against `c(ρ)²`.
    pub rho_ratio: f64,
    /// Absolute error of the fitted slope against `−γ`.
    pub rate_slope: f64,
    /// Minimum of mean tangential drift over mean normal distance.
    pub drift_ratio: f64,
    pub oracle_frobenius: f64,
    pub check_limit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            exclusion_ceiling: 0.05,
            ks_alpha: 0.01,
            covariance_frobenius: 0.15,
            tangential_energy: 0.10,
            f_gap_mean: 0.15,
            f_gap_variance: 0.30,
            rho_ratio: 0.20,
            rate_slope: 0.10,
            drift_ratio: 3.0,
            oracle_frobenius: 0.10,
            check_limit: 0.01,
        }
    }
}

fn default_initial_distance() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Overrides the problem's default tube.
    #[serde(default)]
    pub tube: Option<Tube>,
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub regularity: RegularityTriple,
    pub noise: NoiseConfig,
    pub replications: usize,
    pub seed: u64,
    /// Strictly increasing; the last entry is the run length.
    pub horizons: Vec<u64>,
    #[serde(default = "default_initial_distance")]
    pub initial_distance: f64,
    /// Offset of the step-size index (step `k` uses `γ_{k+start_index}`).
    #[serde(default)]
    pub start_index: u64,
    /// Defaults to the tube radius.
    #[serde(default)]
    pub convergence_radius: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub normalization: Normalization,
    /// Weight exponents for `rho-sweep`; the first one is the baseline.
    #[serde(default)]
    pub rhos: Vec<f64>,
    /// Step exponents for `rate-check`; empty means `schedule.gamma_exp`.
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub track_drift: bool,
    #[serde(default)]
    pub linear_oracle: Option<LinearOracleConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

pub(crate) fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("{what} must be a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Canonical JSON, floats with 17 significant digits.
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let p = make_problem(&self.problem)?;
        Ok(match self.tube {
            Some(t) => p.with_tube(t),
            None => p,
        })
    }

    pub fn noise_model(&self) -> Result<NoiseModel, CliError> {
        Ok(NoiseModel::new(self.noise.kind, matrix(&self.noise.gamma, "noise.gamma")?)?)
    }

    /// Parameter checks that do not involve the feasibility conditions.
    pub fn validate(&self) -> Result<(), CliError> {
        self.schedule.validate()?;
        RegularityTriple::new(self.regularity.alpha_f, self.regularity.alpha_phi, self.regularity.alpha_psi)?;
        let t = &self.tolerances;
        if !(t.exclusion_ceiling >= 0.0 && t.exclusion_ceiling < 1.0) || !(t.ks_alpha > 0.0 && t.ks_alpha < 1.0) {
            return Err(CliError::Config("tolerances out of range".into()));
        }
        if self.replications < 2 {
            return Err(CliError::Config("at least 2 replications are needed".into()));
        }
        for &r in &self.rhos {
            c_rho(r)?;
        }
        if let Some(lo) = &self.linear_oracle {
            if lo.draws < 2 || lo.horizon == 0 || lo.check_limit[0] == 0 || lo.check_limit[0] > lo.check_limit[1] {
                return Err(CliError::Config("linear_oracle needs draws >= 2, a positive horizon and 0 < l <= n".into()));
            }
            for c in &lo.cases {
                let h = matrix(&c.h, "linear_oracle h")?;
                let g = matrix(&c.gamma_theta, "linear_oracle gamma_theta")?;
                if h.shape() != g.shape() {
                    return Err(CliError::Config(format!("case {}: h and gamma_theta differ in size", c.name)));
                }
            }
        }
        let prob = self.problem()?;
        let noise = self.noise_model()?;
        self.simulation_with(prob, noise, self.schedule)?;
        Ok(())
    }

    pub fn assumptions(&self) -> AssumptionReport {
        check_assumptions(&self.schedule, &self.regularity)
    }

    /// The simulation described by this config, with the given schedule.
    pub fn simulation(&self, params: ScheduleParams) -> Result<Simulation, CliError> {
        self.simulation_with(self.problem()?, self.noise_model()?, params)
    }

    fn simulation_with(&self, prob: Problem, noise: NoiseModel, params: ScheduleParams) -> Result<Simulation, CliError> {
        let mut sim = Simulation::new(prob, noise, params, self.horizons.clone())?;
        sim.start = StartRule::Distance(self.initial_distance);
        sim.start_index = self.start_index;
        sim.track_drift = self.track_drift;
        if let Some(r) = self.convergence_radius {
            sim.convergence_radius = r;
        }
        sim.validate()?;
        Ok(sim)
    }
}
