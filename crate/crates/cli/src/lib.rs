//! Experiment runner: JSON configs in, reports, CSV tables and a checksummed
//! manifest out.
//!
//! Exit codes: 0 when every acceptance rule passes, 1 on an acceptance
//! failure, 2 for an invalid or infeasible config, 3 for runtime errors.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use manifold_sgd::schedules::RegularityTriple;
use manifold_sgd::stats::ExperimentReport;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiments::{DeviationRow, RatePoint};
use crate::output::{csv, sha256_hex, to_json, verify_manifest, write_artifacts, Cell, Manifest, MANIFEST, SEED_DERIVATION};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_ACCEPTANCE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<manifold_sgd::Error> for CliError {
    fn from(e: manifold_sgd::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "manifold-sgd", version, about = "Monte Carlo checks of averaged stochastic approximation near manifolds")]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run even when the schedule violates the feasibility conditions.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Covariance, Mahalanobis and F-gap checks at the last horizon.
    CltCheck,
    /// Log-log slope of the mean squared distance to the manifold.
    RateCheck,
    /// Trace ratios of the averages for several weight exponents.
    RhoSweep,
    /// The linear averaged system with a constant matrix.
    LinearOracle,
    /// Admissible step, weight and burn-in exponents.
    FeasibleRegion(FeasibleArgs),
    /// Plain replications with horizon snapshots.
    Simulate,
}

#[derive(Debug, Args)]
pub struct FeasibleArgs {
    /// `alpha_f alpha_phi alpha_psi`; defaults to the config's triple, or all ones.
    #[arg(num_args = 3, value_names = ["ALPHA_F", "ALPHA_PHI", "ALPHA_PSI"])]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CltCheck => "clt-check",
            Command::RateCheck => "rate-check",
            Command::RhoSweep => "rho-sweep",
            Command::LinearOracle => "linear-oracle",
            Command::FeasibleRegion(_) => "feasible-region",
            Command::Simulate => "simulate",
        }
    }
}

/// What a finished command reports back.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: u8,
    /// Text for standard output.
    pub summary: String,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Command::FeasibleRegion(args) = &cli.command {
        return feasible(cli, args);
    }
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    let assumptions = cfg.assumptions();
    let failures: Vec<String> =
        assumptions.failures().iter().map(|i| format!("{}: {}", i.name, i.detail)).collect();
    if !failures.is_empty() && !cli.force {
        return Err(CliError::Config(format!(
            "the schedule violates the feasibility conditions (rerun with --force to proceed):\n  {}",
            failures.join("\n  ")
        )));
    }
    let workers = cli.workers.unwrap_or_else(default_workers).max(1);
    let out_dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut summary = String::new();
    if out_dir.join(MANIFEST).exists() {
        match verify_manifest(&out_dir) {
            Ok(bad) if bad.is_empty() => summary.push_str("previous manifest verified\n"),
            Ok(bad) => summary.push_str(&format!("previous manifest: modified or missing {}\n", bad.join(", "))),
            Err(e) => summary.push_str(&format!("previous manifest unreadable: {e}\n")),
        }
    }

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let (report, mut files) = execute(&cli.command, &cfg, workers)?;
    let config_json = cfg.to_json();
    files.insert(0, ("config.json".into(), config_json.clone().into_bytes()));
    let manifest = Manifest {
        tool: "manifold-sgd".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        master_seed: cfg.seed,
        replications: cfg.replications,
        seed_derivation: SEED_DERIVATION.into(),
        workers,
        forced: !failures.is_empty(),
        assumption_failures: failures,
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        files: Default::default(),
    };
    write_artifacts(&out_dir, &files, manifest)?;

    summary.push_str(&render_report(&report));
    summary.push_str(&format!("artifacts in {}\n", out_dir.display()));
    let exit_code = if report.passed() { EXIT_PASS } else { EXIT_ACCEPTANCE };
    Ok(Outcome { exit_code, summary })
}

type Files = Vec<(String, Vec<u8>)>;

/// Run one experiment subcommand and render its artifacts (without the
/// manifest).
pub fn execute(command: &Command, cfg: &ExperimentConfig, workers: usize) -> Result<(ExperimentReport, Files), CliError> {
    fn json<T: Serialize>(name: &str, v: &T) -> (String, Vec<u8>) {
        (name.into(), to_json(v).into_bytes())
    }
    Ok(match command {
        Command::CltCheck => {
            let o = experiments::run_clt_experiment(cfg, workers)?;
            let qq: Vec<Vec<Cell>> = o.qq.iter().map(|&(t, e)| vec![Cell::Float(t), Cell::Float(e)]).collect();
            let files = vec![
                json("report.json", &o),
                ("deviations.csv".into(), deviations_csv(&o.deviations).into_bytes()),
                (
                    "qq.csv".into(),
                    csv(&["theoretical_quantile".into(), "empirical_quantile".into()], &qq).into_bytes(),
                ),
            ];
            (o.report, files)
        }
        Command::RateCheck => {
            let o = experiments::run_rate_experiment(cfg, workers)?;
            let files = vec![json("report.json", &o), ("rates.csv".into(), rates_csv(&o.entries).into_bytes())];
            (o.report, files)
        }
        Command::RhoSweep => {
            let o = experiments::run_rho_sweep(cfg, workers)?;
            (o.report.clone(), vec![json("report.json", &o)])
        }
        Command::LinearOracle => {
            let o = experiments::run_linear_oracle(cfg, workers)?;
            (o.report.clone(), vec![json("report.json", &o)])
        }
        Command::Simulate => {
            let (report, trajectories) = experiments::run_simulation(cfg, workers)?;
            let files = vec![json("report.json", &report), json("trajectories.json", &trajectories)];
            (report, files)
        }
        Command::FeasibleRegion(_) => return Err(CliError::Config("feasible-region has no experiment".into())),
    })
}

pub fn deviations_csv(rows: &[DeviationRow]) -> String {
    let d = rows.first().map_or(0, |r| r.components.len());
    let mut header = vec!["replication".to_string(), "horizon".to_string()];
    header.extend((0..d).map(|k| format!("c{k}")));
    let body: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![Cell::Int(r.replication), Cell::Int(r.horizon)];
            row.extend(r.components.iter().map(|&v| Cell::Float(v)));
            row
        })
        .collect();
    csv(&header, &body)
}

/// `rates.csv`; the leading `gamma` column tells the step exponents apart.
pub fn rates_csv(entries: &[experiments::RateEntry]) -> String {
    let header = ["gamma", "n", "mean_sq_dist", "stderr"].map(String::from);
    let body: Vec<Vec<Cell>> = entries
        .iter()
        .flat_map(|e| {
            e.points.iter().map(move |&RatePoint { n, mean_sq_dist, stderr }| {
                vec![Cell::Float(e.gamma), Cell::Int(n), Cell::Float(mean_sq_dist), Cell::Float(stderr)]
            })
        })
        .collect();
    csv(&header, &body)
}

pub fn render_report(report: &ExperimentReport) -> String {
    let mut out = format!(
        "{}: {} of {} replications excluded{}\n",
        report.experiment,
        report.excluded,
        report.total,
        if report.valid { "" } else { " (INVALID: exclusion ceiling exceeded)" }
    );
    for rule in &report.rules {
        out.push_str(&format!(
            "{} {} value {:.6} threshold {:.6}\n",
            if rule.passed { "PASS" } else { "FAIL" },
            rule.name,
            rule.value,
            rule.threshold
        ));
    }
    for note in &report.notes {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

fn feasible(cli: &Cli, args: &FeasibleArgs) -> Result<Outcome, CliError> {
    let cfg = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let triple = match (&args.alpha, &cfg) {
        (Some(a), _) => RegularityTriple { alpha_f: a[0], alpha_phi: a[1], alpha_psi: a[2] },
        (None, Some(c)) => c.regularity,
        (None, None) => RegularityTriple::default(),
    };
    let gamma = args.gamma.or(cfg.as_ref().map(|c| c.schedule.gamma_exp));
    let rho = args.rho.or(cfg.as_ref().map(|c| c.schedule.rho));
    let region = experiments::feasible_region(triple, gamma, rho)?;
    if let Some(dir) = &cli.out {
        write_region(dir, &region)?;
    }
    Ok(Outcome { exit_code: EXIT_PASS, summary: region.render() })
}

fn write_region(dir: &Path, region: &experiments::FeasibleRegion) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("region.json"), to_json(region))?;
    Ok(())
}
