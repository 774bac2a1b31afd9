//! Acceptance criteria 1-9, one PASS/FAIL line each.
//!
//! The Monte Carlo criteria run the shipped configs in `configs/` through the
//! same drivers as the command line. Criterion 6 contains one sub-item that
//! is not attainable at the stated horizon (see `KNOWN_FAILURES`); it is
//! reported as FAIL and pinned to its independently computed value.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use manifold_sgd::geometry::{normal_split, Problem};
use manifold_sgd::linalg::SymEigen;
use manifold_sgd::linear_oracle::{bar_cal_h, simulate_xi, simulate_xi_naive, ProductMatrices};
use manifold_sgd::noise::{NoiseKind, NoiseModel};
use manifold_sgd::rng::{StepRng, AUX_STREAM};
use manifold_sgd::schedules::{burn_in, c_rho, step_size, weight, RegularityTriple, ScheduleParams};
use manifold_sgd::sgd::{run_path, run_replication, Simulation};
use manifold_sgd::stats::ExperimentReport;
use manifold_sgd_cli::config::ExperimentConfig;
use manifold_sgd_cli::experiments::{
    feasible_region, run_clt_experiment, run_linear_oracle, run_rate_experiment, run_rho_sweep,
};
use manifold_sgd_cli::output::to_json;
use nalgebra::DMatrix;

/// Criteria expected to fail, with the reason recorded in the README.
const KNOWN_FAILURES: &[u32] = &[6];

/// `‖ℋ̄[10³, 10⁶] + H⁻¹‖` for `H = −2`, `γ_r = r^{−0.8}`, `b ≡ 1`, from a
/// direct cumulative-product evaluation in double precision.
const CHECK_LIMIT_SCALAR: f64 = 0.05422398658572236;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).expect("shipped config parses")
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct Line {
    id: u32,
    passed: bool,
    detail: String,
}

fn emit(line: &Line) {
    // written past the test harness capture so the lines always show
    let mut out = std::io::stdout();
    let _ = writeln!(
        out,
        "criterion {} {}: {}",
        line.id,
        if line.passed { "PASS" } else { "FAIL" },
        line.detail
    );
    let _ = out.flush();
}

fn rule(report: &ExperimentReport, name: &str) -> (bool, f64, f64) {
    let r = report.rule(name).unwrap_or_else(|| panic!("{} has no rule {name}", report.experiment));
    (r.passed, r.value, r.threshold)
}

fn rules_text(report: &ExperimentReport, names: &[&str]) -> (bool, String) {
    let mut ok = report.valid;
    let mut parts = Vec::new();
    for n in names {
        let (p, v, t) = rule(report, n);
        ok &= p;
        parts.push(format!("{n} {v:.4} (limit {t:.4})"));
    }
    (ok, parts.join(", "))
}

#[test]
fn acceptance_criteria() {
    let w = workers();
    let mut lines = Vec::new();

    // 1 and 3 (flat), 2, 3 and 9 (sphere) share their runs
    let flat_cfg = config("clt_flat.json");
    let flat = run_clt_experiment(&flat_cfg, w).expect("flat run");
    let sphere = run_clt_experiment(&config("clt_sphere.json"), w).expect("sphere run");

    {
        let r = &flat.report;
        let (ok, text) = rules_text(r, &["covariance_frobenius"]);
        let theory = r.theoretical_cov.clone().unwrap();
        let want = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.25]];
        let closed_form = theory.iter().flatten().zip(want.iter().flatten()).all(|(a, b)| (a - b).abs() <= 1e-12);
        // the same samples rescaled by √n instead of 1/σ_n, for reference
        let n = r.horizon.unwrap();
        let p = flat_cfg.schedule;
        let inflation = n as f64 * manifold_sgd::schedules::sigma_n(n, &p).powi(2);
        let emp = DMatrix::from_fn(3, 3, |i, j| r.empirical_cov.as_ref().unwrap()[i][j] * inflation);
        let th = DMatrix::from_fn(3, 3, |i, j| theory[i][j]);
        let sqrt_n_err = manifold_sgd::stats::frobenius_rel_err(&emp, &th).unwrap();
        lines.push(Line {
            id: 1,
            passed: ok && closed_form,
            detail: format!(
                "flat CLT, {} reps at n = {n}: {text}; Sigma = diag(0, 1, 1/4) {}; with sqrt(n) scaling the error would be {sqrt_n_err:.4}",
                r.total - r.excluded,
                if closed_form { "matches" } else { "MISMATCH" }
            ),
        });
    }

    {
        let r = &sphere.report;
        let (ok, text) = rules_text(r, &["mahalanobis_ks", "tangential_energy"]);
        let dof = r.mahalanobis.as_ref().unwrap().dof;
        lines.push(Line {
            id: 2,
            passed: ok && dof == 1,
            detail: format!("sphere CLT, rank {dof}: {text}"),
        });
    }

    {
        let (ok_f, text_f) = rules_text(&flat.report, &["f_gap_mean", "f_gap_variance"]);
        let (ok_s, text_s) = rules_text(&sphere.report, &["f_gap_mean", "f_gap_variance"]);
        let fg = flat.report.f_gap.as_ref().unwrap();
        let sg = sphere.report.f_gap.as_ref().unwrap();
        let predicted = (fg.predicted_mean - 1.5).abs() <= 1e-12
            && (fg.predicted_variance - 2.5).abs() <= 1e-12
            && (sg.predicted_mean - 0.5).abs() <= 1e-12
            && (sg.predicted_variance - 0.5).abs() <= 1e-12;
        lines.push(Line {
            id: 3,
            passed: ok_f && ok_s && predicted,
            detail: format!(
                "F-gap flat (mean {:.4} vs 1.5, var {:.4} vs 2.5): {text_f}; sphere (mean {:.4} vs 0.5): {text_s}",
                fg.mean, fg.variance, sg.mean
            ),
        });
    }

    {
        let o = run_rho_sweep(&config("rho_sweep.json"), w).expect("rho sweep");
        let (ok, text) = rules_text(&o.report, &["rho_ratio_0.5", "rho_ratio_1", "minimum_at_baseline"]);
        let predicted = o.entries.iter().all(|e| (e.predicted_ratio - c_rho(e.rho).unwrap().powi(2)).abs() <= 1e-12);
        let ratios: Vec<String> =
            o.entries.iter().map(|e| format!("rho {} ratio {:.4} (c^2 {:.4})", e.rho, e.ratio, e.predicted_ratio)).collect();
        lines.push(Line {
            id: 4,
            passed: ok && predicted,
            detail: format!("{}; {text}", ratios.join(", ")),
        });
    }

    {
        let o = run_rate_experiment(&config("rate_check.json"), w).expect("rate check");
        let (ok, text) = rules_text(&o.report, &["slope_gamma_0.75", "slope_gamma_0.8", "slope_gamma_0.9"]);
        let slopes: Vec<String> = o.entries.iter().map(|e| format!("gamma {} slope {:.4}", e.gamma, e.fit.slope)).collect();
        lines.push(Line { id: 5, passed: ok, detail: format!("{}; |slope + gamma|: {text}", slopes.join(", ")) });
    }

    let oracle = run_linear_oracle(&config("linear_oracle.json"), w).expect("linear oracle");
    {
        let (ok_cov, text_cov) = rules_text(&oracle.report, &["oracle_cov_scalar", "oracle_cov_two_by_two"]);
        let (ok_lim, text_lim) = rules_text(&oracle.report, &["check_limit_scalar", "check_limit_two_by_two"]);
        lines.push(Line {
            id: 6,
            passed: ok_cov && ok_lim,
            detail: format!("covariance {text_cov}; limit {text_lim}"),
        });
    }

    {
        let region =
            feasible_region(RegularityTriple { alpha_f: 0.5, alpha_phi: 1.0, alpha_psi: 2.0 / 3.0 }, None, None)
                .expect("feasible triple");
        let text = region.render();
        let gamma_ok = region.gamma_interval.lower == 0.75
            && region.gamma_interval.upper == 1.0
            && text.contains("gamma in (0.75, 1)");
        let beta = feasible_region(RegularityTriple::default(), Some(0.8), Some(0.0)).expect("feasible schedule");
        let lower = beta.beta_interval.unwrap().lower;
        let beta_ok = (lower - 5.0 / 6.0).abs() <= 1e-12;
        lines.push(Line {
            id: 7,
            passed: gamma_ok && beta_ok,
            detail: format!(
                "printed '{}', beta lower bound {lower} (5/6 = {})",
                text.lines().nth(1).unwrap_or(""),
                5.0 / 6.0
            ),
        });
    }

    {
        let start = Instant::now();
        let failures = deterministic_suite();
        let secs = start.elapsed().as_secs_f64();
        lines.push(Line {
            id: 8,
            passed: failures.is_empty() && secs < 60.0,
            detail: if failures.is_empty() {
                format!("all invariants hold, {secs:.1} s")
            } else {
                format!("{} failures in {secs:.1} s: {}", failures.len(), failures.join("; "))
            },
        });
    }

    {
        let r = &sphere.report;
        let (ok, text) = rules_text(r, &["drift_ratio", "mahalanobis_ks", "tangential_energy"]);
        let d = r.drift.as_ref().unwrap();
        lines.push(Line {
            id: 9,
            passed: ok,
            detail: format!(
                "mean drift {:.5} vs mean |theta_n| {:.5} (bound {:.5}, {} censored); {text}",
                d.mean_drift, d.mean_normal_distance, d.mean_bound, d.censored
            ),
        });
    }

    for line in &lines {
        emit(line);
    }

    // the unattainable sub-item sits at its computed value; the rest passes
    let scalar = oracle.cases.iter().find(|c| c.name == "scalar").unwrap();
    assert!((scalar.check_limit - CHECK_LIMIT_SCALAR).abs() <= 1e-9, "check_limit = {}", scalar.check_limit);
    assert!(oracle.report.rule("oracle_cov_scalar").unwrap().passed);
    assert!(oracle.report.rule("oracle_cov_two_by_two").unwrap().passed);

    for line in &lines {
        if KNOWN_FAILURES.contains(&line.id) {
            assert!(!line.passed, "criterion {} now passes; update KNOWN_FAILURES", line.id);
        } else {
            assert!(line.passed, "criterion {} failed: {}", line.id, line.detail);
        }
    }
}

fn problems() -> Vec<Problem> {
    vec![
        Problem::flat_quadratic(1, &DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0])).unwrap(),
        Problem::flat_quadratic(2, &DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap(),
        Problem::sphere_well(2).unwrap(),
        Problem::sphere_well(4).unwrap(),
        Problem::hyperbola_toy(1.0).unwrap(),
    ]
}

fn tube_points(prob: &Problem, count: u64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = StepRng::new(seed, 0, AUX_STREAM, 16);
    let max = 0.95 * prob.tube().radius;
    (0..count)
        .map(|k| {
            rng.begin_step(k);
            prob.sample_tube_point(max, &mut rng)
        })
        .collect()
}

/// The deterministic invariants; returns a description of every violation.
fn deterministic_suite() -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            bad.push(what);
        }
    };

    for prob in problems() {
        let name = format!("{:?}", prob.spec());
        let points = tube_points(&prob, 300, 81);
        let h = 1e-5;
        let mut l_min = f64::INFINITY;
        let mut c_max: f64 = 0.0;
        for x in &points {
            let g = prob.gradient(x);
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let hess = prob.hessian(x);
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (prob.objective(&xp) - prob.objective(&xm)) / (2.0 * h);
                check((fd - g[i]).abs() <= 1e-6 * (1.0 + gn), format!("{name}: gradient at {x:?}"));
                let (gp, gm) = (prob.gradient(&xp), prob.gradient(&xm));
                for j in 0..x.len() {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    check((fd - hess[(j, i)]).abs() <= 1e-5, format!("{name}: Hessian at {x:?}"));
                }
            }

            let m = prob.project(x).unwrap();
            let mm = prob.project(&m).unwrap();
            check(m.iter().zip(&mm).all(|(a, b)| (a - b).abs() <= 1e-10), format!("{name}: idempotence"));
            let split = normal_split(&prob, &m).unwrap();
            let r: Vec<f64> = x.iter().zip(&m).map(|(a, b)| a - b).collect();
            for t in split.tangent_vectors.column_iter() {
                let dot: f64 = r.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
                check(dot.abs() <= 1e-9, format!("{name}: orthogonality"));
            }
            let v = &split.normal_vectors;
            let e = SymEigen::new(&(v.transpose() * &hess * v)).unwrap();
            l_min = l_min.min(-e.values.last().unwrap());
            c_max = c_max.max(-e.values[0]);
        }
        check(l_min > 0.0, format!("{name}: normal Hessian not negative definite"));
        // one gradient step shrinks the distance by at least (1 − γL/2)
        for gamma in [1.0 / c_max, 0.5 / c_max, 0.05 / c_max] {
            for x in &points {
                let d0 = prob.distance_to_manifold(x).unwrap();
                let g = prob.gradient(x);
                let y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + gamma * b).collect();
                let d1 = prob.distance_to_manifold(&y).unwrap();
                check(d1 <= (1.0 - 0.5 * gamma * l_min) * d0 + 1e-15, format!("{name}: contraction at gamma {gamma}"));
            }
        }
    }

    // prefix-sum averages against naive weighted sums over the stored path
    {
        let prob = Problem::sphere_well(3).unwrap();
        let model = NoiseModel::new(NoiseKind::GaussianIid, DMatrix::identity(3, 3) * 0.04).unwrap();
        let p = ScheduleParams::new(0.5, 0.75, 0.0, 0.8).unwrap();
        let mut sim = Simulation::new(prob, model, p, vec![10, 57, 300, 1000]).unwrap();
        sim.rhos = vec![0.0, 0.5, 1.0];
        let traj = run_replication(&sim, 42, 7).unwrap();
        let path = run_path(&sim, 42, 7, 1000).unwrap();
        for snap in &traj.snapshots {
            check(snap.x == path[snap.n as usize], format!("iterate at {}", snap.n));
            let n0 = burn_in(snap.n, p.beta);
            for avg in &snap.averages {
                for k in 0..3 {
                    let (mut num, mut den) = (0.0, 0.0);
                    for i in (n0 + 1)..=snap.n {
                        let b = weight(i, avg.rho);
                        num += b * path[i as usize][k];
                        den += b;
                    }
                    let want = num / den;
                    check(
                        (avg.mean[k] - want).abs() <= 1e-12 * want.abs().max(1.0),
                        format!("average rho {} at {}", avg.rho, snap.n),
                    );
                }
            }
        }
    }

    // ℋ̄ against the defining double sum, Ξ against the naive evaluation
    {
        let h = DMatrix::from_row_slice(2, 2, &[-1.3, 0.4, 0.4, -0.7]);
        let p = ScheduleParams::new(1.0, 0.8, 0.5, 0.9).unwrap();
        let pm = ProductMatrices::new(h.clone(), p).unwrap();
        let (i, j) = (5u64, 60u64);
        let id = DMatrix::<f64>::identity(2, 2);
        let mut want = DMatrix::<f64>::zeros(2, 2);
        for r in i..=j {
            let mut prod = id.clone();
            for q in (i + 1)..=r {
                prod = (&id + step_size(q, &p) * &h) * prod;
            }
            want += (step_size(i, &p) * weight(r, p.rho) / weight(i, p.rho)) * prod;
        }
        let got = bar_cal_h(i, j, &pm);
        check((&got - &want).amax() <= 1e-12 * want.amax(), "bar_cal_h against the double sum".into());
        let gamma = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let a = simulate_xi(150, &pm, &gamma, &mut StepRng::new(3, 1, 0, 2)).unwrap();
        let b = simulate_xi_naive(150, &pm, &gamma, &mut StepRng::new(3, 1, 0, 2)).unwrap();
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        check(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-10 * scale), "simulate_xi against naive".into());
    }

    // every shipped config survives a serialization round trip
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().is_some_and(|n| n == "schema.json") {
            continue;
        }
        let cfg = ExperimentConfig::load(&path).unwrap();
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        check(back == cfg && back.to_json() == text, format!("round trip of {}", path.display()));
    }

    // reports do not depend on the worker count
    {
        let mut cfg = config("clt_sphere.json");
        cfg.replications = 24;
        cfg.horizons = vec![500, 2000];
        let one = to_json(&run_clt_experiment(&cfg, 1).unwrap());
        let many = to_json(&run_clt_experiment(&cfg, 4).unwrap());
        check(one == many, "parallel and serial clt reports differ".into());
        let mut cfg = config("rho_sweep.json");
        cfg.replications = 24;
        cfg.horizons = vec![2000];
        let one = to_json(&run_rho_sweep(&cfg, 1).unwrap());
        let many = to_json(&run_rho_sweep(&cfg, 3).unwrap());
        check(one == many, "parallel and serial rho sweeps differ".into());
    }

    bad
}
