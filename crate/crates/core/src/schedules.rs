//! Step sizes, averaging weights, burn-in and parameter feasibility.
//!
//! The power-law family is `γ_n = C_γ n^{-γ}`, `b_n = n^ρ` and
//! `n₀(n) = ⌊n^β / 2⌋`. All feasibility boundaries are strict: a parameter
//! sitting exactly on a boundary fails with zero margin.

use serde::{Deserialize, Serialize};

use crate::summation::CompensatedSum;
use crate::{Error, Result};

/// `(C_γ, γ, ρ, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub c_gamma: f64,
    pub gamma_exp: f64,
    pub rho: f64,
    pub beta: f64,
}

impl ScheduleParams {
    pub fn new(c_gamma: f64, gamma_exp: f64, rho: f64, beta: f64) -> Result<Self> {
        let p = Self { c_gamma, gamma_exp, rho, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c_gamma > 0.0
            && self.c_gamma.is_finite()
            && self.gamma_exp > 0.0
            && self.gamma_exp < 1.0
            && self.rho > -0.5
            && self.rho.is_finite()
            && self.beta > 0.0
            && self.beta < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "schedule needs c_gamma > 0, 0 < gamma < 1, rho > -1/2, 0 < beta < 1; got {self:?}"
            )))
        }
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..*self }
    }
}

/// Hölder regularities `(α_f, α_Φ, α_Ψ)` of the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityTriple {
    pub alpha_f: f64,
    pub alpha_phi: f64,
    pub alpha_psi: f64,
}

impl RegularityTriple {
    pub fn new(alpha_f: f64, alpha_phi: f64, alpha_psi: f64) -> Result<Self> {
        let r = Self { alpha_f, alpha_phi, alpha_psi };
        for (name, v) in [("alpha_f", alpha_f), ("alpha_phi", alpha_phi), ("alpha_psi", alpha_psi)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(r)
    }

    /// `α = α_f ∧ α_Φ ∧ α_Ψ`.
    pub fn alpha(&self) -> f64 {
        self.alpha_f.min(self.alpha_phi).min(self.alpha_psi)
    }

    /// `α′ = α_Ψ ∧ (1 + α)/2`.
    pub fn alpha_prime(&self) -> f64 {
        self.alpha_psi.min((1.0 + self.alpha()) / 2.0)
    }
}

impl Default for RegularityTriple {
    /// Smooth problems: every regularity equals one.
    fn default() -> Self {
        Self { alpha_f: 1.0, alpha_phi: 1.0, alpha_psi: 1.0 }
    }
}

#[inline]
pub fn step_size(n: u64, p: &ScheduleParams) -> f64 {
    p.c_gamma * (n as f64).powf(-p.gamma_exp)
}

#[inline]
pub fn weight(n: u64, rho: f64) -> f64 {
    if rho == 0.0 {
        1.0
    } else {
        (n as f64).powf(rho)
    }
}

/// `⌊n^β / 2⌋`, always strictly below `n` for `n ≥ 1`.
pub fn burn_in(n: u64, beta: f64) -> u64 {
    let raw = ((n as f64).powf(beta) / 2.0).floor() as u64;
    raw.min(n.saturating_sub(1))
}

/// `b̄_n = Σ_{i=n₀(n)+1}^{n} b_i`.
pub fn weight_mass(n: u64, p: &ScheduleParams) -> f64 {
    let n0 = burn_in(n, p.beta);
    ((n0 + 1)..=n).map(|i| weight(i, p.rho)).collect::<CompensatedSum>().value()
}

/// `σ_n = (1/b̄_n) sqrt(Σ_{i=n₀(n)+1}^{n} b_i²)` with `δ^diff ≡ 1`.
pub fn sigma_n(n: u64, p: &ScheduleParams) -> f64 {
    let n0 = burn_in(n, p.beta);
    assert!(n > n0, "sigma_n needs n > n0(n)");
    let mut mass = CompensatedSum::new();
    let mut sq = CompensatedSum::new();
    for i in (n0 + 1)..=n {
        let b = weight(i, p.rho);
        mass.add(b);
        sq.add(b * b);
    }
    sq.value().sqrt() / mass.value()
}

/// Raw-iterate scale `σ_n^RM = n^{-γ/2}`.
#[inline]
pub fn sigma_rm(n: u64, gamma_exp: f64) -> f64 {
    (n as f64).powf(-gamma_exp / 2.0)
}

/// Clock `t_n = Σ_{m ≤ n} γ_m`.
pub fn clock(n: u64, p: &ScheduleParams) -> f64 {
    (1..=n).map(|m| step_size(m, p)).collect::<CompensatedSum>().value()
}

/// The limit factor `(ρ+1)/√(2ρ+1)`.
pub fn c_rho(rho: f64) -> Result<f64> {
    if !(rho > -0.5) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("c(rho) needs rho > -1/2, got {rho}")));
    }
    Ok((rho + 1.0) / (2.0 * rho + 1.0).sqrt())
}

/// All sequences derived from one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedSequences {
    pub params: ScheduleParams,
}

impl DerivedSequences {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn step(&self, n: u64) -> f64 {
        step_size(n, &self.params)
    }

    pub fn weight(&self, n: u64) -> f64 {
        weight(n, self.params.rho)
    }

    pub fn burn_in(&self, n: u64) -> u64 {
        burn_in(n, self.params.beta)
    }

    pub fn weight_mass(&self, n: u64) -> f64 {
        weight_mass(n, &self.params)
    }

    pub fn sigma(&self, n: u64) -> f64 {
        sigma_n(n, &self.params)
    }

    pub fn sigma_rm(&self, n: u64) -> f64 {
        sigma_rm(n, self.params.gamma_exp)
    }

    pub fn clock(&self, n: u64) -> f64 {
        clock(n, &self.params)
    }
}

/// Open interval `(lower, upper)`; `upper` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenInterval {
    pub lower: f64,
    pub upper: f64,
}

impl OpenInterval {
    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    pub fn is_empty(&self) -> bool {
        self.lower >= self.upper
    }

    /// Signed distance to the nearest endpoint; positive inside.
    pub fn margin(&self, x: f64) -> f64 {
        (x - self.lower).min(self.upper - x)
    }
}

/// Admissible step-size exponents `γ`.
pub fn feasible_gamma_interval(r: &RegularityTriple) -> Result<OpenInterval> {
    if !(r.alpha_psi > 0.5) {
        return Err(Error::Infeasible(format!(
            "alpha_psi = {} <= 1/2: the gamma interval may be empty",
            r.alpha_psi
        )));
    }
    let terms = gamma_lower_terms(r);
    let lower = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(OpenInterval { lower, upper: 1.0 })
}

/// The three lower-bound terms of the `γ` condition, in order
/// `1 − α/(1+2α)`, `1 − α_Φ/(2(1+α_Φ))`, `1/(2α′)`.
pub fn gamma_lower_terms(r: &RegularityTriple) -> [f64; 3] {
    let a = r.alpha();
    [
        1.0 - a / (1.0 + 2.0 * a),
        1.0 - 0.5 * r.alpha_phi / (1.0 + r.alpha_phi),
        1.0 / (2.0 * r.alpha_prime()),
    ]
}

/// Admissible weight exponents `ρ` for a given `γ`: `(γα′ − 1, ∞)`.
pub fn feasible_rho_interval(gamma_exp: f64, r: &RegularityTriple) -> OpenInterval {
    OpenInterval { lower: gamma_exp * r.alpha_prime() - 1.0, upper: f64::INFINITY }
}

/// Admissible burn-in exponents `β` for `n₀(n) = ⌊n^β/2⌋`.
pub fn feasible_beta_interval(p: &ScheduleParams, r: &RegularityTriple) -> Result<OpenInterval> {
    let g = p.gamma_exp;
    if !(g > 0.5 && g < 1.0) {
        return Err(Error::InvalidParameter(format!("beta interval needs 1/2 < gamma < 1, got {g}")));
    }
    let mut lower = beta_lower_terms(p, r).into_iter().fold(f64::NEG_INFINITY, f64::max);
    if lower.is_nan() {
        lower = f64::INFINITY;
    }
    let iv = OpenInterval { lower, upper: 1.0 };
    if iv.is_empty() {
        return Err(Error::Infeasible(format!("burn-in exponent interval ({lower}, 1) is empty")));
    }
    Ok(iv)
}

/// Lower-bound terms of the `β` condition; the third one only appears when
/// `ρ < γ − 1`.
pub fn beta_lower_terms(p: &ScheduleParams, r: &RegularityTriple) -> Vec<f64> {
    let g = p.gamma_exp;
    let a = r.alpha();
    let mut terms = vec![
        1.0 / ((2.0 * g - 1.0) * (1.0 + r.alpha_phi)),
        (1.0 / a) * (1.0 - g) / (2.0 * g - 1.0),
    ];
    let s = 1.0 + p.rho;
    if p.rho < g - 1.0 {
        terms.push((1.0 / (1.0 + r.alpha_phi) - s) / (g - s));
    }
    terms
}

/// Elementwise bound `ε_n` on the tangential drift over the averaging window:
/// `Σ ((√γ_k σ_k^RM)^{1+α_Ψ} + γ_k (σ_{k-1}^RM)^{1+α}) + sqrt(Σ γ_k (σ_k^RM)²)`
/// with the sums over `k ∈ (n₀(n), n]`.
pub fn drift_bound(n: u64, p: &ScheduleParams, r: &RegularityTriple) -> f64 {
    let n0 = burn_in(n, p.beta);
    let a = r.alpha();
    let mut first = CompensatedSum::new();
    let mut second = CompensatedSum::new();
    for k in (n0 + 1)..=n {
        let gk = step_size(k, p);
        let sk = sigma_rm(k, p.gamma_exp);
        let sk_prev = sigma_rm((k - 1).max(1), p.gamma_exp);
        first.add((gk.sqrt() * sk).powf(1.0 + r.alpha_psi) + gk * sk_prev.powf(1.0 + a));
        second.add(gk * sk * sk);
    }
    first.value() + second.value().sqrt()
}

/// One itemised inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionItem {
    pub name: String,
    pub passed: bool,
    /// Positive when satisfied; zero on the boundary.
    pub margin: f64,
    pub detail: String,
}

impl ConditionItem {
    fn strict(name: &str, margin: f64, detail: String) -> Self {
        Self { name: name.to_string(), passed: margin > 0.0, margin, detail }
    }
}

/// Sampled value of `|b_{n+1}γ_n / (b_nγ_{n+1}) − 1| / γ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub n: u64,
    pub scaled_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub items: Vec<ConditionItem>,
    pub ratio_grid: Vec<RatioSample>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn item(&self, name: &str) -> Option<&ConditionItem> {
        self.items.iter().find(|i| i.name == name)
    }

    pub fn failures(&self) -> Vec<&ConditionItem> {
        self.items.iter().filter(|i| !i.passed).collect()
    }
}

/// Itemised check of the regularity, step-size/weight and burn-in
/// conditions plus a sampled version of the weight-ratio condition.
/// Never fails; problems show up as failed items.
pub fn check_assumptions(p: &ScheduleParams, r: &RegularityTriple) -> AssumptionReport {
    let mut items = Vec::new();

    for (name, v, lo) in [
        ("alpha_f in (0,1]", r.alpha_f, 0.0),
        ("alpha_phi in (0,1]", r.alpha_phi, 0.0),
        ("alpha_psi in (1/2,1]", r.alpha_psi, 0.5),
    ] {
        // left end open, right end closed
        items.push(ConditionItem {
            name: name.into(),
            passed: v > lo && v <= 1.0,
            margin: (v - lo).min(1.0 - v),
            detail: format!("value = {v}"),
        });
    }

    let terms = gamma_lower_terms(r);
    let g_lower = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    items.push(ConditionItem::strict(
        "gamma lower bound",
        p.gamma_exp - g_lower,
        format!("gamma = {} must exceed max({:.6}, {:.6}, {:.6}) = {:.6}", p.gamma_exp, terms[0], terms[1], terms[2], g_lower),
    ));
    items.push(ConditionItem::strict("gamma < 1", 1.0 - p.gamma_exp, format!("gamma = {}", p.gamma_exp)));
    let rho_iv = feasible_rho_interval(p.gamma_exp, r);
    items.push(ConditionItem::strict(
        "1 + rho > gamma alpha'",
        p.rho - rho_iv.lower,
        format!("rho = {} must exceed gamma*alpha' - 1 = {:.6}", p.rho, rho_iv.lower),
    ));

    if p.gamma_exp > 0.5 && p.gamma_exp < 1.0 {
        let bt = beta_lower_terms(p, r);
        let b_lower = bt.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        items.push(ConditionItem::strict(
            "beta lower bound",
            p.beta - b_lower,
            format!("beta = {} must exceed max{:?} = {:.6}", p.beta, bt, b_lower),
        ));
    } else {
        items.push(ConditionItem {
            name: "beta lower bound".into(),
            passed: false,
            margin: 0.0,
            detail: format!("undefined for gamma = {} outside (1/2, 1)", p.gamma_exp),
        });
    }
    items.push(ConditionItem::strict("beta < 1", 1.0 - p.beta, format!("beta = {}", p.beta)));

    let grid: Vec<u64> = vec![100, 1_000, 10_000, 100_000, 1_000_000];
    let ratio_grid: Vec<RatioSample> = grid
        .iter()
        .map(|&n| {
            let gn = step_size(n, p);
            let ratio = weight(n + 1, p.rho) * gn / (weight(n, p.rho) * step_size(n + 1, p));
            RatioSample { n, scaled_deviation: (ratio - 1.0).abs() / gn }
        })
        .collect();
    let decreasing = ratio_grid.windows(2).all(|w| w[1].scaled_deviation <= w[0].scaled_deviation);
    let last = ratio_grid.last().map(|s| s.scaled_deviation).unwrap_or(f64::NAN);
    items.push(ConditionItem {
        name: "weight ratio 1 + o(gamma_n)".into(),
        passed: decreasing,
        margin: -last,
        detail: format!(
            "|ratio - 1|/gamma_n on n = 1e2..1e6: {:?}",
            ratio_grid.iter().map(|s| s.scaled_deviation).collect::<Vec<_>>()
        ),
    });
    let n_gamma: Vec<f64> = grid.iter().map(|&n| n as f64 * step_size(n, p)).collect();
    items.push(ConditionItem {
        name: "n gamma_n -> infinity".into(),
        passed: n_gamma.windows(2).all(|w| w[1] > w[0]),
        margin: n_gamma.last().copied().unwrap_or(0.0) - n_gamma[0],
        detail: format!("n gamma_n on n = 1e2..1e6: {n_gamma:?}"),
    });

    AssumptionReport { items, ratio_grid }
}
