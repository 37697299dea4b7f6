//! Upper and lower bounds on the cycle power: the Fisher-information bound,
//! the two-sided bound under a budget on `∫‖∇U‖²ρ`, and the quadratic engine
//! that attains the lower bound as the period shrinks.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{fokker_planck_evolve, max_stable_dt, Protocol, QuadraticProtocol};
use crate::error::{EngineError, Result};
use crate::statespace::{
    entropy, fisher_information, DensityFunctionals, Grid, GridDensity, PhysicalConstants, State,
};
use crate::transport::{w2_states, DEFAULT_QUANTILE_NODES};

/// Budget `M` on the mean squared force, `∫‖∇U‖²ρ dx / γ ≤ M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintBudget {
    pub m: f64,
}

impl ConstraintBudget {
    pub fn new(m: f64) -> Result<Self> {
        let b = Self { m };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(EngineError::param("m", "budget must be positive"));
        }
        Ok(())
    }
}

/// `T_h ≥ T_c > 0`; equal temperatures are allowed for the degenerate limits.
fn check_temperatures(t_hot: f64, t_cold: f64) -> Result<()> {
    if !(t_cold > 0.0 && t_cold.is_finite()) {
        return Err(EngineError::param("t_cold", "must be positive"));
    }
    if !(t_hot >= t_cold && t_hot.is_finite()) {
        return Err(EngineError::param("t_hot", "must not be below t_cold"));
    }
    Ok(())
}

/// `k_B² (T_h − T_c)² I(ρ_a) / (16γ)`.
pub fn fisher_power_bound<D: DensityFunctionals + ?Sized>(
    rho_a: &D,
    t_hot: f64,
    t_cold: f64,
    consts: &PhysicalConstants,
) -> f64 {
    let dt = t_hot - t_cold;
    consts.k_b * consts.k_b * dt * dt / (16.0 * consts.gamma) * fisher_information(rho_a)
}

/// Both sides of `S(ρ_b) − S(ρ_a) ≤ k_B W2(ρ_a, ρ_b) √I(ρ_a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HwiCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl HwiCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack
    }
}

pub fn hwi_check(rho_a: &State, rho_b: &State, consts: &PhysicalConstants) -> Result<HwiCheck> {
    let w = w2_states(rho_a, rho_b, DEFAULT_QUANTILE_NODES)?;
    Ok(HwiCheck {
        lhs: entropy(rho_b, consts) - entropy(rho_a, consts),
        rhs: consts.k_b * w * fisher_information(rho_a).sqrt(),
    })
}

/// `M/8 · (T_h/T_c − 1)`.
pub fn constrained_upper_bound(m: f64, t_hot: f64, t_cold: f64) -> Result<f64> {
    ConstraintBudget::new(m)?;
    check_temperatures(t_hot, t_cold)?;
    Ok(m / 8.0 * (t_hot / t_cold - 1.0))
}

/// `M/8 · (r − 1)²/(r + 1)` with `r = T_h/T_c`, attained by [`QuadraticEngine`].
pub fn constrained_lower_bound(m: f64, t_hot: f64, t_cold: f64) -> Result<f64> {
    ConstraintBudget::new(m)?;
    check_temperatures(t_hot, t_cold)?;
    let r = t_hot / t_cold;
    Ok(m / 8.0 * (r - 1.0).powi(2) / (r + 1.0))
}

/// Harmonic engine with `σ_a = σ_b = σ`: on the hot isotherm the stiffness
/// is `a = k_B T_h/σ_t² − γλ` (the variance grows at rate `2λ`), on the
/// cold one `a = γλ + k_B T_c/σ_t²` (it shrinks at the same rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticEngine {
    pub sigma: f64,
    pub lambda: f64,
    pub t_hot: f64,
    pub t_cold: f64,
    #[serde(skip)]
    pub consts: PhysicalConstants,
}

impl QuadraticEngine {
    pub fn new(
        sigma: f64,
        lambda: f64,
        t_hot: f64,
        t_cold: f64,
        consts: PhysicalConstants,
    ) -> Result<Self> {
        let e = Self {
            sigma,
            lambda,
            t_hot,
            t_cold,
            consts,
        };
        e.validate()?;
        Ok(e)
    }

    /// The power-maximizing point under `budget`:
    /// `σ = 2(T_h + T_c)/(T_h + 3T_c) · k_B T_c/√(γM)`,
    /// `λ = (T_h + 3T_c)(T_h − T_c)/(4(T_h + T_c)²) · M/(k_B T_c)`.
    pub fn optimal(
        budget: &ConstraintBudget,
        t_hot: f64,
        t_cold: f64,
        consts: PhysicalConstants,
    ) -> Result<Self> {
        budget.validate()?;
        check_temperatures(t_hot, t_cold)?;
        let (sigma0, lambda0) = scales(budget, t_cold, &consts);
        let s = t_hot + t_cold;
        Self::new(
            2.0 * s / (t_hot + 3.0 * t_cold) * sigma0,
            (t_hot + 3.0 * t_cold) * (t_hot - t_cold) / (4.0 * s * s) * lambda0,
            t_hot,
            t_cold,
            consts,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.consts.validate()?;
        check_temperatures(self.t_hot, self.t_cold)?;
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EngineError::param("sigma", "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(EngineError::param("lambda", "must be non-negative"));
        }
        Ok(())
    }

    /// Cold-isotherm stiffness `γλ + k_B T_c/σ²` at the operating point.
    pub fn cold_stiffness(&self) -> f64 {
        self.consts.gamma * self.lambda + self.consts.k_b * self.t_cold / (self.sigma * self.sigma)
    }

    /// Hot-isotherm stiffness `k_B T_h/σ² − γλ` at the operating point.
    pub fn hot_stiffness(&self) -> f64 {
        self.consts.k_b * self.t_hot / (self.sigma * self.sigma) - self.consts.gamma * self.lambda
    }

    /// `|γλ + k_B T_c/σ²| − √(γM)/σ`; feasible when `≤ 0`.
    pub fn constraint_residual(&self, budget: &ConstraintBudget) -> f64 {
        self.cold_stiffness().abs() - (self.consts.gamma * budget.m).sqrt() / self.sigma
    }

    /// `a² σ²/γ` on the cold isotherm at the operating point.
    pub fn cold_constraint(&self) -> f64 {
        let a = self.cold_stiffness();
        a * a * self.sigma * self.sigma / self.consts.gamma
    }

    fn stiffness(&self, hot: bool, var: f64) -> f64 {
        let g = self.consts.gamma * self.lambda;
        if hot {
            self.consts.k_b * self.t_hot / var - g
        } else {
            self.consts.k_b * self.t_cold / var + g
        }
    }

    fn temperature(&self, hot: bool) -> f64 {
        if hot {
            self.t_hot
        } else {
            self.t_cold
        }
    }
}

/// `σ₀ = k_B T_c/√(γM)` and `λ₀ = M/(k_B T_c)`.
fn scales(budget: &ConstraintBudget, t_cold: f64, consts: &PhysicalConstants) -> (f64, f64) {
    let kt = consts.k_b * t_cold;
    (kt / (consts.gamma * budget.m).sqrt(), budget.m / kt)
}

/// `k_B(T_h − T_c)λ/2 − γλ²σ²`, the vanishing-period limit of the engine.
pub fn quadratic_engine_power_limit(engine: &QuadraticEngine) -> f64 {
    let c = &engine.consts;
    c.k_b * (engine.t_hot - engine.t_cold) * engine.lambda / 2.0
        - c.gamma * engine.lambda.powi(2) * engine.sigma.powi(2)
}

/// State of the finite-period engine at one integration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnginePoint {
    pub t: f64,
    pub variance: f64,
    pub stiffness: f64,
    /// `a_t² σ_t²/γ`.
    pub constraint: f64,
    /// Cumulative work done on the particle.
    pub work: f64,
    /// Cumulative heat absorbed.
    pub heat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteCycle {
    /// `(1/t)[k_B ΔT log(σ_b/σ_a) − (1/γ)∫(a − k_B T/σ²)² σ² dt]`.
    pub power: f64,
    /// `−W/t` from the work ledger, switches included.
    pub power_from_work: f64,
    pub constraint_max: f64,
    pub constraint_max_hot: f64,
    pub constraint_max_cold: f64,
    pub work: f64,
    pub heat_hot: f64,
    pub heat_cold: f64,
    /// `S(ρ_b) − S(ρ_a)` over the hot isotherm.
    pub delta_s_hot: f64,
    /// Relative mismatch of the final and initial variance.
    pub closure: f64,
    #[serde(skip)]
    pub ledger: Vec<EnginePoint>,
}

/// Integrates `dσ²/dt = −2(a/γ − k_B T/(γσ²))σ²` over both isotherms of
/// length `t_cycle/2` with classical RK4 steps, accumulating the dissipation
/// integral and the work `∫½ȧσ² dt`; the stiffness jumps at the two
/// adiabatic switches cost `½Δa σ²`.
pub fn quadratic_engine_finite_cycle(
    engine: &QuadraticEngine,
    t_cycle: f64,
    n_steps: usize,
    budget: &ConstraintBudget,
) -> Result<FiniteCycle> {
    engine.validate()?;
    budget.validate()?;
    if !(t_cycle > 0.0 && t_cycle.is_finite()) {
        return Err(EngineError::param("t_cycle", "must be positive"));
    }
    if n_steps < 1000 {
        return Err(EngineError::param("n_steps", "needs at least 1000 steps"));
    }
    let c = engine.consts;
    let half_steps = n_steps.div_ceil(2);
    let h = 0.5 * t_cycle / half_steps as f64;
    let var0 = engine.sigma * engine.sigma;

    let mut var = var0;
    let mut t = 0.0;
    let mut work = 0.0;
    let mut heat = [0.0; 2];
    let mut dissipation = 0.0;
    let mut cmax = [0.0f64; 2];
    let mut ledger = Vec::with_capacity(2 * half_steps + 3);
    let mut var_hot_end = var0;
    let mut prev_a: Option<f64> = None;

    for (phase, hot) in [true, false].into_iter().enumerate() {
        let kt = c.k_b * engine.temperature(hot);
        let a_of = |v: f64| engine.stiffness(hot, v);
        // d(var)/dt, and the rates of the dissipation integral and work.
        let rates = |v: f64| -> [f64; 3] {
            let a = a_of(v);
            let dv = -2.0 * (a * v - kt) / c.gamma;
            let excess = a - kt / v;
            let da = -kt / (v * v) * dv;
            [dv, excess * excess * v / c.gamma, 0.5 * da * v]
        };
        let a_start = a_of(var);
        if let Some(a_prev) = prev_a {
            work += 0.5 * (a_start - a_prev) * var;
        }
        let mut record = |t: f64, var: f64, work: f64, heat: f64, cmax: &mut [f64; 2]| {
            let a = a_of(var);
            let con = a * a * var / c.gamma;
            cmax[phase] = cmax[phase].max(con);
            ledger.push(EnginePoint {
                t,
                variance: var,
                stiffness: a,
                constraint: con,
                work,
                heat,
            });
        };
        record(t, var, work, heat[0] + heat[1], &mut cmax);
        for _ in 0..half_steps {
            let mut step = h;
            let mut done = 0.0;
            // Halve the step whenever it would leave var > 0.
            while done < h {
                step = step.min(h - done);
                let k1 = rates(var);
                let k2 = rates(var + 0.5 * step * k1[0]);
                let k3 = rates(var + 0.5 * step * k2[0]);
                let k4 = rates(var + step * k3[0]);
                let next = var + step / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
                if !(next > 0.0 && next.is_finite())
                    || !(k2[0].is_finite() && k3[0].is_finite() && k4[0].is_finite())
                {
                    step *= 0.5;
                    if step < h * 1e-12 {
                        return Err(EngineError::Collapse(format!(
                            "variance collapsed at t = {}",
                            t + done
                        )));
                    }
                    continue;
                }
                let inc = |i: usize| step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                let (d_diss, d_work) = (inc(1), inc(2));
                // First law of the isotherm: d⟨½aσ²⟩ = dW + dQ.
                let d_energy = 0.5 * (a_of(next) * next - a_of(var) * var);
                heat[phase] += d_energy - d_work;
                dissipation += d_diss;
                work += d_work;
                var = next;
                done += step;
            }
            if !(var > f64::MIN_POSITIVE * 1e10) {
                return Err(EngineError::Collapse(format!(
                    "variance underflowed at t = {t}"
                )));
            }
            t += h;
            record(t, var, work, heat[0] + heat[1], &mut cmax);
        }
        if hot {
            var_hot_end = var;
        }
        prev_a = Some(a_of(var));
    }
    // Switch back to the hot stiffness closes the cycle.
    work += 0.5 * (engine.stiffness(true, var) - prev_a.expect("two phases ran")) * var;

    let dt = engine.t_hot - engine.t_cold;
    let delta_s_hot = 0.5 * c.k_b * (var_hot_end / var0).ln();
    let power = (dt * delta_s_hot - dissipation) / t_cycle;
    Ok(FiniteCycle {
        power,
        power_from_work: -work / t_cycle,
        constraint_max: cmax[0].max(cmax[1]),
        constraint_max_hot: cmax[0],
        constraint_max_cold: cmax[1],
        work,
        heat_hot: heat[0],
        heat_cold: heat[1],
        delta_s_hot,
        closure: (var / var0 - 1.0).abs(),
        ledger,
    })
}

/// Which constraint branch holds the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumBranch {
    /// `x = (ΔT/4T_c) y²` strictly inside `x ≤ y − y²`.
    Interior,
    /// On `x = y − y²`.
    Boundary,
}

/// Power optimum in `x = λ/λ₀`, `y = σ₀/σ`, where the power is
/// `M f(x, y)`, `f = (ΔT/2T_c) x − x²/y²`, on `0 ≤ x ≤ y − y²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionlessOptimum {
    pub p_star: f64,
    pub x_star: f64,
    pub y_star: f64,
    pub sigma_star: f64,
    pub lambda_star: f64,
    /// Largest `y` at which the unconstrained maximizer in `x` is feasible.
    pub y0: f64,
    pub branch: OptimumBranch,
}

fn f_dimensionless(a: f64, x: f64, y: f64) -> f64 {
    a * x - x * x / (y * y)
}

/// Closed-form maximization, branch by branch. Below `y₀ = 1/(1 + ΔT/4T_c)`
/// the best `x` is interior and the value `a²y²/4` (`a = ΔT/2T_c`) peaks at
/// `y₀` with `(ΔT/(3T_c + T_h))²`; above it the best is on `x = y − y²`,
/// peaking at `y = (T_h + 3T_c)/(2(T_h + T_c))` with `ΔT²/(8T_c(T_c + T_h))`.
pub fn dimensionless_optimum(
    t_hot: f64,
    t_cold: f64,
    budget: &ConstraintBudget,
    consts: &PhysicalConstants,
) -> Result<DimensionlessOptimum> {
    budget.validate()?;
    check_temperatures(t_hot, t_cold)?;
    if t_hot == t_cold {
        return Err(EngineError::param("t_hot", "must exceed t_cold"));
    }
    let dt = t_hot - t_cold;
    let a = dt / (2.0 * t_cold);
    let y0 = 1.0 / (1.0 + dt / (4.0 * t_cold));
    let interior = (y0, a * y0 * y0 / 2.0, (dt / (3.0 * t_cold + t_hot)).powi(2));
    let yb = (t_hot + 3.0 * t_cold) / (2.0 * (t_hot + t_cold));
    let boundary = (
        yb,
        yb - yb * yb,
        dt * dt / (8.0 * t_cold * (t_cold + t_hot)),
    );
    let ((y, x, f), branch) = if interior.2 > boundary.2 {
        (interior, OptimumBranch::Interior)
    } else {
        (boundary, OptimumBranch::Boundary)
    };
    let (sigma0, lambda0) = scales(budget, t_cold, consts);
    Ok(DimensionlessOptimum {
        p_star: budget.m * f,
        x_star: x,
        y_star: y,
        sigma_star: sigma0 / y,
        lambda_star: lambda0 * x,
        y0,
        branch,
    })
}

/// Grid search for the maximum of `f` over the feasible set, on an
/// `n × n` grid in `(y, x/(y − y²))`, refined by repeated `n × n` searches
/// on a shrinking window around the incumbent. Returns `(f, x, y)`.
pub fn dimensionless_grid_search(
    t_hot: f64,
    t_cold: f64,
    n: usize,
    rounds: usize,
) -> Result<(f64, f64, f64)> {
    check_temperatures(t_hot, t_cold)?;
    if n < 2 {
        return Err(EngineError::param(
            "n",
            "needs at least two points per axis",
        ));
    }
    let a = (t_hot - t_cold) / (2.0 * t_cold);
    let (mut y_lo, mut y_hi) = (0.0, 1.0);
    let (mut s_lo, mut s_hi) = (0.0, 1.0);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for _ in 0..=rounds {
        let row_best = (1..=n)
            .into_par_iter()
            .map(|j| {
                let y = y_lo + (y_hi - y_lo) * j as f64 / n as f64;
                let g = y - y * y;
                let mut b = (f64::NEG_INFINITY, 0.0, y, 0.0);
                for i in 0..n {
                    let s = s_lo + (s_hi - s_lo) * i as f64 / (n - 1) as f64;
                    let x = s * g;
                    let v = f_dimensionless(a, x, y);
                    if v > b.0 {
                        b = (v, x, y, s);
                    }
                }
                b
            })
            .collect::<Vec<_>>();
        for b in row_best {
            if b.0 > best.0 {
                best = b;
            }
        }
        let (dy, ds) = (
            4.0 * (y_hi - y_lo) / n as f64,
            4.0 * (s_hi - s_lo) / n as f64,
        );
        y_lo = (best.2 - dy).max(0.0);
        y_hi = (best.2 + dy).min(1.0);
        s_lo = (best.3 - ds).max(0.0);
        s_hi = (best.3 + ds).min(1.0);
    }
    Ok((best.0, best.1, best.2))
}

/// Efficiency at the constrained optimum and its reference efficiencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyReport {
    /// `(T_h − T_c)/(T_h + T_c)`.
    pub eta: f64,
    /// `2(T_h − T_c)/(3T_h + T_c)`.
    pub eta_ss: f64,
    /// `1 − √(T_c/T_h)`.
    pub eta_ca: f64,
    /// `1 − T_c/T_h`.
    pub eta_carnot: f64,
    /// `η_SS ≤ η_CA ≤ η ≤ η_C`.
    pub ordered: bool,
}

pub fn efficiency_at_constrained_optimum(t_hot: f64, t_cold: f64) -> Result<EfficiencyReport> {
    if !(t_cold >= 0.0 && t_hot > 0.0 && t_hot >= t_cold && t_hot.is_finite()) {
        return Err(EngineError::param(
            "t_hot",
            "needs t_hot ≥ t_cold ≥ 0 and t_hot > 0",
        ));
    }
    let eta = (t_hot - t_cold) / (t_hot + t_cold);
    let eta_ss = 2.0 * (t_hot - t_cold) / (3.0 * t_hot + t_cold);
    let eta_ca = 1.0 - (t_cold / t_hot).sqrt();
    let eta_carnot = 1.0 - t_cold / t_hot;
    let tol = 1e-15;
    Ok(EfficiencyReport {
        eta,
        eta_ss,
        eta_ca,
        eta_carnot,
        ordered: eta_ss <= eta_ca + tol && eta_ca <= eta + tol && eta <= eta_carnot + tol,
    })
}

/// Resolution of the achievability sweep. `σ` runs linearly over
/// `[σ₀, sigma_max_factor·σ₀]` (below `σ₀` no `λ ≥ 0` is feasible); `λ`
/// runs over `[0, lambda_overshoot·λ_max(σ)]`, so the points beyond
/// `λ_max(σ) = (√(γM)/σ − k_B T_c/σ²)/γ` exercise the feasibility filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepGrid {
    pub n_sigma: usize,
    pub n_lambda: usize,
    pub sigma_max_factor: f64,
    pub lambda_overshoot: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            n_sigma: 401,
            n_lambda: 201,
            sigma_max_factor: 5.0,
            lambda_overshoot: 1.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub lambda: f64,
    pub power: f64,
    pub constraint: f64,
    pub feasible: bool,
}

/// Bound summary of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSummary {
    pub upper: f64,
    pub lower: f64,
    pub best_found: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AchievabilityReport {
    pub summary: BoundSummary,
    pub best_sigma: f64,
    pub best_lambda: f64,
    pub n_feasible: usize,
    pub n_infeasible: usize,
    /// Every feasible point is at or below the upper bound.
    pub below_upper: bool,
    /// Finite-period run at the best point.
    pub certificate: FiniteCycle,
    #[serde(skip)]
    pub points: Vec<SweepPoint>,
}

/// Period and resolution of the dynamic certificate.
const CERTIFICATE_PERIOD: f64 = 0.01;
const CERTIFICATE_STEPS: usize = 1000;

pub fn achievability_sweep(
    budget: &ConstraintBudget,
    t_hot: f64,
    t_cold: f64,
    consts: &PhysicalConstants,
    grid: &SweepGrid,
) -> Result<AchievabilityReport> {
    budget.validate()?;
    consts.validate()?;
    check_temperatures(t_hot, t_cold)?;
    if grid.n_sigma < 2
        || grid.n_lambda < 2
        || !(grid.sigma_max_factor > 1.0)
        || !(grid.lambda_overshoot > 0.0)
    {
        return Err(EngineError::param(
            "grid",
            "needs two points per axis and a non-empty range",
        ));
    }
    let (sigma0, _) = scales(budget, t_cold, consts);
    let upper = constrained_upper_bound(budget.m, t_hot, t_cold)?;
    let lower = constrained_lower_bound(budget.m, t_hot, t_cold)?;
    let points: Vec<SweepPoint> = (0..grid.n_sigma)
        .into_par_iter()
        .flat_map_iter(|i| {
            let sigma = sigma0
                * (1.0 + (grid.sigma_max_factor - 1.0) * i as f64 / (grid.n_sigma - 1) as f64);
            let lambda_max = (((consts.gamma * budget.m).sqrt() / sigma
                - consts.k_b * t_cold / (sigma * sigma))
                / consts.gamma)
                .max(0.0);
            (0..grid.n_lambda).map(move |j| {
                let lambda =
                    grid.lambda_overshoot * lambda_max * j as f64 / (grid.n_lambda - 1) as f64;
                let e = QuadraticEngine {
                    sigma,
                    lambda,
                    t_hot,
                    t_cold,
                    consts: *consts,
                };
                SweepPoint {
                    sigma,
                    lambda,
                    power: quadratic_engine_power_limit(&e),
                    constraint: e.cold_constraint(),
                    feasible: e.constraint_residual(budget)
                        <= 1e-12 * (consts.gamma * budget.m).sqrt() / sigma,
                }
            })
        })
        .collect();
    let mut best: Option<&SweepPoint> = None;
    let mut below_upper = true;
    for p in points.iter().filter(|p| p.feasible) {
        below_upper &= p.power <= upper;
        if best.is_none_or(|b| p.power > b.power) {
            best = Some(p);
        }
    }
    let best =
        *best.ok_or_else(|| EngineError::Unreachable("no feasible point in the sweep".into()))?;
    let n_feasible = points.iter().filter(|p| p.feasible).count();
    let engine = QuadraticEngine::new(best.sigma, best.lambda, t_hot, t_cold, *consts)?;
    let certificate =
        quadratic_engine_finite_cycle(&engine, CERTIFICATE_PERIOD, CERTIFICATE_STEPS, budget)?;
    Ok(AchievabilityReport {
        summary: BoundSummary {
            upper,
            lower,
            best_found: best.power,
            ratio: best.power / upper,
        },
        best_sigma: best.sigma,
        best_lambda: best.lambda,
        n_feasible,
        n_infeasible: points.len() - n_feasible,
        below_upper,
        certificate,
        points,
    })
}

/// Writes sweep points as `sigma,lambda,power,constraint,feasible`.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for p in points {
        wr.serialize(p)?;
    }
    wr.flush()?;
    Ok(())
}

/// Entropy change of a Fokker–Planck run of the hot isotherm, against the
/// rate bound `M t_cycle/(8T_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyRateAudit {
    pub delta_s: f64,
    pub bound: f64,
    /// Discretization error of the grid entropy at the initial state.
    pub slack: f64,
    /// Largest `∫‖∇U‖²ρ/γ` over the recorded densities.
    pub constraint_max: f64,
}

impl EntropyRateAudit {
    pub fn holds(&self) -> bool {
        self.delta_s <= self.bound + self.slack
    }
}

/// Runs the hot isotherm of `engine` over `t_cycle/2` with the explicit
/// Fokker–Planck solver, starting from the sampled `N(0, σ²)`. The stiffness
/// follows the variance ODE solution of [`quadratic_engine_finite_cycle`]
/// and is sampled on `n_slices` time slices.
pub fn entropy_rate_audit(
    engine: &QuadraticEngine,
    t_cycle: f64,
    budget: &ConstraintBudget,
    grid: Grid,
    n_slices: usize,
) -> Result<EntropyRateAudit> {
    let ode = quadratic_engine_finite_cycle(engine, t_cycle, 2000, budget)?;
    if n_slices == 0 {
        return Err(EngineError::param("n_slices", "must be at least 1"));
    }
    let c = engine.consts;
    let hot: Vec<(f64, f64)> = ode
        .ledger
        .iter()
        .take_while(|p| p.t <= 0.5 * t_cycle * (1.0 + 1e-12))
        .map(|p| (p.t, p.stiffness))
        .collect();
    let half = 0.5 * t_cycle;
    let stiffness = move |t: f64| -> f64 {
        let k = hot.partition_point(|p| p.0 <= t).clamp(1, hot.len() - 1);
        let (p0, p1) = (hot[k - 1], hot[k]);
        p0.1 + (p1.1 - p0.1) * ((t - p0.0) / (p1.0 - p0.0)).clamp(0.0, 1.0)
    };
    let drive = QuadraticProtocol::from_fn(stiffness, engine.t_hot, half)?;
    let t_grid: Vec<f64> = (0..=n_slices)
        .map(|k| half * k as f64 / n_slices as f64)
        .collect();
    let proto = Protocol::sample(&drive, grid, t_grid)?;
    let init = GridDensity::gaussian(grid, 0.0, engine.sigma * engine.sigma)?;
    let dt = 0.95 * max_stable_dt(&proto, &c);
    let n_steps = (half / dt).ceil() as usize;
    let run = fokker_planck_evolve(
        &proto,
        &init,
        half / n_steps as f64,
        (n_steps / 100).max(1),
        &c,
    )?;
    let centers = grid.centers();
    let mut constraint_max: f64 = 0.0;
    for snap in &run.snapshots {
        let a = drive.stiffness(snap.t);
        let m2: f64 = snap
            .density
            .values()
            .iter()
            .zip(&centers)
            .map(|(r, x)| r * x * x)
            .sum::<f64>()
            * grid.dx();
        constraint_max = constraint_max.max(a * a * m2 / c.gamma);
    }
    let exact = 0.5
        * c.k_b
        * (2.0 * std::f64::consts::PI * std::f64::consts::E * engine.sigma * engine.sigma).ln();
    Ok(EntropyRateAudit {
        delta_s: run.final_density().entropy(&c) - init.entropy(&c),
        bound: budget.m * t_cycle / (8.0 * engine.t_cold),
        slack: 2.0 * (init.entropy(&c) - exact).abs() + 1e-9,
        constraint_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::GaussianState;

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn gauss(s: f64) -> State {
        State::Gaussian(GaussianState::from_std(s).unwrap())
    }

    #[test]
    fn fisher_bound_values() {
        let g1 = GaussianState::from_std(1.0).unwrap();
        let g2 = GaussianState::from_std(2.0).unwrap();
        assert!((fisher_power_bound(&g1, 2.0, 1.0, &c()) - 1.0 / 16.0).abs() < 1e-15);
        assert!((fisher_power_bound(&g2, 2.0, 1.0, &c()) - 1.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn hwi_cases() {
        let h = hwi_check(&gauss(1.0), &gauss(1.0), &c()).unwrap();
        assert!(h.lhs.abs() < 1e-12 && h.rhs.abs() < 1e-9 && h.holds(1e-9));
        let h = hwi_check(&gauss(1.0), &gauss(1.001), &c()).unwrap();
        assert!((h.lhs / h.rhs - 1.0).abs() < 5e-3, "{h:?}");
        let h = hwi_check(&gauss(1.0), &gauss(2.0), &c()).unwrap();
        assert!((h.lhs - 2f64.ln()).abs() < 1e-12 && (h.rhs - 1.0).abs() < 1e-6 && h.holds(0.0));
    }

    #[test]
    fn constrained_bound_values() {
        assert!((constrained_upper_bound(8.0, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(constrained_upper_bound(8.0, 1.0, 1.0).unwrap(), 0.0);
        assert!((constrained_lower_bound(8.0, 2.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(constrained_upper_bound(0.0, 2.0, 1.0).is_err());
        assert!(constrained_upper_bound(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn optimal_engine_point() {
        let b = ConstraintBudget::new(1.0).unwrap();
        let e = QuadraticEngine::optimal(&b, 2.0, 1.0, c()).unwrap();
        assert!((e.sigma - 1.2).abs() < 1e-14);
        assert!((e.lambda - 5.0 / 36.0).abs() < 1e-15);
        assert!((quadratic_engine_power_limit(&e) - 1.0 / 24.0).abs() < 1e-15);
        assert!((e.cold_stiffness() - 30.0 / 36.0).abs() < 1e-14);
        assert!(e.constraint_residual(&b).abs() < 1e-14);
        let idle = QuadraticEngine::new(1.0, 0.0, 2.0, 1.0, c()).unwrap();
        assert_eq!(quadratic_engine_power_limit(&idle), 0.0);
        assert!(QuadraticEngine::new(1.0, -1.0, 2.0, 1.0, c()).is_err());
    }

    #[test]
    fn finite_cycle_converges() {
        let b = ConstraintBudget::new(1.0).unwrap();
        let e = QuadraticEngine::optimal(&b, 2.0, 1.0, c()).unwrap();
        let runs: Vec<_> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&t| quadratic_engine_finite_cycle(&e, t, 1000, &b).unwrap())
            .collect();
        for w in runs.windows(2) {
            assert!(w[1].power > w[0].power);
        }
        let last = &runs[2];
        assert!((last.power * 24.0 - 1.0).abs() < 1e-2, "{}", last.power);
        for r in &runs {
            assert!(
                (r.power - r.power_from_work).abs() < 1e-9 * r.power.abs().max(1.0),
                "{r:?}"
            );
            assert!(r.closure < 1e-9);
        }
        assert!((last.constraint_max_cold - 1.0).abs() < 1e-2);
        // Efficiency from the ledger.
        let eta = -last.work / last.heat_hot;
        assert!((eta - 1.0 / 3.0).abs() < 1e-2, "eta {eta}");
    }

    #[test]
    fn idle_engine_does_no_work() {
        let b = ConstraintBudget::new(1.0).unwrap();
        let e = QuadraticEngine::new(1.3, 0.0, 2.0, 1.0, c()).unwrap();
        let r = quadratic_engine_finite_cycle(&e, 1.0, 1000, &b).unwrap();
        assert!(r.power.abs() < 1e-12 && r.work.abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn finite_cycle_errors() {
        let b = ConstraintBudget::new(1.0).unwrap();
        let e = QuadraticEngine::new(1.0, 1e3, 2.0, 1.0, c()).unwrap();
        let err = quadratic_engine_finite_cycle(&e, 10.0, 1000, &b).unwrap_err();
        assert!(matches!(err, EngineError::Collapse(_)), "{err}");
        assert!(quadratic_engine_finite_cycle(&e, 1.0, 999, &b).is_err());
        assert!(quadratic_engine_finite_cycle(&e, 0.0, 1000, &b).is_err());
    }

    #[test]
    fn dimensionless_closed_form() {
        let b = ConstraintBudget::new(1.0).unwrap();
        let o = dimensionless_optimum(2.0, 1.0, &b, &c()).unwrap();
        assert!((o.p_star - 1.0 / 24.0).abs() < 1e-15);
        assert!((o.y_star - 5.0 / 6.0).abs() < 1e-15);
        assert!((o.sigma_star - 1.2).abs() < 1e-14);
        assert!((o.lambda_star - 5.0 / 36.0).abs() < 1e-15);
        assert!((o.y0 - 0.8).abs() < 1e-15 && o.y0 < o.y_star);
        assert_eq!(o.branch, OptimumBranch::Boundary);
        for r in [1.5, 2.0, 4.0, 8.0, 10.0] {
            let o = dimensionless_optimum(r, 1.0, &b, &c()).unwrap();
            let (f, _, _) = dimensionless_grid_search(r, 1.0, 500, 2).unwrap();
            assert!(
                (f / o.p_star - 1.0).abs() < 1e-4,
                "r {r}: {f} vs {}",
                o.p_star
            );
        }
    }

    #[test]
    fn efficiency_ordering() {
        let e = efficiency_at_constrained_optimum(2.0, 1.0).unwrap();
        assert!((e.eta - 1.0 / 3.0).abs() < 1e-15);
        assert!((e.eta_ss - 2.0 / 7.0).abs() < 1e-15);
        assert!((e.eta_ca - 0.292893).abs() < 1e-6);
        assert!((e.eta_carnot - 0.5).abs() < 1e-15 && e.ordered);
        let e = efficiency_at_constrained_optimum(1.0, 1e-12).unwrap();
        assert!(e.eta > 0.999 && e.eta_ca > 0.999 && e.eta_carnot > 0.999);
        assert!((e.eta_ss - 2.0 / 3.0).abs() < 1e-9);
        let e = efficiency_at_constrained_optimum(1.5, 1.5).unwrap();
        assert!(e.eta == 0.0 && e.eta_ss == 0.0 && e.eta_ca == 0.0 && e.eta_carnot == 0.0);
    }

    #[test]
    fn sweep_finds_lower_bound() {
        let b = ConstraintBudget::new(1.0).unwrap();
        let r = achievability_sweep(&b, 2.0, 1.0, &c(), &SweepGrid::default()).unwrap();
        assert!(
            (r.summary.best_found * 24.0 - 1.0).abs() < 1e-3,
            "{:?}",
            r.summary
        );
        assert!((r.summary.upper - 0.125).abs() < 1e-15);
        assert!((r.summary.ratio - 1.0 / 3.0).abs() < 1e-3);
        assert!(r.below_upper && r.n_infeasible > 0);
        let r = achievability_sweep(&b, 4.0, 1.0, &c(), &SweepGrid::default()).unwrap();
        assert!((r.summary.ratio - 0.6).abs() < 1e-3, "{:?}", r.summary);
        let mut buf = Vec::new();
        write_sweep_csv(&r.points[..2], &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("sigma,lambda,power,constraint,feasible\n"));
    }

    #[test]
    fn entropy_rate_bound_on_fp_run() {
        let b = ConstraintBudget::new(1.0).unwrap();
        let e = QuadraticEngine::optimal(&b, 2.0, 1.0, c()).unwrap();
        let grid = Grid::symmetric(10.0, 500).unwrap();
        let a = entropy_rate_audit(&e, 1.0, &b, grid, 100).unwrap();
        assert!(a.holds(), "{a:?}");
        // ΔS = k_B λ t_cycle/2.
        assert!((a.delta_s - 5.0 / 72.0).abs() < 2e-3, "{a:?}");
    }
}
