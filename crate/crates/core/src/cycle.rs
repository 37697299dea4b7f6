//! The four-phase Carnot-like cycle: hot isotherm `ρ_a → ρ_b`, instantaneous
//! switch to the cold bath, cold isotherm `ρ_b → ρ_a`, switch back.
//!
//! Sign conventions: `work` and `heat` in a [`EnergyLedger`] are energy
//! *received* by the particle; the cycle's work output is `−∑ W`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    dissipation_audit, fokker_planck_evolve, geodesic_protocol, max_stable_dt, EnergyLedger, FpRun,
};
use crate::error::{EngineError, Result};
use crate::statespace::{entropy, DensityFunctionals, Grid, GridDensity, PhysicalConstants, State};
use crate::transport::{w2_grid, w2_states, DEFAULT_QUANTILE_NODES};

/// `|Q_h|` below this multiple of `k_B T_h` leaves the efficiency undefined.
const EFFICIENCY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CycleSpec {
    pub rho_a: State,
    pub rho_b: State,
    pub t_hot: f64,
    pub t_cold: f64,
    pub t1: f64,
    pub t3: f64,
    pub consts: PhysicalConstants,
}

impl CycleSpec {
    pub fn validate(&self) -> Result<()> {
        self.consts.validate()?;
        validate_temperatures(self.t_hot, self.t_cold)?;
        if !(self.t1 > 0.0 && self.t1.is_finite()) {
            return Err(EngineError::param("t1", "must be positive"));
        }
        if !(self.t3 > 0.0 && self.t3.is_finite()) {
            return Err(EngineError::param("t3", "must be positive"));
        }
        Ok(())
    }

    pub fn t_cycle(&self) -> f64 {
        self.t1 + self.t3
    }
}

pub(crate) fn validate_temperatures(t_hot: f64, t_cold: f64) -> Result<()> {
    if !(t_cold > 0.0 && t_cold.is_finite()) {
        return Err(EngineError::param("t_cold", "must be positive"));
    }
    if !(t_hot > t_cold && t_hot.is_finite()) {
        return Err(EngineError::param("t_hot", "must exceed t_cold"));
    }
    Ok(())
}

/// Numerical settings of the Fokker–Planck cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpSettings {
    /// Grid used for Gaussian end points (grid densities bring their own).
    pub grid: Grid,
    /// Potential slices per isothermal phase.
    pub slices_per_phase: usize,
    /// Fraction of the largest stable step actually used.
    pub dt_fraction: f64,
}

impl Default for FpSettings {
    fn default() -> Self {
        Self {
            grid: Grid {
                x_min: -16.0,
                x_max: 16.0,
                n_cells: 1024,
            },
            slices_per_phase: 400,
            dt_fraction: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CycleMode {
    Analytic,
    FokkerPlanck(FpSettings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Engine,
    /// `ΔS ≤ 0`: the cycle consumes work.
    Refrigerator,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseLedger {
    pub phase: &'static str,
    pub duration: f64,
    pub temperature: f64,
    #[serde(flatten)]
    pub ledger: EnergyLedger,
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleReport {
    pub mode: &'static str,
    pub regime: Regime,
    pub phases: [PhaseLedger; 4],
    pub total_work_output: f64,
    pub heat_uptake_qh: f64,
    /// `None` unless the hot bath supplies a non-negligible `Q_h > 0`.
    pub efficiency: Option<f64>,
    pub power: f64,
    pub delta_s: f64,
    pub w2: f64,
    pub w_irr_1: f64,
    pub w_irr_3: f64,
    pub t1: f64,
    pub t3: f64,
    pub t_cycle: f64,
    pub t_hot: f64,
    pub t_cold: f64,
    /// `∑ ΔE` over the four phases.
    pub closure_residual: f64,
}

impl CycleReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn row(&self) -> CycleRow {
        CycleRow {
            mode: self.mode,
            regime: self.regime,
            t_hot: self.t_hot,
            t_cold: self.t_cold,
            t1: self.t1,
            t3: self.t3,
            t_cycle: self.t_cycle,
            w2: self.w2,
            delta_s: self.delta_s,
            w_irr_1: self.w_irr_1,
            w_irr_3: self.w_irr_3,
            total_work_output: self.total_work_output,
            heat_uptake_qh: self.heat_uptake_qh,
            efficiency: self.efficiency,
            power: self.power,
            closure_residual: self.closure_residual,
        }
    }
}

#[derive(Serialize)]
struct CycleRow {
    mode: &'static str,
    regime: Regime,
    t_hot: f64,
    t_cold: f64,
    t1: f64,
    t3: f64,
    t_cycle: f64,
    w2: f64,
    delta_s: f64,
    w_irr_1: f64,
    w_irr_3: f64,
    total_work_output: f64,
    heat_uptake_qh: f64,
    efficiency: Option<f64>,
    power: f64,
    closure_residual: f64,
}

/// One flat CSV row per report, with a header.
pub fn write_reports_csv<W: Write>(reports: &[CycleReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in reports {
        wr.serialize(r.row())?;
    }
    wr.flush()?;
    Ok(())
}

/// Cycle described directly by its transport cost and entropy change.
/// Phase energies are booked in the Gibbs gauge `U = −k_B T log ρ` at the
/// end points, where `∫Uρ = T S`; `s_a` fixes the entropy reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleBudget {
    pub w2: f64,
    pub delta_s: f64,
    #[serde(default)]
    pub s_a: f64,
    pub t_hot: f64,
    pub t_cold: f64,
    pub t1: f64,
    pub t3: f64,
}

impl CycleBudget {
    pub fn validate(&self) -> Result<()> {
        validate_temperatures(self.t_hot, self.t_cold)?;
        if !(self.t1 > 0.0 && self.t1.is_finite()) {
            return Err(EngineError::param("t1", "must be positive"));
        }
        if !(self.t3 > 0.0 && self.t3.is_finite()) {
            return Err(EngineError::param("t3", "must be positive"));
        }
        if !(self.w2 >= 0.0 && self.w2.is_finite()) {
            return Err(EngineError::param("w2", "must be non-negative"));
        }
        if !self.delta_s.is_finite() {
            return Err(EngineError::param("delta_s", "must be finite"));
        }
        Ok(())
    }

    /// Cycle with `W_irr^{(i)} = γ W2² / t_i` on both isotherms.
    pub fn evaluate(&self, consts: &PhysicalConstants) -> Result<CycleReport> {
        self.validate()?;
        consts.validate()?;
        let (th, tc) = (self.t_hot, self.t_cold);
        let w_irr_1 = consts.gamma * self.w2 * self.w2 / self.t1;
        let w_irr_3 = consts.gamma * self.w2 * self.w2 / self.t3;
        let s_a = self.s_a;
        let s_b = s_a + self.delta_s;
        let isotherm = |name, dur, t: f64, s0: f64, s1: f64, w_irr: f64| {
            let de = t * (s1 - s0);
            let q = t * (s1 - s0) - w_irr;
            PhaseLedger {
                phase: name,
                duration: dur,
                temperature: t,
                ledger: EnergyLedger {
                    work: de - q,
                    heat: q,
                    delta_internal: de,
                    dissipation: Some(w_irr),
                },
            }
        };
        let switch = |name, t_to: f64, t_from: f64, s: f64| {
            let de = (t_to - t_from) * s;
            PhaseLedger {
                phase: name,
                duration: 0.0,
                temperature: t_to,
                ledger: EnergyLedger {
                    work: de,
                    heat: 0.0,
                    delta_internal: de,
                    dissipation: None,
                },
            }
        };
        let phases = [
            isotherm("hot_isotherm", self.t1, th, s_a, s_b, w_irr_1),
            switch("hot_to_cold", tc, th, s_b),
            isotherm("cold_isotherm", self.t3, tc, s_b, s_a, w_irr_3),
            switch("cold_to_hot", th, tc, s_a),
        ];
        Ok(assemble(
            "analytic",
            phases,
            self.w2,
            self.delta_s,
            w_irr_1,
            w_irr_3,
            self.t1,
            self.t3,
            th,
            tc,
            consts,
        ))
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    mode: &'static str,
    phases: [PhaseLedger; 4],
    w2: f64,
    delta_s: f64,
    w_irr_1: f64,
    w_irr_3: f64,
    t1: f64,
    t3: f64,
    t_hot: f64,
    t_cold: f64,
    consts: &PhysicalConstants,
) -> CycleReport {
    let total_work_output = -phases.iter().map(|p| p.ledger.work).sum::<f64>();
    let closure_residual = phases.iter().map(|p| p.ledger.delta_internal).sum();
    let heat_uptake_qh = phases[0].ledger.heat;
    let efficiency = if !(heat_uptake_qh > EFFICIENCY_FLOOR * consts.k_b * t_hot) {
        None
    } else {
        Some(total_work_output / heat_uptake_qh)
    };
    CycleReport {
        mode,
        regime: if delta_s > 0.0 {
            Regime::Engine
        } else {
            Regime::Refrigerator
        },
        phases,
        total_work_output,
        heat_uptake_qh,
        efficiency,
        power: total_work_output / (t1 + t3),
        delta_s,
        w2,
        w_irr_1,
        w_irr_3,
        t1,
        t3,
        t_cycle: t1 + t3,
        t_hot,
        t_cold,
        closure_residual,
    }
}

/// Runs the cycle either from the optimal-transport formulas or by
/// simulating both isotherms with geodesic Fokker–Planck protocols.
pub fn run_cycle(spec: &CycleSpec, mode: CycleMode) -> Result<CycleReport> {
    spec.validate()?;
    match mode {
        CycleMode::Analytic => {
            let w2 = w2_states(&spec.rho_a, &spec.rho_b, DEFAULT_QUANTILE_NODES)?;
            let s_a = entropy(&spec.rho_a, &spec.consts);
            let s_b = entropy(&spec.rho_b, &spec.consts);
            CycleBudget {
                w2,
                delta_s: s_b - s_a,
                s_a,
                t_hot: spec.t_hot,
                t_cold: spec.t_cold,
                t1: spec.t1,
                t3: spec.t3,
            }
            .evaluate(&spec.consts)
        }
        CycleMode::FokkerPlanck(settings) => run_fp_cycle(spec, &settings),
    }
}

fn on_grid(s: &State, grid: Grid) -> Result<GridDensity> {
    match s {
        State::Gaussian(g) => g.to_grid(grid),
        State::Grid(d) => Ok(d.clone()),
    }
}

fn run_fp_cycle(spec: &CycleSpec, settings: &FpSettings) -> Result<CycleReport> {
    if settings.slices_per_phase == 0 {
        return Err(EngineError::param("slices_per_phase", "must be at least 1"));
    }
    if !(settings.dt_fraction > 0.0 && settings.dt_fraction <= 1.0) {
        return Err(EngineError::param("dt_fraction", "must lie in (0, 1]"));
    }
    let grid = spec.rho_a.grid().copied().unwrap_or(settings.grid);
    let a = on_grid(&spec.rho_a, grid)?;
    let b = on_grid(&spec.rho_b, grid)?;
    a.grid().check_same(b.grid())?;
    let c = &spec.consts;
    let w2 = w2_grid(&a, &b, DEFAULT_QUANTILE_NODES)?;

    let hot = geodesic_protocol(&a, &b, spec.t_hot, spec.t1, settings.slices_per_phase, c)?;
    let cold = geodesic_protocol(&b, &a, spec.t_cold, spec.t3, settings.slices_per_phase, c)?;
    let run = |p, init: &GridDensity| -> Result<FpRun> {
        let dt = settings.dt_fraction * max_stable_dt(p, c);
        fokker_planck_evolve(p, init, dt, usize::MAX, c)
    };
    let run1 = run(&hot, &a)?;
    let rho_b_reached = run1.final_density().clone();
    let run3 = run(&cold, &rho_b_reached)?;
    let rho_a_reached = run3.final_density();

    let energy = |rho: &GridDensity, u: &[f64]| -> f64 {
        rho.values().iter().zip(u).map(|(r, u)| r * u).sum::<f64>() * rho.dx()
    };
    let hot_start = hot.slice(0);
    let hot_end = hot.slice(hot.n_slices() - 1);
    let cold_start = cold.slice(0);
    let cold_end = cold.slice(cold.n_slices() - 1);
    let switch = |name, t, rho: &GridDensity, from: &[f64], to: &[f64]| {
        let de = energy(rho, to) - energy(rho, from);
        PhaseLedger {
            phase: name,
            duration: 0.0,
            temperature: t,
            ledger: EnergyLedger {
                work: de,
                heat: 0.0,
                delta_internal: de,
                dissipation: None,
            },
        }
    };
    let audit1 = dissipation_audit(&run1, &hot, c);
    let audit3 = dissipation_audit(&run3, &cold, c);
    // The cold run starts where the hot one ended and the last switch acts
    // on the state actually reached, so `∑ΔE` measures the closure error.
    let phases = [
        PhaseLedger {
            phase: "hot_isotherm",
            duration: spec.t1,
            temperature: spec.t_hot,
            ledger: run1.ledger,
        },
        switch(
            "hot_to_cold",
            spec.t_cold,
            &rho_b_reached,
            hot_end,
            cold_start,
        ),
        PhaseLedger {
            phase: "cold_isotherm",
            duration: spec.t3,
            temperature: spec.t_cold,
            ledger: run3.ledger,
        },
        switch(
            "cold_to_hot",
            spec.t_hot,
            rho_a_reached,
            cold_end,
            hot_start,
        ),
    ];
    Ok(assemble(
        "fokker_planck",
        phases,
        w2,
        rho_b_reached.entropy(c) - a.entropy(c),
        audit1.lhs,
        audit3.lhs,
        spec.t1,
        spec.t3,
        spec.t_hot,
        spec.t_cold,
        c,
    ))
}

/// Durations of the two isotherms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeSchedule {
    pub t1: f64,
    pub t3: f64,
    pub t_cycle: f64,
}

/// Power of the cycle as a function of the two isotherm durations.
pub fn cycle_power(
    w2: f64,
    delta_s: f64,
    t_hot: f64,
    t_cold: f64,
    t1: f64,
    t3: f64,
    consts: &PhysicalConstants,
) -> f64 {
    let g = consts.gamma * w2 * w2;
    ((t_hot - t_cold) * delta_s - g / t1 - g / t3) / (t1 + t3)
}

/// Power-maximizing durations: `t1 = t3 = 4γW2²/((T_h − T_c) ΔS)`, or an
/// even split of a fixed period.
pub fn optimize_times(
    rho_a: &State,
    rho_b: &State,
    t_hot: f64,
    t_cold: f64,
    consts: &PhysicalConstants,
    fixed_t_cycle: Option<f64>,
) -> Result<TimeSchedule> {
    validate_temperatures(t_hot, t_cold)?;
    let w2 = w2_states(rho_a, rho_b, DEFAULT_QUANTILE_NODES)?;
    let ds = entropy(rho_b, consts) - entropy(rho_a, consts);
    optimal_times(w2, ds, t_hot, t_cold, consts, fixed_t_cycle)
}

/// [`optimize_times`] on the transport cost and entropy change directly.
pub fn optimal_times(
    w2: f64,
    delta_s: f64,
    t_hot: f64,
    t_cold: f64,
    consts: &PhysicalConstants,
    fixed_t_cycle: Option<f64>,
) -> Result<TimeSchedule> {
    validate_temperatures(t_hot, t_cold)?;
    if !(delta_s > 0.0) {
        return Err(EngineError::param(
            "rho_b",
            "entropy must exceed that of rho_a",
        ));
    }
    let t = match fixed_t_cycle {
        Some(tc) if tc > 0.0 && tc.is_finite() => tc / 2.0,
        Some(_) => return Err(EngineError::param("t_cycle", "must be positive")),
        None => 4.0 * consts.gamma * w2 * w2 / ((t_hot - t_cold) * delta_s),
    };
    Ok(TimeSchedule {
        t1: t,
        t3: t,
        t_cycle: 2.0 * t,
    })
}

/// Direct numerical maximization of [`cycle_power`] over `(t1, t3)`: a
/// log-spaced grid over six decades around the natural time scale
/// `γW2²/(ΔT ΔS)`, followed by repeated zooming grid searches.
pub fn maximize_power_numeric(
    w2: f64,
    delta_s: f64,
    t_hot: f64,
    t_cold: f64,
    consts: &PhysicalConstants,
) -> Result<TimeSchedule> {
    validate_temperatures(t_hot, t_cold)?;
    if !(delta_s > 0.0 && w2 > 0.0) {
        return Err(EngineError::param(
            "delta_s",
            "needs positive entropy change and transport cost",
        ));
    }
    let scale = consts.gamma * w2 * w2 / ((t_hot - t_cold) * delta_s);
    let p = |l1: f64, l3: f64| cycle_power(w2, delta_s, t_hot, t_cold, l1.exp(), l3.exp(), consts);
    let n = 41;
    let (mut c1, mut c3) = (scale.ln(), scale.ln());
    let mut half = 3.0 * std::f64::consts::LN_10;
    while half > 1e-12 {
        let mut best = (f64::NEG_INFINITY, c1, c3);
        for i in 0..n {
            let l1 = c1 - half + 2.0 * half * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let l3 = c3 - half + 2.0 * half * j as f64 / (n - 1) as f64;
                let v = p(l1, l3);
                if v > best.0 {
                    best = (v, l1, l3);
                }
            }
        }
        c1 = best.1;
        c3 = best.2;
        half *= 0.25;
    }
    let (t1, t3) = (c1.exp(), c3.exp());
    Ok(TimeSchedule {
        t1,
        t3,
        t_cycle: t1 + t3,
    })
}

/// `2(T_h − T_c)/(3T_h + T_c)`.
pub fn eta_at_max_power(t_hot: f64, t_cold: f64) -> f64 {
    2.0 * (t_hot - t_cold) / (3.0 * t_hot + t_cold)
}

/// Closed-form optimum for Gaussian end points `N(0, σ_a²)`, `N(0, σ_b²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianCycle {
    pub power: f64,
    pub q_h: f64,
    pub work_out: f64,
    pub t_cycle: f64,
}

pub fn gaussian_cycle_closed_forms(
    sigma_a: f64,
    sigma_b: f64,
    t_hot: f64,
    t_cold: f64,
    consts: &PhysicalConstants,
) -> Result<GaussianCycle> {
    validate_temperatures(t_hot, t_cold)?;
    if !(sigma_a > 0.0 && sigma_b > sigma_a) {
        return Err(EngineError::param("sigma_b", "must exceed sigma_a > 0"));
    }
    let dt = t_hot - t_cold;
    let log_r = (sigma_b / sigma_a).ln();
    let k = consts.k_b;
    let ratio = log_r / (sigma_b - sigma_a);
    Ok(GaussianCycle {
        power: k * k * dt * dt / (16.0 * consts.gamma) * ratio * ratio,
        q_h: 0.25 * k * (3.0 * t_hot + t_cold) * log_r,
        work_out: 0.5 * k * dt * log_r,
        t_cycle: 8.0 * consts.gamma * (sigma_b - sigma_a).powi(2) / (dt * k * log_r),
    })
}
