//! Optimization over the end-point states of the cycle at a fixed period:
//! the proximal step for `ρ_b`, its first-order certificate, and probes of
//! the power as a functional of `ρ_a`.

mod jko;
mod pathologies;
mod variation;

use crate::cycle::validate_temperatures;
use crate::error::{EngineError, Result};
use crate::statespace::{entropy, GridDensity, PhysicalConstants, State};
use crate::transport::{w2_states, Cdf, DEFAULT_QUANTILE_NODES};

pub use jko::{jko_step, write_iteration_log, IterationRecord, JkoResult, ProximalProblem};
pub use pathologies::{
    dirac_train_infimum, mixture_density, mixture_sequence_power, write_probe_csv, DiracTrain,
    MixturePoint,
};
pub use variation::{
    first_variation_probe, second_variation_probe, CurvatureEstimate, PerturbationFamily,
};

/// Power of a cycle with an even split of `t_cycle` and optimal protocols:
/// `(ΔT/t)(S(ρ_b) − S(ρ_a)) − (4γ/t²) W2(ρ_a, ρ_b)²`.
pub fn power_functional_f(
    rho_b: &State,
    rho_a: &State,
    t_hot: f64,
    t_cold: f64,
    t_cycle: f64,
    consts: &PhysicalConstants,
) -> Result<f64> {
    check_period(t_cycle)?;
    let w = w2_states(rho_a, rho_b, DEFAULT_QUANTILE_NODES)?;
    let ds = entropy(rho_b, consts) - entropy(rho_a, consts);
    Ok((t_hot - t_cold) / t_cycle * ds - 4.0 * consts.gamma / (t_cycle * t_cycle) * w * w)
}

/// The power-maximizing `ρ_b` for `ρ_a = N(0, σ_a²)` is `N(0, σ_b²)` with
/// `σ_b = σ_a(1 + √(1 + c))/2`, `c = k_B ΔT t_cycle / (2γσ_a²)`.
pub fn optimal_sigma_b(
    sigma_a: f64,
    t_hot: f64,
    t_cold: f64,
    t_cycle: f64,
    consts: &PhysicalConstants,
) -> f64 {
    let c = consts.k_b * (t_hot - t_cold) * t_cycle / (2.0 * consts.gamma * sigma_a * sigma_a);
    sigma_a * (1.0 + (1.0 + c).sqrt()) / 2.0
}

/// Largest `|R(y)|` of the first-order condition
/// `R(y) = k_B ΔT (log ρ_b)'(y) − (8γ/t)(Q_a(F_b(y)) − y)` over the cells
/// where `ρ_b ≥ 10⁻⁶ max ρ_b`.
pub fn stationarity_residual(
    rho_a: &GridDensity,
    rho_b: &GridDensity,
    t_hot: f64,
    t_cold: f64,
    t_cycle: f64,
    consts: &PhysicalConstants,
) -> Result<f64> {
    check_period(t_cycle)?;
    let ca = Cdf::new(rho_a);
    let cb = Cdf::new(rho_b);
    let v = rho_b.values();
    let n = v.len();
    let dx = rho_b.dx();
    let floor = 1e-6 * rho_b.max_value();
    let k_dt = consts.k_b * (t_hot - t_cold);
    let pull = 8.0 * consts.gamma / t_cycle;
    let mut worst: f64 = 0.0;
    for i in 1..n - 1 {
        if v[i] < floor || v[i - 1] <= 0.0 || v[i + 1] <= 0.0 {
            continue;
        }
        let y = rho_b.grid().center(i);
        let dlog = (v[i + 1] / v[i - 1]).ln() / (2.0 * dx);
        let r = k_dt * dlog - pull * (cb.rearrange_into(&ca, y) - y);
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

fn check_period(t_cycle: f64) -> Result<()> {
    if !(t_cycle > 0.0 && t_cycle.is_finite()) {
        return Err(EngineError::param("t_cycle", "must be positive"));
    }
    Ok(())
}

pub(crate) fn check_cycle(t_hot: f64, t_cold: f64, t_cycle: f64) -> Result<()> {
    validate_temperatures(t_hot, t_cold)?;
    check_period(t_cycle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::{GaussianState, Grid};

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn gauss(v: f64) -> State {
        State::Gaussian(GaussianState::new(v).unwrap())
    }

    #[test]
    fn power_functional_cases() {
        let p = power_functional_f(&gauss(1.0), &gauss(1.0), 2.0, 1.0, 8.0, &c()).unwrap();
        assert_eq!(p, 0.0);
        let p = power_functional_f(&gauss(4.0), &gauss(1.0), 2.0, 1.0, 8.0, &c()).unwrap();
        let expected = 2f64.ln() / 8.0 - 4.0 / 64.0;
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.024143).abs() < 1e-6);
        assert!(power_functional_f(&gauss(4.0), &gauss(1.0), 2.0, 1.0, 0.0, &c()).is_err());
    }

    #[test]
    fn power_functional_matches_even_split_cycle() {
        use crate::cycle::{run_cycle, CycleMode, CycleSpec};
        let spec = CycleSpec {
            rho_a: gauss(1.0),
            rho_b: gauss(2.25),
            t_hot: 3.0,
            t_cold: 1.0,
            t1: 3.5,
            t3: 3.5,
            consts: c(),
        };
        let r = run_cycle(&spec, CycleMode::Analytic).unwrap();
        let f = power_functional_f(&spec.rho_b, &spec.rho_a, 3.0, 1.0, 7.0, &c()).unwrap();
        assert!((r.power - f).abs() < 1e-9);
    }

    #[test]
    fn optimal_sigma_cases() {
        // c = 3.
        let s = optimal_sigma_b(2.0, 2.0, 1.0, 24.0, &c());
        assert!((s - 3.0).abs() < 1e-12);
        assert_eq!(optimal_sigma_b(1.5, 1.0, 1.0, 8.0, &c()), 1.5);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((optimal_sigma_b(1.0, 2.0, 1.0, 8.0, &c()) - golden).abs() < 1e-12);
    }

    #[test]
    fn stationarity_certificate() {
        let grid = Grid::symmetric(14.0, 4096).unwrap();
        let a = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
        let sb = optimal_sigma_b(1.0, 2.0, 1.0, 8.0, &c());
        let b = GridDensity::gaussian(grid, 0.0, sb * sb).unwrap();
        let r = stationarity_residual(&a, &b, 2.0, 1.0, 8.0, &c()).unwrap();
        assert!(r < 1e-3, "residual {r}");
        let wrong = GridDensity::gaussian(grid, 0.0, 4.0 * sb * sb).unwrap();
        let r = stationarity_residual(&a, &wrong, 2.0, 1.0, 8.0, &c()).unwrap();
        assert!(r > 0.1, "residual {r}");
        let r = stationarity_residual(&a, &a, 1.0, 1.0, 8.0, &c()).unwrap();
        assert!(r < 1e-9, "residual {r}");
    }
}
