use super::protocol::{Drive, Protocol};
use super::{EnergyLedger, LedgerPoint};
use crate::error::{EngineError, Result};
use crate::statespace::{GridDensity, PhysicalConstants};

/// Density recorded at time `t`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub density: GridDensity,
}

#[derive(Debug, Clone)]
pub struct FpRun {
    /// Recorded densities, always including the first and the last.
    pub snapshots: Vec<Snapshot>,
    /// Cumulative ledger at the recorded times.
    pub series: Vec<LedgerPoint>,
    /// Totals, with the measured dissipation `γ ∫‖v‖²_ρ dt`.
    pub ledger: EnergyLedger,
    /// `∫ U ρ` with the first and the last potential slice.
    pub initial_energy: f64,
    pub final_energy: f64,
    /// Largest `|mass − 1|` seen along the run.
    pub max_mass_drift: f64,
    pub n_steps: usize,
    pub dt: f64,
}

impl FpRun {
    pub fn final_density(&self) -> &GridDensity {
        &self.snapshots[self.snapshots.len() - 1].density
    }

    pub fn initial_density(&self) -> &GridDensity {
        &self.snapshots[0].density
    }
}

/// `z / (e^z − 1)`, the exponential fitting weight.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Interface coefficients for one potential slice: the flux between cells
/// `i` and `i+1` is `fwd[i] ρ_i − bwd[i] ρ_{i+1}`.
struct SliceFlux {
    fwd: Vec<f64>,
    bwd: Vec<f64>,
    temperature: f64,
}

impl SliceFlux {
    fn new(u: &[f64], temperature: f64, dx: f64, consts: &PhysicalConstants) -> Self {
        let kt = consts.k_b * temperature;
        let d_over_dx = kt / consts.gamma / dx;
        let (fwd, bwd) = u
            .windows(2)
            .map(|w| {
                let z = (w[1] - w[0]) / kt;
                (d_over_dx * bernoulli(z), d_over_dx * bernoulli(-z))
            })
            .unzip();
        Self {
            fwd,
            bwd,
            temperature,
        }
    }

    /// Largest admissible step keeping every diagonal weight non-negative.
    fn positivity_limit(&self, dx: f64) -> f64 {
        let n = self.fwd.len() + 1;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let out_right = if i < n - 1 { self.fwd[i] } else { 0.0 };
            let out_left = if i > 0 { self.bwd[i - 1] } else { 0.0 };
            worst = worst.max(out_right + out_left);
        }
        if worst > 0.0 {
            dx / worst
        } else {
            f64::INFINITY
        }
    }
}

/// Largest time step accepted by [`fokker_planck_evolve`] for `proto`: the
/// diffusion limit `γΔx²/(4 k_B T_max)` or the drift positivity limit of
/// the steepest slice, whichever is smaller.
pub fn max_stable_dt(proto: &Protocol, consts: &PhysicalConstants) -> f64 {
    let dx = proto.grid().dx();
    let mut limit = consts.gamma * dx * dx / (4.0 * consts.k_b * proto.max_temperature());
    for s in 0..proto.n_slices() {
        let f = SliceFlux::new(proto.slice(s), proto.slice_temperature(s), dx, consts);
        limit = limit.min(f.positivity_limit(dx));
    }
    limit
}

/// Explicit conservative finite-volume solver for
/// `∂ρ/∂t = (1/γ) ∂ₓ[(∂ₓU + k_B T ∂ₓ log ρ) ρ]` with zero-flux boundaries.
///
/// Interface fluxes use exponential (Scharfetter–Gummel) fitting: an upwind
/// blend of drift and central diffusion that keeps the discrete Gibbs state
/// of every slice exactly stationary. The potential is piecewise constant in
/// time; `dW = ∫(U_{k+1} − U_k) ρ_{k+1}` and `dQ = ∫U_k (ρ_{k+1} − ρ_k)`.
/// Densities are recorded every `record_every` steps.
pub fn fokker_planck_evolve(
    proto: &Protocol,
    init: &GridDensity,
    dt: f64,
    record_every: usize,
    consts: &PhysicalConstants,
) -> Result<FpRun> {
    consts.validate()?;
    let grid = *proto.grid();
    grid.check_same(init.grid())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EngineError::param("dt", "must be positive"));
    }
    if record_every == 0 {
        return Err(EngineError::param("record_every", "must be at least 1"));
    }
    let dx = grid.dx();
    let (t0, t1) = proto.span();
    let limit = consts.gamma * dx * dx / (4.0 * consts.k_b * proto.max_temperature());
    if dt > limit {
        return Err(EngineError::Stability {
            dt,
            limit,
            context: "explicit Fokker–Planck diffusion limit".into(),
        });
    }
    let n_steps = (((t1 - t0) / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * h).collect();
    let slice_of: Vec<usize> = times.iter().map(|&t| proto.slice_index(t)).collect();

    // Coefficients of every slice that will drive a step, checked up front.
    let mut fluxes: Vec<Option<SliceFlux>> = (0..proto.n_slices()).map(|_| None).collect();
    for &s in &slice_of[..n_steps] {
        if fluxes[s].is_none() {
            let f = SliceFlux::new(proto.slice(s), proto.slice_temperature(s), dx, consts);
            let lim = f.positivity_limit(dx);
            if h > lim {
                return Err(EngineError::Stability {
                    dt: h,
                    limit: lim,
                    context: format!("positivity of the drift flux in potential slice {s}"),
                });
            }
            fluxes[s] = Some(f);
        }
    }

    let energy =
        |rho: &[f64], u: &[f64]| -> f64 { rho.iter().zip(u).map(|(r, u)| r * u).sum::<f64>() * dx };

    let n = grid.n_cells;
    let mut rho = init.values().to_vec();
    let mut next = vec![0.0; n];
    let mut flux = vec![0.0; n - 1];
    let e0 = energy(&rho, proto.slice(slice_of[0]));
    let (mut work, mut heat, mut diss) = (0.0, 0.0, 0.0);
    let mut max_drift: f64 = 0.0;
    let mut snapshots = vec![Snapshot {
        t: times[0],
        density: init.clone(),
    }];
    let mut series = vec![LedgerPoint {
        t: times[0],
        work: 0.0,
        heat: 0.0,
        internal: 0.0,
    }];

    for k in 0..n_steps {
        let s = slice_of[k];
        let f = fluxes[s].as_ref().expect("slice prepared");
        let u = proto.slice(s);
        let kt = consts.k_b * f.temperature;
        let mut d_rate = 0.0;
        for i in 0..n - 1 {
            let j = f.fwd[i] * rho[i] - f.bwd[i] * rho[i + 1];
            flux[i] = j;
            if j != 0.0 && rho[i] > 0.0 && rho[i + 1] > 0.0 {
                let dmu = (u[i] - u[i + 1]) + kt * (rho[i] / rho[i + 1]).ln();
                d_rate += j * dmu;
            }
        }
        let c = h / dx;
        for i in 0..n {
            let inflow = if i > 0 { flux[i - 1] } else { 0.0 };
            let outflow = if i < n - 1 { flux[i] } else { 0.0 };
            next[i] = (rho[i] + c * (inflow - outflow)).max(0.0);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::Divergence {
                step: k,
                reason: "non-finite density".into(),
            });
        }
        let u_next = proto.slice(slice_of[k + 1]);
        heat += u
            .iter()
            .zip(next.iter().zip(&rho))
            .map(|(u, (a, b))| u * (a - b))
            .sum::<f64>()
            * dx;
        if slice_of[k + 1] != s {
            work += u_next
                .iter()
                .zip(u)
                .zip(&next)
                .map(|((a, b), r)| (a - b) * r)
                .sum::<f64>()
                * dx;
        }
        diss += d_rate * h;
        std::mem::swap(&mut rho, &mut next);
        let mass: f64 = rho.iter().sum::<f64>() * dx;
        max_drift = max_drift.max((mass - 1.0).abs());

        if (k + 1) % record_every == 0 || k + 1 == n_steps {
            snapshots.push(Snapshot {
                t: times[k + 1],
                density: GridDensity::with_mass_tol(grid, rho.clone(), 1e-6)?,
            });
            series.push(LedgerPoint {
                t: times[k + 1],
                work,
                heat,
                internal: energy(&rho, u_next) - e0,
            });
        }
    }
    let e1 = energy(&rho, proto.slice(slice_of[n_steps]));
    Ok(FpRun {
        snapshots,
        series,
        ledger: EnergyLedger {
            work,
            heat,
            delta_internal: e1 - e0,
            dissipation: Some(diss),
        },
        initial_energy: e0,
        final_energy: e1,
        max_mass_drift: max_drift,
        n_steps,
        dt: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::QuadraticProtocol;
    use crate::statespace::{DensityFunctionals, Grid};

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn bernoulli_is_smooth_through_zero() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-8) - (1.0 - 0.5e-8)).abs() < 1e-15);
        assert!((bernoulli(1.0) - 1.0 / (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-9);
        assert_eq!(bernoulli(800.0), 0.0);
    }

    #[test]
    fn gibbs_state_is_stationary() {
        let grid = Grid::symmetric(5.0, 400).unwrap();
        let u = grid.sample(|x| 0.25 * x.powi(4) - x * x);
        let gibbs = GridDensity::gibbs(grid, &u, 1.0, &c()).unwrap();
        let proto = Protocol::static_potential(grid, u, 1.0, 0.1).unwrap();
        let dt = 1e-4;
        let run = fokker_planck_evolve(&proto, &gibbs, dt, 1000, &c()).unwrap();
        assert_eq!(run.n_steps, 1000);
        let drift = run.final_density().l1_distance(&gibbs).unwrap();
        assert!(drift < 1e-6, "drift {drift}");
        assert!(run.max_mass_drift < 1e-12 * 1000.0);
        assert!(run.ledger.dissipation.unwrap().abs() < 1e-6);
    }

    #[test]
    fn free_diffusion_variance_growth() {
        let grid = Grid::symmetric(12.0, 600).unwrap();
        let init = GridDensity::gaussian(grid, 0.0, 0.5).unwrap();
        let proto = Protocol::static_potential(grid, vec![0.0; 600], 1.0, 1.0).unwrap();
        let run = fokker_planck_evolve(&proto, &init, 1e-4, 2500, &c()).unwrap();
        let (_, v_init) = init.moments();
        for s in &run.snapshots {
            let (_, v) = s.density.moments();
            assert!((v - v_init - 2.0 * s.t).abs() < 1e-3, "t {} var {v}", s.t);
        }
    }

    #[test]
    fn quench_matches_ornstein_uhlenbeck() {
        let grid = Grid::symmetric(8.0, 800).unwrap();
        let init = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
        let q = QuadraticProtocol::constant(2.0, 1.0, 1.0).unwrap();
        let proto = Protocol::sample(&q, grid, vec![0.0, 1.0]).unwrap();
        let run = fokker_planck_evolve(&proto, &init, 2e-5, 5000, &c()).unwrap();
        for s in &run.snapshots {
            let (_, v) = s.density.moments();
            let exact = 0.5 + 0.5 * (-4.0 * s.t).exp();
            assert!((v - exact).abs() < 1e-3, "t {} var {v} vs {exact}", s.t);
        }
        // Relaxation after a quench: no work, heat flows out.
        assert_eq!(run.ledger.work, 0.0);
        assert!(run.ledger.heat < 0.0);
        assert!(run.ledger.first_law_residual().abs() < 1e-12);
    }

    #[test]
    fn rejects_unstable_steps_before_stepping() {
        let grid = Grid::symmetric(4.0, 100).unwrap();
        let init = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
        let proto = Protocol::static_potential(grid, vec![0.0; 100], 1.0, 1.0).unwrap();
        let err = fokker_planck_evolve(&proto, &init, 1e-2, 1, &c()).unwrap_err();
        assert!(matches!(err, EngineError::Stability { .. }));
        // Steep drift violates positivity even below the diffusion limit.
        let steep =
            Protocol::static_potential(grid, grid.sample(|x| 400.0 * x * x), 1.0, 1.0).unwrap();
        let err = fokker_planck_evolve(&steep, &init, 1e-3, 1, &c()).unwrap_err();
        assert!(matches!(err, EngineError::Stability { .. }), "{err}");
        let other = Grid::symmetric(4.0, 50).unwrap();
        let bad = GridDensity::gaussian(other, 0.0, 1.0).unwrap();
        assert!(fokker_planck_evolve(&proto, &bad, 1e-4, 1, &c()).is_err());
    }
}
