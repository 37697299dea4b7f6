use serde::Serialize;

use super::fokker_planck::FpRun;
use super::protocol::Protocol;
use crate::error::{EngineError, Result};
use crate::statespace::{DensityFunctionals, Grid, GridDensity, PhysicalConstants};
use crate::transport::DisplacementInterpolation;

/// Cells whose density is below this fraction of the peak are treated as
/// empty when reconstructing the potential; the force there is continued
/// from the nearest resolved interface.
const TAIL_FLOOR: f64 = 1e-12;

/// Bound on `|ΔU| / k_B T` across one interface.
const Z_MAX: f64 = 50.0;

/// `v = −(1/γ)(∂ₓU + k_B T ∂ₓ log ρ)` at the cell centers, by central
/// differences (one-sided at the ends). Cells where `ρ` or a neighbor used
/// in the stencil vanishes get `v = 0`.
pub fn velocity_field(
    rho: &GridDensity,
    u: &[f64],
    temperature: f64,
    consts: &PhysicalConstants,
) -> Result<Vec<f64>> {
    let n = rho.n_cells();
    if u.len() != n {
        return Err(EngineError::GridMismatch(format!(
            "potential has {} samples for {n} cells",
            u.len()
        )));
    }
    let dx = rho.dx();
    let r = rho.values();
    let kt = consts.k_b * temperature;
    Ok((0..n)
        .map(|i| {
            let (l, h) = (i.saturating_sub(1), (i + 1).min(n - 1));
            if r[l] <= 0.0 || r[h] <= 0.0 || r[i] <= 0.0 {
                return 0.0;
            }
            let span = (h - l) as f64 * dx;
            let du = (u[h] - u[l]) / span;
            let dlog = (r[h] / r[l]).ln() / span;
            -(du + kt * dlog) / consts.gamma
        })
        .collect())
}

/// `B(z) ρ_l − B(−z) ρ_r`, the dimensionless exponentially fitted flux.
fn fitted_flux(z: f64, rl: f64, rr: f64) -> f64 {
    let b = |z: f64| {
        if z.abs() < 1e-10 {
            1.0 - 0.5 * z
        } else {
            z / z.exp_m1()
        }
    };
    b(z) * rl - b(-z) * rr
}

/// Solves `fitted_flux(z) = target` (decreasing in `z`) by bisection.
fn solve_interface(target: f64, rl: f64, rr: f64) -> Option<f64> {
    let (mut lo, mut hi) = (-Z_MAX, Z_MAX);
    if fitted_flux(lo, rl, rr) < target || fitted_flux(hi, rl, rr) > target {
        return None;
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if fitted_flux(mid, rl, rr) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Potential slice whose fitted fluxes on `rho` equal `flux` (one value per
/// interface), gauged to zero at the middle cell.
fn invert_fluxes(
    rho: &[f64],
    flux: &[f64],
    grid: &Grid,
    temperature: f64,
    consts: &PhysicalConstants,
) -> Result<Vec<f64>> {
    let kt = consts.k_b * temperature;
    let scale = grid.dx() * consts.gamma / kt;
    let peak = rho.iter().cloned().fold(0.0, f64::max);
    let floor = TAIL_FLOOR * peak;
    let mut z: Vec<Option<f64>> = Vec::with_capacity(flux.len());
    for (i, &j) in flux.iter().enumerate() {
        let (rl, rr) = (rho[i], rho[i + 1]);
        let target = j * scale;
        if rl.max(rr) < floor {
            if target.abs() > Z_MAX * floor {
                return Err(EngineError::Support(format!(
                    "density underflows between cells {i} and {} where the path moves mass",
                    i + 1
                )));
            }
            z.push(None);
            continue;
        }
        match solve_interface(target, rl, rr) {
            Some(v) => z.push(Some(v)),
            None => {
                return Err(EngineError::Support(format!(
                "flux {j:e} between cells {i} and {} cannot be carried by densities {rl:e}, {rr:e}",
                i + 1
            )))
            }
        }
    }
    let first = z
        .iter()
        .position(Option::is_some)
        .ok_or_else(|| EngineError::Support("density underflows on the whole grid".into()))?;
    let mut filled = Vec::with_capacity(z.len());
    let mut last = z[first].unwrap();
    for v in &z {
        if let Some(v) = v {
            last = *v;
        }
        filled.push(last);
    }
    let mut u = Vec::with_capacity(rho.len());
    u.push(0.0);
    for zi in filled {
        let prev = *u.last().unwrap();
        u.push(prev + kt * zi);
    }
    let gauge = u[grid.mid_index()];
    u.iter_mut().for_each(|v| *v -= gauge);
    Ok(u)
}

/// Reconstructs the piecewise-constant protocol that steers the
/// Fokker–Planck dynamics along `path[k]` at `times[k]`.
///
/// On each interval the interface fluxes are fixed by the cumulative mass
/// change (accumulated from the nearer end of the grid) and evaluated on the
/// interval's mean density; the potential differences that produce them are
/// solved interface by interface. A final slice holds `path.last()` in
/// equilibrium.
pub fn protocol_from_path(
    path: &[GridDensity],
    times: &[f64],
    temperature: f64,
    consts: &PhysicalConstants,
) -> Result<Protocol> {
    consts.validate()?;
    if path.len() < 2 || path.len() != times.len() {
        return Err(EngineError::param(
            "path",
            "needs at least two densities, one per time",
        ));
    }
    if !(temperature > 0.0) {
        return Err(EngineError::param("temperature", "must be positive"));
    }
    let grid = *path[0].grid();
    for p in &path[1..] {
        grid.check_same(p.grid())?;
    }
    let n = grid.n_cells;
    let dx = grid.dx();
    let mid = grid.mid_index();
    let mut slices = Vec::with_capacity(path.len());
    for k in 0..path.len() - 1 {
        let dt = times[k + 1] - times[k];
        if !(dt > 0.0) {
            return Err(EngineError::param("times", "must be strictly increasing"));
        }
        let (a, b) = (path[k].values(), path[k + 1].values());
        let mean: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let mut flux = vec![0.0; n - 1];
        // Left of the middle: outflow through interface i is minus the mass
        // gained by cells 0..=i; right of it, the mass gained by cells i+1...
        let mut acc = 0.0;
        for i in 0..mid {
            acc += b[i] - a[i];
            flux[i] = -acc * dx / dt;
        }
        acc = 0.0;
        for i in (mid..n - 1).rev() {
            acc += b[i + 1] - a[i + 1];
            flux[i] = acc * dx / dt;
        }
        slices.push(invert_fluxes(&mean, &flux, &grid, temperature, consts)?);
    }
    let last = path[path.len() - 1].values();
    slices.push(invert_fluxes(
        last,
        &vec![0.0; n - 1],
        &grid,
        temperature,
        consts,
    )?);
    Protocol::new(grid, times.to_vec(), slices, vec![temperature; path.len()])
}

/// Protocol that carries `a` to `b` along the constant-speed displacement
/// interpolation in `duration`, sampled at `n_steps` intervals.
pub fn geodesic_protocol(
    a: &GridDensity,
    b: &GridDensity,
    temperature: f64,
    duration: f64,
    n_steps: usize,
    consts: &PhysicalConstants,
) -> Result<Protocol> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(EngineError::param("duration", "must be positive"));
    }
    if n_steps == 0 {
        return Err(EngineError::param("n_steps", "must be at least 1"));
    }
    a.grid().check_same(b.grid())?;
    let interp = DisplacementInterpolation::new(a, b);
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(a.clone());
    for k in 1..n_steps {
        path.push(interp.at(k as f64 / n_steps as f64)?);
    }
    path.push(b.clone());
    let times: Vec<f64> = (0..=n_steps)
        .map(|k| duration * k as f64 / n_steps as f64)
        .collect();
    protocol_from_path(&path, &times, temperature, consts)
}

/// Both sides of `W − ΔF = γ ∫ ‖v‖²_ρ dt` for an isothermal run, with the
/// non-equilibrium free energy `F = ∫Uρ − T S(ρ)` at the endpoints.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DissipationAudit {
    pub work: f64,
    pub delta_free_energy: f64,
    /// `W − ΔF`.
    pub lhs: f64,
    /// Accumulated `γ ∫ ‖v‖²_ρ dt`.
    pub rhs: f64,
    pub abs_mismatch: f64,
    /// `|lhs − rhs| / |rhs|` (infinite when `rhs = 0` and the sides differ).
    pub rel_mismatch: f64,
}

/// Evaluates the dissipation identity on a Fokker–Planck run under `proto`,
/// using the temperature of the first slice.
pub fn dissipation_audit(
    run: &FpRun,
    proto: &Protocol,
    consts: &PhysicalConstants,
) -> DissipationAudit {
    let t = proto.slice_temperature(0);
    let f0 = run.initial_energy - t * run.initial_density().entropy(consts);
    let f1 = run.final_energy - t * run.final_density().entropy(consts);
    let work = run.ledger.work;
    let lhs = work - (f1 - f0);
    let rhs = run.ledger.dissipation.unwrap_or(0.0);
    let abs = (lhs - rhs).abs();
    DissipationAudit {
        work,
        delta_free_energy: f1 - f0,
        lhs,
        rhs,
        abs_mismatch: abs,
        rel_mismatch: if abs == 0.0 { 0.0 } else { abs / rhs.abs() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::fokker_planck_evolve;
    use crate::transport::{w2_grid, DEFAULT_QUANTILE_NODES};

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn gibbs_pair_has_no_velocity() {
        let grid = Grid::symmetric(6.0, 300).unwrap();
        let u = grid.sample(|x| x.powi(4) / 4.0 - x * x / 2.0);
        let rho = GridDensity::gibbs(grid, &u, 1.5, &c()).unwrap();
        let v = velocity_field(&rho, &u, 1.5, &c()).unwrap();
        assert!(v.iter().all(|v| v.abs() < 1e-8));
        assert!(velocity_field(&rho, &u[1..], 1.5, &c()).is_err());
    }

    #[test]
    fn free_gaussian_velocity_is_linear() {
        let grid = Grid::symmetric(6.0, 300).unwrap();
        let rho = GridDensity::gaussian(grid, 0.0, 2.0).unwrap();
        let v = velocity_field(&rho, &vec![0.0; 300], 1.0, &c()).unwrap();
        for (i, v) in v.iter().enumerate().take(299).skip(1) {
            let x = grid.center(i);
            assert!((v - x / 2.0).abs() < 1e-3, "x {x} v {v}");
        }
    }

    #[test]
    fn identical_endpoints_give_static_gibbs_gradient() {
        let grid = Grid::symmetric(6.0, 300).unwrap();
        let a = GridDensity::gaussian(grid, 0.3, 0.8).unwrap();
        let p = geodesic_protocol(&a, &a, 1.0, 1.0, 10, &c()).unwrap();
        let expected = grid.sample(|x| (x - 0.3).powi(2) / 1.6);
        let shift = expected[grid.mid_index()];
        for k in 0..p.n_slices() {
            let v = velocity_field(&a, p.slice(k), 1.0, &c()).unwrap();
            assert!(v.iter().all(|v| v.abs() < 1e-8));
            for (u, e) in p.slice(k).iter().zip(&expected).take(200).skip(100) {
                assert!((u - (e - shift)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn geodesic_protocol_lands_on_target() {
        let grid = Grid::symmetric(10.0, 400).unwrap();
        let a = GridDensity::gaussian(grid, -1.0, 1.0).unwrap();
        let b = GridDensity::gaussian(grid, 1.0, 0.5).unwrap();
        let w = w2_grid(&a, &b, DEFAULT_QUANTILE_NODES).unwrap();
        let p = geodesic_protocol(&a, &b, 1.0, 2.0, 100, &c()).unwrap();
        let run = fokker_planck_evolve(&p, &a, 1e-4, 1000, &c()).unwrap();
        let miss = w2_grid(run.final_density(), &b, DEFAULT_QUANTILE_NODES).unwrap();
        assert!(miss < 1e-2 * w, "residual {miss} vs {w}");
        let audit = dissipation_audit(&run, &p, &c());
        let ideal = w * w / 2.0;
        assert!(
            (audit.lhs - ideal).abs() < 0.02 * ideal,
            "{audit:?} vs {ideal}"
        );
        assert!(audit.rel_mismatch < 0.02, "{audit:?}");
    }

    #[test]
    fn static_hold_audits_to_zero() {
        let grid = Grid::symmetric(6.0, 200).unwrap();
        let u = grid.sample(|x| x * x);
        let rho = GridDensity::gibbs(grid, &u, 1.0, &c()).unwrap();
        let p = Protocol::static_potential(grid, u, 1.0, 0.5).unwrap();
        let run = fokker_planck_evolve(&p, &rho, 1e-4, 5000, &c()).unwrap();
        let audit = dissipation_audit(&run, &p, &c());
        assert!(
            audit.lhs.abs() < 1e-6 && audit.rhs.abs() < 1e-6,
            "{audit:?}"
        );
    }

    #[test]
    fn unreachable_flux_is_a_support_error() {
        let grid = Grid::symmetric(4.0, 64).unwrap();
        let a = GridDensity::uniform(grid, -3.0, -1.0).unwrap();
        let b = GridDensity::uniform(grid, 1.0, 3.0).unwrap();
        let err = protocol_from_path(&[a, b], &[0.0, 1.0], 1.0, &c()).unwrap_err();
        assert!(matches!(err, EngineError::Support(_)), "{err}");
    }
}
