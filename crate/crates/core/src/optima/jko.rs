use std::io::Write;

use serde::Serialize;

use crate::error::{EngineError, Result};
use crate::statespace::{DensityFunctionals, GaussianState, Grid, GridDensity, PhysicalConstants};
use crate::transport::{midpoint_nodes, Cdf, MIN_QUANTILE_NODES};

/// `min_ρ W2(ρ_a, ρ)² − h S(ρ)/k_B` over densities on the line.
#[derive(Debug, Clone)]
pub struct ProximalProblem {
    pub rho_a: GridDensity,
    /// Entropy weight, `k_B ΔT t_cycle / (4γ)` for the power-optimal `ρ_b`.
    pub h: f64,
    /// Grid of the returned density.
    pub grid: Grid,
    pub n_nodes: usize,
    /// Stop when the Newton decrement `√(−g·p)` falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl ProximalProblem {
    pub fn new(rho_a: GridDensity, h: f64) -> Self {
        let grid = *rho_a.grid();
        Self {
            rho_a,
            h,
            grid,
            n_nodes: 16384,
            tol: 1e-10,
            max_iter: 200,
        }
    }

    /// The problem whose minimizer maximizes the cycle power at `t_cycle`.
    pub fn for_cycle(
        rho_a: GridDensity,
        t_hot: f64,
        t_cold: f64,
        t_cycle: f64,
        consts: &PhysicalConstants,
    ) -> Result<Self> {
        super::check_cycle(t_hot, t_cold, t_cycle)?;
        let h = consts.k_b * (t_hot - t_cold) * t_cycle / (4.0 * consts.gamma);
        Ok(Self::new(rho_a, h))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(EngineError::param("h", "must be positive"));
        }
        if self.n_nodes < MIN_QUANTILE_NODES {
            return Err(EngineError::param(
                "n_nodes",
                format!("must be at least {MIN_QUANTILE_NODES}"),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(EngineError::param("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(EngineError::param("max_iter", "must be at least 1"));
        }
        self.grid.validate()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct JkoResult {
    pub density: GridDensity,
    /// Optimal quantile values on the midpoint nodes.
    pub quantiles: Vec<f64>,
    pub objective: f64,
    pub log: Vec<IterationRecord>,
}

struct Objective<'a> {
    qa: &'a [f64],
    h: f64,
}

impl Objective<'_> {
    /// Objective divided by `Δu`; `None` outside the monotone cone.
    fn value(&self, q: &[f64], du: f64) -> Option<f64> {
        let mut acc = 0.0;
        for (a, b) in q.iter().zip(self.qa) {
            acc += (b - a) * (b - a);
        }
        for w in q.windows(2) {
            let d = w[1] - w[0];
            if !(d > 0.0) {
                return None;
            }
            acc -= self.h * (d / du).ln();
        }
        Some(acc)
    }

    /// Gradient and tridiagonal Hessian (diagonal, super-diagonal).
    fn derivatives(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = q.len();
        let mut g: Vec<f64> = q.iter().zip(self.qa).map(|(x, a)| 2.0 * (x - a)).collect();
        let mut diag = vec![2.0; n];
        let mut off = vec![0.0; n - 1];
        for k in 0..n - 1 {
            let d = q[k + 1] - q[k];
            let inv = 1.0 / d;
            g[k] += self.h * inv;
            g[k + 1] -= self.h * inv;
            let c = self.h * inv * inv;
            diag[k] += c;
            diag[k + 1] += c;
            off[k] = -c;
        }
        (g, diag, off)
    }
}

/// Solves the symmetric tridiagonal system `H x = rhs`.
fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / m;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Proximal step in quantile space. `Q` lives on midpoint nodes `u_k`; the
/// objective `∑(Q_a − Q)²Δu − h ∑ log(ΔQ/Δu) Δu` is strictly convex on the
/// cone `ΔQ > 0` and is minimized by damped Newton steps (tridiagonal
/// Hessian), backtracking whenever a step would leave the cone or fail to
/// decrease the objective. `init` defaults to `Q_a` (or, where `ρ_a` has
/// gaps, to the moment-matched Gaussian quantiles).
pub fn jko_step(problem: &ProximalProblem, init: Option<&[f64]>) -> Result<JkoResult> {
    problem.validate()?;
    let n = problem.n_nodes;
    let du = 1.0 / n as f64;
    let u = midpoint_nodes(n);
    let cdf = Cdf::new(&problem.rho_a);
    let qa: Vec<f64> = u.iter().map(|&u| cdf.quantile(u)).collect();
    let obj = Objective {
        qa: &qa,
        h: problem.h,
    };

    let mut q: Vec<f64> = match init {
        Some(q0) => {
            if q0.len() != n {
                return Err(EngineError::param(
                    "init",
                    format!("needs {n} quantile values"),
                ));
            }
            q0.to_vec()
        }
        None => {
            if obj.value(&qa, du).is_some() {
                qa.clone()
            } else {
                let (m, v) = problem.rho_a.moments();
                let g = GaussianState::with_mean(v.max(1e-300), m)?;
                u.iter().map(|&u| g.quantile(u)).collect()
            }
        }
    };
    let mut f = obj
        .value(&q, du)
        .ok_or_else(|| EngineError::param("init", "quantile values must be strictly increasing"))?;

    let mut log = Vec::new();
    let mut converged = false;
    let mut decrement = f64::INFINITY;
    for iter in 0..problem.max_iter {
        let (g, diag, off) = obj.derivatives(&q);
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt() * du;
        let p: Vec<f64> = thomas(&diag, &off, &g).into_iter().map(|v| -v).collect();
        let lambda2 = -g.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() * du;
        decrement = lambda2.max(0.0).sqrt();
        // Below the resolution of `f` no line search can make progress; the
        // iterate is optimal to working precision.
        let unresolvable = 0.5 * lambda2 / du <= 16.0 * f64::EPSILON * f.abs().max(1.0);
        if decrement < problem.tol || unresolvable {
            log.push(IterationRecord {
                iter,
                objective: f * du,
                grad_norm,
                step: 0.0,
            });
            converged = true;
            break;
        }
        let mut alpha = 1.0;
        let mut trial = vec![0.0; n];
        let accepted = loop {
            for k in 0..n {
                trial[k] = q[k] + alpha * p[k];
            }
            if let Some(ft) = obj.value(&trial, du) {
                if ft <= f - 0.25 * alpha * lambda2 / du || (ft <= f && alpha < 1e-6) {
                    break Some(ft);
                }
            }
            alpha *= 0.5;
            if alpha < 1e-16 {
                break None;
            }
        };
        let Some(ft) = accepted else {
            break;
        };
        std::mem::swap(&mut q, &mut trial);
        f = ft;
        log.push(IterationRecord {
            iter,
            objective: f * du,
            grad_norm,
            step: alpha,
        });
    }
    if !converged {
        return Err(EngineError::NonConvergence {
            iterations: problem.max_iter,
            residual: decrement,
        });
    }

    // Density on the midpoints between nodes: mass Δu over each gap.
    let xs: Vec<f64> = q.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let rs: Vec<f64> = q.windows(2).map(|w| du / (w[1] - w[0])).collect();
    let (xs, rs) = close_tails(xs, rs, &problem.grid);
    let values = resample_log_hermite(&xs, &rs, &problem.grid);
    let density = GridDensity::new(problem.grid, values)?;
    Ok(JkoResult {
        density,
        quantiles: q,
        objective: f * du,
        log,
    })
}

/// The outermost `Δu/2` of mass on each side has no node, and the first few
/// gaps carry a one-sided barrier force. Both tails are therefore replaced,
/// from a few nodes in, by the log-quadratic through three interior samples
/// (made concave if needed), continued over the rest of the grid.
fn close_tails(xs: Vec<f64>, rs: Vec<f64>, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let m = (n / 1024).max(1);
    if n <= 64 * m + 1 {
        return (xs, rs);
    }
    let fit = |i: [usize; 3]| -> Option<(f64, f64, f64, f64)> {
        let (x0, x1, x2) = (xs[i[0]], xs[i[1]], xs[i[2]]);
        let (y0, y1, y2) = (rs[i[0]].ln(), rs[i[1]].ln(), rs[i[2]].ln());
        if !(y0.is_finite() && y1.is_finite() && y2.is_finite()) {
            return None;
        }
        // Newton form around x0.
        let d01 = (y1 - y0) / (x1 - x0);
        let d12 = (y2 - y1) / (x2 - x1);
        let c = ((d12 - d01) / (x2 - x0)).min(0.0);
        let b = d01 - c * (x1 - x0);
        Some((x0, y0, b, c))
    };
    let mut lo_x = Vec::new();
    let mut lo_r = Vec::new();
    let mut start = 0;
    if let Some((x0, y0, b, c)) = fit([4 * m, 16 * m, 64 * m]) {
        if b > 0.0 {
            start = 4 * m;
            for i in 0..grid.n_cells {
                let x = grid.center(i);
                if x >= x0 {
                    break;
                }
                lo_x.push(x);
                lo_r.push((y0 + b * (x - x0) + c * (x - x0).powi(2)).exp());
            }
        }
    }
    let mut hi_x = Vec::new();
    let mut hi_r = Vec::new();
    let mut end = n;
    let last = n - 1;
    if let Some((x0, y0, b, c)) = fit([last - 4 * m, last - 16 * m, last - 64 * m]) {
        if b < 0.0 {
            end = last - 4 * m + 1;
            for i in 0..grid.n_cells {
                let x = grid.center(i);
                if x > x0 {
                    hi_x.push(x);
                    hi_r.push((y0 + b * (x - x0) + c * (x - x0).powi(2)).exp());
                }
            }
        }
    }
    lo_x.extend_from_slice(&xs[start..end]);
    lo_r.extend_from_slice(&rs[start..end]);
    lo_x.extend(hi_x);
    lo_r.extend(hi_r);
    (lo_x, lo_r)
}

/// Cubic Hermite interpolation of `log r` at the cell centers, with slopes
/// from the parabola through neighboring samples; zero outside the samples.
/// Piecewise-linear `log r` would put kinks in `(log ρ)'` wherever nodes
/// are sparser than cells.
fn resample_log_hermite(xs: &[f64], rs: &[f64], grid: &Grid) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![0.0; grid.n_cells];
    if n < 2 {
        return out;
    }
    let ly: Vec<f64> = rs.iter().map(|r| r.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = |j: usize| -> f64 {
        if j == 0 {
            return (ly[1] - ly[0]) / (xs[1] - xs[0]);
        }
        if j == n - 1 {
            return (ly[j] - ly[j - 1]) / (xs[j] - xs[j - 1]);
        }
        let (h0, h1) = (xs[j] - xs[j - 1], xs[j + 1] - xs[j]);
        let (d0, d1) = ((ly[j] - ly[j - 1]) / h0, (ly[j + 1] - ly[j]) / h1);
        (h1 * d0 + h0 * d1) / (h0 + h1)
    };
    let mut j = 0usize;
    for (i, o) in out.iter_mut().enumerate() {
        let c = grid.center(i);
        if c < xs[0] || c > xs[n - 1] {
            continue;
        }
        while j + 2 < n && xs[j + 1] < c {
            j += 1;
        }
        let h = xs[j + 1] - xs[j];
        let t = (c - xs[j]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * ly[j]
            + (t3 - 2.0 * t2 + t) * h * slope(j)
            + (-2.0 * t3 + 3.0 * t2) * ly[j + 1]
            + (t3 - t2) * h * slope(j + 1);
        *o = v.exp();
    }
    out
}

/// Writes the solver log as `iter,objective,grad_norm,step`.
pub fn write_iteration_log<W: Write>(log: &[IterationRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in log {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optima::{optimal_sigma_b, stationarity_residual};
    use crate::transport::{w2_grid, DEFAULT_QUANTILE_NODES};

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn thomas_solves_tridiagonal() {
        let diag = [4.0, 5.0, 6.0];
        let off = [1.0, 2.0];
        let x = thomas(&diag, &off, &[1.0, 2.0, 3.0]);
        let r0 = 4.0 * x[0] + x[1];
        let r1 = x[0] + 5.0 * x[1] + 2.0 * x[2];
        let r2 = 2.0 * x[1] + 6.0 * x[2];
        assert!((r0 - 1.0).abs() < 1e-14 && (r1 - 2.0).abs() < 1e-14 && (r2 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_step_matches_closed_form() {
        let grid = Grid::symmetric(12.0, 4096).unwrap();
        let a = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
        let p = ProximalProblem::for_cycle(a.clone(), 2.0, 1.0, 8.0, &c()).unwrap();
        let r = jko_step(&p, None).unwrap();
        let (_, v) = r.density.moments();
        let target = optimal_sigma_b(1.0, 2.0, 1.0, 8.0, &c());
        assert!(
            (v.sqrt() / target - 1.0).abs() < 5e-3,
            "sigma {} vs {target}",
            v.sqrt()
        );
        let res = stationarity_residual(&a, &r.density, 2.0, 1.0, 8.0, &c()).unwrap();
        assert!(res < 1e-3, "residual {res}");
        for w in r.log.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
        let mut buf = Vec::new();
        write_iteration_log(&r.log, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("iter,objective,grad_norm,step\n"));
    }

    #[test]
    fn small_weight_returns_anchor() {
        let grid = Grid::symmetric(10.0, 2048).unwrap();
        let a = GridDensity::gaussian(grid, 0.5, 0.7).unwrap();
        let p = ProximalProblem::new(a.clone(), 1e-7);
        let r = jko_step(&p, None).unwrap();
        let w = w2_grid(&a, &r.density, DEFAULT_QUANTILE_NODES).unwrap();
        assert!(w < 1e-3, "w2 {w}");
    }

    #[test]
    fn rejects_bad_problems() {
        let grid = Grid::symmetric(4.0, 64).unwrap();
        let a = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
        assert!(jko_step(&ProximalProblem::new(a.clone(), 0.0), None).is_err());
        let mut p = ProximalProblem::new(a.clone(), 1.0);
        p.n_nodes = 32;
        assert!(jko_step(&p, Some(&[0.0; 32])).is_err());
        p.max_iter = 1;
        let err = jko_step(&p, None).unwrap_err();
        assert!(matches!(err, EngineError::NonConvergence { .. }), "{err}");
    }
}
