//! Two constructions showing that the power, as a functional of `ρ_a`, has
//! no maximizer: narrowing two-bump mixtures at fixed variance, and trains
//! of narrow blocks that approach `ρ_b` in `W2` at a fixed entropy deficit.

use std::io::Write;

use serde::Serialize;

use super::check_cycle;
use crate::error::{EngineError, Result};
use crate::statespace::{
    entropy, DensityFunctionals, GaussianState, Grid, GridDensity, PhysicalConstants,
};
use crate::transport::{w2_grid, Cdf, QuantileFunction, DEFAULT_QUANTILE_NODES};

/// `½N(+m, 1/n²) + ½N(−m, 1/n²)` with `m = √(σ_a² − 1/n²)`, so the
/// variance is `σ_a²` for every `n`.
pub fn mixture_density(n: usize, sigma_a: f64, grid: Grid) -> Result<GridDensity> {
    let width = 1.0 / n as f64;
    if n < 2 || !(width < sigma_a) {
        return Err(EngineError::param("n", "needs n ≥ 2 and 1/n < sigma_a"));
    }
    if grid.dx() > width / 4.0 {
        return Err(EngineError::Resolution(format!(
            "cell width {} cannot resolve components of width {width}",
            grid.dx()
        )));
    }
    let m = (sigma_a * sigma_a - width * width).sqrt();
    let var = width * width;
    let norm = 0.5 / (2.0 * std::f64::consts::PI * var).sqrt();
    GridDensity::from_fn(grid, |x| {
        norm * ((-(x - m).powi(2) / (2.0 * var)).exp() + (-(x + m).powi(2) / (2.0 * var)).exp())
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MixturePoint {
    pub n: usize,
    /// `g(μ_n) = −(ΔT/t) S(μ_n) − (4γ/t²) W2(μ_n, ρ_b)²`.
    pub value: f64,
    /// `(k_B ΔT/t)(log n − log 2√(2πe)) − (4γ/t²)(σ_a² + σ_b² − 2σ_b/n)`.
    pub bound: f64,
    pub variance: f64,
}

impl MixturePoint {
    pub fn satisfies_bound(&self) -> bool {
        self.value >= self.bound
    }
}

/// Evaluates `g(μ_n)` on a grid fine enough for the mixture components.
pub fn mixture_sequence_power(
    n: usize,
    sigma_a: f64,
    rho_b: &GaussianState,
    t_hot: f64,
    t_cold: f64,
    t_cycle: f64,
    consts: &PhysicalConstants,
) -> Result<MixturePoint> {
    check_cycle(t_hot, t_cold, t_cycle)?;
    if n < 2 || !(1.0 / (n as f64) < sigma_a) {
        return Err(EngineError::param("n", "needs n ≥ 2 and 1/n < sigma_a"));
    }
    let nf = n as f64;
    let half = (sigma_a * sigma_a - 1.0 / (nf * nf)).sqrt() + 12.0 / nf;
    let cells = (2.0 * half * 8.0 * nf).ceil() as usize;
    let mu = mixture_density(n, sigma_a, Grid::symmetric(half, cells)?)?;
    let qa = QuantileFunction::of_grid(&mu, DEFAULT_QUANTILE_NODES)?;
    let qb = QuantileFunction::of_gaussian(rho_b, DEFAULT_QUANTILE_NODES)?;
    let w = qa.w2(&qb)?;
    let dt = t_hot - t_cold;
    let pull = 4.0 * consts.gamma / (t_cycle * t_cycle);
    let value = -dt / t_cycle * entropy(&mu, consts) - pull * w * w;
    let sb = rho_b.std_dev();
    let log_c = (2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt()).ln();
    let bound = consts.k_b * dt / t_cycle * (nf.ln() - log_c)
        - pull * (sigma_a * sigma_a + rho_b.variance - 2.0 * sb / nf);
    Ok(MixturePoint {
        n,
        value,
        bound,
        variance: mu.moments().1,
    })
}

/// Writes probe points as `n,value,bound`.
pub fn write_probe_csv<W: Write>(points: &[MixturePoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n", "value", "bound"])?;
    for p in points {
        wr.write_record([p.n.to_string(), p.value.to_string(), p.bound.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DiracTrain {
    pub n_spikes: usize,
    pub w2: f64,
    pub entropy: f64,
    /// Block width in units of the spread of its piece of `ρ_b`.
    pub theta: f64,
    pub density: GridDensity,
}

/// Quantile nodes per piece used to measure its spread.
const PIECE_NODES: usize = 64;

/// Train of `n_spikes` uniform blocks, one per equal-mass piece of `ρ_b`,
/// each centered at the piece's median and `θ` times as wide as the piece's
/// standard deviation; `θ` is bisected until the entropy equals `s_a`.
pub fn dirac_train_infimum(
    rho_b: &GridDensity,
    s_a: f64,
    n_spikes: usize,
    consts: &PhysicalConstants,
) -> Result<DiracTrain> {
    if n_spikes == 0 {
        return Err(EngineError::param("n_spikes", "must be at least 1"));
    }
    let s_b = rho_b.entropy(consts);
    if !(s_a < s_b) {
        return Err(EngineError::param(
            "s_a",
            "must be below the entropy of rho_b",
        ));
    }
    let grid = *rho_b.grid();
    let cdf = Cdf::new(rho_b);
    let n = n_spikes as f64;
    let bounds: Vec<f64> = (0..=n_spikes).map(|j| cdf.quantile(j as f64 / n)).collect();
    let mut centers = Vec::with_capacity(n_spikes);
    let mut spreads = Vec::with_capacity(n_spikes);
    for j in 0..n_spikes {
        centers.push(cdf.quantile((j as f64 + 0.5) / n));
        let qs: Vec<f64> = (0..PIECE_NODES)
            .map(|k| cdf.quantile((j as f64 + (k as f64 + 0.5) / PIECE_NODES as f64) / n))
            .collect();
        let mean = qs.iter().sum::<f64>() / PIECE_NODES as f64;
        let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / PIECE_NODES as f64;
        spreads.push(var.sqrt());
    }
    let min_spread = spreads.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_spread > 0.0) {
        return Err(EngineError::Resolution(
            "a piece of rho_b has zero width".into(),
        ));
    }
    let theta_lo = 2.0 * grid.dx() / min_spread;
    let theta_hi = (0..n_spikes)
        .map(|j| 2.0 * (centers[j] - bounds[j]).min(bounds[j + 1] - centers[j]) / spreads[j])
        .fold(f64::INFINITY, f64::min);
    if !(theta_lo < theta_hi) {
        return Err(EngineError::Resolution(format!(
            "{n_spikes} blocks cannot be resolved on cells of width {}",
            grid.dx()
        )));
    }

    let build = |theta: f64| -> Result<GridDensity> {
        let mut values = vec![0.0; grid.n_cells];
        let dx = grid.dx();
        for j in 0..n_spikes {
            let w = theta * spreads[j];
            let (lo, hi) = (centers[j] - 0.5 * w, centers[j] + 0.5 * w);
            let height = 1.0 / (n * w);
            let first = (((lo - grid.x_min) / dx).floor().max(0.0)) as usize;
            let last = (((hi - grid.x_min) / dx).ceil() as usize).min(grid.n_cells);
            for (i, v) in values.iter_mut().enumerate().take(last).skip(first) {
                let overlap = hi.min(grid.edge(i + 1)) - lo.max(grid.edge(i));
                if overlap > 0.0 {
                    *v += height * overlap / dx;
                }
            }
        }
        GridDensity::new(grid, values)
    };
    let entropy_at = |theta: f64| -> Result<f64> { Ok(build(theta)?.entropy(consts)) };

    let (mut lo, mut hi) = (theta_lo.ln(), theta_hi.ln());
    let (s_lo, s_hi) = (entropy_at(theta_lo)?, entropy_at(theta_hi)?);
    if !(s_lo <= s_a && s_a <= s_hi) {
        return Err(EngineError::Unreachable(format!(
            "entropy {s_a} outside the range [{s_lo}, {s_hi}] reachable with {n_spikes} blocks"
        )));
    }
    let tol = 1e-4 * consts.k_b;
    let mut theta = theta_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        theta = mid.exp();
        let s = entropy_at(theta)?;
        if (s - s_a).abs() < tol {
            break;
        }
        if s < s_a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let density = build(theta)?;
    let s = density.entropy(consts);
    if (s - s_a).abs() >= tol {
        return Err(EngineError::NonConvergence {
            iterations: 200,
            residual: (s - s_a).abs(),
        });
    }
    Ok(DiracTrain {
        n_spikes,
        w2: w2_grid(&density, rho_b, DEFAULT_QUANTILE_NODES)?,
        entropy: s,
        theta,
        density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn mixture_keeps_variance() {
        for &n in &[4usize, 16, 64] {
            let grid = Grid::symmetric(3.0, 8 * 6 * n).unwrap();
            let mu = mixture_density(n, 1.0, grid).unwrap();
            let (m, v) = mu.moments();
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9, "n {n} var {v}");
        }
        let coarse = Grid::symmetric(3.0, 100).unwrap();
        assert!(matches!(
            mixture_density(64, 1.0, coarse),
            Err(EngineError::Resolution(_))
        ));
        assert!(mixture_density(1, 1.0, coarse).is_err());
    }

    #[test]
    fn mixture_power_grows_without_bound() {
        let b = GaussianState::from_std(1.5).unwrap();
        let pts: Vec<_> = [4usize, 16, 64, 256]
            .iter()
            .map(|&n| mixture_sequence_power(n, 1.0, &b, 2.0, 1.0, 8.0, &c()).unwrap())
            .collect();
        for w in pts.windows(2) {
            assert!(w[1].value > w[0].value);
        }
        assert!(pts.iter().all(|p| p.satisfies_bound()), "{pts:?}");
        let mut buf = Vec::new();
        write_probe_csv(&pts, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("n,value,bound\n4,"));
    }

    #[test]
    fn mixture_difference_bound() {
        let b = GaussianState::from_std(1.5).unwrap();
        let (t, dt) = (8.0, 1.0);
        let g10 = mixture_sequence_power(10, 1.0, &b, 2.0, 1.0, t, &c()).unwrap();
        let g100 = mixture_sequence_power(100, 1.0, &b, 2.0, 1.0, t, &c()).unwrap();
        let lower = dt / t * 10f64.ln() - 8.0 * 1.5 / (t * t) * (0.1 - 0.01);
        assert!(g100.value - g10.value >= lower - 0.05 * lower.abs());
    }

    #[test]
    fn dirac_train_hits_entropy_and_shrinks() {
        let grid = Grid::symmetric(8.0, 8192).unwrap();
        let b = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
        let s_a = b.entropy(&c()) - 1.0;
        let mut last = f64::INFINITY;
        for &n in &[8usize, 16, 32, 64] {
            let t = dirac_train_infimum(&b, s_a, n, &c()).unwrap();
            assert!((t.entropy - s_a).abs() < 1e-3);
            assert!(t.w2 < last, "n {n} w2 {}", t.w2);
            last = t.w2;
        }
        assert!(dirac_train_infimum(&b, s_a + 2.0, 8, &c()).is_err());
    }

    #[test]
    fn unreachable_entropy() {
        let grid = Grid::symmetric(8.0, 256).unwrap();
        let b = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
        let err = dirac_train_infimum(&b, b.entropy(&c()) - 10.0, 8, &c()).unwrap_err();
        assert!(matches!(err, EngineError::Unreachable(_)), "{err}");
    }
}
