//! Wasserstein-2 geometry of 1-D densities.
//!
//! In one dimension the optimal coupling is the comonotone one, so `W2` is
//! the L² distance between quantile functions and the optimal map is the
//! monotone rearrangement `T = Q_b ∘ F_a`. Quantiles of grid densities come
//! from the piecewise-linear cumulative mass (cell-constant density).

use rayon::prelude::*;

use crate::error::{EngineError, Result};
use crate::statespace::{GaussianState, Grid, GridDensity, State};

/// Smallest admissible number of quantile nodes.
pub const MIN_QUANTILE_NODES: usize = 16;

/// Default number of quantile nodes for distance evaluations.
pub const DEFAULT_QUANTILE_NODES: usize = 16384;

/// Cumulative mass of a grid density, accumulated from both ends so that
/// either tail keeps full relative precision.
#[derive(Debug, Clone)]
pub struct Cdf {
    grid: Grid,
    cell_mass: Vec<f64>,
    /// `lower[i]`: mass of cells `0..i`.
    lower: Vec<f64>,
    /// `upper[i]`: mass of cells `i..n`.
    upper: Vec<f64>,
}

impl Cdf {
    pub fn new(rho: &GridDensity) -> Self {
        let dx = rho.dx();
        let n = rho.n_cells();
        let cell_mass: Vec<f64> = rho.values().iter().map(|v| v * dx).collect();
        let mut lower = vec![0.0; n + 1];
        for i in 0..n {
            lower[i + 1] = lower[i] + cell_mass[i];
        }
        let mut upper = vec![0.0; n + 1];
        for i in (0..n).rev() {
            upper[i] = upper[i + 1] + cell_mass[i];
        }
        // Exact normalization of both sweeps.
        let total_l = lower[n];
        let total_u = upper[0];
        lower.iter_mut().for_each(|v| *v /= total_l);
        upper.iter_mut().for_each(|v| *v /= total_u);
        let cell_mass = cell_mass.into_iter().map(|m| m / total_l).collect();
        Self {
            grid: *rho.grid(),
            cell_mass,
            lower,
            upper,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Mass to the left of `x`.
    pub fn lower_mass(&self, x: f64) -> f64 {
        let (i, frac) = match self.locate(x) {
            Located::Below => return 0.0,
            Located::Above => return 1.0,
            Located::In(i, frac) => (i, frac),
        };
        self.lower[i] + frac * self.cell_mass[i]
    }

    /// Mass to the right of `x`.
    pub fn upper_mass(&self, x: f64) -> f64 {
        let (i, frac) = match self.locate(x) {
            Located::Below => return 1.0,
            Located::Above => return 0.0,
            Located::In(i, frac) => (i, frac),
        };
        self.upper[i + 1] + (1.0 - frac) * self.cell_mass[i]
    }

    fn locate(&self, x: f64) -> Located {
        let g = &self.grid;
        if x <= g.x_min {
            return Located::Below;
        }
        if x >= g.x_max {
            return Located::Above;
        }
        let s = (x - g.x_min) / g.dx();
        let i = (s.floor() as usize).min(g.n_cells - 1);
        Located::In(i, s - i as f64)
    }

    /// Position where the mass to the left equals `m`.
    pub fn position_at_lower(&self, m: f64) -> f64 {
        let n = self.grid.n_cells;
        if m <= 0.0 {
            let first = self.cell_mass.iter().position(|&c| c > 0.0).unwrap_or(0);
            return self.grid.edge(first);
        }
        if m >= 1.0 {
            return self.position_at_upper(0.0);
        }
        // Last edge index with lower[i] <= m.
        let i = self
            .lower
            .partition_point(|&v| v <= m)
            .saturating_sub(1)
            .min(n - 1);
        let c = self.cell_mass[i];
        let frac = if c > 0.0 {
            ((m - self.lower[i]) / c).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.grid.edge(i) + frac * self.grid.dx()
    }

    /// Position where the mass to the right equals `m`.
    pub fn position_at_upper(&self, m: f64) -> f64 {
        let n = self.grid.n_cells;
        if m <= 0.0 {
            let last = self
                .cell_mass
                .iter()
                .rposition(|&c| c > 0.0)
                .unwrap_or(n - 1);
            return self.grid.edge(last + 1);
        }
        if m >= 1.0 {
            return self.position_at_lower(0.0);
        }
        // `upper` is non-increasing: first edge index with upper[i] <= m.
        let k = self.upper.partition_point(|&v| v > m).clamp(1, n);
        let i = k - 1;
        let c = self.cell_mass[i];
        let frac = if c > 0.0 {
            ((m - self.upper[k]) / c).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.grid.edge(k) - frac * self.grid.dx()
    }

    /// Quantile `Q(u)`, resolved from whichever tail is closer.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.5 {
            self.position_at_lower(u)
        } else {
            self.position_at_upper(1.0 - u)
        }
    }

    /// `Q_other(F_self(y))`, evaluated tail-aware.
    pub fn rearrange_into(&self, other: &Cdf, y: f64) -> f64 {
        let lo = self.lower_mass(y);
        if lo <= 0.5 {
            other.position_at_lower(lo)
        } else {
            other.position_at_upper(self.upper_mass(y))
        }
    }
}

enum Located {
    Below,
    Above,
    In(usize, f64),
}

/// Quantile values on a set of probability nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    pub u_nodes: Vec<f64>,
    pub q_values: Vec<f64>,
}

/// Midpoints of `n` uniform bins of `(0, 1)`.
pub fn midpoint_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

impl QuantileFunction {
    pub fn new(u_nodes: Vec<f64>, q_values: Vec<f64>) -> Result<Self> {
        if u_nodes.len() != q_values.len() || u_nodes.is_empty() {
            return Err(EngineError::param("q_values", "length must match u_nodes"));
        }
        if u_nodes.windows(2).any(|w| w[1] <= w[0])
            || u_nodes[0] <= 0.0
            || *u_nodes.last().unwrap() >= 1.0
        {
            return Err(EngineError::param(
                "u_nodes",
                "must be strictly increasing inside (0, 1)",
            ));
        }
        if q_values.windows(2).any(|w| w[1] < w[0]) {
            return Err(EngineError::param(
                "q_values",
                "quantiles must be non-decreasing",
            ));
        }
        Ok(Self { u_nodes, q_values })
    }

    pub fn of_grid(rho: &GridDensity, n_u: usize) -> Result<Self> {
        check_nodes(n_u)?;
        let cdf = Cdf::new(rho);
        let u_nodes = midpoint_nodes(n_u);
        let q_values = u_nodes.iter().map(|&u| cdf.quantile(u)).collect();
        Ok(Self { u_nodes, q_values })
    }

    pub fn of_gaussian(g: &GaussianState, n_u: usize) -> Result<Self> {
        check_nodes(n_u)?;
        let u_nodes = midpoint_nodes(n_u);
        let q_values = u_nodes.iter().map(|&u| g.quantile(u)).collect();
        Ok(Self { u_nodes, q_values })
    }

    pub fn of_state(s: &State, n_u: usize) -> Result<Self> {
        match s {
            State::Gaussian(g) => Self::of_gaussian(g, n_u),
            State::Grid(d) => Self::of_grid(d, n_u),
        }
    }

    pub fn len(&self) -> usize {
        self.u_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_nodes.is_empty()
    }

    /// Midpoint-rule `W2` against another quantile function on the same
    /// uniform midpoint nodes.
    pub fn w2(&self, other: &QuantileFunction) -> Result<f64> {
        if self.len() != other.len() {
            return Err(EngineError::param("n_u", "quantile node counts differ"));
        }
        let n = self.len() as f64;
        let s: f64 = self
            .q_values
            .iter()
            .zip(&other.q_values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((s / n).sqrt())
    }
}

fn check_nodes(n_u: usize) -> Result<()> {
    if n_u < MIN_QUANTILE_NODES {
        return Err(EngineError::param(
            "n_u",
            format!("{n_u} quantile nodes, need at least {MIN_QUANTILE_NODES}"),
        ));
    }
    Ok(())
}

/// Closed-form `W2` between scalar Gaussians.
pub fn w2_gaussian(a: &GaussianState, b: &GaussianState) -> f64 {
    let ds = a.std_dev() - b.std_dev();
    let dm = a.mean - b.mean;
    (ds * ds + dm * dm).sqrt()
}

/// `W2` between grid densities by midpoint quadrature on `n_u` quantile nodes.
pub fn w2_grid(a: &GridDensity, b: &GridDensity, n_u: usize) -> Result<f64> {
    QuantileFunction::of_grid(a, n_u)?.w2(&QuantileFunction::of_grid(b, n_u)?)
}

/// `W2` between arbitrary states; closed form when both are Gaussian.
pub fn w2_states(a: &State, b: &State, n_u: usize) -> Result<f64> {
    if let (State::Gaussian(ga), State::Gaussian(gb)) = (a, b) {
        return Ok(w2_gaussian(ga, gb));
    }
    QuantileFunction::of_state(a, n_u)?.w2(&QuantileFunction::of_state(b, n_u)?)
}

/// Pairwise `W2` for a batch of pairs, evaluated in parallel.
pub fn w2_batch(pairs: &[(GridDensity, GridDensity)], n_u: usize) -> Result<Vec<f64>> {
    pairs.par_iter().map(|(a, b)| w2_grid(a, b, n_u)).collect()
}

/// The monotone rearrangement `T = Q_b ∘ F_a`.
#[derive(Debug, Clone)]
pub struct OptimalMap {
    source: Cdf,
    target: Cdf,
}

impl OptimalMap {
    pub fn new(a: &GridDensity, b: &GridDensity) -> Self {
        Self {
            source: Cdf::new(a),
            target: Cdf::new(b),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.source.rearrange_into(&self.target, x)
    }

    /// The inverse map `Q_a ∘ F_b`.
    pub fn eval_inverse(&self, y: f64) -> f64 {
        self.target.rearrange_into(&self.source, y)
    }

    /// Map values at the source cell centers.
    pub fn on_source_centers(&self) -> Vec<f64> {
        let g = self.source.grid();
        (0..g.n_cells).map(|i| self.eval(g.center(i))).collect()
    }
}

pub fn optimal_map(a: &GridDensity, b: &GridDensity) -> OptimalMap {
    OptimalMap::new(a, b)
}

/// Constant-speed displacement interpolation between two grid densities.
///
/// Each source cell center `y` is carried to `x_t = (1−t)y + t T(y)` with
/// density `ρ_a(y) / ((1−t) + t T'(y))`, where `T'(y) = ρ_a(y)/ρ_b(T(y))`;
/// target cell centers are pulled back through `T⁻¹` and carried the same
/// way. The transported samples are interpolated (log-linearly) onto the
/// output grid and renormalized.
#[derive(Debug, Clone)]
pub struct DisplacementInterpolation {
    output: Grid,
    source_x: Vec<f64>,
    target_x: Vec<f64>,
    source_rho: Vec<f64>,
    target_rho: Vec<f64>,
}

impl DisplacementInterpolation {
    pub fn new(a: &GridDensity, b: &GridDensity) -> Self {
        let output = union_grid(a.grid(), b.grid(), a.n_cells());
        Self::with_output_grid(a, b, output)
    }

    pub fn with_output_grid(a: &GridDensity, b: &GridDensity, output: Grid) -> Self {
        let map = OptimalMap::new(a, b);
        // Pairs `(y, T(y), ρ_a(y), ρ_b(T(y)))` from both grids: target cells
        // pulled back through `T⁻¹` sample the regions that source cells
        // jump over (and vice versa), e.g. gaps between separated modes.
        let mut pairs = Vec::with_capacity(a.n_cells() + b.n_cells());
        let (ga, gb) = (a.grid(), b.grid());
        for (i, &ra) in a.values().iter().enumerate() {
            if ra > 0.0 {
                let y = ga.center(i);
                let ty = map.eval(y);
                pairs.push((y, ty, ra, b.density_at(ty)));
            }
        }
        for (i, &rb) in b.values().iter().enumerate() {
            if rb > 0.0 {
                let z = gb.center(i);
                let y = map.eval_inverse(z);
                pairs.push((y, z, a.density_at(y), rb));
            }
        }
        // `y + T(y)` increases strictly along the monotone graph of `T`.
        pairs.sort_by(|p, q| (p.0 + p.1).total_cmp(&(q.0 + q.1)));
        Self {
            output,
            source_x: pairs.iter().map(|p| p.0).collect(),
            target_x: pairs.iter().map(|p| p.1).collect(),
            source_rho: pairs.iter().map(|p| p.2).collect(),
            target_rho: pairs.iter().map(|p| p.3).collect(),
        }
    }

    pub fn output_grid(&self) -> &Grid {
        &self.output
    }

    /// Density at fraction `t ∈ [0, 1]` of the geodesic.
    pub fn at(&self, t: f64) -> Result<GridDensity> {
        if !(0.0..=1.0).contains(&t) {
            return Err(EngineError::param("t", "must lie in [0, 1]"));
        }
        let n = self.source_x.len();
        let mut xs = Vec::with_capacity(n);
        let mut rs = Vec::with_capacity(n);
        for j in 0..n {
            let x = (1.0 - t) * self.source_x[j] + t * self.target_x[j];
            let mut inv = 0.0;
            if t < 1.0 {
                inv += (1.0 - t) / self.source_rho[j];
            }
            if t > 0.0 {
                inv += if self.target_rho[j] > 0.0 {
                    t / self.target_rho[j]
                } else {
                    f64::INFINITY
                };
            }
            xs.push(x);
            rs.push(if inv.is_finite() { 1.0 / inv } else { 0.0 });
        }
        let values = resample_log_linear(&xs, &rs, &self.output);
        GridDensity::new(self.output, values)
    }

    /// Velocity of the interpolation at fraction `s`, per unit of the
    /// parameter: `T(y) − y` at the transported positions.
    pub fn velocity_samples(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        let xs = self
            .source_x
            .iter()
            .zip(&self.target_x)
            .map(|(y, ty)| (1.0 - s) * y + s * ty)
            .collect();
        let vs = self
            .source_x
            .iter()
            .zip(&self.target_x)
            .map(|(y, ty)| ty - y)
            .collect();
        (xs, vs)
    }
}

fn union_grid(a: &Grid, b: &Grid, n_cells: usize) -> Grid {
    if a.same_as(b) {
        return *a;
    }
    Grid {
        x_min: a.x_min.min(b.x_min),
        x_max: a.x_max.max(b.x_max),
        n_cells,
    }
}

/// Interpolates `log ρ` of monotone samples onto the centers of `grid`.
/// Cells outside the sampled range get zero.
pub(crate) fn resample_log_linear(xs: &[f64], rs: &[f64], grid: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; grid.n_cells];
    if xs.is_empty() {
        return out;
    }
    let mut j = 0usize;
    for (i, o) in out.iter_mut().enumerate() {
        let c = grid.center(i);
        if c < xs[0] || c > xs[xs.len() - 1] {
            continue;
        }
        while j + 1 < xs.len() && xs[j + 1] < c {
            j += 1;
        }
        if j + 1 >= xs.len() {
            *o = rs[j];
            continue;
        }
        // Skip coincident samples.
        let mut k = j + 1;
        while k + 1 < xs.len() && xs[k] <= xs[j] {
            k += 1;
        }
        let span = xs[k] - xs[j];
        let w = if span > 0.0 {
            ((c - xs[j]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (rs[j], rs[k]);
        *o = if a > 0.0 && b > 0.0 {
            (a.ln() * (1.0 - w) + b.ln() * w).exp()
        } else {
            a * (1.0 - w) + b * w
        };
    }
    out
}

pub fn displacement_interpolate(a: &GridDensity, b: &GridDensity, t: f64) -> Result<GridDensity> {
    DisplacementInterpolation::new(a, b).at(t)
}

/// Discrete `W2` length of a path of densities: the sum of chord distances.
pub fn path_length(path: &[GridDensity], n_u: usize) -> Result<f64> {
    if path.len() < 2 {
        return Err(EngineError::param("path", "needs at least two snapshots"));
    }
    let qs = path
        .par_iter()
        .map(|d| QuantileFunction::of_grid(d, n_u))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for w in qs.windows(2) {
        total += w[0].w2(&w[1])?;
    }
    Ok(total)
}
