//! Probability densities on a uniform 1-D grid, scalar Gaussian states, and
//! the thermodynamic functionals evaluated on them.
//!
//! All grid quadratures use the midpoint rule on uniform cells: cell `i`
//! covers `[x_min + i·dx, x_min + (i+1)·dx]` and carries the density value
//! at its center.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{EngineError, Result};

/// Minimum number of cells of a grid.
pub const MIN_CELLS: usize = 8;

/// Cells whose density falls below this value are skipped by the Fisher
/// information sum.
pub const FISHER_FLOOR: f64 = 1e-300;

/// Boltzmann constant and damping coefficient. Natural units by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    pub k_b: f64,
    pub gamma: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            k_b: 1.0,
            gamma: 1.0,
        }
    }
}

impl PhysicalConstants {
    pub fn new(k_b: f64, gamma: f64) -> Result<Self> {
        let c = Self { k_b, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_b > 0.0 && self.k_b.is_finite()) {
            return Err(EngineError::param("k_b", "must be strictly positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(EngineError::param("gamma", "must be strictly positive"));
        }
        Ok(())
    }
}

/// A uniform cell partition of `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        let g = Self {
            x_min,
            x_max,
            n_cells,
        };
        g.validate()?;
        Ok(g)
    }

    /// Symmetric grid `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n_cells: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_cells)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite()) || self.x_max <= self.x_min {
            return Err(EngineError::InvalidGrid(format!(
                "x_max ({}) must exceed x_min ({})",
                self.x_max, self.x_min
            )));
        }
        if self.n_cells < MIN_CELLS {
            return Err(EngineError::InvalidGrid(format!(
                "n_cells = {} is below the minimum of {MIN_CELLS}",
                self.n_cells
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    /// Center of cell `i`.
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    /// Left edge of cell `i` (`i == n_cells` gives `x_max`).
    #[inline]
    pub fn edge(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n_cells).map(|i| f(self.center(i))).collect()
    }

    /// Index of the cell whose center is closest to the middle of the grid.
    pub fn mid_index(&self) -> usize {
        self.n_cells / 2
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n_cells == other.n_cells
            && (self.x_min - other.x_min).abs() <= 1e-12 * (1.0 + self.x_min.abs())
            && (self.x_max - other.x_max).abs() <= 1e-12 * (1.0 + self.x_max.abs())
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(EngineError::GridMismatch(format!(
                "[{}, {}]x{} vs [{}, {}]x{}",
                self.x_min, self.x_max, self.n_cells, other.x_min, other.x_max, other.n_cells
            )))
        }
    }
}

/// A normalized probability density sampled at the cell centers of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    #[serde(flatten)]
    grid: Grid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Builds a density from raw non-negative cell values, renormalizing the
    /// midpoint mass to one.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.n_cells {
            return Err(EngineError::InvalidGrid(format!(
                "{} values for {} cells",
                values.len(),
                grid.n_cells
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(EngineError::InvalidGrid(format!(
                "cell {i} has invalid density {}",
                values[i]
            )));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.dx();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(EngineError::InvalidGrid("density has no mass".into()));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(Self { grid, values })
    }

    /// Like [`GridDensity::new`], but rejects inputs whose mass deviates from
    /// one by more than `mass_tol` before renormalization.
    pub fn with_mass_tol(grid: Grid, values: Vec<f64>, mass_tol: f64) -> Result<Self> {
        grid.validate()?;
        let mass: f64 = values.iter().sum::<f64>() * grid.dx();
        if (mass - 1.0).abs() > mass_tol {
            return Err(EngineError::InvalidGrid(format!(
                "mass {mass} is outside 1 ± {mass_tol}"
            )));
        }
        Self::new(grid, values)
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Result<Self> {
        grid.validate()?;
        Self::new(grid, grid.sample(f))
    }

    /// Grid sample of `N(mean, variance)`.
    pub fn gaussian(grid: Grid, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(EngineError::param("variance", "must be positive"));
        }
        Self::from_fn(grid, |x| (-(x - mean).powi(2) / (2.0 * variance)).exp())
    }

    /// Uniform density on `[a, b]`, cells weighted by their overlap with the
    /// interval.
    pub fn uniform(grid: Grid, a: f64, b: f64) -> Result<Self> {
        let dx = grid.dx();
        let values = (0..grid.n_cells)
            .map(|i| {
                let lo = grid.edge(i).max(a);
                let hi = grid.edge(i + 1).min(b);
                ((hi - lo) / dx).max(0.0)
            })
            .collect();
        Self::new(grid, values)
    }

    /// Gibbs state `exp(-U/(k_B T)) / Z` of a potential slice.
    pub fn gibbs(
        grid: Grid,
        potential: &[f64],
        temperature: f64,
        consts: &PhysicalConstants,
    ) -> Result<Self> {
        if potential.len() != grid.n_cells {
            return Err(EngineError::GridMismatch(format!(
                "potential has {} samples for {} cells",
                potential.len(),
                grid.n_cells
            )));
        }
        let beta = 1.0 / (consts.k_b * temperature);
        let u_min = potential.iter().cloned().fold(f64::INFINITY, f64::min);
        Self::new(
            grid,
            potential
                .iter()
                .map(|u| (-(u - u_min) * beta).exp())
                .collect(),
        )
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.grid.dx()
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.grid.n_cells
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Point evaluation between cell centers. Interpolates `log ρ` linearly
    /// where both neighbors are positive, `ρ` linearly otherwise; constant
    /// in the outer half cells, zero outside the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x < g.x_min || x > g.x_max {
            return 0.0;
        }
        let s = (x - g.x_min) / g.dx() - 0.5;
        if s <= 0.0 {
            return self.values[0];
        }
        let last = g.n_cells - 1;
        if s >= last as f64 {
            return self.values[last];
        }
        let i = s.floor() as usize;
        let w = s - i as f64;
        let (a, b) = (self.values[i], self.values[i + 1]);
        if a > 0.0 && b > 0.0 {
            (a.ln() * (1.0 - w) + b.ln() * w).exp()
        } else {
            a * (1.0 - w) + b * w
        }
    }

    /// L1 distance to another density on the same grid.
    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.dx())
    }

    /// Writes the density as CSV with header `x,rho`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "rho"])?;
        for (i, v) in self.values.iter().enumerate() {
            wtr.write_record(&[self.grid.center(i).to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: GridDensity = serde_json::from_str(s)?;
        Self::new(raw.grid, raw.values)
    }
}

/// Scalar Gaussian state `N(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub variance: f64,
    #[serde(default)]
    pub mean: f64,
}

impl GaussianState {
    pub fn new(variance: f64) -> Result<Self> {
        Self::with_mean(variance, 0.0)
    }

    pub fn with_mean(variance: f64, mean: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(EngineError::param("variance", "must be strictly positive"));
        }
        Ok(Self { variance, mean })
    }

    pub fn from_std(sigma: f64) -> Result<Self> {
        Self::new(sigma * sigma)
    }

    #[inline]
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (-(x - self.mean).powi(2) / (2.0 * self.variance)).exp() / (2.0 * PI * self.variance).sqrt()
    }

    /// Inverse cumulative distribution function.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = Normal::new(self.mean, self.std_dev()).expect("validated Gaussian");
        n.inverse_cdf(u)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let n = Normal::new(self.mean, self.std_dev()).expect("validated Gaussian");
        n.cdf(x)
    }

    /// Sample on a grid.
    pub fn to_grid(&self, grid: Grid) -> Result<GridDensity> {
        GridDensity::gaussian(grid, self.mean, self.variance)
    }
}

/// The density functionals shared by grid and Gaussian states.
pub trait DensityFunctionals {
    /// `-k_B ∫ ρ log ρ dx`.
    fn entropy(&self, consts: &PhysicalConstants) -> f64;
    /// `∫_{ρ>0} |ρ'|²/ρ dx`.
    fn fisher_information(&self) -> f64;
    /// Mean and variance.
    fn moments(&self) -> (f64, f64);
}

impl DensityFunctionals for GridDensity {
    fn entropy(&self, consts: &PhysicalConstants) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum();
        -consts.k_b * s * self.dx()
    }

    fn fisher_information(&self) -> f64 {
        let dx = self.dx();
        let v = &self.values;
        let mut acc = 0.0;
        for i in 1..v.len() - 1 {
            if v[i] < FISHER_FLOOR {
                continue;
            }
            let grad = (v[i + 1] - v[i - 1]) / (2.0 * dx);
            acc += grad * grad / v[i];
        }
        acc * dx
    }

    fn moments(&self) -> (f64, f64) {
        let dx = self.dx();
        let mean: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.center(i) * v)
            .sum::<f64>()
            * dx;
        let var: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (self.grid.center(i) - mean).powi(2) * v)
            .sum::<f64>()
            * dx;
        (mean, var)
    }
}

impl DensityFunctionals for GaussianState {
    fn entropy(&self, consts: &PhysicalConstants) -> f64 {
        0.5 * consts.k_b * (1.0 + (2.0 * PI * self.variance).ln())
    }

    fn fisher_information(&self) -> f64 {
        1.0 / self.variance
    }

    fn moments(&self) -> (f64, f64) {
        (self.mean, self.variance)
    }
}

/// An endpoint state given either in closed form or on a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Gaussian(GaussianState),
    Grid(GridDensity),
}

impl State {
    pub fn as_grid(&self, grid: Grid) -> Result<GridDensity> {
        match self {
            State::Gaussian(g) => g.to_grid(grid),
            State::Grid(d) => Ok(d.clone()),
        }
    }

    pub fn grid(&self) -> Option<&Grid> {
        match self {
            State::Gaussian(_) => None,
            State::Grid(d) => Some(d.grid()),
        }
    }
}

impl DensityFunctionals for State {
    fn entropy(&self, consts: &PhysicalConstants) -> f64 {
        match self {
            State::Gaussian(g) => g.entropy(consts),
            State::Grid(d) => d.entropy(consts),
        }
    }

    fn fisher_information(&self) -> f64 {
        match self {
            State::Gaussian(g) => g.fisher_information(),
            State::Grid(d) => d.fisher_information(),
        }
    }

    fn moments(&self) -> (f64, f64) {
        match self {
            State::Gaussian(g) => g.moments(),
            State::Grid(d) => d.moments(),
        }
    }
}

impl From<GaussianState> for State {
    fn from(g: GaussianState) -> Self {
        State::Gaussian(g)
    }
}

impl From<GridDensity> for State {
    fn from(d: GridDensity) -> Self {
        State::Grid(d)
    }
}

pub fn entropy<D: DensityFunctionals + ?Sized>(rho: &D, consts: &PhysicalConstants) -> f64 {
    rho.entropy(consts)
}

pub fn fisher_information<D: DensityFunctionals + ?Sized>(rho: &D) -> f64 {
    rho.fisher_information()
}

pub fn moments<D: DensityFunctionals + ?Sized>(rho: &D) -> (f64, f64) {
    rho.moments()
}

/// `∑ U(x_i) ρ(x_i) Δx` for a potential sampled on the density's grid.
pub fn internal_energy(rho: &GridDensity, potential: &[f64]) -> Result<f64> {
    if potential.len() != rho.n_cells() {
        return Err(EngineError::GridMismatch(format!(
            "potential has {} samples for {} cells",
            potential.len(),
            rho.n_cells()
        )));
    }
    Ok(rho
        .values()
        .iter()
        .zip(potential)
        .map(|(r, u)| r * u)
        .sum::<f64>()
        * rho.dx())
}

/// `E(ρ, U) − T·S(ρ)`.
pub fn free_energy(
    rho: &GridDensity,
    potential: &[f64],
    temperature: f64,
    consts: &PhysicalConstants,
) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(EngineError::param("temperature", "must be positive"));
    }
    Ok(internal_energy(rho, potential)? - temperature * rho.entropy(consts))
}

/// Equilibrium free energy `−k_B T log √(2π k_B T / a)` of `U = a x²/2`.
pub fn quadratic_free_energy(stiffness: f64, temperature: f64, consts: &PhysicalConstants) -> f64 {
    let kt = consts.k_b * temperature;
    -kt * (2.0 * PI * kt / stiffness).sqrt().ln()
}
