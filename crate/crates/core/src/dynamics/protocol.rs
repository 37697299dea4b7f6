use std::fmt;
use std::sync::Arc;

use crate::error::{EngineError, Result};
use crate::statespace::Grid;

/// A time-dependent potential together with its bath temperature schedule.
pub trait Drive: Sync {
    fn potential(&self, t: f64, x: f64) -> f64;
    fn gradient(&self, t: f64, x: f64) -> f64;
    fn temperature(&self, t: f64) -> f64;
    fn max_temperature(&self) -> f64;
    /// Time span `(start, end)` the drive is defined on.
    fn span(&self) -> (f64, f64);
    /// Spatial sampling step, for drives sampled on a grid.
    fn spatial_step(&self) -> Option<f64> {
        None
    }
    /// Smallest spacing of the time grid, for drives sampled in time.
    fn time_step(&self) -> Option<f64> {
        None
    }
}

type StiffnessFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `U(t, x) = a(t) x² / 2` at constant temperature.
#[derive(Clone)]
pub struct QuadraticProtocol {
    stiffness: StiffnessFn,
    temperature: f64,
    span: (f64, f64),
}

impl fmt::Debug for QuadraticProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticProtocol")
            .field("temperature", &self.temperature)
            .field("span", &self.span)
            .finish()
    }
}

impl QuadraticProtocol {
    pub fn from_fn<F>(stiffness: F, temperature: f64, duration: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(temperature > 0.0) {
            return Err(EngineError::param("temperature", "must be positive"));
        }
        if !(duration > 0.0) {
            return Err(EngineError::param("duration", "must be positive"));
        }
        Ok(Self {
            stiffness: Arc::new(stiffness),
            temperature,
            span: (0.0, duration),
        })
    }

    pub fn constant(stiffness: f64, temperature: f64, duration: f64) -> Result<Self> {
        Self::from_fn(move |_| stiffness, temperature, duration)
    }

    /// Linear stiffness ramp from `a0` at `t = 0` to `a1` at `t = duration`.
    pub fn linear_ramp(a0: f64, a1: f64, temperature: f64, duration: f64) -> Result<Self> {
        Self::from_fn(
            move |t| a0 + (a1 - a0) * (t / duration).clamp(0.0, 1.0),
            temperature,
            duration,
        )
    }

    pub fn stiffness(&self, t: f64) -> f64 {
        (self.stiffness)(t)
    }
}

impl Drive for QuadraticProtocol {
    fn potential(&self, t: f64, x: f64) -> f64 {
        0.5 * self.stiffness(t) * x * x
    }

    fn gradient(&self, t: f64, x: f64) -> f64 {
        self.stiffness(t) * x
    }

    fn temperature(&self, _t: f64) -> f64 {
        self.temperature
    }

    fn max_temperature(&self) -> f64 {
        self.temperature
    }

    fn span(&self) -> (f64, f64) {
        self.span
    }
}

/// A potential sampled on `t_grid × space grid`, piecewise constant in time
/// (slice `k` acts on `[t_k, t_{k+1})`) and linearly interpolated in space.
#[derive(Debug, Clone)]
pub struct Protocol {
    grid: Grid,
    t_grid: Vec<f64>,
    potential: Vec<Vec<f64>>,
    temperature: Vec<f64>,
}

impl Protocol {
    pub fn new(
        grid: Grid,
        t_grid: Vec<f64>,
        potential: Vec<Vec<f64>>,
        temperature: Vec<f64>,
    ) -> Result<Self> {
        grid.validate()?;
        if t_grid.len() < 2 {
            return Err(EngineError::param("t_grid", "needs at least two times"));
        }
        if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EngineError::param("t_grid", "must be strictly increasing"));
        }
        if potential.len() != t_grid.len() || temperature.len() != t_grid.len() {
            return Err(EngineError::param(
                "potential",
                "one slice and one temperature per time point required",
            ));
        }
        if temperature.iter().any(|t| !(*t > 0.0)) {
            return Err(EngineError::param("temperature", "must be positive"));
        }
        for (k, slice) in potential.iter().enumerate() {
            if slice.len() != grid.n_cells {
                return Err(EngineError::GridMismatch(format!(
                    "slice {k} has {} samples for {} cells",
                    slice.len(),
                    grid.n_cells
                )));
            }
            if slice.iter().any(|u| !u.is_finite()) {
                return Err(EngineError::param(
                    "potential",
                    format!("slice {k} is not finite"),
                ));
            }
        }
        Ok(Self {
            grid,
            t_grid,
            potential,
            temperature,
        })
    }

    /// Samples any drive on a grid at the given times.
    pub fn sample<D: Drive + ?Sized>(drive: &D, grid: Grid, t_grid: Vec<f64>) -> Result<Self> {
        let centers = grid.centers();
        let potential = t_grid
            .iter()
            .map(|&t| centers.iter().map(|&x| drive.potential(t, x)).collect())
            .collect();
        let temperature = t_grid.iter().map(|&t| drive.temperature(t)).collect();
        Self::new(grid, t_grid, potential, temperature)
    }

    /// A static potential held over `[0, duration]`.
    pub fn static_potential(
        grid: Grid,
        potential: Vec<f64>,
        temperature: f64,
        duration: f64,
    ) -> Result<Self> {
        Self::new(
            grid,
            vec![0.0, duration],
            vec![potential.clone(), potential],
            vec![temperature; 2],
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn n_slices(&self) -> usize {
        self.t_grid.len()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.potential[k]
    }

    pub fn slice_temperature(&self, k: usize) -> f64 {
        self.temperature[k]
    }

    /// Index of the slice active at time `t`.
    pub fn slice_index(&self, t: f64) -> usize {
        let tol = 1e-9 * (self.t_grid[self.t_grid.len() - 1] - self.t_grid[0]);
        self.t_grid
            .partition_point(|&tk| tk <= t + tol)
            .saturating_sub(1)
    }

    /// Potential slice active at time `t`.
    pub fn potential_at(&self, t: f64) -> &[f64] {
        self.slice(self.slice_index(t))
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let g = &self.grid;
        let s = (x - g.x_min) / g.dx() - 0.5;
        let i = if s <= 0.0 {
            0
        } else if s >= (g.n_cells - 1) as f64 {
            g.n_cells - 2
        } else {
            s.floor() as usize
        };
        (i, (x - g.center(i)) / g.dx())
    }

    fn interp(&self, values: &[f64], x: f64) -> f64 {
        let (i, w) = self.locate(x);
        values[i] + w * (values[i + 1] - values[i])
    }

    /// Central-difference gradient at cell `i` (one-sided at the ends).
    fn center_gradient(&self, values: &[f64], i: usize) -> f64 {
        let n = values.len();
        let (l, h) = (i.saturating_sub(1), (i + 1).min(n - 1));
        (values[h] - values[l]) / ((h - l) as f64 * self.grid.dx())
    }
}

impl Drive for Protocol {
    fn potential(&self, t: f64, x: f64) -> f64 {
        self.interp(self.potential_at(t), x)
    }

    fn gradient(&self, t: f64, x: f64) -> f64 {
        let u = self.potential_at(t);
        let (i, w) = self.locate(x);
        let (g0, g1) = (self.center_gradient(u, i), self.center_gradient(u, i + 1));
        g0 + w * (g1 - g0)
    }

    fn temperature(&self, t: f64) -> f64 {
        self.temperature[self.slice_index(t)]
    }

    fn max_temperature(&self) -> f64 {
        self.temperature.iter().cloned().fold(0.0, f64::max)
    }

    fn span(&self) -> (f64, f64) {
        (self.t_grid[0], self.t_grid[self.t_grid.len() - 1])
    }

    fn spatial_step(&self) -> Option<f64> {
        Some(self.grid.dx())
    }

    fn time_step(&self) -> Option<f64> {
        self.t_grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(None, |acc: Option<f64>, d| {
                Some(acc.map_or(d, |a| a.min(d)))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_protocol_interpolates_quadratic() {
        let grid = Grid::symmetric(5.0, 200).unwrap();
        let ramp = QuadraticProtocol::linear_ramp(1.0, 2.0, 1.0, 1.0).unwrap();
        let p = Protocol::sample(&ramp, grid, vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(p.slice_index(0.49), 0);
        assert_eq!(p.slice_index(0.5), 1);
        assert_eq!(p.slice_index(2.0), 2);
        let x = 1.013;
        assert!((p.potential(0.7, x) - ramp.potential(0.5, x)).abs() < 1e-3);
        assert!((p.gradient(0.7, x) - ramp.gradient(0.5, x)).abs() < 1e-9);
        assert_eq!(p.time_step(), Some(0.5));
    }

    #[test]
    fn protocol_validation() {
        let grid = Grid::symmetric(1.0, 8).unwrap();
        assert!(Protocol::new(grid, vec![0.0], vec![vec![0.0; 8]], vec![1.0]).is_err());
        assert!(Protocol::new(grid, vec![1.0, 0.0], vec![vec![0.0; 8]; 2], vec![1.0; 2]).is_err());
        assert!(
            Protocol::new(grid, vec![0.0, 1.0], vec![vec![0.0; 8]; 2], vec![1.0, 0.0]).is_err()
        );
        assert!(Protocol::new(grid, vec![0.0, 1.0], vec![vec![0.0; 7]; 2], vec![1.0; 2]).is_err());
        assert!(Protocol::new(
            grid,
            vec![0.0, 1.0],
            vec![vec![f64::NAN; 8]; 2],
            vec![1.0; 2]
        )
        .is_err());
    }
}
