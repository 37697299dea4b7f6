//! Experiment configuration. See `config-schema.md` for the file format.

use std::path::PathBuf;

use carnot_core::statespace::{Grid, PhysicalConstants};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Cycle,
    Jko,
    Bounds,
    Jarzynski,
    Sweep,
    Pathologies,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub constants: Constants,
    pub temperatures: Option<Temperatures>,
    pub grid: Option<GridSpec>,
    pub timing: Option<Timing>,
    pub cycle: Option<CycleSection>,
    pub jko: Option<JkoSection>,
    pub bounds: Option<BoundsSection>,
    pub jarzynski: Option<JarzynskiSection>,
    pub sweep: Option<SweepSection>,
    pub pathologies: Option<PathologiesSection>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    #[serde(default = "one")]
    pub k_b: f64,
    #[serde(default = "one")]
    pub gamma: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            k_b: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Temperatures {
    pub t_hot: f64,
    pub t_cold: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_width: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub t1: Option<f64>,
    pub t3: Option<f64>,
    pub t_cycle: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleModeName {
    #[default]
    Analytic,
    FokkerPlanck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSection {
    /// Gaussian end points (standard deviations) ...
    pub sigma_a: Option<f64>,
    pub sigma_b: Option<f64>,
    /// ... or the transport cost and entropy change directly.
    pub w2: Option<f64>,
    pub delta_s: Option<f64>,
    #[serde(default)]
    pub s_a: f64,
    #[serde(default)]
    pub mode: CycleModeName,
    #[serde(default = "default_slices")]
    pub slices_per_phase: usize,
}

fn default_slices() -> usize {
    400
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JkoSection {
    pub sigma_a: f64,
    #[serde(default = "default_jko_nodes")]
    pub n_nodes: usize,
    /// Extra solves from seeded random initializations (uniqueness probe).
    #[serde(default)]
    pub random_starts: usize,
}

fn default_jko_nodes() -> usize {
    16384
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub m: f64,
    #[serde(default = "default_n_sigma")]
    pub n_sigma: usize,
    #[serde(default = "default_n_lambda")]
    pub n_lambda: usize,
    #[serde(default = "default_finite_t")]
    pub finite_cycle_t: f64,
    #[serde(default = "default_finite_steps")]
    pub finite_cycle_steps: usize,
    /// Points per axis of the brute-force dimensionless search (0 skips it).
    #[serde(default)]
    pub grid_search_n: usize,
    #[serde(default)]
    pub grid_search_rounds: usize,
    /// Periods at which the hot isotherm is re-run through the FP solver.
    #[serde(default)]
    pub entropy_audit_t_cycle: Vec<f64>,
}

fn default_n_sigma() -> usize {
    401
}
fn default_n_lambda() -> usize {
    201
}
fn default_finite_t() -> f64 {
    0.01
}
fn default_finite_steps() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JarzynskiSection {
    pub temperature: f64,
    pub a0: f64,
    pub a1: f64,
    pub duration: f64,
    pub n_traj: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub sigma_a: f64,
    pub sigma_b_max: f64,
    pub n_sigma_b: usize,
    pub t_cycle_min: f64,
    pub t_cycle_max: f64,
    pub n_t_cycle: usize,
    /// Relative gap `(σ_b − σ_a)/σ_a` of the optimally timed tightness probe.
    #[serde(default = "default_tight_gap")]
    pub tightness_gap: f64,
}

fn default_tight_gap() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathologiesSection {
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub n_values: Vec<usize>,
    #[serde(default = "default_spikes")]
    pub dirac_spikes: usize,
    /// Target of the Dirac-train construction (defaults to `sigma_b`).
    pub dirac_sigma_b: Option<f64>,
    /// `S(ρ_b) − s_a` for the Dirac-train construction.
    #[serde(default = "one")]
    pub entropy_gap: f64,
    /// Targets at which the second-variation probe is evaluated.
    #[serde(default)]
    pub curvature_sigma_b: Vec<f64>,
    /// Period of the curvature probe (defaults to the timing period).
    pub curvature_t_cycle: Option<f64>,
}

fn default_spikes() -> usize {
    64
}

fn positive(name: &'static str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::invalid(
            name,
            format!("must be positive, got {v}"),
        ))
    }
}

fn at_least(name: &'static str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::invalid(
            name,
            format!("must be at least {min}, got {v}"),
        ))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn consts(&self) -> Result<PhysicalConstants, CliError> {
        Ok(PhysicalConstants::new(
            self.constants.k_b,
            self.constants.gamma,
        )?)
    }

    pub fn temperatures(&self) -> Result<Temperatures, CliError> {
        let t = self
            .temperatures
            .ok_or_else(|| CliError::invalid("temperatures", "table is required for this kind"))?;
        positive("t_cold", t.t_cold)?;
        if !(t.t_hot > t.t_cold && t.t_hot.is_finite()) {
            return Err(CliError::invalid("t_hot", "must exceed t_cold"));
        }
        Ok(t)
    }

    pub fn grid(&self) -> Result<Option<Grid>, CliError> {
        self.grid
            .map(|g| {
                positive("half_width", g.half_width)?;
                at_least("n_cells", g.n_cells, 2)?;
                Ok(Grid::symmetric(g.half_width, g.n_cells)?)
            })
            .transpose()
    }

    pub fn timing(&self) -> Timing {
        self.timing.unwrap_or_default()
    }

    /// The `t_cycle` entry, required by kinds that work at a fixed period.
    pub fn t_cycle(&self) -> Result<f64, CliError> {
        let t = self
            .timing()
            .t_cycle
            .ok_or_else(|| CliError::invalid("t_cycle", "is required for this kind"))?;
        positive("t_cycle", t)?;
        Ok(t)
    }

    fn section<'a, T>(&self, s: &'a Option<T>, name: &'static str) -> Result<&'a T, CliError> {
        s.as_ref()
            .ok_or_else(|| CliError::invalid(name, "table is required for this kind"))
    }

    pub fn cycle_section(&self) -> Result<&CycleSection, CliError> {
        self.section(&self.cycle, "cycle")
    }
    pub fn jko_section(&self) -> Result<&JkoSection, CliError> {
        self.section(&self.jko, "jko")
    }
    pub fn bounds_section(&self) -> Result<&BoundsSection, CliError> {
        self.section(&self.bounds, "bounds")
    }
    pub fn jarzynski_section(&self) -> Result<&JarzynskiSection, CliError> {
        self.section(&self.jarzynski, "jarzynski")
    }
    pub fn sweep_section(&self) -> Result<&SweepSection, CliError> {
        self.section(&self.sweep, "sweep")
    }
    pub fn pathologies_section(&self) -> Result<&PathologiesSection, CliError> {
        self.section(&self.pathologies, "pathologies")
    }

    /// Checks every field the selected kind reads.
    pub fn validate(&self) -> Result<(), CliError> {
        self.consts()?;
        self.grid()?;
        let tm = self.timing();
        for (name, v) in [("t1", tm.t1), ("t3", tm.t3), ("t_cycle", tm.t_cycle)] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        match self.kind {
            Kind::Cycle => {
                self.temperatures()?;
                let s = self.cycle_section()?;
                match (s.sigma_a, s.sigma_b, s.w2, s.delta_s) {
                    (Some(a), Some(b), None, None) => {
                        positive("sigma_a", a)?;
                        positive("sigma_b", b)?;
                    }
                    (None, None, Some(w), Some(ds)) => {
                        if !(w >= 0.0 && w.is_finite()) {
                            return Err(CliError::invalid("w2", "must be non-negative"));
                        }
                        if !ds.is_finite() {
                            return Err(CliError::invalid("delta_s", "must be finite"));
                        }
                        if s.mode == CycleModeName::FokkerPlanck {
                            return Err(CliError::invalid(
                                "mode",
                                "fokker_planck needs sigma_a and sigma_b",
                            ));
                        }
                    }
                    _ => {
                        return Err(CliError::invalid(
                            "cycle",
                            "give either sigma_a and sigma_b, or w2 and delta_s",
                        ))
                    }
                }
                at_least("slices_per_phase", s.slices_per_phase, 1)?;
                if tm.t1.is_some() != tm.t3.is_some() {
                    return Err(CliError::invalid("t1", "t1 and t3 must be given together"));
                }
            }
            Kind::Jko => {
                self.temperatures()?;
                self.t_cycle()?;
                let s = self.jko_section()?;
                positive("sigma_a", s.sigma_a)?;
                at_least("n_nodes", s.n_nodes, 16)?;
            }
            Kind::Bounds => {
                self.temperatures()?;
                let s = self.bounds_section()?;
                positive("m", s.m)?;
                at_least("n_sigma", s.n_sigma, 2)?;
                at_least("n_lambda", s.n_lambda, 2)?;
                positive("finite_cycle_t", s.finite_cycle_t)?;
                at_least("finite_cycle_steps", s.finite_cycle_steps, 1000)?;
                if s.grid_search_n > 0 {
                    at_least("grid_search_n", s.grid_search_n, 3)?;
                }
                for &t in &s.entropy_audit_t_cycle {
                    positive("entropy_audit_t_cycle", t)?;
                }
            }
            Kind::Jarzynski => {
                let s = self.jarzynski_section()?;
                positive("temperature", s.temperature)?;
                positive("a0", s.a0)?;
                positive("a1", s.a1)?;
                positive("duration", s.duration)?;
                positive("dt", s.dt)?;
                at_least("n_traj", s.n_traj, 2)?;
            }
            Kind::Sweep => {
                self.temperatures()?;
                let s = self.sweep_section()?;
                positive("sigma_a", s.sigma_a)?;
                positive("sigma_b_max", s.sigma_b_max)?;
                if s.sigma_b_max <= s.sigma_a {
                    return Err(CliError::invalid("sigma_b_max", "must exceed sigma_a"));
                }
                positive("t_cycle_min", s.t_cycle_min)?;
                if !(s.t_cycle_max >= s.t_cycle_min && s.t_cycle_max.is_finite()) {
                    return Err(CliError::invalid(
                        "t_cycle_max",
                        "must not be below t_cycle_min",
                    ));
                }
                at_least("n_sigma_b", s.n_sigma_b, 1)?;
                at_least("n_t_cycle", s.n_t_cycle, 1)?;
                positive("tightness_gap", s.tightness_gap)?;
            }
            Kind::Pathologies => {
                self.temperatures()?;
                self.t_cycle()?;
                let s = self.pathologies_section()?;
                positive("sigma_a", s.sigma_a)?;
                positive("sigma_b", s.sigma_b)?;
                if s.n_values.len() < 2 {
                    return Err(CliError::invalid("n_values", "needs at least two entries"));
                }
                at_least("dirac_spikes", s.dirac_spikes, 1)?;
                positive("entropy_gap", s.entropy_gap)?;
                if let Some(sb) = s.dirac_sigma_b {
                    positive("dirac_sigma_b", sb)?;
                }
                for &sb in &s.curvature_sigma_b {
                    positive("curvature_sigma_b", sb)?;
                }
                if let Some(t) = s.curvature_t_cycle {
                    positive("curvature_t_cycle", t)?;
                }
            }
        }
        Ok(())
    }
}
