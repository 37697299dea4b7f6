//! Time evolution of ensembles: Euler–Maruyama Monte Carlo with per-step
//! heat/work bookkeeping, an explicit finite-volume Fokker–Planck solver,
//! geodesic protocol construction and the dissipation audit.

mod fokker_planck;
mod geodesic;
mod langevin;
mod protocol;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use fokker_planck::{fokker_planck_evolve, max_stable_dt, FpRun, Snapshot};
pub use geodesic::{
    dissipation_audit, geodesic_protocol, protocol_from_path, velocity_field, DissipationAudit,
};
pub use langevin::{
    jarzynski_estimate, simulate_ensemble, write_work_csv, EnsembleRun, EnsembleState,
    JarzynskiEstimate,
};
pub use protocol::{Drive, Protocol, QuadraticProtocol};

/// Ensemble-averaged energy balance of a transition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub work: f64,
    pub heat: f64,
    pub delta_internal: f64,
    /// `γ ∫‖v‖²_ρ dt` where the solver can measure it.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dissipation: Option<f64>,
}

impl EnergyLedger {
    /// `ΔE − W − Q`.
    pub fn first_law_residual(&self) -> f64 {
        self.delta_internal - self.work - self.heat
    }
}

/// Cumulative ledger at one recorded time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerPoint {
    pub t: f64,
    pub work: f64,
    pub heat: f64,
    pub internal: f64,
}

/// Writes a ledger time series as `t,work,heat,internal`.
pub fn write_ledger_csv<W: Write>(series: &[LedgerPoint], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for p in series {
        wr.serialize(p)?;
    }
    wr.flush()?;
    Ok(())
}
