//! First-order (LWR) macroscopic flow discretized with the cell transmission
//! scheme on a triangular fundamental diagram.

mod ctm;
mod fd;

pub use ctm::{cell_mean_speed, ctm_step, demand, supply, CtmFlows, MacroCell, MacroSegment};
pub use fd::{fd_flow, FundamentalDiagram};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MacroError {
    #[error("density {rho} outside [0, {jam}]")]
    DensityOutOfRange { rho: f64, jam: f64 },
    #[error("time step {dt} s violates the CFL bound for cell length {dx} m (max {max_dt} s)")]
    CflViolation { dt: f64, dx: f64, max_dt: f64 },
    #[error("invalid fundamental diagram: {0}")]
    InvalidDiagram(&'static str),
    #[error("negative boundary flow {0}")]
    NegativeBoundaryFlow(f64),
}
