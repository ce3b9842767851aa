use serde::{Deserialize, Serialize};

use crate::scalar::Real;

use super::{FundamentalDiagram, MacroError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroCell<T = f64> {
    /// Cell length (m).
    pub dx: T,
    pub lanes: u32,
    /// Density per lane (veh/m/lane).
    pub rho: T,
    /// Local speed restriction applied on top of the segment diagram.
    pub speed_cap: Option<T>,
}

impl<T: Real> MacroCell<T> {
    pub fn new(dx: T, lanes: u32, rho: T) -> Self {
        Self { dx, lanes, rho, speed_cap: None }
    }

    pub fn lanes_t(&self) -> T {
        T::from_u32(self.lanes).expect("lane count fits")
    }

    /// Vehicles held by the cell.
    pub fn mass(&self) -> T {
        self.rho * self.dx * self.lanes_t()
    }

    /// The diagram in force in this cell.
    pub fn diagram(&self, fd: &FundamentalDiagram<T>) -> FundamentalDiagram<T> {
        match self.speed_cap {
            Some(cap) => fd.capped(cap),
            None => *fd,
        }
    }
}

/// Ordered run of cells sharing one fundamental diagram, upstream first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSegment<T = f64> {
    pub cells: Vec<MacroCell<T>>,
    pub fd: FundamentalDiagram<T>,
}

impl<T: Real> MacroSegment<T> {
    pub fn new(cells: Vec<MacroCell<T>>, fd: FundamentalDiagram<T>) -> Self {
        Self { cells, fd }
    }

    pub fn mass(&self) -> T {
        self.cells.iter().fold(T::zero(), |acc, c| acc + c.mass())
    }

    /// Largest stable time step for this segment.
    pub fn max_time_step(&self) -> T {
        let min_dx = self.cells.iter().map(|c| c.dx).fold(T::infinity(), T::min);
        min_dx / self.fd.max_wave_speed()
    }

    pub fn check_cfl(&self, dt: T) -> Result<(), MacroError> {
        let max_dt = self.max_time_step();
        // relative slack so that dt = dx / v_f computed in a different order still passes
        if dt > max_dt * T::lit(1.0 + 1e-12) {
            let min_dx = self.cells.iter().map(|c| c.dx).fold(T::infinity(), T::min);
            return Err(MacroError::CflViolation {
                dt: dt.to_f64().unwrap_or(f64::NAN),
                dx: min_dx.to_f64().unwrap_or(f64::NAN),
                max_dt: max_dt.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }

    pub fn first_supply(&self) -> T {
        self.cells.first().map_or(T::zero(), |c| supply(c, &self.fd))
    }

    pub fn last_demand(&self) -> T {
        self.cells.last().map_or(T::zero(), |c| demand(c, &self.fd))
    }
}

/// Sending function: `lanes·min(v_f·ρ, q_max)` (veh/s over all lanes).
pub fn demand<T: Real>(cell: &MacroCell<T>, fd: &FundamentalDiagram<T>) -> T {
    let fd = cell.diagram(fd);
    cell.lanes_t() * (fd.free_speed * cell.rho.max(T::zero())).min(fd.capacity)
}

/// Receiving function: `lanes·min(q_max, w·(ρ_jam − ρ))` (veh/s over all lanes).
pub fn supply<T: Real>(cell: &MacroCell<T>, fd: &FundamentalDiagram<T>) -> T {
    let fd = cell.diagram(fd);
    cell.lanes_t() * fd.capacity.min(fd.wave_speed * (fd.jam_density - cell.rho)).max(T::zero())
}

/// Space-mean speed of a cell; an empty cell reports the free speed.
pub fn cell_mean_speed<T: Real>(cell: &MacroCell<T>, fd: &FundamentalDiagram<T>) -> T {
    let fd = cell.diagram(fd);
    if cell.rho <= T::zero() {
        fd.free_speed
    } else {
        fd.flow_unchecked(cell.rho) / cell.rho
    }
}

/// Boundary flows realized by one CTM step (veh/s over all lanes).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CtmFlows<T = f64> {
    pub accepted_inflow: T,
    pub outflow: T,
}

/// Advances `segment` by `dt` with Godunov fluxes `min(demand_{i−1}, supply_i)`.
pub fn ctm_step<T: Real>(
    segment: &mut MacroSegment<T>,
    upstream_inflow: T,
    downstream_supply: T,
    dt: T,
) -> Result<CtmFlows<T>, MacroError> {
    if upstream_inflow < T::zero() {
        return Err(MacroError::NegativeBoundaryFlow(upstream_inflow.to_f64().unwrap_or(f64::NAN)));
    }
    if downstream_supply < T::zero() {
        return Err(MacroError::NegativeBoundaryFlow(downstream_supply.to_f64().unwrap_or(f64::NAN)));
    }
    segment.check_cfl(dt)?;
    let n = segment.cells.len();
    if n == 0 {
        return Ok(CtmFlows::default());
    }
    let fd = segment.fd;
    let mut flux = Vec::with_capacity(n + 1);
    flux.push(upstream_inflow.min(supply(&segment.cells[0], &fd)));
    for i in 1..n {
        flux.push(demand(&segment.cells[i - 1], &fd).min(supply(&segment.cells[i], &fd)));
    }
    flux.push(demand(&segment.cells[n - 1], &fd).min(downstream_supply));
    for (i, cell) in segment.cells.iter_mut().enumerate() {
        cell.rho = cell.rho + dt / (cell.dx * cell.lanes_t()) * (flux[i] - flux[i + 1]);
    }
    Ok(CtmFlows { accepted_inflow: flux[0], outflow: flux[n] })
}
