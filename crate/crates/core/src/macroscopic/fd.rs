use serde::{Deserialize, Serialize};

use crate::scalar::Real;

use super::MacroError;

/// Triangular flow–density relation. All densities are per lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram<T = f64> {
    /// Free-flow speed `v_f` (m/s).
    pub free_speed: T,
    /// Backward wave speed `w` (m/s), positive.
    pub wave_speed: T,
    /// Jam density (veh/m/lane).
    pub jam_density: T,
    /// Capacity `q_max` (veh/s/lane).
    pub capacity: T,
}

impl<T: Real> Default for FundamentalDiagram<T> {
    fn default() -> Self {
        Self::triangular(T::lit(25.0), T::lit(0.15), T::lit(0.5)).expect("default diagram is consistent")
    }
}

impl<T: Real> FundamentalDiagram<T> {
    /// Builds the diagram from free speed, jam density and capacity; the wave
    /// speed follows from `w = q_max / (ρ_jam − ρ_c)`.
    pub fn triangular(free_speed: T, jam_density: T, capacity: T) -> Result<Self, MacroError> {
        if !(free_speed > T::zero() && jam_density > T::zero() && capacity > T::zero()) {
            return Err(MacroError::InvalidDiagram("free speed, jam density and capacity must be positive"));
        }
        let critical = capacity / free_speed;
        if !(critical < jam_density) {
            return Err(MacroError::InvalidDiagram("critical density must be below jam density"));
        }
        Ok(Self { free_speed, wave_speed: capacity / (jam_density - critical), jam_density, capacity })
    }

    /// `ρ_c = q_max / v_f`.
    pub fn critical_density(&self) -> T {
        self.capacity / self.free_speed
    }

    /// Diagram with the free branch limited to `speed` while keeping the jam
    /// density and the congested branch; capacity moves to the new intersection.
    pub fn capped(&self, speed: T) -> Self {
        if speed >= self.free_speed {
            return *self;
        }
        let v = speed.max(T::lit(1e-6));
        let capacity = self.wave_speed * v * self.jam_density / (v + self.wave_speed);
        Self { free_speed: v, capacity, ..*self }
    }

    /// Largest characteristic speed, which bounds the stable time step.
    pub fn max_wave_speed(&self) -> T {
        self.free_speed.max(self.wave_speed)
    }

    /// Flow for a density already known to be admissible; clamps rounding noise.
    #[inline]
    pub(crate) fn flow_unchecked(&self, rho: T) -> T {
        (self.free_speed * rho).min(self.wave_speed * (self.jam_density - rho)).max(T::zero())
    }
}

/// `q(ρ) = min(v_f·ρ, w·(ρ_jam − ρ))`.
pub fn fd_flow<T: Real>(rho: T, fd: &FundamentalDiagram<T>) -> Result<T, MacroError> {
    if !(rho >= T::zero() && rho <= fd.jam_density) {
        return Err(MacroError::DensityOutOfRange {
            rho: rho.to_f64().unwrap_or(f64::NAN),
            jam: fd.jam_density.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(fd.flow_unchecked(rho))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_diagram_values() {
        let fd = FundamentalDiagram::<f64>::default();
        assert!((fd.critical_density() - 0.02).abs() < 1e-15);
        assert!((fd.wave_speed - 0.5 / 0.13).abs() < 1e-12);
        assert!((fd.wave_speed - 3.846).abs() < 1e-3);
    }

    #[test]
    fn flow_vanishes_at_both_ends() {
        let fd = FundamentalDiagram::<f64>::default();
        assert_eq!(fd_flow(0.0, &fd).unwrap(), 0.0);
        assert_eq!(fd_flow(fd.jam_density, &fd).unwrap(), 0.0);
    }

    #[test]
    fn congested_branch_example() {
        let fd = FundamentalDiagram::<f64>::default();
        let expected = fd.wave_speed * (0.15 - 0.12);
        let q = fd_flow(0.12, &fd).unwrap();
        assert!((q - expected).abs() < 1e-15);
        assert!((q - 0.11538).abs() < 1e-5);
    }

    #[test]
    fn peak_at_critical_density() {
        let fd = FundamentalDiagram::<f64>::default();
        assert!((fd_flow(fd.critical_density(), &fd).unwrap() - fd.capacity).abs() < 1e-12);
        let eps = 1e-9;
        let left = fd_flow(fd.critical_density() - eps, &fd).unwrap();
        let right = fd_flow(fd.critical_density() + eps, &fd).unwrap();
        assert!((left - right).abs() < 1e-7);
    }

    #[test]
    fn out_of_range_density_rejected() {
        let fd = FundamentalDiagram::<f64>::default();
        assert!(fd_flow(-0.01, &fd).is_err());
        assert!(fd_flow(0.2, &fd).is_err());
    }

    #[test]
    fn inconsistent_diagram_rejected() {
        assert!(FundamentalDiagram::triangular(10.0_f64, 0.15, 2.0).is_err());
        assert!(FundamentalDiagram::triangular(0.0_f64, 0.15, 0.5).is_err());
    }

    #[test]
    fn capped_diagram_keeps_congested_branch() {
        let fd = FundamentalDiagram::<f64>::default();
        let capped = fd.capped(5.0);
        assert_eq!(capped.wave_speed, fd.wave_speed);
        assert!((capped.capacity - 5.0 * capped.critical_density()).abs() < 1e-12);
        assert!((capped.wave_speed * (capped.jam_density - capped.critical_density()) - capped.capacity).abs() < 1e-12);
        assert!(capped.capacity < fd.capacity);
    }
}
