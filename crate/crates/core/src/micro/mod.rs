//! Microscopic vehicle dynamics: IDM car following, MOBIL lane changing, the
//! navigation → overtaking → acceleration behavior chain, and neighbor perception.

mod behavior;
mod idm;
mod mobil;
mod params;
mod perception;
pub mod perceive;
pub mod state;

pub use behavior::{behavior_chain, NavigationContext, VehicleIntent};
pub use idm::{desired_gap, equilibrium_gap, free_road_acceleration, idm_acceleration};
pub use mobil::{assess_lane_change, driver_acceleration, mobil_decide, LaneAssessment, LaneChangeDecision};
pub use params::DriverParams;
pub use perception::{FollowerView, LaneView, LeaderView, Perception};
pub use state::{MicroState, Vehicle, VehicleId, VehicleMemory};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MicroError {
    #[error("non-positive gap {0} passed to the car-following model")]
    NonPositiveGap(f64),
    #[error("equilibrium gap undefined at or above the desired speed")]
    DesiredSpeedReached,
    #[error("invalid driver parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
}

/// Lateral direction of a lane change. Lane 0 is the leftmost lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    /// Lane index reached from `lane`, if it exists on a road with `lane_count` lanes.
    pub fn apply(self, lane: usize, lane_count: usize) -> Option<usize> {
        match self {
            Direction::Left => lane.checked_sub(1),
            Direction::Right => (lane + 1 < lane_count).then_some(lane + 1),
        }
    }
}
