//! The per-vehicle chain of responsibility: navigation, then overtaking, then
//! plain car following.

use crate::scalar::Real;

use super::{assess_lane_change, driver_acceleration, mobil_decide, Direction, DriverParams, LaneView, Perception};

/// Route-derived lane constraints for the node the vehicle is approaching.
#[derive(Debug, Clone, Copy)]
pub struct NavigationContext<'a, T = f64> {
    pub lane: usize,
    pub lane_count: usize,
    pub distance_to_node: T,
    /// Lanes from which the next route road can be entered. `None` when every
    /// lane leads on (last road of the route, or no constraint known).
    pub permitted: Option<&'a [usize]>,
    pub horizon: T,
}

impl<T: Real> NavigationContext<'_, T> {
    fn constrained(&self) -> Option<&[usize]> {
        match self.permitted {
            Some(lanes) if !lanes.is_empty() && self.distance_to_node < self.horizon => Some(lanes),
            _ => None,
        }
    }

    /// Whether `lane` keeps the route reachable.
    pub fn allows(&self, lane: usize) -> bool {
        self.constrained().is_none_or(|lanes| lanes.contains(&lane))
    }

    /// Nearest permitted lane when the current one is not; ties go right.
    pub fn mandatory_target(&self) -> Option<usize> {
        let lanes = self.constrained()?;
        if lanes.contains(&self.lane) {
            return None;
        }
        lanes.iter().copied().min_by_key(|&l| (l.abs_diff(self.lane), std::cmp::Reverse(l)))
    }
}

/// The single influence a vehicle emits per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleIntent<T = f64> {
    pub accel: T,
    pub lane_change: Option<Direction>,
    /// Lane change requested by navigation rather than by incentive.
    pub mandatory: bool,
}

fn follow<T: Real>(v: T, lane: &LaneView<T>, params: &DriverParams<T>, limit: T) -> T {
    // gaps come from perception and are positive; a degenerate gap means an
    // overlap the reaction phase will report, so brake as hard as possible meanwhile
    driver_acceleration(v, lane.leader_gap(), lane.approach_rate(v), params, limit)
        .unwrap_or(T::lit(-1.0e3))
}

/// Runs navigation → overtaking → acceleration and returns the resulting intent.
pub fn behavior_chain<T: Real>(
    v: T,
    params: &DriverParams<T>,
    perception: &Perception<T>,
    nav: &NavigationContext<'_, T>,
) -> VehicleIntent<T> {
    let limit = perception.speed_limit;

    // navigation: mandatory change, gated by safety only
    if let Some(target) = nav.mandatory_target() {
        let dir = if target < nav.lane { Direction::Left } else { Direction::Right };
        if let Some(lane) = perception.side(dir) {
            let assessment = assess_lane_change(perception, lane, v, params);
            if assessment.safe {
                return VehicleIntent { accel: follow(v, lane, params, limit), lane_change: Some(dir), mandatory: true };
            }
        }
        return VehicleIntent { accel: follow(v, &perception.current, params, limit), lane_change: None, mandatory: false };
    }

    // overtaking: discretionary MOBIL among lanes that keep the route reachable
    let mut restricted = *perception;
    if !nav.allows(nav.lane.wrapping_sub(1)) {
        restricted.left = None;
    }
    if !nav.allows(nav.lane + 1) {
        restricted.right = None;
    }
    if let Some(dir) = mobil_decide(&restricted, v, params).direction() {
        let lane = restricted.side(dir).expect("decided side exists");
        return VehicleIntent { accel: follow(v, lane, params, limit), lane_change: Some(dir), mandatory: false };
    }

    // acceleration
    VehicleIntent { accel: follow(v, &perception.current, params, limit), lane_change: None, mandatory: false }
}
