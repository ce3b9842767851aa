//! MOBIL lane-change decisions.

use crate::scalar::Real;

use super::{idm_acceleration, Direction, DriverParams, LaneView, MicroError, Perception};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneChangeDecision {
    Stay,
    Left,
    Right,
}

impl LaneChangeDecision {
    pub fn direction(self) -> Option<Direction> {
        match self {
            LaneChangeDecision::Stay => None,
            LaneChangeDecision::Left => Some(Direction::Left),
            LaneChangeDecision::Right => Some(Direction::Right),
        }
    }
}

impl From<Direction> for LaneChangeDecision {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Left => LaneChangeDecision::Left,
            Direction::Right => LaneChangeDecision::Right,
        }
    }
}

/// Acceleration a driver picks under a speed limit.
///
/// Below the limit this is plain IDM with `v0` capped at the limit. Above it the
/// driver brakes at its comfortable deceleration, or harder if the leader demands it.
pub fn driver_acceleration<T: Real>(
    v: T,
    gap: T,
    dv: T,
    params: &DriverParams<T>,
    speed_limit: T,
) -> Result<T, MicroError> {
    if v > speed_limit {
        let unbounded = DriverParams { desired_speed: T::infinity(), ..*params };
        let interaction = idm_acceleration(v, gap, dv, &unbounded)?;
        Ok(interaction.min(-params.comfortable_decel))
    } else {
        idm_acceleration(v, gap, dv, &params.capped(speed_limit))
    }
}

fn lane_acceleration<T: Real>(v: T, lane: &LaneView<T>, params: &DriverParams<T>, limit: T) -> Result<T, MicroError> {
    driver_acceleration(v, lane.leader_gap(), lane.approach_rate(v), params, limit)
}

/// Outcome of evaluating one prospective target lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneAssessment<T = f64> {
    /// `ã_c − a_c + p·[(ã_n − a_n) + (ã_o − a_o)]`.
    pub incentive: T,
    /// Safety criterion: both gaps positive and `ã_n ≥ −b_safe`.
    pub safe: bool,
    /// Own acceleration after the change.
    pub accel_after: T,
    /// Acceleration the new follower would experience after the change.
    pub new_follower_accel: Option<T>,
}

/// Evaluates the MOBIL incentive and safety criteria for moving into `target`.
pub fn assess_lane_change<T: Real>(
    perception: &Perception<T>,
    target: &LaneView<T>,
    v: T,
    params: &DriverParams<T>,
) -> LaneAssessment<T> {
    let limit = perception.speed_limit;
    let len = perception.own_length;
    let unsafe_result = LaneAssessment {
        incentive: T::neg_infinity(),
        safe: false,
        accel_after: T::neg_infinity(),
        new_follower_accel: None,
    };

    // own acceleration before and after
    let Ok(own_before) = lane_acceleration(v, &perception.current, params, limit) else {
        return unsafe_result;
    };
    let Ok(own_after) = lane_acceleration(v, target, params, limit) else {
        return unsafe_result;
    };

    // new follower: currently follows the target leader, would follow us
    let (mut new_gain, mut new_after) = (T::zero(), None);
    if let Some(nf) = target.follower {
        if !(nf.gap > T::zero()) {
            return unsafe_result;
        }
        let Ok(after) = driver_acceleration(nf.speed, nf.gap, nf.speed - v, &nf.params, limit) else {
            return unsafe_result;
        };
        let gap_before = nf.gap + len + target.leader_gap();
        let dv_before = target.leader.map_or(T::zero(), |l| nf.speed - l.speed);
        let Ok(before) = driver_acceleration(nf.speed, gap_before, dv_before, &nf.params, limit) else {
            return unsafe_result;
        };
        new_gain = after - before;
        new_after = Some(after);
    }
    let safe = new_after.is_none_or(|a| a >= -params.safe_decel);

    // old follower: currently follows us, would follow our current leader
    let mut old_gain = T::zero();
    if let Some(of) = perception.current.follower {
        if of.gap > T::zero() {
            let before = driver_acceleration(of.speed, of.gap, of.speed - v, &of.params, limit);
            let gap_after = of.gap + len + perception.current.leader_gap();
            let dv_after = perception.current.leader.map_or(T::zero(), |l| of.speed - l.speed);
            let after = driver_acceleration(of.speed, gap_after, dv_after, &of.params, limit);
            if let (Ok(b), Ok(a)) = (before, after) {
                old_gain = a - b;
            }
        }
    }

    LaneAssessment {
        incentive: own_after - own_before + params.politeness * (new_gain + old_gain),
        safe,
        accel_after: own_after,
        new_follower_accel: new_after,
    }
}

/// Discretionary lane-change decision. Picks the eligible side with the larger
/// incentive; an exact tie goes to the right.
pub fn mobil_decide<T: Real>(perception: &Perception<T>, v: T, params: &DriverParams<T>) -> LaneChangeDecision {
    let eligible = |dir: Direction| {
        perception.side(dir).and_then(|lane| {
            let a = assess_lane_change(perception, lane, v, params);
            (a.safe && a.incentive > params.switch_threshold).then_some(a.incentive)
        })
    };
    match (eligible(Direction::Left), eligible(Direction::Right)) {
        (None, None) => LaneChangeDecision::Stay,
        (Some(_), None) => LaneChangeDecision::Left,
        (None, Some(_)) => LaneChangeDecision::Right,
        (Some(l), Some(r)) => {
            if l > r {
                LaneChangeDecision::Left
            } else {
                LaneChangeDecision::Right
            }
        }
    }
}
