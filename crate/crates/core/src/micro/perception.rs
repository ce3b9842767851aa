use crate::scalar::Real;

use super::DriverParams;

/// Nearest obstacle ahead in one lane. Virtual obstacles (stop lines, blocked
/// cluster boundaries, a node the lane does not lead through) have speed 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderView<T = f64> {
    /// Bumper-to-bumper gap (m).
    pub gap: T,
    pub speed: T,
}

/// Nearest vehicle behind in one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerView<T = f64> {
    /// Gap from the follower's front bumper to the observer's rear bumper (m).
    pub gap: T,
    pub speed: T,
    pub params: DriverParams<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneView<T = f64> {
    pub leader: Option<LeaderView<T>>,
    pub follower: Option<FollowerView<T>>,
}

impl<T: Real> LaneView<T> {
    pub const EMPTY: LaneView<T> = LaneView { leader: None, follower: None };

    /// Leader gap, `+∞` when the lane ahead is empty.
    pub fn leader_gap(&self) -> T {
        self.leader.map_or(T::infinity(), |l| l.gap)
    }

    /// Approach rate towards the leader (own speed minus leader speed), 0 when no leader.
    pub fn approach_rate(&self, v: T) -> T {
        self.leader.map_or(T::zero(), |l| v - l.speed)
    }
}

/// What a driver knows about its surroundings at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perception<T = f64> {
    pub own_length: T,
    pub current: LaneView<T>,
    /// `None` when no lane exists on that side.
    pub left: Option<LaneView<T>>,
    pub right: Option<LaneView<T>>,
    /// Speed limit in force for this driver, including anticipated reductions ahead.
    pub speed_limit: T,
}

impl<T: Real> Perception<T> {
    pub fn alone(own_length: T, speed_limit: T) -> Self {
        Perception { own_length, current: LaneView::EMPTY, left: None, right: None, speed_limit }
    }

    pub fn side(&self, dir: super::Direction) -> Option<&LaneView<T>> {
        match dir {
            super::Direction::Left => self.left.as_ref(),
            super::Direction::Right => self.right.as_ref(),
        }
    }
}
