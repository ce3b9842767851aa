use serde::{Deserialize, Serialize};

use crate::scalar::Real;

use super::MicroError;

/// Driving style of one simulated driver: IDM longitudinal parameters plus the
/// MOBIL lane-change parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverParams<T = f64> {
    /// Desired speed `v0` (m/s).
    pub desired_speed: T,
    /// Desired time headway `T` (s).
    pub time_headway: T,
    /// Maximum acceleration `a` (m/s²).
    pub max_accel: T,
    /// Comfortable deceleration `b` (m/s²).
    pub comfortable_decel: T,
    /// Acceleration exponent `δ`.
    pub accel_exponent: T,
    /// Minimum bumper-to-bumper gap `s0` (m).
    pub min_gap: T,
    /// MOBIL politeness factor `p` in `[0, 1]`.
    pub politeness: T,
    /// MOBIL incentive threshold `Δa_th` (m/s²).
    pub switch_threshold: T,
    /// MOBIL maximum deceleration imposed on the new follower `b_safe` (m/s²).
    pub safe_decel: T,
}

impl<T: Real> Default for DriverParams<T> {
    fn default() -> Self {
        Self {
            desired_speed: T::lit(33.33),
            time_headway: T::lit(1.6),
            max_accel: T::lit(0.73),
            comfortable_decel: T::lit(1.67),
            accel_exponent: T::lit(4.0),
            min_gap: T::lit(2.0),
            politeness: T::lit(0.3),
            switch_threshold: T::lit(0.1),
            safe_decel: T::lit(4.0),
        }
    }
}

impl<T: Real> DriverParams<T> {
    pub fn validate(&self) -> Result<(), MicroError> {
        let positive = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("max_accel", self.max_accel),
            ("comfortable_decel", self.comfortable_decel),
            ("min_gap", self.min_gap),
            ("safe_decel", self.safe_decel),
        ];
        for (name, value) in positive {
            if !(value > T::zero()) || !value.is_finite() {
                return Err(MicroError::InvalidParameter { name, reason: "must be positive and finite" });
            }
        }
        if !(self.accel_exponent >= T::one()) {
            return Err(MicroError::InvalidParameter { name: "accel_exponent", reason: "must be >= 1" });
        }
        if !(self.politeness >= T::zero() && self.politeness <= T::one()) {
            return Err(MicroError::InvalidParameter { name: "politeness", reason: "must lie in [0, 1]" });
        }
        if !(self.switch_threshold >= T::zero()) {
            return Err(MicroError::InvalidParameter { name: "switch_threshold", reason: "must be >= 0" });
        }
        Ok(())
    }

    /// Same driver with the desired speed capped at `limit`.
    pub fn capped(&self, limit: T) -> Self {
        Self { desired_speed: self.desired_speed.min(limit), ..*self }
    }

    /// `sqrt(a * b)`, the intelligent braking denominator term.
    #[inline]
    pub(crate) fn braking_scale(&self) -> T {
        (self.max_accel * self.comfortable_decel).sqrt()
    }
}
