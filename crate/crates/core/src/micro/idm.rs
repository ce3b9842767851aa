//! Intelligent Driver Model.

use crate::scalar::Real;

use super::{DriverParams, MicroError};

/// Free-road term `a·[1 − (v/v0)^δ]`.
#[inline]
pub fn free_road_acceleration<T: Real>(v: T, params: &DriverParams<T>) -> T {
    params.max_accel * (T::one() - (v / params.desired_speed).powf(params.accel_exponent))
}

/// Desired dynamical gap `s*(v, Δv) = s0 + v·T + v·Δv / (2·sqrt(a·b))`, floored at `s0`.
#[inline]
pub fn desired_gap<T: Real>(v: T, dv: T, params: &DriverParams<T>) -> T {
    let dynamic = params.min_gap
        + v * params.time_headway
        + v * dv / (T::two() * params.braking_scale());
    dynamic.max(params.min_gap)
}

/// IDM acceleration for own speed `v`, bumper-to-bumper gap `gap` to the leader and
/// approach rate `dv = v − v_leader`. An infinite gap yields the free-road term.
pub fn idm_acceleration<T: Real>(v: T, gap: T, dv: T, params: &DriverParams<T>) -> Result<T, MicroError> {
    if !(gap > T::zero()) {
        return Err(MicroError::NonPositiveGap(gap.to_f64().unwrap_or(f64::NAN)));
    }
    let free = free_road_acceleration(v, params);
    if gap.is_infinite() {
        return Ok(free);
    }
    let ratio = desired_gap(v, dv, params) / gap;
    Ok(free - params.max_accel * ratio * ratio)
}

/// Steady-state gap `s_e(v) = s*(v, 0) / sqrt(1 − (v/v0)^δ)` at which the IDM
/// acceleration vanishes for a leader driving at the same speed.
pub fn equilibrium_gap<T: Real>(v: T, params: &DriverParams<T>) -> Result<T, MicroError> {
    if v >= params.desired_speed {
        return Err(MicroError::DesiredSpeedReached);
    }
    let v = v.max(T::zero());
    let denom = T::one() - (v / params.desired_speed).powf(params.accel_exponent);
    Ok(desired_gap(v, T::zero(), params) / denom.sqrt())
}
