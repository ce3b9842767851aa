use rand::Rng;
use rand_distr::{Distribution as _, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::micro::DriverParams;

/// Distribution of one driver or vehicle attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    /// Truncated at ±3 standard deviations.
    Normal { mean: f64, sd: f64 },
}

impl Distribution {
    /// Closed interval every sample falls into.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Distribution::Constant(v) => (v, v),
            Distribution::Uniform { lo, hi } => (lo, hi),
            Distribution::Normal { mean, sd } => (mean - 3.0 * sd, mean + 3.0 * sd),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match *self {
            Distribution::Constant(v) => v.is_finite(),
            Distribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Distribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::Constant(v) => v,
            Distribution::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    Uniform::new_inclusive(lo, hi).expect("checked bounds").sample(rng)
                }
            }
            Distribution::Normal { mean, sd } => {
                if sd == 0.0 {
                    return mean;
                }
                let normal = Normal::new(mean, sd).expect("checked sd");
                loop {
                    let x = normal.sample(rng);
                    if (x - mean).abs() <= 3.0 * sd {
                        return x;
                    }
                }
            }
        }
    }
}

/// Attribute distributions for vehicles produced at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverDistribution {
    pub desired_speed: Distribution,
    pub time_headway: Distribution,
    pub max_accel: Distribution,
    pub comfortable_decel: Distribution,
    pub accel_exponent: Distribution,
    pub min_gap: Distribution,
    pub politeness: Distribution,
    pub switch_threshold: Distribution,
    pub safe_decel: Distribution,
    /// Vehicle length (m).
    pub length: Distribution,
}

impl Default for DriverDistribution {
    fn default() -> Self {
        Self::constant(&DriverParams::default(), 4.0)
    }
}

/// Attribute names in canonical order.
pub const ATTRIBUTES: [&str; 10] = [
    "desired_speed",
    "time_headway",
    "max_accel",
    "comfortable_decel",
    "accel_exponent",
    "min_gap",
    "politeness",
    "switch_threshold",
    "safe_decel",
    "length",
];

impl DriverDistribution {
    pub fn constant(p: &DriverParams, length: f64) -> Self {
        use Distribution::Constant as C;
        Self {
            desired_speed: C(p.desired_speed),
            time_headway: C(p.time_headway),
            max_accel: C(p.max_accel),
            comfortable_decel: C(p.comfortable_decel),
            accel_exponent: C(p.accel_exponent),
            min_gap: C(p.min_gap),
            politeness: C(p.politeness),
            switch_threshold: C(p.switch_threshold),
            safe_decel: C(p.safe_decel),
            length: C(length),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Distribution> {
        Some(match name {
            "desired_speed" => &self.desired_speed,
            "time_headway" => &self.time_headway,
            "max_accel" => &self.max_accel,
            "comfortable_decel" => &self.comfortable_decel,
            "accel_exponent" => &self.accel_exponent,
            "min_gap" => &self.min_gap,
            "politeness" => &self.politeness,
            "switch_threshold" => &self.switch_threshold,
            "safe_decel" => &self.safe_decel,
            "length" => &self.length,
            _ => return None,
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Distribution> {
        Some(match name {
            "desired_speed" => &mut self.desired_speed,
            "time_headway" => &mut self.time_headway,
            "max_accel" => &mut self.max_accel,
            "comfortable_decel" => &mut self.comfortable_decel,
            "accel_exponent" => &mut self.accel_exponent,
            "min_gap" => &mut self.min_gap,
            "politeness" => &mut self.politeness,
            "switch_threshold" => &mut self.switch_threshold,
            "safe_decel" => &mut self.safe_decel,
            "length" => &mut self.length,
            _ => return None,
        })
    }

    /// Checks that every possible sample yields valid driver parameters.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str)> {
        for name in ATTRIBUTES {
            let dist = self.get(name).expect("known attribute");
            if !dist.is_well_formed() {
                return Err((name, "malformed distribution"));
            }
            let (lo, hi) = dist.support();
            let ok = match name {
                "accel_exponent" => lo >= 1.0,
                "politeness" => lo >= 0.0 && hi <= 1.0,
                "switch_threshold" => lo >= 0.0,
                _ => lo > 0.0,
            };
            if !ok {
                return Err((name, "support leaves the valid parameter range"));
            }
        }
        Ok(())
    }

    /// Draws one driver and its vehicle length, attributes in canonical order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DriverParams, f64) {
        let params = DriverParams {
            desired_speed: self.desired_speed.sample(rng),
            time_headway: self.time_headway.sample(rng),
            max_accel: self.max_accel.sample(rng),
            comfortable_decel: self.comfortable_decel.sample(rng),
            accel_exponent: self.accel_exponent.sample(rng),
            min_gap: self.min_gap.sample(rng),
            politeness: self.politeness.sample(rng),
            switch_threshold: self.switch_threshold.sample(rng),
            safe_decel: self.safe_decel.sample(rng),
        };
        (params, self.length.sample(rng))
    }

    /// Largest vehicle length this distribution can produce.
    pub fn max_length(&self) -> f64 {
        self.length.support().1
    }

    /// Largest minimum gap this distribution can produce.
    pub fn max_min_gap(&self) -> f64 {
        self.min_gap.support().1
    }
}
