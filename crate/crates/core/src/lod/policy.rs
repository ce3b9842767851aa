use serde::{Deserialize, Serialize};

/// Thresholds and budgets of the level-of-detail controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LodPolicy {
    /// Without it the controller never plans; clusters keep their initial representation.
    pub enabled: bool,
    /// Speed ratio below which a cell counts as jammed.
    pub theta_down: f64,
    /// Speed ratio above which a cluster counts as free-flowing.
    pub theta_up: f64,
    /// Consecutive observations needed to flag a cell or call a cluster free.
    pub persistence: u32,
    /// Meters.
    pub min_cluster_length: f64,
    /// Micro vehicles allowed before clusters are coarsened. `None` means unlimited.
    pub micro_vehicle_budget: Option<usize>,
    /// Steps a cluster must wait between two representation switches.
    pub cooldown: u64,
    /// Optional trigger: coarsen as if over budget when a step took longer than this.
    /// Makes runs depend on the host and is off by default.
    pub wall_clock_budget_ms: Option<f64>,
}

impl Default for LodPolicy {
    fn default() -> Self {
        Self {
            enabled: false,
            theta_down: 0.5,
            theta_up: 0.8,
            persistence: 10,
            min_cluster_length: 200.0,
            micro_vehicle_budget: None,
            cooldown: 50,
            wall_clock_budget_ms: None,
        }
    }
}

/// Names accepted by [`LodPolicy::apply_override`], in canonical order.
pub const POLICY_KEYS: [&str; 8] = [
    "enabled",
    "theta_down",
    "theta_up",
    "persistence",
    "min_cluster_length",
    "micro_vehicle_budget",
    "cooldown",
    "wall_clock_budget_ms",
];

impl LodPolicy {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.theta_down > 0.0 && self.theta_down < self.theta_up && self.theta_up <= 1.0) {
            return Err(("theta_down", "need 0 < theta_down < theta_up <= 1".into()));
        }
        if self.persistence < 1 {
            return Err(("persistence", "must be at least 1".into()));
        }
        if !(self.min_cluster_length > 0.0 && self.min_cluster_length.is_finite()) {
            return Err(("min_cluster_length", "must be positive".into()));
        }
        if let Some(ms) = self.wall_clock_budget_ms {
            if !(ms > 0.0) {
                return Err(("wall_clock_budget_ms", "must be positive".into()));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual form. `none` clears the optional fields.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
        }
        match key {
            "enabled" => self.enabled = num(key, value)?,
            "theta_down" => self.theta_down = num(key, value)?,
            "theta_up" => self.theta_up = num(key, value)?,
            "persistence" => self.persistence = num(key, value)?,
            "min_cluster_length" => self.min_cluster_length = num(key, value)?,
            "micro_vehicle_budget" => {
                self.micro_vehicle_budget = if value == "none" { None } else { Some(num(key, value)?) }
            }
            "cooldown" => self.cooldown = num(key, value)?,
            "wall_clock_budget_ms" => {
                self.wall_clock_budget_ms = if value == "none" { None } else { Some(num(key, value)?) }
            }
            _ => return Err(format!("unknown policy key {key:?}")),
        }
        Ok(())
    }

    /// Applies a `key=value,key=value` list.
    pub fn apply_overrides(&mut self, list: &str) -> Result<(), String> {
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| format!("expected key=value, got {item:?}"))?;
            self.apply_override(k.trim(), v.trim())?;
        }
        self.validate().map_err(|(k, why)| format!("{k}: {why}"))
    }
}
