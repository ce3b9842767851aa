use serde::{Deserialize, Serialize};

use crate::generation::DriverDistribution;
use crate::lod::LodPolicy;
use crate::macroscopic::FundamentalDiagram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    Micro,
    Macro,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Micro => "micro",
            Representation::Macro => "macro",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "micro" => Some(Representation::Micro),
            "macro" => Some(Representation::Macro),
            _ => None,
        }
    }
}

/// Initial cluster `[start, end)` on a corridor, given as road positions.
/// The start lies on `start_road`, the end on `end_road`; both roads belong to
/// the same corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub representation: Representation,
    pub start_road: String,
    pub start: f64,
    pub end_road: String,
    pub end: f64,
}

/// Settings of the hybrid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub fd: FundamentalDiagram,
    /// Target macro cell length (m).
    pub cell_length: f64,
    /// Vehicles waiting at a macro→micro boundary beyond which the macro side stops sending.
    pub release_queue_threshold: usize,
    /// Drivers created when flow turns back into vehicles.
    pub driver: DriverDistribution,
    /// File the driver distribution was read from, if any.
    pub driver_ref: Option<String>,
    pub clusters: Vec<ClusterSpec>,
    pub lod: LodPolicy,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            fd: FundamentalDiagram::default(),
            cell_length: 100.0,
            release_queue_threshold: 4,
            driver: DriverDistribution::default(),
            driver_ref: None,
            clusters: Vec::new(),
            lod: LodPolicy::default(),
        }
    }
}
