//! Scenario file set: a root file pointing at an infrastructure file, a
//! microscopic-level file and an optional hybrid-level file; the microscopic
//! file in turn names one generation-parameters file and one rhythm file per
//! input point. All references are paths relative to the root file's directory.
//! `docs/formats.md` describes every element.

mod parse;
mod write;

use std::path::PathBuf;

use thiserror::Error;

use crate::generation::GeneratorSpec;
use crate::hybrid::HybridConfig;

use super::{RoadNetwork, Violation};

pub use parse::parse_scenario;
pub use write::{canonical_files, write_scenario};

/// Root file name used when a directory is given and by the canonical writer.
pub const ROOT_FILE: &str = "scenario.xml";

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFiles {
    pub infrastructure: String,
    pub microscopic: String,
    pub hybrid: Option<String>,
}

/// Everything a run needs, with all file references resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModel {
    pub name: String,
    /// Seconds.
    pub time_step: f64,
    /// Seconds.
    pub duration: f64,
    pub network: RoadNetwork,
    pub perception_horizon: f64,
    pub navigation_horizon: f64,
    /// One per input point, in file order.
    pub generators: Vec<GeneratorSpec>,
    pub hybrid: Option<HybridConfig>,
    pub files: ScenarioFiles,
}

impl ScenarioModel {
    /// Whole steps covered by `duration`.
    pub fn steps(&self) -> u64 {
        (self.duration / self.time_step).round() as u64
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{}: file not found", path.display())]
    FileNotFound { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: syntax error: {message}", path.display())]
    Syntax { path: PathBuf, line: u32, message: String },
    #[error("{}: unknown {kind} `{id}`", path.display())]
    DanglingReference { path: PathBuf, kind: &'static str, id: String },
    #[error("{}: invalid {field}: {reason}", path.display())]
    SchemaViolation { path: PathBuf, field: String, reason: String },
    #[error("{}: invalid network: {}", path.display(), violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidNetwork { path: PathBuf, violations: Vec<Violation> },
}

impl ScenarioError {
    /// File the diagnostic is about.
    pub fn path(&self) -> &std::path::Path {
        match self {
            ScenarioError::FileNotFound { path }
            | ScenarioError::Io { path, .. }
            | ScenarioError::Syntax { path, .. }
            | ScenarioError::DanglingReference { path, .. }
            | ScenarioError::SchemaViolation { path, .. }
            | ScenarioError::InvalidNetwork { path, .. } => path,
        }
    }
}
