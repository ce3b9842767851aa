//! Hybrid microscopic/macroscopic road-traffic simulation with runtime
//! level-of-detail switching.
//!
//! Vehicles follow the Intelligent Driver Model and change lanes with MOBIL;
//! flow segments are advanced with the cell transmission model. The network
//! is cut into clusters, each simulated under one representation, and a
//! controller moves cluster boundaries and representations while the run
//! progresses. Vehicle mass is conserved exactly across every switch.

// NaN must fail validity checks, hence `!(x > 0.0)` over `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod generation;
pub mod hybrid;
pub mod lod;
pub mod macroscopic;
pub mod micro;
pub mod network;
pub mod output;
pub mod scalar;

pub use engine::{run, Engine, EngineConfig, EngineError, Probe, ReferenceEngine, RunReport, Simulation};
pub use network::scenario::{parse_scenario, write_scenario, ScenarioError, ScenarioModel};
pub use scalar::Real;

// Concrete instances of the generic model types. The engine runs on `f64`.
pub type DriverParamsF32 = micro::DriverParams<f32>;
pub type DriverParamsF64 = micro::DriverParams<f64>;
pub type PerceptionF32 = micro::Perception<f32>;
pub type PerceptionF64 = micro::Perception<f64>;
pub type FundamentalDiagramF32 = macroscopic::FundamentalDiagram<f32>;
pub type FundamentalDiagramF64 = macroscopic::FundamentalDiagram<f64>;
pub type MacroCellF32 = macroscopic::MacroCell<f32>;
pub type MacroCellF64 = macroscopic::MacroCell<f64>;
pub type MacroSegmentF32 = macroscopic::MacroSegment<f32>;
pub type MacroSegmentF64 = macroscopic::MacroSegment<f64>;
