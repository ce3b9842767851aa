//! Vehicle sources: flow-mass and scripted generators on input points.

mod distribution;
mod generator;

pub use distribution::{Distribution, DriverDistribution, ATTRIBUTES};
pub use generator::{
    stream_id, stream_rng, Arrivals, Generator, GeneratorSpec, Insertion, RateStep, Rhythm, ScriptedEvent,
};
