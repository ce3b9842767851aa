use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::network::scenario::ScenarioModel;

use super::{EngineConfig, EngineError, Simulation};

pub type ProbeError = Box<dyn std::error::Error + Send + Sync>;

/// Observer notified by the engine at consistent instants only. Every callback
/// gets read-only access; a failing callback is recorded in the run report and
/// does not stop the run or the other probes.
pub trait Probe {
    fn name(&self) -> &str {
        "probe"
    }

    /// Before the initial state is built.
    fn on_simulation_start(&mut self, _model: &ScenarioModel, _config: &EngineConfig) -> Result<(), ProbeError> {
        Ok(())
    }

    /// After initialization, before the first step.
    fn on_initialized(&mut self, _sim: &Simulation) -> Result<(), ProbeError> {
        Ok(())
    }

    fn on_step_end(&mut self, _sim: &Simulation) -> Result<(), ProbeError> {
        Ok(())
    }

    fn on_final(&mut self, _sim: &Simulation) -> Result<(), ProbeError> {
        Ok(())
    }

    /// Called once when the run stops on an error.
    fn on_error(&mut self, _error: &EngineError) -> Result<(), ProbeError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProbeEvent {
    SimulationStart,
    Initialized,
    StepEnd,
    Final,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeFailure {
    pub probe: String,
    pub event: ProbeEvent,
    /// Step index when it failed.
    pub step: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub steps: u64,
    pub probe_failures: Vec<ProbeFailure>,
    pub wall_time: Duration,
}

fn notify(
    probes: &mut [&mut dyn Probe],
    failures: &mut Vec<ProbeFailure>,
    event: ProbeEvent,
    step: u64,
    mut call: impl FnMut(&mut dyn Probe) -> Result<(), ProbeError>,
) {
    for probe in probes.iter_mut() {
        let outcome = catch_unwind(AssertUnwindSafe(|| call(&mut **probe)));
        let message = match outcome {
            Ok(Ok(())) => continue,
            Ok(Err(e)) => e.to_string(),
            Err(panic) => panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panicked".into()),
        };
        failures.push(ProbeFailure { probe: probe.name().to_string(), event, step, message });
    }
}

/// Builds the simulation, steps it to the end and notifies `probes` in
/// registration order. On error every probe's `on_error` runs exactly once
/// and the error is returned alongside the report.
pub fn run(model: &ScenarioModel, config: &EngineConfig, probes: &mut [&mut dyn Probe]) -> (Result<Simulation, EngineError>, RunReport) {
    let started = Instant::now();
    let mut report = RunReport::default();
    notify(probes, &mut report.probe_failures, ProbeEvent::SimulationStart, 0, |p| p.on_simulation_start(model, config));

    let outcome = (|| {
        let mut sim = Simulation::new(model, config)?;
        notify(probes, &mut report.probe_failures, ProbeEvent::Initialized, 0, |p| p.on_initialized(&sim));
        while !sim.is_finished() {
            sim.step()?;
            report.steps = sim.step_index();
            notify(probes, &mut report.probe_failures, ProbeEvent::StepEnd, sim.step_index(), |p| p.on_step_end(&sim));
        }
        notify(probes, &mut report.probe_failures, ProbeEvent::Final, sim.step_index(), |p| p.on_final(&sim));
        Ok(sim)
    })();

    if let Err(e) = &outcome {
        notify(probes, &mut report.probe_failures, ProbeEvent::Error, report.steps, |p| p.on_error(e));
    }
    report.wall_time = started.elapsed();
    (outcome, report)
}

/// Something that can execute a scenario under the probe contract.
pub trait Engine {
    fn run(&self, model: &ScenarioModel, config: &EngineConfig, probes: &mut [&mut dyn Probe]) -> (Result<Simulation, EngineError>, RunReport);
}

/// Sequential stepping with parallel perception and decision.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceEngine;

impl Engine for ReferenceEngine {
    fn run(&self, model: &ScenarioModel, config: &EngineConfig, probes: &mut [&mut dyn Probe]) -> (Result<Simulation, EngineError>, RunReport) {
        run(model, config, probes)
    }
}
