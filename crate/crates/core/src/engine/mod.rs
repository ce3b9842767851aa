//! Influence-reaction stepping over both levels.
//!
//! Every step runs perception, memorization and decision for all vehicles
//! (pure, optionally parallel), then the natural phase of the environment,
//! then the reactions of the micro and macro levels, then the engine's own
//! reaction to system influences (removals, level-of-detail actions,
//! insertions), and finally advances the clock.

mod probe;

use std::collections::{HashSet, VecDeque};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::generation::{stream_rng, Generator};
use crate::hybrid::{
    layout_clusters, ClusterId, ClusterSet, ClusterState, Coupling, HybridConfig, HybridError, Interface, LayoutError, PendingRelease,
    Representation,
};
use crate::lod::{observe, plan, Action, LodPolicy, PlannedAction, Trigger};
use crate::macroscopic::{cell_mean_speed, ctm_step, supply, MacroError};
use crate::micro::perceive::{lane_view_at, perceive, stop_honored, Scene, Surroundings};
use crate::micro::{
    assess_lane_change, behavior_chain, driver_acceleration, DriverParams, MicroState, NavigationContext, Vehicle, VehicleId,
    VehicleIntent, VehicleMemory,
};
use crate::network::scenario::ScenarioModel;
use crate::network::{Corridors, RoadIx, RoadNetwork, RouteCache, RouteError, SinkIx};

pub use probe::{run, Engine, Probe, ProbeError, ProbeEvent, ProbeFailure, ReferenceEngine, RunReport};

/// Braking used when the car-following model has no defined answer (a
/// degenerate gap); the overlap check reports the cause.
const EMERGENCY_DECEL: f64 = -1.0e3;
/// Tolerated negative bumper gap before a run is aborted (m).
const OVERLAP_TOLERANCE: f64 = 0.01;
/// Carryover at or above this counts as one whole vehicle.
const WHOLE: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub seed: u64,
    /// Worker threads for perception and decision. 1 runs them inline; 0 uses
    /// one thread per core.
    pub threads: usize,
    /// Overrides the scenario duration.
    pub steps: Option<u64>,
    /// Replaces the scenario's controller policy.
    pub lod: Option<LodPolicy>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { seed: 0, threads: 1, steps: None, lod: None }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Flow(#[from] MacroError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("vehicles overlap on road `{road}` lane {lane} at step {step}: gap {gap:.3} m")]
    Overlap { road: String, lane: usize, gap: f64, step: u64 },
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<LayoutError> for EngineError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::UnknownRoad(r) => EngineError::UnknownTarget(format!("road `{r}`")),
            LayoutError::Invalid(field, reason) => EngineError::Config(format!("{field}: {reason}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Perception,
    Memorization,
    Decision,
    Natural,
    Reaction,
    System,
    Advance,
}

/// Running totals behind the conservation identity
/// `total_mass = initial + generated + injected − absorbed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Ledger {
    pub initial_mass: f64,
    /// Mass produced by generators, fractional parts included.
    pub generated: f64,
    /// Whole vehicles produced by generators.
    pub emitted: u64,
    /// Generator vehicles placed on the network.
    pub inserted: u64,
    /// Vehicles removed at sinks.
    pub absorbed: u64,
    /// Vehicles added through [`Simulation::insert_vehicle`].
    pub injected: u64,
}

/// Where the vehicle mass currently sits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MassBreakdown {
    pub vehicles: f64,
    pub cells: f64,
    /// Boundary backlogs, carryovers and pending releases, residuals and parked vehicles.
    pub held: f64,
    /// Generator accumulators and queues.
    pub generators: f64,
}

impl MassBreakdown {
    pub fn total(&self) -> f64 {
        self.vehicles + self.cells + self.held + self.generators
    }
}

/// One applied level-of-detail action.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionRecord {
    pub step: u64,
    pub time: f64,
    pub action: Action,
    /// Clusters involved; a split lists the part it created second.
    pub clusters: Vec<ClusterId>,
    pub trigger: Trigger,
    /// Corridor offset of the boundary involved: the split point, the merged
    /// boundary, or the start of a switched cluster.
    pub position: f64,
    /// Extent of the resulting cluster holding `position`.
    pub start: f64,
    pub end: f64,
    /// Mass of the clusters involved before and after.
    pub pre_mass: f64,
    pub post_mass: f64,
}

/// Aggregate view of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterStats {
    pub id: ClusterId,
    pub representation: Representation,
    pub corridor: usize,
    pub start: f64,
    pub end: f64,
    /// Vehicle count (micro) or mass (macro), held extras included.
    pub vehicles: f64,
    /// Veh/m/lane.
    pub density: f64,
    /// m/s; 0 for an empty micro cluster.
    pub mean_speed: f64,
    /// Veh/s over the last step.
    pub inflow: f64,
    pub outflow: f64,
}

pub struct Simulation {
    network: RoadNetwork,
    corridors: Corridors,
    hybrid: HybridConfig,
    policy: LodPolicy,
    dt: f64,
    step: u64,
    total_steps: u64,
    perception_horizon: f64,
    navigation_horizon: f64,
    micro: MicroState,
    clusters: ClusterSet,
    generators: Vec<Generator>,
    rng: ChaCha8Rng,
    routes: RouteCache,
    ledger: Ledger,
    transitions: Vec<TransitionRecord>,
    phases: Vec<Phase>,
    pool: Option<rayon::ThreadPool>,
    over_wall_clock: bool,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation").field("step", &self.step).field("vehicles", &self.micro.len()).finish_non_exhaustive()
    }
}

macro_rules! coupling {
    ($s:expr, $t:expr) => {
        Coupling { network: &$s.network, corridors: &$s.corridors, config: &$s.hybrid, time: $t, horizon: $s.perception_horizon }
    };
}

impl Simulation {
    pub fn new(model: &ScenarioModel, config: &EngineConfig) -> Result<Self, EngineError> {
        let dt = model.time_step;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(EngineError::Config(format!("time step {dt} must be positive")));
        }
        let network = model.network.clone();
        let corridors = Corridors::build(&network);
        let hybrid = model.hybrid.clone().unwrap_or_default();
        let policy = config.lod.clone().unwrap_or_else(|| hybrid.lod.clone());
        policy.validate().map_err(|(k, why)| EngineError::Config(format!("{k}: {why}")))?;
        let layout = layout_clusters(&network, &corridors, &hybrid.clusters)?;
        let clusters = ClusterSet::new(
            &Coupling { network: &network, corridors: &corridors, config: &hybrid, time: 0.0, horizon: model.perception_horizon },
            &layout,
        );
        for c in clusters.list() {
            if let Some(m) = c.macro_state() {
                m.segment.check_cfl(dt)?;
            }
        }
        let mut generators = Vec::with_capacity(model.generators.len());
        for spec in &model.generators {
            let road = network.road_ix(&spec.road).ok_or_else(|| EngineError::UnknownTarget(format!("road `{}`", spec.road)))?;
            let lanes = spec.lanes.resolve(network.road(road).lane_count);
            let destination = match &spec.destination {
                Some(d) => Some(network.sink_ix(d).ok_or_else(|| EngineError::UnknownTarget(format!("sink `{d}`")))?),
                None => None,
            };
            generators.push(Generator::new(spec, road, lanes, destination, |id| network.sink_ix(id), config.seed));
        }
        let pool = match config.threads {
            1 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| EngineError::Config(format!("thread pool: {e}")))?,
            ),
        };
        let micro = MicroState::new(&network);
        let mut sim = Self {
            network,
            corridors,
            hybrid,
            policy,
            dt,
            step: 0,
            total_steps: config.steps.unwrap_or_else(|| model.steps()),
            perception_horizon: model.perception_horizon,
            navigation_horizon: model.navigation_horizon,
            micro,
            clusters,
            generators,
            rng: stream_rng(config.seed, "coupling"),
            routes: RouteCache::default(),
            ledger: Ledger::default(),
            transitions: Vec::new(),
            phases: Vec::new(),
            pool,
            over_wall_clock: false,
        };
        sim.ledger.initial_mass = sim.total_mass();
        Ok(sim)
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn corridors(&self) -> &Corridors {
        &self.corridors
    }

    pub fn micro(&self) -> &MicroState {
        &self.micro
    }

    pub fn clusters(&self) -> &ClusterSet {
        &self.clusters
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn policy(&self) -> &LodPolicy {
        &self.policy
    }

    pub fn hybrid_config(&self) -> &HybridConfig {
        &self.hybrid
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn transitions(&self) -> &[TransitionRecord] {
        &self.transitions
    }

    /// Phases run by the last step, in order.
    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    /// Steps completed so far.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn time_step(&self) -> f64 {
        self.dt
    }

    /// Simulated seconds elapsed.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.total_steps
    }

    /// Vehicles, cell mass, boundary and residual mass, and generator accumulators and queues.
    pub fn total_mass(&self) -> f64 {
        self.micro.len() as f64 + self.clusters.held_mass() + self.generators.iter().map(Generator::mass).sum::<f64>()
    }

    pub fn mass_breakdown(&self) -> MassBreakdown {
        let mut b = MassBreakdown { vehicles: self.micro.len() as f64, ..MassBreakdown::default() };
        for c in self.clusters.list() {
            let cells = c.macro_state().map_or(0.0, |m| m.segment.mass());
            b.cells += cells;
            b.held += c.held_mass() - cells + c.downstream.as_ref().map_or(0.0, Interface::mass);
        }
        b.generators = self.generators.iter().map(Generator::mass).sum();
        b
    }

    /// What [`Self::total_mass`] must equal by the ledger.
    pub fn expected_mass(&self) -> f64 {
        let l = &self.ledger;
        l.initial_mass + l.generated + l.injected as f64 - l.absorbed as f64
    }

    /// Vehicles waiting in generator queues.
    pub fn queued(&self) -> usize {
        self.generators.iter().map(|g| g.queue.len()).sum()
    }

    pub fn cluster_stats(&self) -> Vec<ClusterStats> {
        let n = self.clusters.len();
        let mut count = vec![0usize; n];
        let mut speed = vec![0.0; n];
        for v in self.micro.vehicles() {
            let p = self.corridors.coord(v.road, v.position);
            if let Some(i) = self.clusters.locate(p.corridor, p.offset) {
                count[i] += 1;
                speed[i] += v.speed;
            }
        }
        self.clusters
            .list()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let lane_length: f64 = self
                    .corridors
                    .get(c.corridor)
                    .spans(c.start, c.end)
                    .iter()
                    .map(|&(road, a, b)| (b - a) * self.network.road(road).lane_count as f64)
                    .sum();
                let (vehicles, mean_speed) = match &c.state {
                    ClusterState::Micro => {
                        let mean = if count[i] > 0 { speed[i] / count[i] as f64 } else { 0.0 };
                        (count[i] as f64 + c.held_mass(), mean)
                    }
                    ClusterState::Macro(m) => {
                        let fd = &m.segment.fd;
                        let mass = m.segment.mass();
                        let mean = if mass > 0.0 {
                            m.segment.cells.iter().map(|cell| cell.mass() * cell_mean_speed(cell, fd)).sum::<f64>() / mass
                        } else {
                            m.segment.cells.iter().map(|cell| cell_mean_speed(cell, fd)).fold(f64::INFINITY, f64::min)
                        };
                        (c.held_mass(), mean)
                    }
                };
                ClusterStats {
                    id: c.id,
                    representation: c.representation(),
                    corridor: c.corridor,
                    start: c.start,
                    end: c.end,
                    vehicles,
                    density: if lane_length > 0.0 { vehicles / lane_length } else { 0.0 },
                    mean_speed,
                    inflow: c.inflow,
                    outflow: c.outflow,
                }
            })
            .collect()
    }

    fn surroundings<'a>(&'a self, walls: &'a [(RoadIx, f64)], t: f64) -> Surroundings<'a> {
        Surroundings {
            network: &self.network,
            state: &self.micro,
            time: t,
            walls,
            horizon: self.perception_horizon,
            navigation_horizon: self.navigation_horizon,
        }
    }

    fn par_map<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        match &self.pool {
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            None => (0..n).map(f).collect(),
        }
    }

    /// Boundaries into flow clusters that cannot take more vehicles right now.
    fn walls(&self) -> Vec<(RoadIx, f64)> {
        let list = self.clusters.list();
        let mut out = Vec::new();
        for (i, c) in list.iter().enumerate() {
            if c.representation() != Representation::Micro {
                continue;
            }
            let Some(j) = self.clusters.next_of(&self.corridors, i) else { continue };
            let Some(m) = list[j].macro_state() else { continue };
            let first = &m.segment.cells[0];
            let backlog = c.downstream.as_ref().map_or(0.0, |f| f.backlog);
            if backlog >= first.lanes as f64 || supply(first, &m.segment.fd) <= 0.0 {
                out.push(self.corridors.get(list[j].corridor).locate(list[j].start));
            }
        }
        out
    }

    /// Runs one full step.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let started = self.policy.wall_clock_budget_ms.map(|_| Instant::now());
        self.phases.clear();
        let t = self.time();
        let walls = self.walls();

        let scenes: Vec<Scene> = {
            let s = self.surroundings(&walls, t);
            self.par_map(self.micro.len(), |ix| perceive(&s, ix))
        };
        self.phases.push(Phase::Perception);

        for (v, scene) in self.micro.vehicles_mut().iter_mut().zip(&scenes) {
            v.memory.previous_gap = scene.perception.current.leader_gap();
            if let Some(stop) = stop_honored(scene, v.speed, v.params.min_gap) {
                if !v.memory.cleared_stops.contains(&stop) {
                    v.memory.cleared_stops.push(stop);
                }
            }
        }
        self.phases.push(Phase::Memorization);

        let intents: Vec<VehicleIntent> = self.par_map(self.micro.len(), |ix| {
            let v = self.micro.get(ix);
            let scene = &scenes[ix];
            let nav = NavigationContext {
                lane: v.lane,
                lane_count: self.network.road(v.road).lane_count,
                distance_to_node: scene.distance_to_node,
                permitted: scene.permitted.as_deref(),
                horizon: self.navigation_horizon,
            };
            behavior_chain(v.speed, &v.params, &scene.perception, &nav)
        });
        self.phases.push(Phase::Decision);

        for c in self.clusters.list_mut() {
            if let ClusterState::Macro(m) = &mut c.state {
                m.update_caps(&self.network, t);
            }
        }
        for g in &mut self.generators {
            let fresh = g.generation_influences(t, self.dt);
            g.queue.extend(fresh);
        }
        self.ledger.generated = self.generators.iter().map(|g| g.generated).sum();
        self.ledger.emitted = self.generators.iter().map(|g| g.emitted).sum();
        self.phases.push(Phase::Natural);

        let absorbed = self.react(&intents, &walls, t)?;
        self.phases.push(Phase::Reaction);

        self.system(absorbed)?;
        self.phases.push(Phase::System);

        self.step += 1;
        self.phases.push(Phase::Advance);
        if let (Some(start), Some(budget)) = (started, self.policy.wall_clock_budget_ms) {
            self.over_wall_clock = start.elapsed().as_secs_f64() * 1000.0 > budget;
        }
        Ok(())
    }

    fn cluster_of(&self, v: &Vehicle) -> Option<usize> {
        let p = self.corridors.coord(v.road, v.position);
        self.clusters.locate(p.corridor, p.offset)
    }

    /// Micro and macro reactions. Returns the ids of vehicles that reached their sink.
    fn react(&mut self, intents: &[VehicleIntent], walls: &[(RoadIx, f64)], t: f64) -> Result<Vec<VehicleId>, EngineError> {
        let dt = self.dt;
        let mut accels: Vec<f64> = intents.iter().map(|i| i.accel).collect();

        // lane changes, re-checked against changes already made this step;
        // discretionary ones must still pay off, otherwise a pair of vehicles
        // in one lane swaps lanes together every step
        for ix in 0..self.micro.len() {
            let Some(dir) = intents[ix].lane_change else { continue };
            let mandatory = intents[ix].mandatory;
            let (accel, new_lane) = {
                let s = self.surroundings(walls, t);
                let scene = perceive(&s, ix);
                let v = self.micro.get(ix);
                let p = &scene.perception;
                let target = p.side(dir).filter(|lane| {
                    lane.leader_gap() > 0.0
                        && lane.follower.is_none_or(|f| f.gap > 0.0)
                        && {
                            let a = assess_lane_change(p, lane, v.speed, &v.params);
                            a.safe && (mandatory || a.incentive > v.params.switch_threshold)
                        }
                });
                let view = target.unwrap_or(&p.current);
                let a = driver_acceleration(v.speed, view.leader_gap(), view.approach_rate(v.speed), &v.params, p.speed_limit)
                    .unwrap_or(EMERGENCY_DECEL);
                let lane_count = self.network.road(v.road).lane_count;
                (a, target.and_then(|_| dir.apply(v.lane, lane_count)))
            };
            accels[ix] = accel;
            if let Some(lane) = new_lane {
                self.micro.change_lane(ix, lane);
            }
        }

        for c in self.clusters.list_mut() {
            if c.representation() == Representation::Micro {
                c.inflow = 0.0;
                c.outflow = 0.0;
            }
        }
        let before: Vec<Option<usize>> = self.micro.vehicles().iter().map(|v| self.cluster_of(v)).collect();

        // integrate and move across nodes
        let mut absorbed = Vec::new();
        let network = &self.network;
        for (v, &a) in self.micro.vehicles_mut().iter_mut().zip(&accels) {
            let v1 = v.speed + a * dt;
            let dx = if v1 >= 0.0 { v.speed * dt + 0.5 * a * dt * dt } else { -v.speed * v.speed / (2.0 * a) };
            v.speed = v1.max(0.0);
            v.position += dx.max(0.0);
            loop {
                let length = network.road(v.road).length;
                if v.position < length {
                    break;
                }
                match v.route.next_index(v.route_index) {
                    None => {
                        if network.sink_at(v.road).is_some() {
                            absorbed.push(v.id);
                        } else {
                            v.position = length;
                        }
                        break;
                    }
                    Some(ni) => {
                        let next = v.route.roads[ni];
                        let lane = next_lane(network, v.road, v.lane, next);
                        v.position -= length;
                        v.road = next;
                        v.lane = lane;
                        v.route_index = ni;
                        v.memory.cleared_stops.retain(|&(r, _)| r != next);
                    }
                }
            }
        }
        self.micro.reindex();

        // crossings between clusters; entering a flow cluster turns the vehicle into backlog
        let absorbed_set: HashSet<VehicleId> = absorbed.iter().copied().collect();
        let mut crossed: HashSet<VehicleId> = HashSet::new();
        let rate = 1.0 / dt;
        for (ix, from) in before.iter().enumerate() {
            let v = self.micro.get(ix);
            if absorbed_set.contains(&v.id) {
                if let Some(i) = *from {
                    self.clusters.list_mut()[i].outflow += rate;
                }
                continue;
            }
            let to = self.cluster_of(v);
            if to == *from {
                continue;
            }
            if let Some(i) = *from {
                self.clusters.list_mut()[i].outflow += rate;
            }
            let Some(j) = to else { continue };
            if self.clusters.list()[j].representation() == Representation::Macro {
                let up = self.clusters.prev_of(&self.corridors, j).expect("flow cluster has an upstream neighbor");
                let iface = self.clusters.list_mut()[up].downstream.as_mut().expect("interface to next cluster");
                iface.backlog += 1.0;
                crossed.insert(v.id);
            } else {
                self.clusters.list_mut()[j].inflow += rate;
            }
        }
        if !crossed.is_empty() {
            self.micro.retain(|v| !crossed.contains(&v.id));
        }

        self.react_flow()?;
        self.check_overlaps()?;
        Ok(absorbed)
    }

    /// Cell updates and flow exchange at every interface.
    fn react_flow(&mut self) -> Result<(), EngineError> {
        let dt = self.dt;
        let n = self.clusters.len();
        let threshold = self.hybrid.release_queue_threshold;
        let next: Vec<Option<usize>> = (0..n).map(|i| self.clusters.next_of(&self.corridors, i)).collect();
        let prev: Vec<Option<usize>> = (0..n).map(|i| self.clusters.prev_of(&self.corridors, i)).collect();

        // boundary fluxes from the state at the start of the step
        let mut ds = vec![0.0; n];
        let mut out = vec![0.0; n];
        {
            let list = self.clusters.list();
            for i in 0..n {
                let Some(m) = list[i].macro_state() else { continue };
                let j = next[i].expect("flow cluster has a downstream neighbor");
                let iface = list[i].downstream.as_ref().expect("interface to next cluster");
                ds[i] = match list[j].macro_state() {
                    Some(d) => (supply(&d.segment.cells[0], &d.segment.fd) - iface.backlog / dt).max(0.0),
                    None if iface.pending.len() > threshold => 0.0,
                    None => f64::INFINITY,
                };
                out[i] = m.segment.last_demand().min(ds[i]);
            }
        }

        for j in 0..n {
            if self.clusters.list()[j].representation() != Representation::Macro {
                continue;
            }
            let i = prev[j].expect("flow cluster has an upstream neighbor");
            let from_up = if self.clusters.list()[i].representation() == Representation::Macro { out[i] } else { 0.0 };
            let backlog = self.clusters.list()[i].downstream.as_ref().expect("interface").backlog;
            let offer = backlog / dt + from_up;
            let list = self.clusters.list_mut();
            let flows = ctm_step(&mut list[j].macro_state_mut().expect("macro").segment, offer, ds[j], dt)?;
            list[j].inflow = flows.accepted_inflow;
            list[j].outflow = flows.outflow;
            let iface = list[i].downstream.as_mut().expect("interface");
            iface.backlog = if flows.accepted_inflow >= offer { 0.0 } else { (offer - flows.accepted_inflow) * dt };
        }

        // flow entering vehicle clusters becomes carryover, whole units wait for release
        for i in 0..n {
            let Some(j) = next[i] else { continue };
            if self.clusters.list()[j].representation() != Representation::Micro {
                continue;
            }
            let from_up = if self.clusters.list()[i].representation() == Representation::Macro { out[i] * dt } else { 0.0 };
            let (corridor, start) = (self.clusters.list()[j].corridor, self.clusters.list()[j].start);
            let (road, _) = self.corridors.get(corridor).locate(start);
            let lanes = self.network.road(road).lane_count;
            let list = self.clusters.list_mut();
            let iface = list[i].downstream.as_mut().expect("interface");
            if iface.carryover.len() != lanes {
                iface.backlog += iface.carryover.iter().sum::<f64>();
                iface.carryover = vec![0.0; lanes];
            }
            let add = iface.backlog + from_up;
            iface.backlog = 0.0;
            if add > 0.0 {
                for c in &mut iface.carryover {
                    *c += add / lanes as f64;
                }
            }
            for lane in 0..lanes {
                while iface.carryover[lane] >= WHOLE {
                    iface.carryover[lane] -= 1.0;
                    let (params, length) = self.hybrid.driver.sample(&mut self.rng);
                    iface.pending.push_back(PendingRelease { lane, params, length });
                }
            }
        }
        Ok(())
    }

    fn check_overlaps(&self) -> Result<(), EngineError> {
        for (road, r) in self.network.roads().iter().enumerate() {
            for lane in 0..r.lane_count {
                for w in self.micro.lane(road, lane).windows(2) {
                    let (back, front) = (self.micro.get(w[0]), self.micro.get(w[1]));
                    let gap = front.rear() - back.position;
                    if gap < -OVERLAP_TOLERANCE {
                        return Err(EngineError::Overlap { road: r.id.clone(), lane, gap, step: self.step });
                    }
                }
            }
        }
        Ok(())
    }

    /// Removals, then controller actions, then insertions.
    fn system(&mut self, absorbed: Vec<VehicleId>) -> Result<(), EngineError> {
        if !absorbed.is_empty() {
            let gone: HashSet<VehicleId> = absorbed.into_iter().collect();
            self.micro.retain(|v| !gone.contains(&v.id));
            self.ledger.absorbed += gone.len() as u64;
        }

        if self.policy.enabled {
            let t = self.time() + self.dt;
            let planned = {
                let cx = coupling!(self, t);
                observe(&cx, &mut self.clusters, &self.micro, &self.policy, self.step);
                plan(&cx, &self.clusters, &self.micro, &self.policy, self.step, self.dt, self.over_wall_clock)
            };
            for action in planned {
                self.apply(action)?;
            }
        }

        self.insert_from_generators()?;
        self.release_pending()?;
        self.release_parked()?;
        Ok(())
    }

    fn insert_from_generators(&mut self) -> Result<(), EngineError> {
        let t = self.time() + self.dt;
        for gi in 0..self.generators.len() {
            let queue = std::mem::take(&mut self.generators[gi].queue);
            let road = self.generators[gi].road;
            let mut blocked: Vec<usize> = Vec::new();
            let mut keep = VecDeque::new();
            for ins in queue {
                if blocked.contains(&ins.lane) {
                    keep.push_back(ins);
                    continue;
                }
                let speed = ins.speed.unwrap_or_else(|| {
                    ins.params.desired_speed.min(self.network.speed_limit_at(road, ins.lane, 0.0, t))
                });
                let placed = self.try_insert(road, ins.lane, 0.0, speed, &ins.params, ins.length, ins.destination, t)?;
                if placed.is_some() {
                    self.ledger.inserted += 1;
                    if let Some(i) = self.clusters.locate(self.corridors.corridor_of(road), self.corridors.coord(road, 0.0).offset) {
                        self.clusters.list_mut()[i].inflow += 1.0 / self.dt;
                    }
                } else {
                    blocked.push(ins.lane);
                    keep.push_back(ins);
                }
            }
            self.generators[gi].queue = keep;
        }
        Ok(())
    }

    fn release_pending(&mut self) -> Result<(), EngineError> {
        let t = self.time() + self.dt;
        for i in 0..self.clusters.len() {
            let Some(j) = self.clusters.next_of(&self.corridors, i) else { continue };
            if self.clusters.list()[j].representation() != Representation::Micro {
                continue;
            }
            let pending = match self.clusters.list_mut()[i].downstream.as_mut() {
                Some(iface) if !iface.pending.is_empty() => std::mem::take(&mut iface.pending),
                _ => continue,
            };
            let upstream_speed = self.clusters.list()[i].macro_state().map(|m| {
                let last = m.segment.cells.last().expect("non-empty segment");
                cell_mean_speed(last, &m.segment.fd)
            });
            let (corridor, start) = (self.clusters.list()[j].corridor, self.clusters.list()[j].start);
            let (road, pos) = self.corridors.get(corridor).locate(start);
            let mut blocked: Vec<usize> = Vec::new();
            let mut keep = VecDeque::new();
            for p in pending {
                if blocked.contains(&p.lane) {
                    keep.push_back(p);
                    continue;
                }
                let limit = self.network.speed_limit_at(road, p.lane, pos, t);
                let speed = upstream_speed.unwrap_or(f64::INFINITY).min(p.params.desired_speed).min(limit);
                if self.try_insert(road, p.lane, pos, speed, &p.params, p.length, None, t)?.is_some() {
                    self.clusters.list_mut()[j].inflow += 1.0 / self.dt;
                } else {
                    blocked.push(p.lane);
                    keep.push_back(p);
                }
            }
            let iface = self.clusters.list_mut()[i].downstream.as_mut().expect("interface");
            iface.pending = keep;
        }
        Ok(())
    }

    fn release_parked(&mut self) -> Result<(), EngineError> {
        let t = self.time() + self.dt;
        for i in 0..self.clusters.len() {
            if self.clusters.list()[i].parked.is_empty() || self.clusters.list()[i].representation() != Representation::Micro {
                continue;
            }
            let parked = std::mem::take(&mut self.clusters.list_mut()[i].parked);
            let mut keep = Vec::new();
            for p in parked {
                let limit = self.network.speed_limit_at(p.road, p.vehicle.lane, p.position, t);
                let speed = p.vehicle.params.desired_speed.min(limit);
                let placed = self.try_insert(p.road, p.vehicle.lane, p.position, speed, &p.vehicle.params, p.vehicle.length, None, t)?;
                if placed.is_none() {
                    keep.push(p);
                }
            }
            self.clusters.list_mut()[i].parked = keep;
        }
        Ok(())
    }

    /// Places a vehicle if the lane has room: the leader gap must cover
    /// `s0 + v·T`, and a follower must keep a positive gap and not be forced to
    /// brake harder than the newcomer's safe deceleration. A close leader caps
    /// the insertion speed at its own speed.
    #[allow(clippy::too_many_arguments)]
    fn try_insert(
        &mut self,
        road: RoadIx,
        lane: usize,
        position: f64,
        speed: f64,
        params: &DriverParams,
        length: f64,
        destination: Option<SinkIx>,
        t: f64,
    ) -> Result<Option<VehicleId>, EngineError> {
        let route = self.routes.get(&self.network, road, destination)?;
        let view = lane_view_at(&self.surroundings(&[], t), road, lane, position, &route, 0, length, false);
        let mut v = speed.max(0.0);
        if let Some(l) = view.leader {
            if l.gap < 2.0 * (params.min_gap + v * params.time_headway) {
                v = v.min(l.speed);
            }
        }
        if view.leader_gap() < params.min_gap + v * params.time_headway {
            return Ok(None);
        }
        if let Some(f) = view.follower {
            if !(f.gap > 0.0) {
                return Ok(None);
            }
            let limit = self.network.speed_limit_at(road, lane, position, t);
            match driver_acceleration(f.speed, f.gap, f.speed - v, &f.params, limit) {
                Ok(a) if a >= -params.safe_decel => {}
                _ => return Ok(None),
            }
        }
        let id = self.micro.allocate_id();
        self.micro.push(Vehicle {
            id,
            road,
            lane,
            position,
            speed: v,
            length,
            params: *params,
            route,
            route_index: 0,
            memory: VehicleMemory::default(),
        });
        Ok(Some(id))
    }

    /// Adds a vehicle from outside the generators, if there is room. Counted
    /// as injected mass.
    #[allow(clippy::too_many_arguments)]
    pub fn insert_vehicle(
        &mut self,
        road: &str,
        lane: usize,
        position: f64,
        speed: f64,
        params: DriverParams,
        length: f64,
        destination: Option<&str>,
    ) -> Result<Option<VehicleId>, EngineError> {
        let r = self.network.road_ix(road).ok_or_else(|| EngineError::UnknownTarget(format!("road `{road}`")))?;
        if lane >= self.network.road(r).lane_count || !(0.0..=self.network.road(r).length).contains(&position) {
            return Err(EngineError::UnknownTarget(format!("lane {lane} at {position} m on road `{road}`")));
        }
        let p = self.corridors.coord(r, position);
        let ci = self.clusters.locate(p.corridor, p.offset).expect("every corridor has clusters");
        if self.clusters.list()[ci].representation() != Representation::Micro {
            return Err(EngineError::Hybrid(HybridError::WrongRepresentation {
                cluster: self.clusters.list()[ci].id,
                expected: Representation::Micro,
            }));
        }
        let dest = match destination {
            Some(d) => Some(self.network.sink_ix(d).ok_or_else(|| EngineError::UnknownTarget(format!("sink `{d}`")))?),
            None => None,
        };
        let t = self.time();
        let placed = self.try_insert(r, lane, position, speed, &params, length, dest, t)?;
        if placed.is_some() {
            self.ledger.injected += 1;
        }
        Ok(placed)
    }

    /// Mass of the clusters `ids` plus the interface between the first two.
    fn region_mass(&self, ids: &[ClusterId], with_interface: bool) -> Result<f64, EngineError> {
        let mut total = 0.0;
        for (k, &id) in ids.iter().enumerate() {
            let i = self.clusters.index_of(id)?;
            total += self.clusters.cluster_mass(&self.micro, &self.corridors, i);
            if with_interface && k == 0 {
                total += self.clusters.list()[i].downstream.as_ref().map_or(0.0, Interface::mass);
            }
        }
        Ok(total)
    }

    /// Applies one controller action now, between steps.
    pub fn apply_action(&mut self, action: Action) -> Result<&TransitionRecord, EngineError> {
        self.apply(PlannedAction { action, trigger: Trigger::Manual })?;
        Ok(self.transitions.last().expect("just recorded"))
    }

    fn apply(&mut self, planned: PlannedAction) -> Result<(), EngineError> {
        let t = self.time() + if self.phases.contains(&Phase::Reaction) { self.dt } else { 0.0 };
        let step = self.step;
        let (pre, position, focus, post_ids, with_iface) = match planned.action {
            Action::Refine(id) | Action::Coarsen(id) => {
                let pre = self.region_mass(&[id], false)?;
                let i = self.clusters.index_of(id)?;
                let start = self.clusters.list()[i].start;
                if let Action::Refine(_) = planned.action {
                    let cx = coupling!(self, t);
                    self.clusters.disaggregate(&cx, &mut self.micro, &mut self.rng, &mut self.routes, id)?;
                } else {
                    let cx = coupling!(self, t);
                    self.clusters.aggregate(&cx, &mut self.micro, id, self.dt)?;
                    let i = self.clusters.index_of(id)?;
                    if let Some(m) = self.clusters.list_mut()[i].macro_state_mut() {
                        m.update_caps(&self.network, t);
                    }
                }
                let i = self.clusters.index_of(id)?;
                let c = &mut self.clusters.list_mut()[i];
                c.last_switch = Some(step);
                c.refined_by_lod = planned.action == Action::Refine(id) && planned.trigger == Trigger::Jam;
                c.free_counter = 0;
                (pre, start, id, vec![id], false)
            }
            Action::Split { cluster, at } => {
                let pre = self.region_mass(&[cluster], false)?;
                let tail = self.clusters.split(&self.corridors, cluster, at, self.policy.min_cluster_length)?;
                let at = self.clusters.get(tail).expect("new cluster").start;
                (pre, at, tail, vec![cluster, tail], true)
            }
            Action::Merge(a, b) => {
                let pre = self.region_mass(&[a, b], true)?;
                let boundary = self.clusters.get(b).ok_or(HybridError::UnknownCluster(b))?.start;
                self.clusters.merge(&self.corridors, a, b)?;
                (pre, boundary, a, vec![a], false)
            }
        };
        let post = self.region_mass(&post_ids, with_iface)?;
        let c = self.clusters.get(focus).expect("focus cluster exists");
        self.transitions.push(TransitionRecord {
            step,
            time: t,
            action: planned.action,
            clusters: match planned.action {
                Action::Split { .. } => post_ids,
                other => other.clusters(),
            },
            trigger: planned.trigger,
            position,
            start: c.start,
            end: c.end,
            pre_mass: pre,
            post_mass: post,
        });
        Ok(())
    }
}

/// Lane entered on `next` when leaving `(road, lane)`: the turn target of the
/// lane, or the target of the nearest lane that has one.
fn next_lane(network: &RoadNetwork, road: RoadIx, lane: usize, next: RoadIx) -> usize {
    if let Some(l) = network.turn_target(road, lane, next) {
        return l;
    }
    (0..network.road(road).lane_count)
        .filter_map(|l| network.turn_target(road, l, next).map(|to| (l, to)))
        .min_by_key(|&(l, _)| (l.abs_diff(lane), std::cmp::Reverse(l)))
        .map_or(0, |(_, to)| to)
}
