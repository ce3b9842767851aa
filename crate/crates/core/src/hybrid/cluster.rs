use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::macroscopic::{cell_mean_speed, MacroCell, MacroSegment};
use crate::micro::DriverParams;
use crate::network::{CorridorIx, Corridors, RoadIx, RoadNetwork};

use super::{HybridConfig, Representation, OFFSET_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub u64);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// A vehicle that exists as mass but still waits for room to appear.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingRelease {
    pub lane: usize,
    pub params: DriverParams,
    pub length: f64,
}

/// A waiting vehicle parked at a point inside a micro cluster, left behind when
/// a boundary it was queued at disappeared in a merge.
#[derive(Debug, Clone, PartialEq)]
pub struct ParkedVehicle {
    pub road: RoadIx,
    pub position: f64,
    pub vehicle: PendingRelease,
}

/// State kept at the boundary between a cluster and the next one downstream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interface {
    /// Vehicles that crossed into a macro cluster but were not yet accepted by
    /// its first cell, or flow mass not yet turned into vehicles.
    pub backlog: f64,
    /// Fractional vehicles per downstream lane, each in `[0, 1)` after a step.
    pub carryover: Vec<f64>,
    /// Whole vehicles waiting for a safe gap, released first-in first-out per lane.
    pub pending: VecDeque<PendingRelease>,
}

impl Interface {
    pub fn mass(&self) -> f64 {
        self.backlog + self.carryover.iter().sum::<f64>() + self.pending.len() as f64
    }

    /// Moves all carryover and pending vehicles into the backlog.
    pub fn fold_into_backlog(&mut self) {
        self.backlog += self.carryover.iter().sum::<f64>() + self.pending.len() as f64;
        self.carryover.iter_mut().for_each(|c| *c = 0.0);
        self.pending.clear();
    }
}

/// Where a macro cell lies on the network.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpan {
    pub road: RoadIx,
    /// Road coordinates of the cell, `[from, to)`.
    pub from: f64,
    pub to: f64,
    /// Corridor offset of `from`.
    pub offset: f64,
    /// Speed the jam ratio is measured against: the diagram free speed capped
    /// by the road's own limit.
    pub reference_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub segment: MacroSegment,
    pub spans: Vec<CellSpan>,
    /// Consecutive observations below the jam threshold, per cell.
    pub jam_counters: Vec<u32>,
}

impl MacroState {
    /// Empty cells covering `[start, end)` of `corridor`. Each road span is cut
    /// into `max(1, round(len / cell_length))` cells of equal length.
    pub fn empty(network: &RoadNetwork, corridors: &Corridors, corridor: CorridorIx, start: f64, end: f64, config: &HybridConfig) -> Self {
        let c = corridors.get(corridor);
        let mut cells = Vec::new();
        let mut spans = Vec::new();
        for (road, a, b) in c.spans(start, end) {
            let r = network.road(road);
            let road_start = c.road_start(road).expect("span road on corridor");
            let n = ((b - a) / config.cell_length).round().max(1.0) as usize;
            let dx = (b - a) / n as f64;
            for k in 0..n {
                let from = a + dx * k as f64;
                let to = if k + 1 == n { b } else { a + dx * (k + 1) as f64 };
                cells.push(MacroCell::new(to - from, r.lane_count as u32, 0.0));
                spans.push(CellSpan {
                    road,
                    from,
                    to,
                    offset: road_start + from,
                    reference_speed: config.fd.free_speed.min(r.speed_limit),
                });
            }
        }
        let n = cells.len();
        Self { segment: MacroSegment::new(cells, config.fd), spans, jam_counters: vec![0; n] }
    }

    /// Applies the speed limits in force at `t` to the cell diagrams.
    pub fn update_caps(&mut self, network: &RoadNetwork, t: f64) {
        let vf = self.segment.fd.free_speed;
        for (cell, span) in self.segment.cells.iter_mut().zip(&self.spans) {
            let limit = network.min_speed_limit(span.road, span.from, span.to, t);
            cell.speed_cap = (limit < vf).then_some(limit);
        }
    }

    /// Cell holding corridor offset `offset`.
    pub fn cell_at(&self, offset: f64) -> usize {
        self.spans.partition_point(|s| s.offset <= offset + OFFSET_EPS).saturating_sub(1)
    }

    /// Mean speed over reference speed, per cell.
    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.segment.cells.iter().zip(&self.spans).map(|(c, s)| cell_mean_speed(c, &self.segment.fd) / s.reference_speed)
    }

    pub fn cell_end_offset(&self, k: usize) -> f64 {
        self.spans[k].offset + (self.spans[k].to - self.spans[k].from)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterState {
    Micro,
    Macro(MacroState),
}

/// Interval `[start, end)` of a corridor under one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: ClusterId,
    pub corridor: CorridorIx,
    pub start: f64,
    pub end: f64,
    pub state: ClusterState,
    /// Fractional vehicle mass owned by the cluster but not placed anywhere:
    /// the remainder of a flow-to-vehicle conversion, or interface mass folded
    /// in by a merge.
    pub residual: f64,
    pub parked: Vec<ParkedVehicle>,
    /// Boundary with the next cluster downstream on the same corridor, if any.
    pub downstream: Option<Interface>,
    /// Step of the last representation switch.
    pub last_switch: Option<u64>,
    /// Turned into vehicles by the controller because of a jam.
    pub refined_by_lod: bool,
    /// Consecutive observations above the recovery threshold.
    pub free_counter: u32,
    pub last_jam_step: Option<u64>,
    /// Flows over the last step (veh/s).
    pub inflow: f64,
    pub outflow: f64,
}

impl Cluster {
    pub fn representation(&self) -> Representation {
        match self.state {
            ClusterState::Micro => Representation::Micro,
            ClusterState::Macro(_) => Representation::Macro,
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, corridor: CorridorIx, offset: f64) -> bool {
        self.corridor == corridor && offset >= self.start && offset < self.end
    }

    pub fn macro_state(&self) -> Option<&MacroState> {
        match &self.state {
            ClusterState::Macro(m) => Some(m),
            ClusterState::Micro => None,
        }
    }

    pub fn macro_state_mut(&mut self) -> Option<&mut MacroState> {
        match &mut self.state {
            ClusterState::Macro(m) => Some(m),
            ClusterState::Micro => None,
        }
    }

    /// Mass held by the cluster apart from its individual vehicles.
    pub fn held_mass(&self) -> f64 {
        let cells = self.macro_state().map_or(0.0, |m| m.segment.mass());
        cells + self.residual + self.parked.len() as f64
    }
}
