//! Semantic road network: roads made of lanes, typed nodes whose turn maps say
//! which lane may continue onto which road, vertical signs, sources and sinks.
//! There is no asphalt geometry; positions are meters along a road.

mod corridor;
mod routing;
pub mod scenario;
mod validate;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use corridor::{Corridor, CorridorIx, CorridorPos, Corridors};
pub use routing::{compute_route, default_route, lanes_to_destination, Destination, Route, RouteCache, RouteError};
pub use validate::{validate_network, Violation};

pub type RoadIx = usize;
pub type NodeIx = usize;
pub type SinkIx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Crossroads,
    Roundabout,
    HighwayInsertion,
    HighwayExtraction,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Crossroads => "crossroads",
            NodeKind::Roundabout => "roundabout",
            NodeKind::HighwayInsertion => "highway_insertion",
            NodeKind::HighwayExtraction => "highway_extraction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "crossroads" => NodeKind::Crossroads,
            "roundabout" => NodeKind::Roundabout,
            "highway_insertion" => NodeKind::HighwayInsertion,
            "highway_extraction" => NodeKind::HighwayExtraction,
            _ => return None,
        })
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One permitted movement through a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub from_road: String,
    pub from_lane: usize,
    pub to_road: String,
    pub to_lane: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub turns: Vec<Turn>,
}

/// Lanes a sign or a connector applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneSet {
    All,
    Only(Vec<usize>),
}

impl LaneSet {
    pub fn contains(&self, lane: usize) -> bool {
        match self {
            LaneSet::All => true,
            LaneSet::Only(lanes) => lanes.contains(&lane),
        }
    }

    pub fn resolve(&self, lane_count: usize) -> Vec<usize> {
        match self {
            LaneSet::All => (0..lane_count).collect(),
            LaneSet::Only(lanes) => lanes.iter().copied().filter(|&l| l < lane_count).collect(),
        }
    }

    pub fn covers_all(&self, lane_count: usize) -> bool {
        match self {
            LaneSet::All => true,
            LaneSet::Only(lanes) => (0..lane_count).all(|l| lanes.contains(&l)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SignKind {
    Stop,
    /// Limit in m/s, in force from the sign to the next speed-limit sign or the road end.
    SpeedLimit(f64),
    /// Carried as network metadata; no conflicting-stream model is attached to it.
    Yield,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalSign {
    pub kind: SignKind,
    /// Meters from the road start.
    pub position: f64,
    pub lanes: LaneSet,
    /// Optional activity window `[from, until)` in simulated seconds, for
    /// temporary restrictions such as road works.
    pub active_from: Option<f64>,
    pub active_until: Option<f64>,
}

impl VerticalSign {
    pub fn is_active(&self, t: f64) -> bool {
        self.active_from.is_none_or(|from| t >= from) && self.active_until.is_none_or(|until| t < until)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub id: String,
    pub from_node: String,
    pub to_node: String,
    pub length: f64,
    pub lane_count: usize,
    pub speed_limit: f64,
    pub signs: Vec<VerticalSign>,
}

/// Vehicle destruction point at the end of a road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sink {
    pub id: String,
    pub road: String,
}

/// Lane-level traffic input connector at the start of a road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPoint {
    pub id: String,
    pub road: String,
    pub lanes: LaneSet,
}

/// Immutable after construction; shared freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    roads: Vec<Road>,
    nodes: Vec<Node>,
    sinks: Vec<Sink>,
    input_points: Vec<InputPoint>,
    free_speed: f64,
    road_index: HashMap<String, RoadIx>,
    node_index: HashMap<String, NodeIx>,
    sink_index: HashMap<String, SinkIx>,
    successors: Vec<Vec<RoadIx>>,
    predecessors: Vec<Vec<RoadIx>>,
    sink_of_road: Vec<Option<SinkIx>>,
}

fn first_index<'a>(ids: impl Iterator<Item = &'a str>) -> HashMap<String, usize> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        map.entry(id.to_string()).or_insert(i);
    }
    map
}

impl RoadNetwork {
    /// Builds the network and its lookup tables. Dangling references are kept
    /// and reported by [`validate_network`], never silently repaired.
    pub fn new(roads: Vec<Road>, nodes: Vec<Node>, sinks: Vec<Sink>, input_points: Vec<InputPoint>, free_speed: f64) -> Self {
        let road_index = first_index(roads.iter().map(|r| r.id.as_str()));
        let node_index = first_index(nodes.iter().map(|n| n.id.as_str()));
        let sink_index = first_index(sinks.iter().map(|s| s.id.as_str()));
        let mut successors = vec![Vec::new(); roads.len()];
        let mut predecessors = vec![Vec::new(); roads.len()];
        for node in &nodes {
            for turn in &node.turns {
                if let (Some(&a), Some(&b)) = (road_index.get(&turn.from_road), road_index.get(&turn.to_road)) {
                    if roads[a].to_node == node.id && roads[b].from_node == node.id {
                        successors[a].push(b);
                        predecessors[b].push(a);
                    }
                }
            }
        }
        for list in successors.iter_mut().chain(predecessors.iter_mut()) {
            list.sort_by(|&x, &y| roads[x].id.cmp(&roads[y].id));
            list.dedup();
        }
        let mut sink_of_road = vec![None; roads.len()];
        for (i, sink) in sinks.iter().enumerate() {
            if let Some(&r) = road_index.get(&sink.road) {
                sink_of_road[r].get_or_insert(i);
            }
        }
        Self {
            roads,
            nodes,
            sinks,
            input_points,
            free_speed,
            road_index,
            node_index,
            sink_index,
            successors,
            predecessors,
            sink_of_road,
        }
    }

    pub fn into_parts(self) -> (Vec<Road>, Vec<Node>, Vec<Sink>, Vec<InputPoint>, f64) {
        (self.roads, self.nodes, self.sinks, self.input_points, self.free_speed)
    }

    pub fn roads(&self) -> &[Road] {
        &self.roads
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn sinks(&self) -> &[Sink] {
        &self.sinks
    }

    pub fn input_points(&self) -> &[InputPoint] {
        &self.input_points
    }

    /// Speed used for free-flow travel times when a road allows more.
    pub fn free_speed(&self) -> f64 {
        self.free_speed
    }

    pub fn road(&self, ix: RoadIx) -> &Road {
        &self.roads[ix]
    }

    pub fn road_ix(&self, id: &str) -> Option<RoadIx> {
        self.road_index.get(id).copied()
    }

    pub fn node_ix(&self, id: &str) -> Option<NodeIx> {
        self.node_index.get(id).copied()
    }

    pub fn node(&self, ix: NodeIx) -> &Node {
        &self.nodes[ix]
    }

    pub fn sink_ix(&self, id: &str) -> Option<SinkIx> {
        self.sink_index.get(id).copied()
    }

    pub fn sink(&self, ix: SinkIx) -> &Sink {
        &self.sinks[ix]
    }

    /// Sink attached to the end of `road`, if any.
    pub fn sink_at(&self, road: RoadIx) -> Option<SinkIx> {
        self.sink_of_road[road]
    }

    /// Roads enterable from the end of `road`, sorted by identifier.
    pub fn successors(&self, road: RoadIx) -> &[RoadIx] {
        &self.successors[road]
    }

    /// Roads whose end leads into `road`, sorted by identifier.
    pub fn predecessors(&self, road: RoadIx) -> &[RoadIx] {
        &self.predecessors[road]
    }

    pub fn end_node(&self, road: RoadIx) -> Option<NodeIx> {
        self.node_ix(&self.roads[road].to_node)
    }

    /// Lane on `to` reached from `from_lane` of `from`, if the turn map permits it.
    pub fn turn_target(&self, from: RoadIx, from_lane: usize, to: RoadIx) -> Option<usize> {
        let node = self.end_node(from)?;
        let (from_id, to_id) = (&self.roads[from].id, &self.roads[to].id);
        self.nodes[node]
            .turns
            .iter()
            .filter(|t| &t.from_road == from_id && t.from_lane == from_lane && &t.to_road == to_id)
            .map(|t| t.to_lane)
            .min()
    }

    /// Lane of `from` that feeds `to_lane` of `to`, if any (smallest index).
    pub fn turn_source(&self, from: RoadIx, to: RoadIx, to_lane: usize) -> Option<usize> {
        let node = self.end_node(from)?;
        let (from_id, to_id) = (&self.roads[from].id, &self.roads[to].id);
        self.nodes[node]
            .turns
            .iter()
            .filter(|t| &t.from_road == from_id && &t.to_road == to_id && t.to_lane == to_lane)
            .map(|t| t.from_lane)
            .min()
    }

    /// Speed limit for `lane` at `position` on `road` at time `t`.
    pub fn speed_limit_at(&self, road: RoadIx, lane: usize, position: f64, t: f64) -> f64 {
        let r = &self.roads[road];
        let mut best: Option<(f64, f64)> = None;
        for sign in &r.signs {
            if let SignKind::SpeedLimit(v) = sign.kind {
                if sign.position <= position
                    && sign.lanes.contains(lane)
                    && sign.is_active(t)
                    && best.is_none_or(|(p, _)| sign.position >= p)
                {
                    best = Some((sign.position, v));
                }
            }
        }
        best.map_or(r.speed_limit, |(_, v)| v)
    }

    /// Lowest limit in force anywhere in `[start, end)` on any lane of `road`.
    pub fn min_speed_limit(&self, road: RoadIx, start: f64, end: f64, t: f64) -> f64 {
        let r = &self.roads[road];
        let mut probes = vec![start];
        probes.extend(r.signs.iter().filter(|s| s.position > start && s.position < end).map(|s| s.position));
        let mut min = f64::INFINITY;
        for lane in 0..r.lane_count {
            for &p in &probes {
                min = min.min(self.speed_limit_at(road, lane, p, t));
            }
        }
        min
    }

    /// Speed-limit changes strictly ahead of `position` on `road` for `lane`, as
    /// `(position, limit)` pairs in increasing position.
    pub fn limits_ahead(&self, road: RoadIx, lane: usize, position: f64, t: f64) -> Vec<(f64, f64)> {
        let r = &self.roads[road];
        let mut out: Vec<(f64, f64)> = r
            .signs
            .iter()
            .filter(|s| s.position > position && s.lanes.contains(lane) && s.is_active(t))
            .filter_map(|s| match s.kind {
                SignKind::SpeedLimit(v) => Some((s.position, v)),
                _ => None,
            })
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Stop lines ahead of `position` on `road` for `lane`, as `(sign index, position)`.
    pub fn stops_ahead(&self, road: RoadIx, lane: usize, position: f64, t: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.roads[road]
            .signs
            .iter()
            .enumerate()
            .filter(move |(_, s)| {
                matches!(s.kind, SignKind::Stop) && s.position >= position && s.lanes.contains(lane) && s.is_active(t)
            })
            .map(|(i, s)| (i, s.position))
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn road(id: &str, from: &str, to: &str, length: f64, lanes: usize, limit: f64) -> Road {
        Road {
            id: id.into(),
            from_node: from.into(),
            to_node: to.into(),
            length,
            lane_count: lanes,
            speed_limit: limit,
            signs: Vec::new(),
        }
    }

    pub fn straight_turns(node: &str, from: &str, to: &str, lanes: usize) -> Node {
        Node {
            id: node.into(),
            kind: NodeKind::Crossroads,
            turns: (0..lanes)
                .map(|l| Turn { from_road: from.into(), from_lane: l, to_road: to.into(), to_lane: l })
                .collect(),
        }
    }

    pub fn bare_node(id: &str) -> Node {
        Node { id: id.into(), kind: NodeKind::Crossroads, turns: Vec::new() }
    }

    /// Y network: A splits at N1 into B and C.
    pub fn y_network() -> RoadNetwork {
        let roads = vec![
            road("A", "N0", "N1", 500.0, 2, 30.0),
            road("B", "N1", "N2", 500.0, 1, 30.0),
            road("C", "N1", "N3", 500.0, 1, 30.0),
        ];
        let n1 = Node {
            id: "N1".into(),
            kind: NodeKind::HighwayExtraction,
            turns: vec![
                Turn { from_road: "A".into(), from_lane: 0, to_road: "B".into(), to_lane: 0 },
                Turn { from_road: "A".into(), from_lane: 1, to_road: "C".into(), to_lane: 0 },
            ],
        };
        let nodes = vec![bare_node("N0"), n1, bare_node("N2"), bare_node("N3")];
        let sinks = vec![Sink { id: "SB".into(), road: "B".into() }, Sink { id: "SC".into(), road: "C".into() }];
        let inputs = vec![InputPoint { id: "IA".into(), road: "A".into(), lanes: LaneSet::All }];
        RoadNetwork::new(roads, nodes, sinks, inputs, 33.33)
    }
}
