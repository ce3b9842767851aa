//! Static free-flow routing.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NodeIx, RoadIx, RoadNetwork, SinkIx};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("destination `{destination}` is unreachable from road `{origin}`")]
    Unreachable { origin: String, destination: String },
    #[error("road `{0}` leads to neither a sink nor a cycle")]
    DeadEnd(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Destination {
    Sink(SinkIx),
    /// Circulating route: after the last road, continue at `roads[restart]`.
    Loop { restart: usize },
}

/// Road sequence a vehicle follows, fixed at creation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Route {
    pub roads: Vec<RoadIx>,
    pub destination: Destination,
}

impl Route {
    /// Position in `roads` that follows `index`, or `None` at the final road.
    pub fn next_index(&self, index: usize) -> Option<usize> {
        if index + 1 < self.roads.len() {
            Some(index + 1)
        } else {
            match self.destination {
                Destination::Sink(_) => None,
                Destination::Loop { restart } => Some(restart),
            }
        }
    }

    pub fn next_road(&self, index: usize) -> Option<RoadIx> {
        self.next_index(index).map(|i| self.roads[i])
    }

    pub fn ids<'a>(&self, network: &'a RoadNetwork) -> Vec<&'a str> {
        self.roads.iter().map(|&r| network.road(r).id.as_str()).collect()
    }

    /// Every consecutive pair (including the loop closure) meets at a node with a permitted turn.
    pub fn is_valid(&self, network: &RoadNetwork) -> bool {
        if self.roads.is_empty() {
            return false;
        }
        let pairs_ok = (0..self.roads.len()).all(|i| match self.next_road(i) {
            Some(next) => network.successors(self.roads[i]).contains(&next),
            None => true,
        });
        let end_ok = match self.destination {
            Destination::Sink(s) => network.sink_at(*self.roads.last().unwrap()) == Some(s),
            Destination::Loop { restart } => restart < self.roads.len(),
        };
        pairs_ok && end_ok
    }
}

fn travel_time(network: &RoadNetwork, road: RoadIx) -> f64 {
    let r = network.road(road);
    r.length / r.speed_limit.min(network.free_speed())
}

fn cost_cmp(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= 1e-9 * a.abs().max(b.abs()) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

fn label_cmp(network: &RoadNetwork, a: &(f64, Vec<RoadIx>), b: &(f64, Vec<RoadIx>)) -> Ordering {
    cost_cmp(a.0, b.0).then_with(|| {
        let ia = a.1.iter().map(|&r| network.road(r).id.as_str());
        let ib = b.1.iter().map(|&r| network.road(r).id.as_str());
        ia.cmp(ib)
    })
}

/// Shortest free-flow path labels from `origin` to every reachable road.
fn shortest_labels(network: &RoadNetwork, origin: RoadIx) -> Vec<Option<(f64, Vec<RoadIx>)>> {
    let n = network.roads().len();
    let mut labels: Vec<Option<(f64, Vec<RoadIx>)>> = vec![None; n];
    let mut settled = vec![false; n];
    labels[origin] = Some((travel_time(network, origin), vec![origin]));
    loop {
        let next = (0..n)
            .filter(|&i| !settled[i] && labels[i].is_some())
            .min_by(|&a, &b| label_cmp(network, labels[a].as_ref().unwrap(), labels[b].as_ref().unwrap()));
        let Some(current) = next else { break };
        settled[current] = true;
        let (cost, path) = labels[current].clone().unwrap();
        for &succ in network.successors(current) {
            if settled[succ] {
                continue;
            }
            let mut candidate_path = path.clone();
            candidate_path.push(succ);
            let candidate = (cost + travel_time(network, succ), candidate_path);
            let better = match &labels[succ] {
                None => true,
                Some(existing) => label_cmp(network, &candidate, existing) == Ordering::Less,
            };
            if better {
                labels[succ] = Some(candidate);
            }
        }
    }
    labels
}

/// Minimum free-flow travel-time route from `origin` to the sink `destination`.
/// Equal-time alternatives resolve to the lexicographically smallest road-id sequence.
pub fn compute_route(network: &RoadNetwork, origin: RoadIx, destination: SinkIx) -> Result<Route, RouteError> {
    let unreachable = || RouteError::Unreachable {
        origin: network.road(origin).id.clone(),
        destination: network.sink(destination).id.clone(),
    };
    let target = network.road_ix(&network.sink(destination).road).ok_or_else(unreachable)?;
    let labels = shortest_labels(network, origin);
    let (_, roads) = labels[target].clone().ok_or_else(unreachable)?;
    Ok(Route { roads, destination: Destination::Sink(destination) })
}

/// Route for a vehicle created without a destination (by a generator without
/// one, or when flow is converted back into vehicles): the nearest reachable
/// sink, or a cycle following the smallest successor id when no sink is reachable.
pub fn default_route(network: &RoadNetwork, origin: RoadIx) -> Result<Route, RouteError> {
    let labels = shortest_labels(network, origin);
    let best_sink = (0..network.sinks().len())
        .filter_map(|s| {
            let road = network.road_ix(&network.sink(s).road)?;
            labels[road].as_ref().map(|l| (s, l.0))
        })
        .min_by(|a, b| cost_cmp(a.1, b.1).then_with(|| network.sink(a.0).id.cmp(&network.sink(b.0).id)));
    if let Some((sink, _)) = best_sink {
        return compute_route(network, origin, sink);
    }
    let mut roads = vec![origin];
    loop {
        let last = *roads.last().unwrap();
        let Some(&next) = network.successors(last).first() else {
            return Err(RouteError::DeadEnd(network.road(last).id.clone()));
        };
        if let Some(restart) = roads.iter().position(|&r| r == next) {
            return Ok(Route { roads, destination: Destination::Loop { restart } });
        }
        roads.push(next);
    }
}

/// Lanes of `road` from which the node's turn map lets a vehicle enter the
/// road following `route_index` on `route`. Every lane qualifies on the final road.
pub fn lanes_to_destination(
    network: &RoadNetwork,
    road: RoadIx,
    node: NodeIx,
    route: &Route,
    route_index: usize,
) -> Vec<usize> {
    let r = network.road(road);
    debug_assert_eq!(network.node(node).id, r.to_node, "road must end at node");
    match route.next_road(route_index) {
        None => (0..r.lane_count).collect(),
        Some(next) => (0..r.lane_count).filter(|&l| network.turn_target(road, l, next).is_some()).collect(),
    }
}

/// Routes shared between vehicles with the same origin road and destination.
#[derive(Debug, Clone, Default)]
pub struct RouteCache {
    map: HashMap<(RoadIx, Option<SinkIx>), Arc<Route>>,
}

impl RouteCache {
    /// Route from `origin` to `destination`, or the default route when there is none.
    pub fn get(&mut self, network: &RoadNetwork, origin: RoadIx, destination: Option<SinkIx>) -> Result<Arc<Route>, RouteError> {
        if let Some(r) = self.map.get(&(origin, destination)) {
            return Ok(r.clone());
        }
        let route = Arc::new(match destination {
            Some(sink) => compute_route(network, origin, sink)?,
            None => default_route(network, origin)?,
        });
        self.map.insert((origin, destination), route.clone());
        Ok(route)
    }
}
