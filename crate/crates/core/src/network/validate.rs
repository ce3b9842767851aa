use std::collections::HashSet;

use thiserror::Error;

use super::{NodeKind, RoadNetwork, SignKind};

/// Highest lane count a road may declare.
pub const MAX_LANES: usize = 5;

/// One broken network invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("duplicate road id `{0}`")]
    DuplicateRoadId(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),
    #[error("duplicate connector id `{0}`")]
    DuplicateConnectorId(String),
    #[error("road `{road}` has {lane_count} lanes (allowed 1..={MAX_LANES})")]
    LaneCountOutOfRange { road: String, lane_count: usize },
    #[error("road `{road}` has non-positive length {length}")]
    NonPositiveLength { road: String, length: f64 },
    #[error("road `{road}` has non-positive speed limit {limit}")]
    NonPositiveSpeedLimit { road: String, limit: f64 },
    #[error("road `{road}` references unknown node `{node}`")]
    DanglingNode { road: String, node: String },
    #[error("node `{0}` is not an endpoint of any road")]
    OrphanNode(String),
    #[error("turn at node `{node}` names road `{road}` which does not meet that node in the right direction")]
    DanglingTurn { node: String, road: String },
    #[error("turn at node `{node}` uses lane {lane} of road `{road}` which does not exist")]
    TurnLaneOutOfRange { node: String, road: String, lane: usize },
    #[error("highway insertion node `{node}` has {incoming} incoming roads (needs at least 2)")]
    InsertionArity { node: String, incoming: usize },
    #[error("highway extraction node `{node}` has {outgoing} outgoing roads (needs at least 2)")]
    ExtractionArity { node: String, outgoing: usize },
    #[error("sign {index} of road `{road}` at {position} m lies outside the road")]
    SignOutOfRange { road: String, index: usize, position: f64 },
    #[error("sign {index} of road `{road}` applies to no lane")]
    EmptySignLanes { road: String, index: usize },
    #[error("sign {index} of road `{road}` names lane {lane} which does not exist")]
    SignLaneOutOfRange { road: String, index: usize, lane: usize },
    #[error("speed limit sign {index} of road `{road}` has non-positive value {value}")]
    NonPositiveSignLimit { road: String, index: usize, value: f64 },
    #[error("connector `{connector}` references unknown road `{road}`")]
    DanglingConnectorRoad { connector: String, road: String },
    #[error("connector `{connector}` names lane {lane} which does not exist on road `{road}`")]
    ConnectorLaneOutOfRange { connector: String, road: String, lane: usize },
    #[error("network is disconnected: node `{0}` is unreachable from the rest")]
    Disconnected(String),
    #[error("network free speed must be positive, got {0}")]
    NonPositiveFreeSpeed(f64),
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for id in ids {
        if !seen.insert(id) && !out.iter().any(|d: &String| d == id) {
            out.push(id.to_string());
        }
    }
    out
}

/// Collects every invariant violation of `network`; an empty result means valid.
pub fn validate_network(network: &RoadNetwork) -> Vec<Violation> {
    let mut out = Vec::new();
    let roads = network.roads();
    let nodes = network.nodes();

    if !(network.free_speed() > 0.0) {
        out.push(Violation::NonPositiveFreeSpeed(network.free_speed()));
    }
    out.extend(duplicates(roads.iter().map(|r| r.id.as_str())).into_iter().map(Violation::DuplicateRoadId));
    out.extend(duplicates(nodes.iter().map(|n| n.id.as_str())).into_iter().map(Violation::DuplicateNodeId));
    let connectors = network.sinks().iter().map(|s| s.id.as_str()).chain(network.input_points().iter().map(|i| i.id.as_str()));
    out.extend(duplicates(connectors).into_iter().map(Violation::DuplicateConnectorId));

    for road in roads {
        if !(1..=MAX_LANES).contains(&road.lane_count) {
            out.push(Violation::LaneCountOutOfRange { road: road.id.clone(), lane_count: road.lane_count });
        }
        if !(road.length > 0.0) {
            out.push(Violation::NonPositiveLength { road: road.id.clone(), length: road.length });
        }
        if !(road.speed_limit > 0.0) {
            out.push(Violation::NonPositiveSpeedLimit { road: road.id.clone(), limit: road.speed_limit });
        }
        for node in [&road.from_node, &road.to_node] {
            if network.node_ix(node).is_none() {
                out.push(Violation::DanglingNode { road: road.id.clone(), node: node.clone() });
            }
        }
        for (index, sign) in road.signs.iter().enumerate() {
            if !(sign.position >= 0.0 && sign.position <= road.length) {
                out.push(Violation::SignOutOfRange { road: road.id.clone(), index, position: sign.position });
            }
            match &sign.lanes {
                super::LaneSet::Only(lanes) if lanes.is_empty() => {
                    out.push(Violation::EmptySignLanes { road: road.id.clone(), index });
                }
                super::LaneSet::Only(lanes) => {
                    for &lane in lanes.iter().filter(|&&l| l >= road.lane_count) {
                        out.push(Violation::SignLaneOutOfRange { road: road.id.clone(), index, lane });
                    }
                }
                super::LaneSet::All => {}
            }
            if let SignKind::SpeedLimit(value) = sign.kind {
                if !(value > 0.0) {
                    out.push(Violation::NonPositiveSignLimit { road: road.id.clone(), index, value });
                }
            }
        }
    }

    for node in nodes {
        let incoming = roads.iter().filter(|r| r.to_node == node.id).count();
        let outgoing = roads.iter().filter(|r| r.from_node == node.id).count();
        if incoming + outgoing == 0 {
            out.push(Violation::OrphanNode(node.id.clone()));
        }
        match node.kind {
            NodeKind::HighwayInsertion if incoming < 2 => {
                out.push(Violation::InsertionArity { node: node.id.clone(), incoming });
            }
            NodeKind::HighwayExtraction if outgoing < 2 => {
                out.push(Violation::ExtractionArity { node: node.id.clone(), outgoing });
            }
            _ => {}
        }
        for turn in &node.turns {
            let legs = [(&turn.from_road, turn.from_lane, true), (&turn.to_road, turn.to_lane, false)];
            for (road_id, lane, incoming_leg) in legs {
                match network.road_ix(road_id).map(|ix| network.road(ix)) {
                    Some(road) if (incoming_leg && road.to_node == node.id) || (!incoming_leg && road.from_node == node.id) => {
                        if lane >= road.lane_count {
                            out.push(Violation::TurnLaneOutOfRange { node: node.id.clone(), road: road_id.clone(), lane });
                        }
                    }
                    _ => out.push(Violation::DanglingTurn { node: node.id.clone(), road: road_id.clone() }),
                }
            }
        }
    }

    for sink in network.sinks() {
        if network.road_ix(&sink.road).is_none() {
            out.push(Violation::DanglingConnectorRoad { connector: sink.id.clone(), road: sink.road.clone() });
        }
    }
    for input in network.input_points() {
        match network.road_ix(&input.road) {
            None => out.push(Violation::DanglingConnectorRoad { connector: input.id.clone(), road: input.road.clone() }),
            Some(ix) => {
                let lane_count = network.road(ix).lane_count;
                if let super::LaneSet::Only(lanes) = &input.lanes {
                    for &lane in lanes.iter().filter(|&&l| l >= lane_count) {
                        out.push(Violation::ConnectorLaneOutOfRange {
                            connector: input.id.clone(),
                            road: input.road.clone(),
                            lane,
                        });
                    }
                }
            }
        }
    }

    out.extend(connectivity(network));
    out
}

/// Weak connectivity of the node/road incidence graph.
fn connectivity(network: &RoadNetwork) -> Option<Violation> {
    let nodes = network.nodes();
    if nodes.is_empty() {
        return None;
    }
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for road in network.roads() {
        if let (Some(a), Some(b)) = (network.node_ix(&road.from_node), network.node_ix(&road.to_node)) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let root = find(&mut parent, 0);
    (1..nodes.len()).find(|&i| find(&mut parent, i) != root).map(|i| Violation::Disconnected(nodes[i].id.clone()))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{RoadNetwork, Turn};
    use super::*;

    fn rebuild(net: RoadNetwork, f: impl FnOnce(&mut Vec<super::super::Road>, &mut Vec<super::super::Node>)) -> RoadNetwork {
        let (mut roads, mut nodes, sinks, inputs, free) = net.into_parts();
        f(&mut roads, &mut nodes);
        RoadNetwork::new(roads, nodes, sinks, inputs, free)
    }

    #[test]
    fn y_network_is_valid() {
        assert!(validate_network(&y_network()).is_empty());
    }

    #[test]
    fn six_lanes_rejected() {
        let net = rebuild(y_network(), |roads, _| roads[0].lane_count = 6);
        assert!(validate_network(&net)
            .iter()
            .any(|v| matches!(v, Violation::LaneCountOutOfRange { lane_count: 6, .. })));
    }

    #[test]
    fn turn_naming_non_incident_road_rejected() {
        let net = rebuild(y_network(), |_, nodes| {
            nodes[1].turns.push(Turn { from_road: "B".into(), from_lane: 0, to_road: "C".into(), to_lane: 0 });
        });
        let v = validate_network(&net);
        assert_eq!(v, vec![Violation::DanglingTurn { node: "N1".into(), road: "B".into() }]);
    }

    #[test]
    fn mutation_set_always_detected() {
        type Mutation = Box<dyn Fn(&mut Vec<super::super::Road>, &mut Vec<super::super::Node>)>;
        let mutations: Vec<Mutation> = vec![
            Box::new(|_, nodes| {
                nodes.remove(0);
            }),
            Box::new(|_, nodes| nodes[1].turns[0].from_lane = 7),
            Box::new(|roads, _| roads[1].length = -5.0),
            Box::new(|roads, _| roads[2].speed_limit = 0.0),
        ];
        for (i, m) in mutations.iter().enumerate() {
            let net = rebuild(y_network(), m);
            assert!(!validate_network(&net).is_empty(), "mutation {i} undetected");
        }
    }

    #[test]
    fn extraction_needs_two_exits() {
        let net = rebuild(y_network(), |roads, _| {
            roads.remove(2);
        });
        let v = validate_network(&net);
        assert!(v.iter().any(|v| matches!(v, Violation::ExtractionArity { outgoing: 1, .. })));
    }

    #[test]
    fn disconnected_component_reported() {
        let net = rebuild(y_network(), |roads, nodes| {
            roads.push(road("Z", "M0", "M1", 100.0, 1, 10.0));
            nodes.push(bare_node("M0"));
            nodes.push(bare_node("M1"));
        });
        assert!(validate_network(&net).iter().any(|v| matches!(v, Violation::Disconnected(_))));
    }
}
