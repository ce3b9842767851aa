//! Neighbor search over the vehicle store.
//!
//! Leaders are searched along the vehicle's route, continuing across nodes
//! through the turn map; followers are searched upstream through predecessor
//! roads. Stop lines, blocked cluster boundaries and the end of a lane that
//! does not continue on the route appear as standing virtual leaders.

use crate::network::{lanes_to_destination, RoadIx, RoadNetwork, Route, SignKind};

use super::{Direction, FollowerView, LaneView, LeaderView, MicroState, Perception, VehicleId};

/// Read-only view of everything a driver can perceive.
#[derive(Debug, Clone, Copy)]
pub struct Surroundings<'a> {
    pub network: &'a RoadNetwork,
    pub state: &'a MicroState,
    pub time: f64,
    /// Blocked boundaries, standing obstacles across all lanes at `(road, position)`.
    pub walls: &'a [(RoadIx, f64)],
    /// Front-to-front search distance (m).
    pub horizon: f64,
    pub navigation_horizon: f64,
}

pub const DEFAULT_PERCEPTION_HORIZON: f64 = 200.0;
pub const DEFAULT_NAVIGATION_HORIZON: f64 = 300.0;

/// What the nearest obstacle ahead is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderKind {
    Vehicle(usize),
    Stop { road: RoadIx, sign: usize },
    Boundary,
    LaneEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ahead {
    pub view: LeaderView,
    pub kind: LeaderKind,
}

/// Full perception of one vehicle plus the navigation facts the behavior chain needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub perception: Perception,
    pub leader_kind: Option<LeaderKind>,
    pub distance_to_node: f64,
    /// Lanes of the current road that continue on the route, `None` on the final road.
    pub permitted: Option<Vec<usize>>,
}

/// Where a search starts within a lane and whom it skips.
#[derive(Debug, Clone, Copy)]
struct Origin {
    road: RoadIx,
    lane: usize,
    position: f64,
    /// Own id when the searcher already sits in this lane; ties in position are
    /// then broken by id. A prospective search counts an abreast vehicle as leader.
    id: Option<VehicleId>,
    exclude: Option<usize>,
}

fn is_ahead(s: &MicroState, j: usize, o: &Origin) -> bool {
    let v = s.get(j);
    v.position > o.position || (v.position == o.position && o.id.is_none_or(|id| v.id > id))
}

fn is_behind(s: &MicroState, j: usize, o: &Origin) -> bool {
    let v = s.get(j);
    v.position < o.position || (v.position == o.position && o.id.is_some_and(|id| v.id < id))
}

/// Nearest leader (vehicle or obstacle) ahead of `o` following `route` from `route_index`.
fn ahead(
    s: &Surroundings<'_>,
    o: Origin,
    route: &Route,
    route_index: usize,
    cleared: &[(RoadIx, usize)],
    obstacles: bool,
) -> Option<Ahead> {
    let net = s.network;
    let mut best: Option<Ahead> = None;
    let consider = |gap: f64, speed: f64, kind: LeaderKind, best: &mut Option<Ahead>| {
        if best.is_none_or(|b| gap < b.view.gap) {
            *best = Some(Ahead { view: LeaderView { gap, speed }, kind });
        }
    };
    // distance from the searcher's front bumper to coordinate 0 of the current road
    let mut offset = -o.position;
    let (mut road, mut lane, mut index) = (o.road, o.lane, route_index);
    let mut first = true;
    for _ in 0..10_000 {
        let list = s.state.lane(road, lane);
        let from = if first { list.partition_point(|&j| !is_ahead(s.state, j, &o)) } else { 0 };
        if let Some(&j) = list[from..].iter().find(|&&j| Some(j) != o.exclude) {
            let v = s.state.get(j);
            let d = v.position + offset;
            if d <= s.horizon {
                consider(d - v.length, v.speed, LeaderKind::Vehicle(j), &mut best);
            }
        }
        if obstacles {
            let min_pos = if first { o.position } else { 0.0 };
            for (sign, p) in net.stops_ahead(road, lane, min_pos, s.time) {
                if p + offset <= s.horizon && !cleared.contains(&(road, sign)) {
                    consider(p + offset, 0.0, LeaderKind::Stop { road, sign }, &mut best);
                }
            }
            for &(wr, wp) in s.walls {
                if wr == road && (wp > min_pos || (!first && wp == 0.0)) && wp + offset <= s.horizon {
                    consider(wp + offset, 0.0, LeaderKind::Boundary, &mut best);
                }
            }
        }
        if best.is_some() {
            break;
        }
        let length = net.road(road).length;
        let to_end = length + offset;
        if to_end > s.horizon {
            break;
        }
        let Some(next_index) = route.next_index(index) else { break };
        let next = route.roads[next_index];
        match net.turn_target(road, lane, next) {
            Some(next_lane) => {
                offset += length;
                road = next;
                lane = next_lane;
                index = next_index;
                first = false;
            }
            None => {
                let any_lane = (0..net.road(road).lane_count).any(|l| net.turn_target(road, l, next).is_some());
                if obstacles && any_lane {
                    consider(to_end, 0.0, LeaderKind::LaneEnd, &mut best);
                }
                break;
            }
        }
    }
    best
}

/// Nearest vehicle behind `o`, as `(vehicle index, front-to-front distance)`.
fn behind(s: &Surroundings<'_>, o: Origin) -> Option<(usize, f64)> {
    let list = s.state.lane(o.road, o.lane);
    let upto = list.partition_point(|&j| is_behind(s.state, j, &o));
    if let Some(&j) = list[..upto].iter().rev().find(|&&j| Some(j) != o.exclude) {
        let d = o.position - s.state.get(j).position;
        return (d <= s.horizon).then_some((j, d));
    }
    upstream(s, o.road, o.lane, o.position, o.exclude, 0)
}

/// Closest vehicle on roads feeding `(road, lane)`, `dist` meters behind its start.
fn upstream(s: &Surroundings<'_>, road: RoadIx, lane: usize, dist: f64, exclude: Option<usize>, depth: usize) -> Option<(usize, f64)> {
    if depth > 64 {
        return None;
    }
    let net = s.network;
    let mut best: Option<(usize, f64)> = None;
    for &p in net.predecessors(road) {
        let Some(pl) = net.turn_source(p, road, lane) else { continue };
        let len = net.road(p).length;
        let found = match s.state.lane(p, pl).iter().rev().find(|&&j| Some(j) != exclude) {
            Some(&j) => {
                let d = dist + len - s.state.get(j).position;
                (d <= s.horizon).then_some((j, d))
            }
            None if dist + len < s.horizon => upstream(s, p, pl, dist + len, exclude, depth + 1),
            None => None,
        };
        if let Some(c) = found {
            let better = best.is_none_or(|b| c.1 < b.1 || (c.1 == b.1 && s.state.get(c.0).id < s.state.get(b.0).id));
            if better {
                best = Some(c);
            }
        }
    }
    best
}

fn follower_view(s: &Surroundings<'_>, found: Option<(usize, f64)>, own_length: f64) -> Option<FollowerView> {
    found.map(|(j, d)| {
        let f = s.state.get(j);
        FollowerView { gap: d - own_length, speed: f.speed, params: f.params }
    })
}

/// Leader and follower a vehicle of length `own_length` would have at
/// `(road, lane, position)` while following `route`. With `obstacles` off only
/// vehicles count, which is what insertion checks use.
#[allow(clippy::too_many_arguments)]
pub fn lane_view_at(
    s: &Surroundings<'_>,
    road: RoadIx,
    lane: usize,
    position: f64,
    route: &Route,
    route_index: usize,
    own_length: f64,
    obstacles: bool,
) -> LaneView {
    let o = Origin { road, lane, position, id: None, exclude: None };
    LaneView {
        leader: ahead(s, o, route, route_index, &[], obstacles).map(|a| a.view),
        follower: follower_view(s, behind(s, o), own_length),
    }
}

/// Speed limit the driver adapts to: the limit in force, lowered by upcoming
/// limits once the comfortable braking distance to them is reached.
fn anticipated_limit(s: &Surroundings<'_>, ix: usize) -> f64 {
    let net = s.network;
    let v = s.state.get(ix);
    let current = net.speed_limit_at(v.road, v.lane, v.position, s.time);
    let braking = 2.0 * v.params.comfortable_decel;
    let mut limit = current;
    let mut check = |d: f64, vl: f64| {
        if vl < v.speed && d <= (v.speed * v.speed - vl * vl) / braking {
            limit = limit.min(vl);
        }
    };
    for (p, vl) in net.limits_ahead(v.road, v.lane, v.position, s.time) {
        check(p - v.position, vl);
    }
    let to_end = net.road(v.road).length - v.position;
    if to_end <= s.horizon {
        if let Some(next) = v.route.next_road(v.route_index) {
            if let Some(nl) = net.turn_target(v.road, v.lane, next) {
                check(to_end, net.speed_limit_at(next, nl, 0.0, s.time));
                for (p, vl) in net.limits_ahead(next, nl, 0.0, s.time) {
                    check(to_end + p, vl);
                }
            }
        }
    }
    limit
}

/// Perception of vehicle `ix`, derived only from the current state.
pub fn perceive(s: &Surroundings<'_>, ix: usize) -> Scene {
    let net = s.network;
    let v = s.state.get(ix);
    let lane_count = net.road(v.road).lane_count;
    let own = Origin { road: v.road, lane: v.lane, position: v.position, id: Some(v.id), exclude: Some(ix) };
    let lead = ahead(s, own, &v.route, v.route_index, &v.memory.cleared_stops, true);
    let current = LaneView { leader: lead.map(|a| a.view), follower: follower_view(s, behind(s, own), v.length) };

    let side = |dir: Direction| {
        dir.apply(v.lane, lane_count).map(|lane| {
            let o = Origin { road: v.road, lane, position: v.position, id: None, exclude: Some(ix) };
            LaneView {
                leader: ahead(s, o, &v.route, v.route_index, &v.memory.cleared_stops, true).map(|a| a.view),
                follower: follower_view(s, behind(s, o), v.length),
            }
        })
    };

    let permitted = v.route.next_index(v.route_index).and_then(|_| {
        net.end_node(v.road).map(|node| lanes_to_destination(net, v.road, node, &v.route, v.route_index))
    });

    Scene {
        perception: Perception {
            own_length: v.length,
            current,
            left: side(Direction::Left),
            right: side(Direction::Right),
            speed_limit: anticipated_limit(s, ix),
        },
        leader_kind: lead.map(|a| a.kind),
        distance_to_node: net.road(v.road).length - v.position,
        permitted,
    }
}

/// True when a stop line is the leader and the vehicle has come to rest in front of it.
pub fn stop_honored(scene: &Scene, speed: f64, min_gap: f64) -> Option<(RoadIx, usize)> {
    match scene.leader_kind {
        Some(LeaderKind::Stop { road, sign }) if speed <= STOP_SPEED && scene.perception.current.leader_gap() <= min_gap + STOP_SLACK => {
            Some((road, sign))
        }
        _ => None,
    }
}

/// Speed below which a vehicle counts as stopped at a stop line (m/s).
pub const STOP_SPEED: f64 = 0.5;
/// Distance beyond the minimum gap within which a stopped vehicle honors a stop line (m).
pub const STOP_SLACK: f64 = 1.0;

/// Whether any active stop sign is present on `road` for `lane`.
pub fn has_stop(network: &RoadNetwork, road: RoadIx, lane: usize, t: f64) -> bool {
    network.road(road).signs.iter().any(|s| matches!(s.kind, SignKind::Stop) && s.lanes.contains(lane) && s.is_active(t))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::micro::{DriverParams, Vehicle, VehicleMemory};
    use crate::network::{Destination, LaneSet, Node, NodeKind, Road, Turn, VerticalSign};

    fn chain(lanes: usize) -> RoadNetwork {
        let road = |id: &str, from: &str, to: &str| Road {
            id: id.into(),
            from_node: from.into(),
            to_node: to.into(),
            length: 300.0,
            lane_count: lanes,
            speed_limit: 30.0,
            signs: vec![],
        };
        let turns = (0..lanes)
            .map(|l| Turn { from_road: "R1".into(), from_lane: l, to_road: "R2".into(), to_lane: l })
            .collect();
        let nodes = vec![
            Node { id: "A".into(), kind: NodeKind::Crossroads, turns: vec![] },
            Node { id: "B".into(), kind: NodeKind::Crossroads, turns },
            Node { id: "C".into(), kind: NodeKind::Crossroads, turns: vec![] },
        ];
        RoadNetwork::new(vec![road("R1", "A", "B"), road("R2", "B", "C")], nodes, vec![], vec![], 33.33)
    }

    fn route() -> Arc<Route> {
        Arc::new(Route { roads: vec![0, 1], destination: Destination::Loop { restart: 1 } })
    }

    fn add(state: &mut MicroState, road: RoadIx, lane: usize, position: f64, speed: f64) {
        let id = state.allocate_id();
        state.push(Vehicle {
            id,
            road,
            lane,
            position,
            speed,
            length: 4.0,
            params: DriverParams::default(),
            route: route(),
            route_index: road,
            memory: VehicleMemory::default(),
        });
    }

    fn surroundings<'a>(net: &'a RoadNetwork, state: &'a MicroState) -> Surroundings<'a> {
        Surroundings {
            network: net,
            state,
            time: 0.0,
            walls: &[],
            horizon: DEFAULT_PERCEPTION_HORIZON,
            navigation_horizon: DEFAULT_NAVIGATION_HORIZON,
        }
    }

    #[test]
    fn alone_has_infinite_gap() {
        let net = chain(1);
        let mut state = MicroState::new(&net);
        add(&mut state, 0, 0, 10.0, 5.0);
        let scene = perceive(&surroundings(&net, &state), 0);
        assert_eq!(scene.perception.current.leader_gap(), f64::INFINITY);
        assert!(scene.perception.current.follower.is_none());
        assert!(scene.perception.left.is_none() && scene.perception.right.is_none());
    }

    #[test]
    fn gap_is_bumper_to_bumper() {
        let net = chain(1);
        let mut state = MicroState::new(&net);
        add(&mut state, 0, 0, 10.0, 5.0);
        add(&mut state, 0, 0, 62.0, 3.0);
        let scene = perceive(&surroundings(&net, &state), 0);
        assert_eq!(scene.perception.current.leader, Some(LeaderView { gap: 48.0, speed: 3.0 }));
        let back = perceive(&surroundings(&net, &state), 1);
        assert_eq!(back.perception.current.follower.unwrap().gap, 48.0);
    }

    #[test]
    fn leader_found_across_node() {
        let net = chain(1);
        let mut state = MicroState::new(&net);
        add(&mut state, 0, 0, 250.0, 5.0);
        add(&mut state, 1, 0, 40.0, 3.0);
        let scene = perceive(&surroundings(&net, &state), 0);
        assert_eq!(scene.perception.current.leader_gap(), 50.0 + 40.0 - 4.0);
        let back = perceive(&surroundings(&net, &state), 1);
        assert_eq!(back.perception.current.follower.unwrap().gap, 90.0 - 4.0);
    }

    #[test]
    fn stop_line_and_wall_are_standing_leaders() {
        let mut net = chain(1);
        let (mut roads, nodes, sinks, inputs, free) = net.into_parts();
        roads[0].signs.push(VerticalSign {
            kind: SignKind::Stop,
            position: 100.0,
            lanes: LaneSet::All,
            active_from: None,
            active_until: None,
        });
        net = RoadNetwork::new(roads, nodes, sinks, inputs, free);
        let mut state = MicroState::new(&net);
        add(&mut state, 0, 0, 70.0, 15.0);
        let scene = perceive(&surroundings(&net, &state), 0);
        assert_eq!(scene.perception.current.leader, Some(LeaderView { gap: 30.0, speed: 0.0 }));
        assert_eq!(scene.leader_kind, Some(LeaderKind::Stop { road: 0, sign: 0 }));
        state.vehicles_mut()[0].memory.cleared_stops.push((0, 0));
        let walls = [(1, 0.0)];
        let s = Surroundings { walls: &walls, ..surroundings(&net, &state) };
        let scene = perceive(&s, 0);
        assert_eq!(scene.perception.current.leader_gap(), f64::INFINITY, "wall beyond horizon");
        state.vehicles_mut()[0].position = 150.0;
        let s = Surroundings { walls: &walls, ..surroundings(&net, &state) };
        assert_eq!(perceive(&s, 0).perception.current.leader_gap(), 150.0);
    }

    type Neighbor = Option<(f64, f64)>;

    /// Exhaustive neighbor search on a two-road chain: everything is laid out
    /// on one axis where road 2 starts at 300 m.
    fn oracle(state: &MicroState, ix: usize, lane: usize, horizon: f64) -> (Neighbor, Neighbor) {
        let me = state.get(ix);
        let axis = |road: RoadIx, p: f64| road as f64 * 300.0 + p;
        let x = axis(me.road, me.position);
        let own_lane = lane == me.lane;
        let key = |j: usize| (axis(state.get(j).road, state.get(j).position), state.get(j).id);
        let mut leader: Option<usize> = None;
        let mut follower: Option<usize> = None;
        for j in 0..state.len() {
            if j == ix || state.get(j).lane != lane {
                continue;
            }
            let (p, id) = key(j);
            let ahead = p > x || (p == x && (!own_lane || id > me.id));
            if ahead && p - x <= horizon && leader.is_none_or(|l| key(j) < key(l)) {
                leader = Some(j);
            }
            if !ahead && x - p <= horizon && follower.is_none_or(|f| (p, id) > key(f)) {
                follower = Some(j);
            }
        }
        (
            leader.map(|j| (key(j).0 - x - 4.0, state.get(j).speed)),
            follower.map(|j| (x - key(j).0 - 4.0, state.get(j).speed)),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_pairwise_scan(cars in prop::collection::vec((0usize..2, 0usize..2, 0.0f64..300.0, 0.0f64..30.0), 1..50)) {
            let net = chain(2);
            let mut state = MicroState::new(&net);
            for (road, lane, pos, speed) in cars {
                add(&mut state, road, lane, (pos * 4.0).round() / 4.0, speed);
            }
            let s = surroundings(&net, &state);
            for ix in 0..state.len() {
                let scene = perceive(&s, ix);
                let me = state.get(ix);
                let views = [(me.lane, Some(scene.perception.current)), (0, scene.perception.left), (1, scene.perception.right)];
                for (lane, view) in views {
                    let Some(view) = view else { continue };
                    let (lead, follow) = oracle(&state, ix, lane, s.horizon);
                    prop_assert_eq!(view.leader.map(|l| (l.gap, l.speed)), lead);
                    prop_assert_eq!(view.follower.map(|f| (f.gap, f.speed)), follow);
                }
            }
        }
    }
}
