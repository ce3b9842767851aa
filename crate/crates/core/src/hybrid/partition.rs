use rand_chacha::ChaCha8Rng;

use crate::macroscopic::cell_mean_speed;
use crate::micro::perceive::{lane_view_at, Surroundings};
use crate::micro::{MicroState, Vehicle, VehicleMemory};
use crate::network::{CorridorIx, Corridors, RoadNetwork, RouteCache};

use super::{
    macro_allowed, Cluster, ClusterId, ClusterLayout, ClusterState, HybridConfig, HybridError, Interface, MacroState, ParkedVehicle,
    Representation, OFFSET_EPS,
};

/// Read-only context shared by the conversions.
#[derive(Clone, Copy)]
pub struct Coupling<'a> {
    pub network: &'a RoadNetwork,
    pub corridors: &'a Corridors,
    pub config: &'a HybridConfig,
    pub time: f64,
    /// Perception horizon used for placement checks.
    pub horizon: f64,
}

/// All clusters, ordered by corridor and start offset. Together they tile
/// every corridor without gap or overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    list: Vec<Cluster>,
    next_id: u64,
}

impl ClusterSet {
    pub fn new(cx: &Coupling<'_>, layout: &[ClusterLayout]) -> Self {
        let mut sorted = layout.to_vec();
        sorted.sort_by(|a, b| a.corridor.cmp(&b.corridor).then(a.start.total_cmp(&b.start)));
        let list = sorted
            .iter()
            .enumerate()
            .map(|(i, l)| Cluster {
                id: ClusterId(i as u64),
                corridor: l.corridor,
                start: l.start,
                end: l.end,
                state: match l.representation {
                    Representation::Micro => ClusterState::Micro,
                    Representation::Macro => {
                        let mut m = MacroState::empty(cx.network, cx.corridors, l.corridor, l.start, l.end, cx.config);
                        m.update_caps(cx.network, cx.time);
                        ClusterState::Macro(m)
                    }
                },
                residual: 0.0,
                parked: Vec::new(),
                downstream: None,
                last_switch: None,
                refined_by_lod: false,
                free_counter: 0,
                last_jam_step: None,
                inflow: 0.0,
                outflow: 0.0,
            })
            .collect();
        let mut set = Self { next_id: sorted.len() as u64, list };
        set.normalize(cx.corridors);
        set
    }

    pub fn list(&self) -> &[Cluster] {
        &self.list
    }

    pub fn list_mut(&mut self) -> &mut [Cluster] {
        &mut self.list
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    /// Id the next split will hand out.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn index_of(&self, id: ClusterId) -> Result<usize, HybridError> {
        self.list.iter().position(|c| c.id == id).ok_or(HybridError::UnknownCluster(id))
    }

    pub fn get(&self, id: ClusterId) -> Option<&Cluster> {
        self.list.iter().find(|c| c.id == id)
    }

    /// Cluster holding `offset` on `corridor`; the corridor end belongs to its last cluster.
    pub fn locate(&self, corridor: CorridorIx, offset: f64) -> Option<usize> {
        let first = self.list.partition_point(|c| c.corridor < corridor);
        let last = self.list.partition_point(|c| c.corridor <= corridor);
        if first == last {
            return None;
        }
        let within = self.list[first..last].partition_point(|c| c.start <= offset);
        Some(first + within.max(1) - 1)
    }

    fn corridor_range(&self, corridor: CorridorIx) -> (usize, usize) {
        (self.list.partition_point(|c| c.corridor < corridor), self.list.partition_point(|c| c.corridor <= corridor))
    }

    /// Number of clusters on `corridor`.
    pub fn count_on(&self, corridor: CorridorIx) -> usize {
        let (a, b) = self.corridor_range(corridor);
        b - a
    }

    /// Next cluster downstream on the same corridor, wrapping around rings.
    pub fn next_of(&self, corridors: &Corridors, i: usize) -> Option<usize> {
        let c = self.list[i].corridor;
        let (first, last) = self.corridor_range(c);
        if i + 1 < last {
            Some(i + 1)
        } else if corridors.get(c).cyclic && last - first >= 2 {
            Some(first)
        } else {
            None
        }
    }

    /// Next cluster upstream on the same corridor, wrapping around rings.
    pub fn prev_of(&self, corridors: &Corridors, i: usize) -> Option<usize> {
        let c = self.list[i].corridor;
        let (first, last) = self.corridor_range(c);
        if i > first {
            Some(i - 1)
        } else if corridors.get(c).cyclic && last - first >= 2 {
            Some(last - 1)
        } else {
            None
        }
    }

    /// Keeps an interface exactly where a downstream neighbor exists.
    fn normalize(&mut self, corridors: &Corridors) {
        for i in 0..self.list.len() {
            let has_next = self.next_of(corridors, i).is_some();
            let c = &mut self.list[i];
            match (&c.downstream, has_next) {
                (None, true) => c.downstream = Some(Interface::default()),
                (Some(_), false) => {
                    let iface = c.downstream.take().expect("checked");
                    c.residual += iface.mass();
                }
                _ => {}
            }
        }
    }

    /// Mass held by clusters and interfaces, individual vehicles excluded.
    pub fn held_mass(&self) -> f64 {
        self.list.iter().map(|c| c.held_mass() + c.downstream.as_ref().map_or(0.0, Interface::mass)).sum()
    }

    /// Vehicles of `micro` inside each cluster, by cluster index.
    pub fn vehicle_counts(&self, micro: &MicroState, corridors: &Corridors) -> Vec<usize> {
        let mut counts = vec![0; self.list.len()];
        for v in micro.vehicles() {
            let p = corridors.coord(v.road, v.position);
            if let Some(i) = self.locate(p.corridor, p.offset) {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Cluster mass: its vehicles plus everything it holds.
    pub fn cluster_mass(&self, micro: &MicroState, corridors: &Corridors, i: usize) -> f64 {
        let c = &self.list[i];
        let vehicles = micro
            .vehicles()
            .iter()
            .filter(|v| {
                let p = corridors.coord(v.road, v.position);
                self.locate(p.corridor, p.offset) == Some(i)
            })
            .count();
        vehicles as f64 + c.held_mass()
    }

    fn in_cluster(&self, corridors: &Corridors, i: usize, v: &Vehicle) -> bool {
        let p = corridors.coord(v.road, v.position);
        self.locate(p.corridor, p.offset) == Some(i)
    }

    /// Whether `id` could be turned into flow right now without losing vehicles.
    pub fn can_aggregate(&self, cx: &Coupling<'_>, micro: &MicroState, id: ClusterId, dt: f64) -> Result<(), HybridError> {
        let i = self.index_of(id)?;
        let c = &self.list[i];
        if c.representation() != Representation::Micro {
            return Err(HybridError::WrongRepresentation { cluster: id, expected: Representation::Micro });
        }
        if !macro_allowed(cx.network, cx.corridors, c.corridor, c.start, c.end, self.count_on(c.corridor)) {
            return Err(HybridError::MacroNotAllowed(id));
        }
        let state = MacroState::empty(cx.network, cx.corridors, c.corridor, c.start, c.end, cx.config);
        state.segment.check_cfl(dt).map_err(HybridError::Flow)?;
        let capacity: f64 = state.segment.cells.iter().map(|cell| cell.dx * cell.lanes_t() * state.segment.fd.jam_density).sum();
        let count = micro.vehicles().iter().filter(|v| self.in_cluster(cx.corridors, i, v)).count() + c.parked.len();
        if count as f64 > capacity + 1e-9 {
            return Err(HybridError::OverCapacity { cluster: id, vehicles: count, capacity });
        }
        Ok(())
    }

    /// Turns the vehicles of a micro cluster into cell densities. Counts that
    /// exceed a cell's jam capacity spill upstream, then downstream.
    pub fn aggregate(&mut self, cx: &Coupling<'_>, micro: &mut MicroState, id: ClusterId, dt: f64) -> Result<(), HybridError> {
        self.can_aggregate(cx, micro, id, dt)?;
        let i = self.index_of(id)?;
        let (corridor, start, end) = (self.list[i].corridor, self.list[i].start, self.list[i].end);
        let mut state = MacroState::empty(cx.network, cx.corridors, corridor, start, end, cx.config);
        state.update_caps(cx.network, cx.time);
        let n = state.segment.cells.len();
        let mut counts = vec![0.0f64; n];
        for v in micro.vehicles() {
            if self.in_cluster(cx.corridors, i, v) {
                counts[state.cell_at(cx.corridors.coord(v.road, v.position).offset)] += 1.0;
            }
        }
        for p in &self.list[i].parked {
            counts[state.cell_at(cx.corridors.coord(p.road, p.position).offset)] += 1.0;
        }
        let jam = state.segment.fd.jam_density;
        let caps: Vec<f64> = state.segment.cells.iter().map(|c| c.dx * c.lanes_t() * jam).collect();
        let mut carry = 0.0;
        for k in (0..n).rev() {
            counts[k] += carry;
            carry = (counts[k] - caps[k]).max(0.0);
            counts[k] -= carry;
        }
        for k in 0..n {
            if carry <= 0.0 {
                break;
            }
            let room = caps[k] - counts[k];
            let moved = room.min(carry);
            counts[k] += moved;
            carry -= moved;
        }
        for (cell, count) in state.segment.cells.iter_mut().zip(&counts) {
            cell.rho = count / (cell.dx * cell.lanes_t());
        }
        let set = &*self;
        micro.retain(|v| !set.in_cluster(cx.corridors, i, v));
        if let Some(up) = self.prev_of(cx.corridors, i) {
            if let Some(iface) = self.list[up].downstream.as_mut() {
                iface.fold_into_backlog();
            }
        }
        let c = &mut self.list[i];
        c.parked.clear();
        c.state = ClusterState::Macro(state);
        Ok(())
    }

    /// Turns cell densities back into vehicles. One accumulator, seeded with
    /// the cluster residual, runs over cells from downstream to upstream and
    /// lane by lane; whatever cannot be placed stays in the residual.
    pub fn disaggregate(
        &mut self,
        cx: &Coupling<'_>,
        micro: &mut MicroState,
        rng: &mut ChaCha8Rng,
        routes: &mut RouteCache,
        id: ClusterId,
    ) -> Result<(), HybridError> {
        let i = self.index_of(id)?;
        let c = &mut self.list[i];
        let ClusterState::Macro(state) = std::mem::replace(&mut c.state, ClusterState::Micro) else {
            return Err(HybridError::WrongRepresentation { cluster: id, expected: Representation::Macro });
        };
        let fd = state.segment.fd;
        let mut acc = c.residual;
        let mut unfit = 0usize;
        let (corridor, start) = (c.corridor, c.start);
        let corridor_road_start = |road| cx.corridors.get(corridor).road_start(road).expect("span road on corridor");
        for k in (0..state.segment.cells.len()).rev() {
            let cell = state.segment.cells[k];
            let span = &state.spans[k];
            let min_front = (start - corridor_road_start(span.road)).max(0.0);
            let mean = cell_mean_speed(&cell, &fd);
            let route = routes.get(cx.network, span.road, None).map_err(HybridError::Route)?;
            for lane in 0..cell.lanes as usize {
                acc += cell.rho * cell.dx;
                let count = (acc + 1e-9).floor().max(0.0) as usize;
                acc -= count as f64;
                for j in 0..count {
                    let slot = span.to - (j as f64 + 0.5) * cell.dx / count as f64;
                    let (params, length) = cx.config.driver.sample(rng);
                    let s = Surroundings { network: cx.network, state: micro, time: cx.time, walls: &[], horizon: cx.horizon, navigation_horizon: 0.0 };
                    let gap = lane_view_at(&s, span.road, lane, slot, &route, 0, length, false).leader_gap();
                    let pos = slot.min(slot + gap - params.min_gap);
                    if pos < min_front {
                        unfit += 1;
                        continue;
                    }
                    let view = lane_view_at(&s, span.road, lane, pos, &route, 0, length, false);
                    if view.follower.is_some_and(|f| f.gap < f.params.min_gap) {
                        unfit += 1;
                        continue;
                    }
                    let limit = cx.network.speed_limit_at(span.road, lane, pos, cx.time);
                    let room = ((view.leader_gap() - params.min_gap) / params.time_headway).max(0.0);
                    let speed = mean.min(limit).min(params.desired_speed).min(room);
                    let id = micro.allocate_id();
                    micro.push(Vehicle {
                        id,
                        road: span.road,
                        lane,
                        position: pos,
                        speed,
                        length,
                        params,
                        route: route.clone(),
                        route_index: 0,
                        memory: VehicleMemory::default(),
                    });
                }
            }
        }
        let c = &mut self.list[i];
        c.residual = acc + unfit as f64;
        Ok(())
    }

    /// Splits cluster `id` at corridor offset `at`. The upstream part keeps the
    /// id and the residual; the downstream part gets a fresh id, which is returned.
    pub fn split(&mut self, corridors: &Corridors, id: ClusterId, at: f64, min_length: f64) -> Result<ClusterId, HybridError> {
        let i = self.index_of(id)?;
        let c = &self.list[i];
        if at - c.start < min_length - OFFSET_EPS || c.end - at < min_length - OFFSET_EPS || at <= c.start + OFFSET_EPS || at >= c.end - OFFSET_EPS {
            return Err(HybridError::TooSmall { cluster: id, at });
        }
        let mut at = at;
        let mut tail_state = ClusterState::Micro;
        let mut head = self.list[i].clone();
        if let ClusterState::Macro(m) = &mut head.state {
            let k = m.spans.iter().position(|s| (s.offset - at).abs() <= OFFSET_EPS).ok_or(HybridError::NotAligned { cluster: id, at })?;
            at = m.spans[k].offset;
            let tail = MacroState {
                segment: crate::macroscopic::MacroSegment::new(m.segment.cells.split_off(k), m.segment.fd),
                spans: m.spans.split_off(k),
                jam_counters: m.jam_counters.split_off(k),
            };
            tail_state = ClusterState::Macro(tail);
        }
        let new_id = ClusterId(self.next_id);
        self.next_id += 1;
        let (tail_parked, head_parked): (Vec<ParkedVehicle>, Vec<ParkedVehicle>) =
            head.parked.drain(..).partition(|p| corridors.coord(p.road, p.position).offset >= at);
        head.parked = head_parked;
        let tail = Cluster {
            id: new_id,
            start: at,
            state: tail_state,
            residual: 0.0,
            parked: tail_parked,
            downstream: head.downstream.take(),
            ..head.clone()
        };
        head.end = at;
        head.downstream = Some(Interface::default());
        self.list[i] = head;
        self.list.insert(i + 1, tail);
        self.normalize(corridors);
        Ok(new_id)
    }

    /// Merges `a` with `b`, its direct downstream neighbor on the same corridor.
    /// Mass waiting at their shared boundary moves into the merged cluster.
    pub fn merge(&mut self, corridors: &Corridors, a: ClusterId, b: ClusterId) -> Result<(), HybridError> {
        let ia = self.index_of(a)?;
        let ib = self.index_of(b)?;
        if ib != ia + 1 || self.list[ia].corridor != self.list[ib].corridor || (self.list[ia].end - self.list[ib].start).abs() > OFFSET_EPS {
            return Err(HybridError::NotAdjacent(a, b));
        }
        if self.list[ia].representation() != self.list[ib].representation() {
            return Err(HybridError::RepresentationMismatch(a, b));
        }
        let corridor = self.list[ia].corridor;
        if corridors.get(corridor).cyclic && self.count_on(corridor) == 2 && self.list[ia].representation() == Representation::Macro {
            return Err(HybridError::WholeRing(a));
        }
        let tail = self.list.remove(ib);
        let head = &mut self.list[ia];
        if let Some(mut iface) = head.downstream.take() {
            head.residual += iface.backlog + iface.carryover.iter().sum::<f64>();
            match head.state {
                ClusterState::Micro => {
                    let (road, position) = corridors.get(corridor).locate(tail.start);
                    head.parked.extend(iface.pending.drain(..).map(|vehicle| ParkedVehicle { road, position, vehicle }));
                }
                ClusterState::Macro(_) => head.residual += iface.pending.len() as f64,
            }
        }
        if let (ClusterState::Macro(h), ClusterState::Macro(t)) = (&mut head.state, tail.state) {
            h.segment.cells.extend(t.segment.cells);
            h.spans.extend(t.spans);
            h.jam_counters.extend(t.jam_counters);
        }
        head.end = tail.end;
        head.residual += tail.residual;
        head.parked.extend(tail.parked);
        head.downstream = tail.downstream;
        head.last_switch = head.last_switch.max(tail.last_switch);
        head.refined_by_lod |= tail.refined_by_lod;
        head.free_counter = head.free_counter.min(tail.free_counter);
        head.last_jam_step = head.last_jam_step.max(tail.last_jam_step);
        self.normalize(corridors);
        Ok(())
    }
}
