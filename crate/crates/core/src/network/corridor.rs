//! Decomposition of the network into corridors: maximal chains of roads joined
//! by nodes with exactly one way in and one way out. Clusters are intervals of
//! a corridor, which gives every cluster a single upstream and downstream end.

use super::{RoadIx, RoadNetwork, SinkIx};

pub type CorridorIx = usize;

/// Point on a corridor, as a distance from its start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorridorPos {
    pub corridor: CorridorIx,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub roads: Vec<RoadIx>,
    /// Corridor offset at which each road starts.
    pub starts: Vec<f64>,
    pub length: f64,
    /// The last road feeds the first one.
    pub cyclic: bool,
    /// No road feeds the first road.
    pub open_start: bool,
    /// Sink attached to the end of the last road.
    pub sink_end: Option<SinkIx>,
}

impl Corridor {
    /// Road and road position at `offset`. Offsets on a road boundary belong to
    /// the downstream road, except the corridor end which stays on the last road.
    pub fn locate(&self, offset: f64) -> (RoadIx, f64) {
        let i = match self.starts.partition_point(|&s| s <= offset) {
            0 => 0,
            k => k - 1,
        };
        (self.roads[i], offset - self.starts[i])
    }

    /// Position of the road within the corridor and its start offset.
    pub fn road_start(&self, road: RoadIx) -> Option<f64> {
        self.roads.iter().position(|&r| r == road).map(|i| self.starts[i])
    }

    /// Road-level spans covered by `[start, end)`, as `(road, from, to)` in road coordinates.
    pub fn spans(&self, start: f64, end: f64) -> Vec<(RoadIx, f64, f64)> {
        let mut out = Vec::new();
        for (i, &road) in self.roads.iter().enumerate() {
            let road_start = self.starts[i];
            let road_end = self.starts.get(i + 1).copied().unwrap_or(self.length);
            let (a, b) = (start.max(road_start), end.min(road_end));
            if b > a {
                out.push((road, a - road_start, b - road_start));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corridors {
    list: Vec<Corridor>,
    road_corridor: Vec<CorridorIx>,
}

impl Corridors {
    pub fn build(network: &RoadNetwork) -> Self {
        let n = network.roads().len();
        let endpoint_counts = |node: &str| {
            let incoming = network.roads().iter().filter(|r| r.to_node == node).count();
            let outgoing = network.roads().iter().filter(|r| r.from_node == node).count();
            (incoming, outgoing)
        };
        let mut next: Vec<Option<RoadIx>> = vec![None; n];
        let mut has_prev = vec![false; n];
        for (a, slot) in next.iter_mut().enumerate() {
            if let [b] = network.successors(a) {
                let node = &network.road(a).to_node;
                if endpoint_counts(node) == (1, 1) && network.predecessors(*b) == [a] {
                    *slot = Some(*b);
                    has_prev[*b] = true;
                }
            }
        }

        let mut order: Vec<RoadIx> = (0..n).collect();
        order.sort_by(|&a, &b| network.road(a).id.cmp(&network.road(b).id));
        let mut visited = vec![false; n];
        let mut chains: Vec<(Vec<RoadIx>, bool)> = Vec::new();
        for &start in order.iter().filter(|&&r| !has_prev[r]) {
            let mut chain = vec![start];
            visited[start] = true;
            let mut cur = start;
            while let Some(nx) = next[cur] {
                visited[nx] = true;
                chain.push(nx);
                cur = nx;
            }
            chains.push((chain, false));
        }
        // remaining roads lie on closed loops
        for &start in &order {
            if visited[start] {
                continue;
            }
            let mut chain = vec![start];
            visited[start] = true;
            let mut cur = start;
            while let Some(nx) = next[cur] {
                if nx == start {
                    break;
                }
                visited[nx] = true;
                chain.push(nx);
                cur = nx;
            }
            chains.push((chain, true));
        }
        chains.sort_by(|a, b| network.road(a.0[0]).id.cmp(&network.road(b.0[0]).id));

        let mut road_corridor = vec![0; n];
        let list = chains
            .into_iter()
            .enumerate()
            .map(|(ci, (roads, cyclic))| {
                let mut starts = Vec::with_capacity(roads.len());
                let mut acc = 0.0;
                for &r in &roads {
                    road_corridor[r] = ci;
                    starts.push(acc);
                    acc += network.road(r).length;
                }
                let first = roads[0];
                let last = *roads.last().unwrap();
                Corridor {
                    open_start: !cyclic && network.predecessors(first).is_empty(),
                    sink_end: if cyclic { None } else { network.sink_at(last) },
                    roads,
                    starts,
                    length: acc,
                    cyclic,
                }
            })
            .collect();
        Self { list, road_corridor }
    }

    pub fn list(&self) -> &[Corridor] {
        &self.list
    }

    pub fn get(&self, ix: CorridorIx) -> &Corridor {
        &self.list[ix]
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn corridor_of(&self, road: RoadIx) -> CorridorIx {
        self.road_corridor[road]
    }

    /// Corridor coordinate of a road position.
    pub fn coord(&self, road: RoadIx, position: f64) -> CorridorPos {
        let corridor = self.road_corridor[road];
        let start = self.list[corridor].road_start(road).expect("road belongs to its corridor");
        CorridorPos { corridor, offset: start + position }
    }

    /// Corridor whose first road has the given id.
    pub fn by_first_road(&self, network: &RoadNetwork, road_id: &str) -> Option<CorridorIx> {
        self.list.iter().position(|c| network.road(c.roads[0]).id == road_id)
    }
}
