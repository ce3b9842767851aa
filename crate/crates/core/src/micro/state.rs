//! Vehicle store with a per-lane position index.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::network::{RoadIx, RoadNetwork, Route};

use super::DriverParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

/// What a vehicle carries over from one step to the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VehicleMemory {
    /// Leader gap perceived during the previous step.
    pub previous_gap: f64,
    /// Stop lines already honored, as `(road, sign index)`.
    pub cleared_stops: Vec<(RoadIx, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub road: RoadIx,
    pub lane: usize,
    /// Front bumper, meters from the road start.
    pub position: f64,
    pub speed: f64,
    pub length: f64,
    pub params: DriverParams,
    pub route: Arc<Route>,
    /// Index of `road` within `route.roads`.
    pub route_index: usize,
    pub memory: VehicleMemory,
}

impl Vehicle {
    pub fn rear(&self) -> f64 {
        self.position - self.length
    }
}

/// All vehicles currently simulated individually, ordered by id.
#[derive(Debug, Clone, Default)]
pub struct MicroState {
    vehicles: Vec<Vehicle>,
    /// `[road][lane]` → indices into `vehicles`, ascending by `(position, id)`.
    lanes: Vec<Vec<Vec<usize>>>,
    next_id: u64,
}

impl MicroState {
    pub fn new(network: &RoadNetwork) -> Self {
        Self {
            vehicles: Vec::new(),
            lanes: network.roads().iter().map(|r| vec![Vec::new(); r.lane_count]).collect(),
            next_id: 0,
        }
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn get(&self, ix: usize) -> &Vehicle {
        &self.vehicles[ix]
    }

    /// Mutable access to the vehicle list. Changing positions or lanes leaves
    /// the index stale until [`MicroState::reindex`] is called.
    pub fn vehicles_mut(&mut self) -> &mut [Vehicle] {
        &mut self.vehicles
    }

    pub fn allocate_id(&mut self) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Vehicle indices on `(road, lane)` in ascending position.
    pub fn lane(&self, road: RoadIx, lane: usize) -> &[usize] {
        self.lanes.get(road).and_then(|l| l.get(lane)).map_or(&[], |v| v.as_slice())
    }

    fn order_key(&self, ix: usize) -> (f64, VehicleId) {
        let v = &self.vehicles[ix];
        (v.position, v.id)
    }

    fn slot(&self, road: RoadIx, lane: usize, ix: usize) -> usize {
        let key = self.order_key(ix);
        self.lanes[road][lane].partition_point(|&j| {
            let k = self.order_key(j);
            k.0 < key.0 || (k.0 == key.0 && k.1 < key.1)
        })
    }

    /// Adds a vehicle whose id came from [`MicroState::allocate_id`].
    pub fn push(&mut self, vehicle: Vehicle) -> usize {
        debug_assert!(self.vehicles.last().is_none_or(|v| v.id < vehicle.id), "ids must increase");
        let (road, lane) = (vehicle.road, vehicle.lane);
        let ix = self.vehicles.len();
        self.vehicles.push(vehicle);
        let at = self.slot(road, lane, ix);
        self.lanes[road][lane].insert(at, ix);
        ix
    }

    pub fn change_lane(&mut self, ix: usize, new_lane: usize) {
        let (road, old) = (self.vehicles[ix].road, self.vehicles[ix].lane);
        self.lanes[road][old].retain(|&j| j != ix);
        self.vehicles[ix].lane = new_lane;
        let at = self.slot(road, new_lane, ix);
        self.lanes[road][new_lane].insert(at, ix);
    }

    /// Keeps the vehicles for which `keep` holds and rebuilds the index.
    pub fn retain(&mut self, mut keep: impl FnMut(&Vehicle) -> bool) {
        self.vehicles.retain(|v| keep(v));
        self.reindex();
    }

    pub fn reindex(&mut self) {
        for lanes in &mut self.lanes {
            for lane in lanes.iter_mut() {
                lane.clear();
            }
        }
        for (ix, v) in self.vehicles.iter().enumerate() {
            self.lanes[v.road][v.lane].push(ix);
        }
        let vehicles = &self.vehicles;
        for lanes in &mut self.lanes {
            for lane in lanes.iter_mut() {
                lane.sort_by(|&a, &b| {
                    let (va, vb) = (&vehicles[a], &vehicles[b]);
                    va.position.total_cmp(&vb.position).then(va.id.cmp(&vb.id))
                });
            }
        }
    }
}
