use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hybrid::{macro_allowed, ClusterId, ClusterSet, ClusterState, Coupling, Representation, OFFSET_EPS};
use crate::micro::MicroState;

use super::LodPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Flow to vehicles.
    Refine(ClusterId),
    /// Vehicles to flow.
    Coarsen(ClusterId),
    /// Split at a corridor offset; the downstream part gets the next free id.
    Split { cluster: ClusterId, at: f64 },
    /// Merge with the direct downstream neighbor.
    Merge(ClusterId, ClusterId),
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Refine(_) => "refine",
            Action::Coarsen(_) => "coarsen",
            Action::Split { .. } => "split",
            Action::Merge(..) => "merge",
        }
    }

    pub fn clusters(&self) -> Vec<ClusterId> {
        match *self {
            Action::Refine(c) | Action::Coarsen(c) | Action::Split { cluster: c, .. } => vec![c],
            Action::Merge(a, b) => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    Jam,
    Budget,
    Recovery,
    /// Requested from outside the controller.
    Manual,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::Jam => "jam",
            Trigger::Budget => "budget",
            Trigger::Recovery => "recovery",
            Trigger::Manual => "manual",
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedAction {
    pub action: Action,
    pub trigger: Trigger,
}

/// Per-cluster speed ratio: mean speed over the reference speed.
///
/// Macro clusters report their slowest cell. Micro clusters report the mean
/// speed over the mean attainable speed of their vehicles, further limited by
/// any active speed restriction below the road's own limit, so that a cluster
/// under a temporary restriction never looks free.
pub fn cluster_ratios(cx: &Coupling<'_>, set: &ClusterSet, micro: &MicroState) -> Vec<f64> {
    let n = set.len();
    let mut speed = vec![0.0; n];
    let mut attainable = vec![0.0; n];
    for v in micro.vehicles() {
        let p = cx.corridors.coord(v.road, v.position);
        if let Some(i) = set.locate(p.corridor, p.offset) {
            speed[i] += v.speed;
            attainable[i] += v.params.desired_speed.min(cx.network.road(v.road).speed_limit);
        }
    }
    set.list()
        .iter()
        .enumerate()
        .map(|(i, c)| match &c.state {
            ClusterState::Macro(m) => m.ratios().fold(f64::INFINITY, f64::min).min(1.0),
            ClusterState::Micro => {
                let moving = if attainable[i] > 0.0 { (speed[i] / attainable[i]).min(1.0) } else { 1.0 };
                let restricted = cx
                    .corridors
                    .get(c.corridor)
                    .spans(c.start, c.end)
                    .into_iter()
                    .map(|(road, a, b)| {
                        let reference = cx.config.fd.free_speed.min(cx.network.road(road).speed_limit);
                        (cx.network.min_speed_limit(road, a, b, cx.time) / reference).min(1.0)
                    })
                    .fold(1.0, f64::min);
                moving.min(restricted)
            }
        })
        .collect()
}

/// Updates the jam counters of every macro cell and the free counter of every
/// cluster from the current state. `step` is recorded as the last jam activity.
pub fn observe(cx: &Coupling<'_>, set: &mut ClusterSet, micro: &MicroState, policy: &LodPolicy, step: u64) {
    let ratios = cluster_ratios(cx, set, micro);
    for (c, ratio) in set.list_mut().iter_mut().zip(ratios) {
        let mut jammed = ratio < policy.theta_down;
        if let ClusterState::Macro(m) = &mut c.state {
            let cell_ratios: Vec<f64> = m.ratios().collect();
            for (counter, r) in m.jam_counters.iter_mut().zip(cell_ratios) {
                *counter = if r < policy.theta_down { counter.saturating_add(1) } else { 0 };
            }
            jammed = m.jam_counters.iter().any(|&k| k >= policy.persistence);
        }
        if jammed {
            c.last_jam_step = Some(step);
        }
        c.free_counter = if ratio > policy.theta_up { c.free_counter.saturating_add(1) } else { 0 };
    }
}

fn off_cooldown(last_switch: Option<u64>, step: u64, cooldown: u64) -> bool {
    last_switch.is_none_or(|s| step >= s + cooldown)
}

/// Plans the actions for this step. Pure in its inputs; `dt` is needed to
/// check that a coarsened cluster would satisfy the stability bound.
///
/// Order: jammed macro regions are cut out and refined, then micro clusters
/// are coarsened while the micro vehicle count exceeds the budget, then
/// clusters refined for a jam that has since cleared are coarsened again, and
/// finally free-flowing neighbors of equal representation are merged. A
/// cluster touched by one rule is left alone by the later ones.
pub fn plan(
    cx: &Coupling<'_>,
    set: &ClusterSet,
    micro: &MicroState,
    policy: &LodPolicy,
    step: u64,
    dt: f64,
    over_wall_clock: bool,
) -> Vec<PlannedAction> {
    let mut out = Vec::new();
    let mut touched: HashSet<ClusterId> = HashSet::new();
    let mut next_id = set.next_id();
    let k_flag = policy.persistence;
    let min_len = policy.min_cluster_length;

    for c in set.list() {
        let ClusterState::Macro(m) = &c.state else { continue };
        if !off_cooldown(c.last_switch, step, policy.cooldown) {
            continue;
        }
        let flagged: Vec<usize> = (0..m.jam_counters.len()).filter(|&k| m.jam_counters[k] >= k_flag).collect();
        let (Some(&first), Some(&last)) = (flagged.first(), flagged.last()) else { continue };
        let n = m.spans.len();
        let (mut lo, mut hi) = (first.saturating_sub(1), (last + 1).min(n - 1));
        let start_of = |k: usize| m.spans[k].offset;
        let end_of = |k: usize| m.cell_end_offset(k);
        // grow to the minimum length, downstream first
        while end_of(hi) - start_of(lo) < min_len - OFFSET_EPS && (lo > 0 || hi + 1 < n) {
            if hi + 1 < n {
                hi += 1;
            }
            if end_of(hi) - start_of(lo) < min_len - OFFSET_EPS && lo > 0 {
                lo -= 1;
            }
        }
        let mut a = start_of(lo);
        let mut b = end_of(hi);
        if a - c.start < min_len - OFFSET_EPS {
            a = c.start;
        }
        if c.end - b < min_len - OFFSET_EPS {
            b = c.end;
        }
        let mut target = c.id;
        touched.insert(c.id);
        if a > c.start + OFFSET_EPS {
            out.push(PlannedAction { action: Action::Split { cluster: target, at: a }, trigger: Trigger::Jam });
            target = ClusterId(next_id);
            next_id += 1;
            touched.insert(target);
        }
        if b < c.end - OFFSET_EPS {
            out.push(PlannedAction { action: Action::Split { cluster: target, at: b }, trigger: Trigger::Jam });
            touched.insert(ClusterId(next_id));
            next_id += 1;
        }
        out.push(PlannedAction { action: Action::Refine(target), trigger: Trigger::Jam });
    }

    let counts = set.vehicle_counts(micro, cx.corridors);
    let mut micro_total: usize = counts.iter().sum();
    let can_coarsen = |i: usize, touched: &HashSet<ClusterId>| {
        let c = &set.list()[i];
        c.representation() == Representation::Micro
            && !touched.contains(&c.id)
            && off_cooldown(c.last_switch, step, policy.cooldown)
            && macro_allowed(cx.network, cx.corridors, c.corridor, c.start, c.end, set.count_on(c.corridor))
            && set.can_aggregate(cx, micro, c.id, dt).is_ok()
    };

    let over_budget = |total: usize| policy.micro_vehicle_budget.is_some_and(|b| total > b);
    if over_budget(micro_total) || over_wall_clock {
        let mut order: Vec<usize> = (0..set.len()).filter(|&i| can_coarsen(i, &touched)).collect();
        order.sort_by_key(|&i| (set.list()[i].last_jam_step, set.list()[i].id));
        for i in order {
            if !over_budget(micro_total) && !over_wall_clock {
                break;
            }
            let id = set.list()[i].id;
            out.push(PlannedAction { action: Action::Coarsen(id), trigger: Trigger::Budget });
            touched.insert(id);
            micro_total -= counts[i];
            if over_wall_clock && !over_budget(micro_total) {
                // one cluster per slow step is enough to shed load gradually
                break;
            }
        }
    }

    for i in 0..set.len() {
        let c = &set.list()[i];
        if c.refined_by_lod && c.free_counter >= k_flag && can_coarsen(i, &touched) {
            out.push(PlannedAction { action: Action::Coarsen(c.id), trigger: Trigger::Recovery });
            touched.insert(c.id);
        }
    }

    for i in 0..set.len() {
        let a = &set.list()[i];
        let Some(j) = set.next_of(cx.corridors, i) else { continue };
        if j != i + 1 {
            continue;
        }
        let b = &set.list()[j];
        let free = |c: &crate::hybrid::Cluster| c.free_counter >= k_flag && !c.refined_by_lod && !touched.contains(&c.id);
        if a.representation() != b.representation() || !free(a) || !free(b) {
            continue;
        }
        if a.representation() == Representation::Macro && cx.corridors.get(a.corridor).cyclic && set.count_on(a.corridor) == 2 {
            continue;
        }
        out.push(PlannedAction { action: Action::Merge(a.id, b.id), trigger: Trigger::Recovery });
        touched.insert(a.id);
        touched.insert(b.id);
    }
    out
}
