//! Initial cluster layout: every corridor is tiled by clusters, and macro
//! clusters sit strictly between other clusters of the same corridor.

use crate::network::{CorridorIx, Corridors, RoadNetwork};

use super::{ClusterSpec, Representation};

/// Tolerance when comparing corridor offsets (m).
pub const OFFSET_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLayout {
    pub corridor: CorridorIx,
    pub start: f64,
    pub end: f64,
    pub representation: Representation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutError {
    UnknownRoad(String),
    /// Offending field and reason.
    Invalid(&'static str, String),
}

/// Whether `[start, end)` on `corridor` may be simulated as flow, given the
/// number of clusters the corridor holds. Vehicles are created and destroyed
/// only by micro clusters, so a macro cluster needs micro-capable neighbors on
/// both sides and must not contain an input point or a sink.
pub fn macro_allowed(network: &RoadNetwork, corridors: &Corridors, corridor: CorridorIx, start: f64, end: f64, clusters_on_corridor: usize) -> bool {
    let c = corridors.get(corridor);
    let wraps = c.cyclic && clusters_on_corridor >= 2;
    let has_upstream = start > OFFSET_EPS || wraps;
    let has_downstream = end < c.length - OFFSET_EPS || wraps;
    if !(has_upstream && has_downstream) {
        return false;
    }
    let contains_input = network.input_points().iter().any(|ip| {
        network.road_ix(&ip.road).and_then(|r| c.road_start(r)).is_some_and(|s| s >= start - OFFSET_EPS && s < end - OFFSET_EPS)
    });
    let contains_sink = network.sinks().iter().any(|sink| {
        network.road_ix(&sink.road).and_then(|r| c.road_start(r).map(|s| s + network.road(r).length)).is_some_and(|e| e > start + OFFSET_EPS && e <= end + OFFSET_EPS)
    });
    !contains_input && !contains_sink
}

/// Resolves cluster specs into corridor intervals. Corridors without any spec
/// become a single micro cluster.
pub fn layout_clusters(network: &RoadNetwork, corridors: &Corridors, specs: &[ClusterSpec]) -> Result<Vec<ClusterLayout>, LayoutError> {
    let mut per_corridor: Vec<Vec<ClusterLayout>> = vec![Vec::new(); corridors.len()];
    for spec in specs {
        let road_of = |id: &str| network.road_ix(id).ok_or_else(|| LayoutError::UnknownRoad(id.to_string()));
        let (sr, er) = (road_of(&spec.start_road)?, road_of(&spec.end_road)?);
        if !(0.0..network.road(sr).length).contains(&spec.start) {
            return Err(LayoutError::Invalid("start", format!("{} lies outside road `{}`", spec.start, spec.start_road)));
        }
        if !(spec.end > 0.0 && spec.end <= network.road(er).length) {
            return Err(LayoutError::Invalid("end", format!("{} lies outside road `{}`", spec.end, spec.end_road)));
        }
        let (a, b) = (corridors.coord(sr, spec.start), corridors.coord(er, spec.end));
        if a.corridor != b.corridor {
            return Err(LayoutError::Invalid(
                "end_road",
                format!("roads `{}` and `{}` are not on one unbranched chain", spec.start_road, spec.end_road),
            ));
        }
        if b.offset <= a.offset + OFFSET_EPS {
            return Err(LayoutError::Invalid("end", format!("cluster starting on `{}` at {} is empty or reversed", spec.start_road, spec.start)));
        }
        per_corridor[a.corridor].push(ClusterLayout { corridor: a.corridor, start: a.offset, end: b.offset, representation: spec.representation });
    }
    let mut out = Vec::new();
    for (ci, mut list) in per_corridor.into_iter().enumerate() {
        let length = corridors.get(ci).length;
        if list.is_empty() {
            out.push(ClusterLayout { corridor: ci, start: 0.0, end: length, representation: Representation::Micro });
            continue;
        }
        list.sort_by(|x, y| x.start.total_cmp(&y.start));
        let mut cursor = 0.0;
        for c in &list {
            if (c.start - cursor).abs() > OFFSET_EPS {
                let first = network.road(corridors.get(ci).roads[0]).id.clone();
                return Err(LayoutError::Invalid(
                    "cluster",
                    format!("clusters on the chain starting at road `{first}` leave a gap or overlap at offset {cursor}"),
                ));
            }
            cursor = c.end;
        }
        if (cursor - length).abs() > OFFSET_EPS {
            let first = network.road(corridors.get(ci).roads[0]).id.clone();
            return Err(LayoutError::Invalid("cluster", format!("clusters on the chain starting at road `{first}` stop at {cursor} of {length} m")));
        }
        // snap the tiling to exact corridor offsets
        let n = list.len();
        for i in 0..n {
            if i > 0 {
                list[i].start = list[i - 1].end;
            } else {
                list[i].start = 0.0;
            }
            if i + 1 == n {
                list[i].end = length;
            }
        }
        for c in &list {
            if c.representation == Representation::Macro && !macro_allowed(network, corridors, ci, c.start, c.end, n) {
                let (road, pos) = corridors.get(ci).locate(c.start);
                return Err(LayoutError::Invalid(
                    "representation",
                    format!(
                        "macro cluster at road `{}` {pos} m needs clusters on both sides and may not hold an input point or sink",
                        network.road(road).id
                    ),
                ));
            }
        }
        out.extend(list);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{road, straight_turns, bare_node};
    use crate::network::{InputPoint, LaneSet, Sink};

    fn line() -> RoadNetwork {
        RoadNetwork::new(
            vec![road("A", "N0", "N1", 1000.0, 1, 30.0), road("B", "N1", "N2", 1000.0, 1, 30.0)],
            vec![bare_node("N0"), straight_turns("N1", "A", "B", 1), bare_node("N2")],
            vec![Sink { id: "S".into(), road: "B".into() }],
            vec![InputPoint { id: "I".into(), road: "A".into(), lanes: LaneSet::All }],
            33.33,
        )
    }

    fn spec(rep: Representation, sr: &str, s: f64, er: &str, e: f64) -> ClusterSpec {
        ClusterSpec { representation: rep, start_road: sr.into(), start: s, end_road: er.into(), end: e }
    }

    #[test]
    fn default_is_one_micro_cluster_per_corridor() {
        let net = line();
        let c = Corridors::build(&net);
        let l = layout_clusters(&net, &c, &[]).unwrap();
        assert_eq!(l, vec![ClusterLayout { corridor: 0, start: 0.0, end: 2000.0, representation: Representation::Micro }]);
    }

    #[test]
    fn three_way_split_across_roads() {
        let net = line();
        let c = Corridors::build(&net);
        use Representation::*;
        let l = layout_clusters(
            &net,
            &c,
            &[spec(Micro, "A", 0.0, "A", 500.0), spec(Macro, "A", 500.0, "B", 500.0), spec(Micro, "B", 500.0, "B", 1000.0)],
        )
        .unwrap();
        assert_eq!(l.iter().map(|x| (x.start, x.end)).collect::<Vec<_>>(), vec![(0.0, 500.0), (500.0, 1500.0), (1500.0, 2000.0)]);
    }

    #[test]
    fn rejected_layouts() {
        let net = line();
        let c = Corridors::build(&net);
        use Representation::*;
        let gap = layout_clusters(&net, &c, &[spec(Micro, "A", 0.0, "A", 500.0), spec(Micro, "A", 600.0, "B", 1000.0)]);
        assert!(matches!(gap, Err(LayoutError::Invalid("cluster", _))));
        let edge = layout_clusters(&net, &c, &[spec(Macro, "A", 0.0, "A", 500.0), spec(Micro, "A", 500.0, "B", 1000.0)]);
        assert!(matches!(edge, Err(LayoutError::Invalid("representation", _))));
        let unknown = layout_clusters(&net, &c, &[spec(Micro, "Z", 0.0, "B", 1000.0)]);
        assert_eq!(unknown, Err(LayoutError::UnknownRoad("Z".into())));
    }
}
