use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use roxmltree::{Document, Node as XmlNode};

use crate::generation::{Arrivals, Distribution, DriverDistribution, GeneratorSpec, RateStep, Rhythm, ScriptedEvent};
use crate::hybrid::{layout_clusters, ClusterSpec, HybridConfig, LayoutError, Representation};
use crate::lod::LodPolicy;
use crate::macroscopic::FundamentalDiagram;
use crate::micro::perceive::{DEFAULT_NAVIGATION_HORIZON, DEFAULT_PERCEPTION_HORIZON};
use crate::micro::DriverParams;
use crate::network::{
    compute_route, default_route, validate_network, Corridors, InputPoint, LaneSet, Node, NodeKind, Road, RoadNetwork,
    SignKind, Sink, Turn, VerticalSign, Violation,
};

use super::{ScenarioError, ScenarioFiles, ScenarioModel, ROOT_FILE};

type Result<T> = std::result::Result<T, ScenarioError>;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ScenarioError::FileNotFound { path: path.to_path_buf() },
        _ => ScenarioError::Io { path: path.to_path_buf(), source: e },
    })
}

fn document<'a>(path: &Path, text: &'a str) -> Result<Document<'a>> {
    Document::parse(text).map_err(|e| ScenarioError::Syntax {
        path: path.to_path_buf(),
        line: e.pos().row,
        message: e.to_string(),
    })
}

/// One open file and the element helpers that report against it.
struct File<'p> {
    path: &'p Path,
}

impl<'p> File<'p> {
    fn schema(&self, node: XmlNode, field: impl Into<String>, reason: impl AsRef<str>) -> ScenarioError {
        let line = node.document().text_pos_at(node.range().start).row;
        ScenarioError::SchemaViolation {
            path: self.path.to_path_buf(),
            field: field.into(),
            reason: format!("{} (line {line})", reason.as_ref()),
        }
    }

    fn dangling(&self, kind: &'static str, id: &str) -> ScenarioError {
        ScenarioError::DanglingReference { path: self.path.to_path_buf(), kind, id: id.to_string() }
    }

    fn root<'a, 'i>(&self, doc: &'a Document<'i>, tag: &str) -> Result<XmlNode<'a, 'i>> {
        let root = doc.root_element();
        if root.tag_name().name() != tag {
            return Err(self.schema(root, "root", format!("expected <{tag}>, found <{}>", root.tag_name().name())));
        }
        Ok(root)
    }

    fn attrs(&self, node: XmlNode, allowed: &[&str]) -> Result<()> {
        for a in node.attributes() {
            if !allowed.contains(&a.name()) {
                return Err(self.schema(node, a.name(), format!("unknown attribute on <{}>", node.tag_name().name())));
            }
        }
        Ok(())
    }

    fn children<'a, 'i>(&self, node: XmlNode<'a, 'i>, allowed: &[&str]) -> Result<Vec<XmlNode<'a, 'i>>> {
        let mut out = Vec::new();
        for c in node.children() {
            if c.is_element() {
                if !allowed.contains(&c.tag_name().name()) {
                    return Err(self.schema(c, c.tag_name().name(), format!("unexpected element in <{}>", node.tag_name().name())));
                }
                out.push(c);
            } else if c.is_text() && !c.text().unwrap_or("").trim().is_empty() {
                return Err(self.schema(c, node.tag_name().name(), "unexpected text"));
            }
        }
        Ok(out)
    }

    fn req<'a>(&self, node: XmlNode<'a, '_>, name: &str) -> Result<&'a str> {
        node.attribute(name).ok_or_else(|| self.schema(node, name, format!("missing on <{}>", node.tag_name().name())))
    }

    fn parse<T: FromStr>(&self, node: XmlNode, name: &str, raw: &str) -> Result<T> {
        raw.trim().parse().map_err(|_| self.schema(node, name, format!("cannot read {raw:?}")))
    }

    fn num(&self, node: XmlNode, name: &str) -> Result<f64> {
        let v: f64 = self.parse(node, name, self.req(node, name)?)?;
        if !v.is_finite() {
            return Err(self.schema(node, name, "must be finite"));
        }
        Ok(v)
    }

    fn opt_num(&self, node: XmlNode, name: &str) -> Result<Option<f64>> {
        match node.attribute(name) {
            None => Ok(None),
            Some(_) => self.num(node, name).map(Some),
        }
    }

    fn int<T: FromStr>(&self, node: XmlNode, name: &str) -> Result<T> {
        self.parse(node, name, self.req(node, name)?)
    }

    fn lanes(&self, node: XmlNode, name: &str) -> Result<LaneSet> {
        match node.attribute(name).map(str::trim) {
            None | Some("all") => Ok(LaneSet::All),
            Some(list) => {
                let lanes = list
                    .split_whitespace()
                    .map(|t| self.parse::<usize>(node, name, t))
                    .collect::<Result<Vec<_>>>()?;
                if lanes.is_empty() {
                    return Err(self.schema(node, name, "empty lane list"));
                }
                Ok(LaneSet::Only(lanes))
            }
        }
    }
}

/// Loads and resolves a scenario. `root` is the root file or a directory holding `scenario.xml`.
pub fn parse_scenario(root: impl AsRef<Path>) -> Result<ScenarioModel> {
    let root = root.as_ref();
    let root_path = if root.is_dir() { root.join(ROOT_FILE) } else { root.to_path_buf() };
    let dir = root_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |r: &str| -> PathBuf { dir.join(r) };

    let text = read(&root_path)?;
    let doc = document(&root_path, &text)?;
    let f = File { path: &root_path };
    let top = f.root(&doc, "scenario")?;
    f.attrs(top, &["name", "time_step", "duration"])?;
    let name = f.req(top, "name")?.to_string();
    let time_step = f.num(top, "time_step")?;
    if time_step <= 0.0 {
        return Err(f.schema(top, "time_step", "must be positive"));
    }
    let duration = f.num(top, "duration")?;
    if duration < 0.0 {
        return Err(f.schema(top, "duration", "must not be negative"));
    }
    let (mut infra, mut micro, mut hybrid) = (None, None, None);
    for c in f.children(top, &["infrastructure", "level"])? {
        match c.tag_name().name() {
            "infrastructure" => {
                f.attrs(c, &["ref"])?;
                if infra.replace(f.req(c, "ref")?.to_string()).is_some() {
                    return Err(f.schema(c, "infrastructure", "declared twice"));
                }
            }
            _ => {
                f.attrs(c, &["kind", "ref"])?;
                let slot = match f.req(c, "kind")? {
                    "microscopic" => &mut micro,
                    "hybrid" => &mut hybrid,
                    other => return Err(f.schema(c, "kind", format!("unknown level {other:?}"))),
                };
                if slot.replace(f.req(c, "ref")?.to_string()).is_some() {
                    return Err(f.schema(c, "level", "level declared twice"));
                }
            }
        }
    }
    let infra = infra.ok_or_else(|| f.schema(top, "infrastructure", "missing"))?;
    let micro = micro.ok_or_else(|| f.schema(top, "level", "microscopic level missing"))?;

    let infra_path = resolve(&infra);
    let (roads, nodes, free_speed) = parse_infrastructure(&infra_path)?;
    let micro_path = resolve(&micro);
    let level = parse_microscopic(&micro_path, &roads)?;

    let network = RoadNetwork::new(roads, nodes, level.sinks, level.inputs.iter().map(|i| i.point.clone()).collect(), free_speed);
    let violations = validate_network(&network);
    let (connector, structural): (Vec<Violation>, Vec<Violation>) = violations.into_iter().partition(|v| {
        matches!(
            v,
            Violation::DuplicateConnectorId(_) | Violation::DanglingConnectorRoad { .. } | Violation::ConnectorLaneOutOfRange { .. }
        )
    });
    if !structural.is_empty() {
        return Err(ScenarioError::InvalidNetwork { path: infra_path, violations: structural });
    }
    if !connector.is_empty() {
        return Err(ScenarioError::InvalidNetwork { path: micro_path, violations: connector });
    }

    let mut distributions: HashMap<String, DriverDistribution> = HashMap::new();
    let mut generators = Vec::new();
    for input in level.inputs {
        let road = network.road_ix(&input.point.road).expect("checked above");
        let mf = File { path: &micro_path };
        match &input.destination {
            Some(dest) => {
                let sink = network.sink_ix(dest).ok_or_else(|| mf.dangling("sink", dest))?;
                compute_route(&network, road, sink).map_err(|e| ScenarioError::SchemaViolation {
                    path: micro_path.clone(),
                    field: "destination".into(),
                    reason: e.to_string(),
                })?;
            }
            None => {
                default_route(&network, road).map_err(|e| ScenarioError::SchemaViolation {
                    path: micro_path.clone(),
                    field: "input".into(),
                    reason: format!("input `{}`: {e}", input.point.id),
                })?;
            }
        }
        let driver = match distributions.get(&input.parameters) {
            Some(d) => d.clone(),
            None => {
                let d = parse_generation(&resolve(&input.parameters))?;
                distributions.insert(input.parameters.clone(), d.clone());
                d
            }
        };
        let lane_count = network.road(road).lane_count;
        let rhythm = parse_rhythm(&resolve(&input.rhythm), &input.point.lanes, lane_count, &network)?;
        generators.push(GeneratorSpec {
            id: input.point.id.clone(),
            road: input.point.road.clone(),
            lanes: input.point.lanes.clone(),
            destination: input.destination,
            driver,
            rhythm,
            parameters_ref: input.parameters,
            rhythm_ref: input.rhythm,
        });
    }

    let hybrid_config = match &hybrid {
        None => None,
        Some(r) => Some(parse_hybrid(&resolve(r), &dir, &network, &mut distributions)?),
    };

    Ok(ScenarioModel {
        name,
        time_step,
        duration,
        network,
        perception_horizon: level.perception_horizon,
        navigation_horizon: level.navigation_horizon,
        generators,
        hybrid: hybrid_config,
        files: ScenarioFiles { infrastructure: infra, microscopic: micro, hybrid },
    })
}

fn parse_infrastructure(path: &Path) -> Result<(Vec<Road>, Vec<Node>, f64)> {
    let text = read(path)?;
    let doc = document(path, &text)?;
    let f = File { path };
    let top = f.root(&doc, "network")?;
    f.attrs(top, &["free_speed"])?;
    let free_speed = f.num(top, "free_speed")?;
    let mut roads = Vec::new();
    let mut nodes = Vec::new();
    for c in f.children(top, &["node", "road"])? {
        if c.tag_name().name() == "node" {
            f.attrs(c, &["id", "kind"])?;
            let kind_raw = f.req(c, "kind")?;
            let kind = NodeKind::parse(kind_raw).ok_or_else(|| f.schema(c, "kind", format!("unknown node kind {kind_raw:?}")))?;
            let mut turns = Vec::new();
            for t in f.children(c, &["turn"])? {
                f.attrs(t, &["from", "from_lane", "to", "to_lane"])?;
                turns.push(Turn {
                    from_road: f.req(t, "from")?.to_string(),
                    from_lane: f.int(t, "from_lane")?,
                    to_road: f.req(t, "to")?.to_string(),
                    to_lane: f.int(t, "to_lane")?,
                });
            }
            nodes.push(Node { id: f.req(c, "id")?.to_string(), kind, turns });
        } else {
            f.attrs(c, &["id", "from", "to", "length", "lanes", "speed_limit"])?;
            let mut signs = Vec::new();
            for s in f.children(c, &["sign"])? {
                f.attrs(s, &["kind", "position", "value", "lanes", "active_from", "active_until"])?;
                let kind = match f.req(s, "kind")? {
                    "stop" => SignKind::Stop,
                    "yield" => SignKind::Yield,
                    "speed_limit" => SignKind::SpeedLimit(f.num(s, "value")?),
                    other => return Err(f.schema(s, "kind", format!("unknown sign kind {other:?}"))),
                };
                if !matches!(kind, SignKind::SpeedLimit(_)) && s.attribute("value").is_some() {
                    return Err(f.schema(s, "value", "only speed limit signs carry a value"));
                }
                let (active_from, active_until) = (f.opt_num(s, "active_from")?, f.opt_num(s, "active_until")?);
                if let (Some(a), Some(b)) = (active_from, active_until) {
                    if b <= a {
                        return Err(f.schema(s, "active_until", "must follow active_from"));
                    }
                }
                signs.push(VerticalSign { kind, position: f.num(s, "position")?, lanes: f.lanes(s, "lanes")?, active_from, active_until });
            }
            roads.push(Road {
                id: f.req(c, "id")?.to_string(),
                from_node: f.req(c, "from")?.to_string(),
                to_node: f.req(c, "to")?.to_string(),
                length: f.num(c, "length")?,
                lane_count: f.int(c, "lanes")?,
                speed_limit: f.num(c, "speed_limit")?,
                signs,
            });
        }
    }
    for r in &roads {
        for node in [&r.from_node, &r.to_node] {
            if !nodes.iter().any(|n| &n.id == node) {
                return Err(f.dangling("node", node));
            }
        }
    }
    for n in &nodes {
        for t in &n.turns {
            for road in [&t.from_road, &t.to_road] {
                if !roads.iter().any(|r| &r.id == road) {
                    return Err(f.dangling("road", road));
                }
            }
        }
    }
    Ok((roads, nodes, free_speed))
}

struct InputDecl {
    point: InputPoint,
    parameters: String,
    rhythm: String,
    destination: Option<String>,
}

struct MicroLevel {
    perception_horizon: f64,
    navigation_horizon: f64,
    inputs: Vec<InputDecl>,
    sinks: Vec<Sink>,
}

fn parse_microscopic(path: &Path, roads: &[Road]) -> Result<MicroLevel> {
    let text = read(path)?;
    let doc = document(path, &text)?;
    let f = File { path };
    let top = f.root(&doc, "microscopic")?;
    f.attrs(top, &["perception_horizon", "navigation_horizon"])?;
    let perception_horizon = f.opt_num(top, "perception_horizon")?.unwrap_or(DEFAULT_PERCEPTION_HORIZON);
    let navigation_horizon = f.opt_num(top, "navigation_horizon")?.unwrap_or(DEFAULT_NAVIGATION_HORIZON);
    if perception_horizon <= 0.0 {
        return Err(f.schema(top, "perception_horizon", "must be positive"));
    }
    if navigation_horizon <= 0.0 {
        return Err(f.schema(top, "navigation_horizon", "must be positive"));
    }
    let mut inputs = Vec::new();
    let mut sinks = Vec::new();
    for c in f.children(top, &["input", "sink"])? {
        let road = f.req(c, "road")?;
        if !roads.iter().any(|r| r.id == road) {
            return Err(f.dangling("road", road));
        }
        if c.tag_name().name() == "input" {
            f.attrs(c, &["id", "road", "lanes", "parameters", "rhythm", "destination"])?;
            inputs.push(InputDecl {
                point: InputPoint { id: f.req(c, "id")?.to_string(), road: road.to_string(), lanes: f.lanes(c, "lanes")? },
                parameters: f.req(c, "parameters")?.to_string(),
                rhythm: f.req(c, "rhythm")?.to_string(),
                destination: c.attribute("destination").map(str::to_string),
            });
        } else {
            f.attrs(c, &["id", "road"])?;
            sinks.push(Sink { id: f.req(c, "id")?.to_string(), road: road.to_string() });
        }
    }
    for i in &inputs {
        if let Some(d) = &i.destination {
            if !sinks.iter().any(|s| &s.id == d) {
                return Err(f.dangling("sink", d));
            }
        }
    }
    Ok(MicroLevel { perception_horizon, navigation_horizon, inputs, sinks })
}

fn parse_generation(path: &Path) -> Result<DriverDistribution> {
    let text = read(path)?;
    let doc = document(path, &text)?;
    let f = File { path };
    let top = f.root(&doc, "generation")?;
    f.attrs(top, &[])?;
    let mut dist = DriverDistribution::default();
    let mut seen = Vec::new();
    for p in f.children(top, &["param"])? {
        let name = f.req(p, "name")?;
        if seen.contains(&name) {
            return Err(f.schema(p, name, "declared twice"));
        }
        seen.push(name);
        let d = match f.req(p, "dist")? {
            "constant" => {
                f.attrs(p, &["name", "dist", "value"])?;
                Distribution::Constant(f.num(p, "value")?)
            }
            "uniform" => {
                f.attrs(p, &["name", "dist", "lo", "hi"])?;
                Distribution::Uniform { lo: f.num(p, "lo")?, hi: f.num(p, "hi")? }
            }
            "normal" => {
                f.attrs(p, &["name", "dist", "mean", "sd"])?;
                Distribution::Normal { mean: f.num(p, "mean")?, sd: f.num(p, "sd")? }
            }
            other => return Err(f.schema(p, "dist", format!("unknown distribution {other:?}"))),
        };
        *dist.get_mut(name).ok_or_else(|| f.schema(p, "name", format!("unknown parameter {name:?}")))? = d;
    }
    dist.validate().map_err(|(name, reason)| ScenarioError::SchemaViolation {
        path: path.to_path_buf(),
        field: name.into(),
        reason: reason.into(),
    })?;
    Ok(dist)
}

fn parse_rhythm(path: &Path, lanes: &LaneSet, lane_count: usize, network: &RoadNetwork) -> Result<Rhythm> {
    let text = read(path)?;
    let doc = document(path, &text)?;
    let f = File { path };
    let top = f.root(&doc, "rhythm")?;
    match f.req(top, "kind")? {
        "flow" => {
            f.attrs(top, &["kind", "arrivals"])?;
            let arrivals = match top.attribute("arrivals").unwrap_or("deterministic") {
                "deterministic" => Arrivals::Deterministic,
                "poisson" => Arrivals::Poisson,
                other => return Err(f.schema(top, "arrivals", format!("unknown arrival process {other:?}"))),
            };
            let mut profile: Vec<RateStep> = Vec::new();
            for r in f.children(top, &["rate"])? {
                f.attrs(r, &["from", "value"])?;
                let step = RateStep { from: f.num(r, "from")?, rate: f.num(r, "value")? };
                if step.rate < 0.0 {
                    return Err(f.schema(r, "value", "flow must not be negative"));
                }
                if profile.last().is_some_and(|p| step.from <= p.from) {
                    return Err(f.schema(r, "from", "rate steps must be strictly increasing in time"));
                }
                profile.push(step);
            }
            Ok(Rhythm::Flow { profile, arrivals })
        }
        "script" => {
            f.attrs(top, &["kind"])?;
            let mut events: Vec<ScriptedEvent> = Vec::new();
            for e in f.children(top, &["event"])? {
                f.attrs(e, &["time", "lane", "speed", "length", "destination"])?;
                let mut params = DriverParams::default();
                for p in f.children(e, &["param"])? {
                    f.attrs(p, &["name", "value"])?;
                    let name = f.req(p, "name")?;
                    let value = f.num(p, "value")?;
                    let slot = match name {
                        "desired_speed" => &mut params.desired_speed,
                        "time_headway" => &mut params.time_headway,
                        "max_accel" => &mut params.max_accel,
                        "comfortable_decel" => &mut params.comfortable_decel,
                        "accel_exponent" => &mut params.accel_exponent,
                        "min_gap" => &mut params.min_gap,
                        "politeness" => &mut params.politeness,
                        "switch_threshold" => &mut params.switch_threshold,
                        "safe_decel" => &mut params.safe_decel,
                        _ => return Err(f.schema(p, "name", format!("unknown parameter {name:?}"))),
                    };
                    *slot = value;
                }
                if let Err(err) = params.validate() {
                    return Err(f.schema(e, "param", err.to_string()));
                }
                let event = ScriptedEvent {
                    time: f.num(e, "time")?,
                    lane: f.int(e, "lane")?,
                    speed: f.num(e, "speed")?,
                    length: f.opt_num(e, "length")?.unwrap_or(4.0),
                    params,
                    destination: e.attribute("destination").map(str::to_string),
                };
                if events.last().is_some_and(|p| event.time < p.time) {
                    return Err(f.schema(e, "time", "events must be in time order"));
                }
                if event.lane >= lane_count || !lanes.contains(event.lane) {
                    return Err(f.schema(e, "lane", format!("lane {} is not served by this input", event.lane)));
                }
                if event.speed < 0.0 {
                    return Err(f.schema(e, "speed", "must not be negative"));
                }
                if event.length <= 0.0 {
                    return Err(f.schema(e, "length", "must be positive"));
                }
                if let Some(d) = &event.destination {
                    if network.sink_ix(d).is_none() {
                        return Err(f.dangling("sink", d));
                    }
                }
                events.push(event);
            }
            Ok(Rhythm::Script(events))
        }
        other => Err(f.schema(top, "kind", format!("unknown rhythm kind {other:?}"))),
    }
}

fn parse_hybrid(
    path: &Path,
    dir: &Path,
    network: &RoadNetwork,
    distributions: &mut HashMap<String, DriverDistribution>,
) -> Result<HybridConfig> {
    let text = read(path)?;
    let doc = document(path, &text)?;
    let f = File { path };
    let top = f.root(&doc, "hybrid")?;
    f.attrs(top, &["cell_length", "release_queue_threshold", "driver"])?;
    let mut cfg = HybridConfig::default();
    if let Some(v) = f.opt_num(top, "cell_length")? {
        if v <= 0.0 {
            return Err(f.schema(top, "cell_length", "must be positive"));
        }
        cfg.cell_length = v;
    }
    if top.attribute("release_queue_threshold").is_some() {
        cfg.release_queue_threshold = f.int(top, "release_queue_threshold")?;
    }
    if let Some(r) = top.attribute("driver") {
        cfg.driver = match distributions.get(r) {
            Some(d) => d.clone(),
            None => {
                let d = parse_generation(&dir.join(r))?;
                distributions.insert(r.to_string(), d.clone());
                d
            }
        };
        cfg.driver_ref = Some(r.to_string());
    }
    let mut saw_fd = false;
    let mut saw_lod = false;
    for c in f.children(top, &["fundamental_diagram", "cluster", "lod"])? {
        match c.tag_name().name() {
            "fundamental_diagram" => {
                f.attrs(c, &["free_speed", "jam_density", "capacity"])?;
                if std::mem::replace(&mut saw_fd, true) {
                    return Err(f.schema(c, "fundamental_diagram", "declared twice"));
                }
                cfg.fd = FundamentalDiagram::triangular(f.num(c, "free_speed")?, f.num(c, "jam_density")?, f.num(c, "capacity")?)
                    .map_err(|e| f.schema(c, "fundamental_diagram", e.to_string()))?;
            }
            "cluster" => {
                f.attrs(c, &["representation", "start_road", "start", "end_road", "end"])?;
                let rep = f.req(c, "representation")?;
                cfg.clusters.push(ClusterSpec {
                    representation: Representation::parse(rep)
                        .ok_or_else(|| f.schema(c, "representation", format!("unknown representation {rep:?}")))?,
                    start_road: f.req(c, "start_road")?.to_string(),
                    start: f.num(c, "start")?,
                    end_road: f.req(c, "end_road")?.to_string(),
                    end: f.num(c, "end")?,
                });
            }
            _ => {
                if std::mem::replace(&mut saw_lod, true) {
                    return Err(f.schema(c, "lod", "declared twice"));
                }
                cfg.lod = parse_lod(&f, c)?;
            }
        }
    }
    layout_clusters(network, &Corridors::build(network), &cfg.clusters).map_err(|e| match e {
        LayoutError::UnknownRoad(id) => f.dangling("road", &id),
        LayoutError::Invalid(field, reason) => ScenarioError::SchemaViolation { path: path.to_path_buf(), field: field.into(), reason },
    })?;
    Ok(cfg)
}

fn parse_lod(f: &File, c: XmlNode) -> Result<LodPolicy> {
    f.attrs(
        c,
        &["enabled", "theta_down", "theta_up", "persistence", "min_cluster_length", "micro_vehicle_budget", "cooldown", "wall_clock_budget_ms"],
    )?;
    let mut lod = LodPolicy::default();
    for a in c.attributes() {
        lod.apply_override(a.name(), a.value()).map_err(|e| f.schema(c, a.name(), e))?;
    }
    lod.validate().map_err(|(field, reason)| f.schema(c, field, reason))?;
    Ok(lod)
}
