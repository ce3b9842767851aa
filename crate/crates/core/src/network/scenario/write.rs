use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::generation::{Distribution, DriverDistribution, Rhythm, ATTRIBUTES};
use crate::hybrid::HybridConfig;
use crate::network::{LaneSet, SignKind};

use super::{ScenarioModel, ROOT_FILE};

const HEADER: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(ch),
        }
    }
    out
}

fn lanes(set: &LaneSet) -> String {
    match set {
        LaneSet::All => "all".into(),
        LaneSet::Only(l) => l.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
    }
}

fn generation(d: &DriverDistribution) -> String {
    let mut s = String::from(HEADER);
    s.push_str("<generation>\n");
    for name in ATTRIBUTES {
        let _ = match *d.get(name).expect("known attribute") {
            Distribution::Constant(v) => writeln!(s, "  <param name=\"{name}\" dist=\"constant\" value=\"{v}\"/>"),
            Distribution::Uniform { lo, hi } => writeln!(s, "  <param name=\"{name}\" dist=\"uniform\" lo=\"{lo}\" hi=\"{hi}\"/>"),
            Distribution::Normal { mean, sd } => writeln!(s, "  <param name=\"{name}\" dist=\"normal\" mean=\"{mean}\" sd=\"{sd}\"/>"),
        };
    }
    s.push_str("</generation>\n");
    s
}

fn rhythm(r: &Rhythm) -> String {
    let mut s = String::from(HEADER);
    match r {
        Rhythm::Flow { profile, arrivals } => {
            let _ = writeln!(s, "<rhythm kind=\"flow\" arrivals=\"{}\">", arrivals.as_str());
            for step in profile {
                let _ = writeln!(s, "  <rate from=\"{}\" value=\"{}\"/>", step.from, step.rate);
            }
        }
        Rhythm::Script(events) => {
            s.push_str("<rhythm kind=\"script\">\n");
            for e in events {
                let _ = write!(s, "  <event time=\"{}\" lane=\"{}\" speed=\"{}\" length=\"{}\"", e.time, e.lane, e.speed, e.length);
                if let Some(d) = &e.destination {
                    let _ = write!(s, " destination=\"{}\"", esc(d));
                }
                s.push_str(">\n");
                let p = &e.params;
                for (name, v) in [
                    ("desired_speed", p.desired_speed),
                    ("time_headway", p.time_headway),
                    ("max_accel", p.max_accel),
                    ("comfortable_decel", p.comfortable_decel),
                    ("accel_exponent", p.accel_exponent),
                    ("min_gap", p.min_gap),
                    ("politeness", p.politeness),
                    ("switch_threshold", p.switch_threshold),
                    ("safe_decel", p.safe_decel),
                ] {
                    let _ = writeln!(s, "    <param name=\"{name}\" value=\"{v}\"/>");
                }
                s.push_str("  </event>\n");
            }
        }
    }
    s.push_str("</rhythm>\n");
    s
}

fn hybrid(h: &HybridConfig) -> String {
    let mut s = String::from(HEADER);
    let _ = write!(s, "<hybrid cell_length=\"{}\" release_queue_threshold=\"{}\"", h.cell_length, h.release_queue_threshold);
    if let Some(d) = &h.driver_ref {
        let _ = write!(s, " driver=\"{}\"", esc(d));
    }
    s.push_str(">\n");
    let _ = writeln!(
        s,
        "  <fundamental_diagram free_speed=\"{}\" jam_density=\"{}\" capacity=\"{}\"/>",
        h.fd.free_speed, h.fd.jam_density, h.fd.capacity
    );
    for c in &h.clusters {
        let _ = writeln!(
            s,
            "  <cluster representation=\"{}\" start_road=\"{}\" start=\"{}\" end_road=\"{}\" end=\"{}\"/>",
            c.representation.as_str(),
            esc(&c.start_road),
            c.start,
            esc(&c.end_road),
            c.end
        );
    }
    let l = &h.lod;
    let _ = write!(
        s,
        "  <lod enabled=\"{}\" theta_down=\"{}\" theta_up=\"{}\" persistence=\"{}\" min_cluster_length=\"{}\" cooldown=\"{}\"",
        l.enabled, l.theta_down, l.theta_up, l.persistence, l.min_cluster_length, l.cooldown
    );
    if let Some(b) = l.micro_vehicle_budget {
        let _ = write!(s, " micro_vehicle_budget=\"{b}\"");
    }
    if let Some(ms) = l.wall_clock_budget_ms {
        let _ = write!(s, " wall_clock_budget_ms=\"{ms}\"");
    }
    s.push_str("/>\n</hybrid>\n");
    s
}

/// Canonical text of every file of the scenario, as `(relative path, content)`
/// in a fixed order. Two models are equal exactly when these agree.
pub fn canonical_files(model: &ScenarioModel) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = Vec::new();
    let push = |files: &mut Vec<(String, String)>, name: &str, content: String| {
        if !files.iter().any(|(n, _)| n == name) {
            files.push((name.to_string(), content));
        }
    };

    let mut s = String::from(HEADER);
    let _ = writeln!(s, "<scenario name=\"{}\" time_step=\"{}\" duration=\"{}\">", esc(&model.name), model.time_step, model.duration);
    let _ = writeln!(s, "  <infrastructure ref=\"{}\"/>", esc(&model.files.infrastructure));
    let _ = writeln!(s, "  <level kind=\"microscopic\" ref=\"{}\"/>", esc(&model.files.microscopic));
    if let Some(h) = &model.files.hybrid {
        let _ = writeln!(s, "  <level kind=\"hybrid\" ref=\"{}\"/>", esc(h));
    }
    s.push_str("</scenario>\n");
    push(&mut files, ROOT_FILE, s);

    let net = &model.network;
    let mut s = String::from(HEADER);
    let _ = writeln!(s, "<network free_speed=\"{}\">", net.free_speed());
    for n in net.nodes() {
        if n.turns.is_empty() {
            let _ = writeln!(s, "  <node id=\"{}\" kind=\"{}\"/>", esc(&n.id), n.kind.as_str());
            continue;
        }
        let _ = writeln!(s, "  <node id=\"{}\" kind=\"{}\">", esc(&n.id), n.kind.as_str());
        for t in &n.turns {
            let _ = writeln!(
                s,
                "    <turn from=\"{}\" from_lane=\"{}\" to=\"{}\" to_lane=\"{}\"/>",
                esc(&t.from_road),
                t.from_lane,
                esc(&t.to_road),
                t.to_lane
            );
        }
        s.push_str("  </node>\n");
    }
    for r in net.roads() {
        let _ = write!(
            s,
            "  <road id=\"{}\" from=\"{}\" to=\"{}\" length=\"{}\" lanes=\"{}\" speed_limit=\"{}\"",
            esc(&r.id),
            esc(&r.from_node),
            esc(&r.to_node),
            r.length,
            r.lane_count,
            r.speed_limit
        );
        if r.signs.is_empty() {
            s.push_str("/>\n");
            continue;
        }
        s.push_str(">\n");
        for sign in &r.signs {
            let kind = match sign.kind {
                SignKind::Stop => "stop",
                SignKind::Yield => "yield",
                SignKind::SpeedLimit(_) => "speed_limit",
            };
            let _ = write!(s, "    <sign kind=\"{kind}\" position=\"{}\"", sign.position);
            if let SignKind::SpeedLimit(v) = sign.kind {
                let _ = write!(s, " value=\"{v}\"");
            }
            let _ = write!(s, " lanes=\"{}\"", lanes(&sign.lanes));
            if let Some(a) = sign.active_from {
                let _ = write!(s, " active_from=\"{a}\"");
            }
            if let Some(b) = sign.active_until {
                let _ = write!(s, " active_until=\"{b}\"");
            }
            s.push_str("/>\n");
        }
        s.push_str("  </road>\n");
    }
    s.push_str("</network>\n");
    push(&mut files, &model.files.infrastructure, s);

    let mut s = String::from(HEADER);
    let _ = writeln!(
        s,
        "<microscopic perception_horizon=\"{}\" navigation_horizon=\"{}\">",
        model.perception_horizon, model.navigation_horizon
    );
    for g in &model.generators {
        let _ = write!(
            s,
            "  <input id=\"{}\" road=\"{}\" lanes=\"{}\" parameters=\"{}\" rhythm=\"{}\"",
            esc(&g.id),
            esc(&g.road),
            lanes(&g.lanes),
            esc(&g.parameters_ref),
            esc(&g.rhythm_ref)
        );
        if let Some(d) = &g.destination {
            let _ = write!(s, " destination=\"{}\"", esc(d));
        }
        s.push_str("/>\n");
    }
    for sink in net.sinks() {
        let _ = writeln!(s, "  <sink id=\"{}\" road=\"{}\"/>", esc(&sink.id), esc(&sink.road));
    }
    s.push_str("</microscopic>\n");
    push(&mut files, &model.files.microscopic, s);

    for g in &model.generators {
        push(&mut files, &g.parameters_ref, generation(&g.driver));
        push(&mut files, &g.rhythm_ref, rhythm(&g.rhythm));
    }
    if let (Some(name), Some(h)) = (&model.files.hybrid, &model.hybrid) {
        push(&mut files, name, hybrid(h));
        if let Some(d) = &h.driver_ref {
            push(&mut files, d, generation(&h.driver));
        }
    }
    files
}

/// Writes the canonical file set into `dir` and returns the root file path.
pub fn write_scenario(model: &ScenarioModel, dir: &Path) -> std::io::Result<PathBuf> {
    for (name, content) in canonical_files(model) {
        let path = dir.join(&name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content)?;
    }
    Ok(dir.join(ROOT_FILE))
}
