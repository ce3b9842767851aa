//! Acceptance suite. Runs every criterion in order, prints one line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hytraffic::engine::{ProbeEvent, ProbeError};
use hytraffic::hybrid::{ClusterId, Representation};
use hytraffic::lod::{Action, Trigger};
use hytraffic::macroscopic::{ctm_step, fd_flow, FundamentalDiagram, MacroCell, MacroSegment};
use hytraffic::micro::{
    equilibrium_gap, idm_acceleration, mobil_decide, DriverParams, FollowerView, LaneChangeDecision, LaneView, LeaderView,
    Perception,
};
use hytraffic::network::scenario::canonical_files;
use hytraffic::output::output_probes;
use hytraffic::output::Format;
use hytraffic::{parse_scenario, run, write_scenario, EngineConfig, EngineError, Probe, ScenarioModel, Simulation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn fixture(name: &str) -> ScenarioModel {
    parse_scenario(fixtures().join(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

/// Writes `files` into a fresh directory and parses `scenario.xml` from it.
fn scenario(files: &[(&str, String)]) -> ScenarioModel {
    let dir = tempfile::tempdir().unwrap();
    for (name, content) in files {
        std::fs::write(dir.path().join(name), content).unwrap();
    }
    parse_scenario(dir.path().join("scenario.xml")).unwrap_or_else(|e| panic!("{e}"))
}

fn root_xml(name: &str, dt: f64, duration: f64, hybrid: bool) -> String {
    let h = if hybrid { "  <level kind=\"hybrid\" ref=\"hybrid.xml\"/>\n" } else { "" };
    format!(
        "<scenario name=\"{name}\" time_step=\"{dt}\" duration=\"{duration}\">\n  <infrastructure ref=\"network.xml\"/>\n  <level kind=\"microscopic\" ref=\"micro.xml\"/>\n{h}</scenario>\n"
    )
}

fn straight_road(length: f64, lanes: usize, limit: f64) -> String {
    format!(
        "<network free_speed=\"25\">\n  <node id=\"a\" kind=\"crossroads\"/>\n  <node id=\"b\" kind=\"crossroads\"/>\n  <road id=\"main\" from=\"a\" to=\"b\" length=\"{length}\" lanes=\"{lanes}\" speed_limit=\"{limit}\"/>\n</network>\n"
    )
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 -------------------------------------------------------------------------

/// Plain transcription of the IDM formula with the default parameters.
fn idm_oracle(v: f64, s: f64, dv: f64) -> f64 {
    let (v0, t, a, b, delta, s0) = (33.33, 1.6, 0.73, 1.67, 4.0, 2.0);
    let s_star = f64::max(s0, s0 + v * t + v * dv / (2.0 * f64::sqrt(a * b)));
    a * (1.0 - (v / v0).powf(delta) - (s_star / s).powi(2))
}

fn idm_points() -> Outcome {
    let p = DriverParams::<f64>::default();
    let free = idm_acceleration(0.0, f64::INFINITY, 0.0, &p).map_err(|e| e.to_string())?;
    let at_v0 = idm_acceleration(p.desired_speed, f64::INFINITY, 0.0, &p).map_err(|e| e.to_string())?;
    let worked = idm_acceleration(20.0, 50.0, 3.0, &p).map_err(|e| e.to_string())?;
    let oracle = idm_oracle(20.0, 50.0, 3.0);
    check(
        free == p.max_accel && at_v0.abs() <= 1e-12 && (worked - oracle).abs() <= 1e-3,
        format!("a(0,inf,0)={free}, a(v0,inf,0)={at_v0:.1e}, a(20,50,3)={worked:.6} vs oracle {oracle:.6}"),
    )
}

// 2 -------------------------------------------------------------------------

fn equilibrium() -> Outcome {
    let p = DriverParams::<f64>::default();
    let mut worst: f64 = 0.0;
    for v in [1.0, 5.0, 10.0, 20.0, 25.0, 30.0] {
        let s = equilibrium_gap(v, &p).map_err(|e| e.to_string())?;
        worst = worst.max(idm_acceleration(v, s, 0.0, &p).map_err(|e| e.to_string())?.abs());
    }
    check(worst <= 1e-9, format!("max |a(v, s_e(v), 0)| = {worst:.2e}"))
}

// 3 -------------------------------------------------------------------------

/// Root of `idm_oracle(v, s, 0) = 0` in `s` by bisection.
fn equilibrium_oracle(v: f64) -> f64 {
    let (mut lo, mut hi) = (1.0, 1000.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if idm_oracle(v, mid, 0.0) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn platoon() -> Outcome {
    let model = scenario(&[
        ("scenario.xml", root_xml("platoon", 0.1, 600.0, false)),
        ("network.xml", straight_road(14000.0, 1, 40.0)),
        ("micro.xml", "<microscopic perception_horizon=\"200\">\n  <sink id=\"out\" road=\"main\"/>\n</microscopic>\n".into()),
    ]);
    let mut sim = Simulation::new(&model, &EngineConfig::default()).map_err(|e| e.to_string())?;
    let base = DriverParams::default();
    let leader = DriverParams { desired_speed: 20.0, ..base };
    let length = 4.0;
    sim.insert_vehicle("main", 0, 500.0, 20.0, leader, length, None).map_err(|e| e.to_string())?.ok_or("leader not placed")?;
    let mut front = 500.0;
    for gap in [25.0, 45.0, 30.0, 50.0, 28.0, 40.0, 35.0, 55.0, 26.0, 33.0] {
        let pos = front - length - gap;
        let speed = f64::min(20.0, (gap - base.min_gap) / base.time_headway - 0.5);
        sim.insert_vehicle("main", 0, pos, speed, base, length, None).map_err(|e| e.to_string())?.ok_or("follower not placed")?;
        front = pos;
    }
    while !sim.is_finished() {
        sim.step().map_err(|e| e.to_string())?;
    }
    let mut cars: Vec<_> = sim.micro().vehicles().iter().map(|v| (v.position, v.rear())).collect();
    cars.sort_by(|a, b| b.0.total_cmp(&a.0));
    let target = equilibrium_oracle(20.0);
    let worst = cars.windows(2).map(|w| ((w[0].1 - w[1].0) / target - 1.0).abs()).fold(0.0, f64::max);
    check(cars.len() == 11 && worst <= 0.01, format!("target gap {target:.3} m, worst relative deviation {:.3}%", worst * 100.0))
}

// 4 -------------------------------------------------------------------------

/// Driver response under a speed limit, written out independently.
fn limited_accel(v: f64, gap: f64, dv: f64, p: &DriverParams, limit: f64) -> f64 {
    let a = p.max_accel;
    let s_star = f64::max(p.min_gap, p.min_gap + v * p.time_headway + v * dv / (2.0 * (a * p.comfortable_decel).sqrt()));
    let interaction = if gap.is_infinite() { 0.0 } else { (s_star / gap).powi(2) };
    if v > limit {
        f64::min(a * (1.0 - interaction), -p.comfortable_decel)
    } else {
        a * (1.0 - (v / p.desired_speed.min(limit)).powf(p.accel_exponent) - interaction)
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> DriverParams {
    DriverParams {
        desired_speed: rng.random_range(15.0..40.0),
        time_headway: rng.random_range(0.8..2.5),
        max_accel: rng.random_range(0.5..2.5),
        comfortable_decel: rng.random_range(1.0..3.0),
        accel_exponent: 4.0,
        min_gap: rng.random_range(1.0..3.0),
        politeness: rng.random_range(0.0..1.0),
        switch_threshold: rng.random_range(0.0..0.3),
        safe_decel: rng.random_range(1.0..6.0),
    }
}

fn random_lane(rng: &mut ChaCha8Rng) -> LaneView {
    let leader = rng.random_bool(0.7).then(|| LeaderView { gap: rng.random_range(0.5..150.0), speed: rng.random_range(0.0..35.0) });
    let follower = rng.random_bool(0.7).then(|| FollowerView {
        gap: rng.random_range(0.1..120.0),
        speed: rng.random_range(0.0..40.0),
        params: random_params(rng),
    });
    LaneView { leader, follower }
}

fn mobil_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut accepted, mut violations) = (0, 0);
    for _ in 0..10_000 {
        let params = random_params(&mut rng);
        let v = rng.random_range(0.0..35.0);
        let current = LaneView {
            leader: rng.random_bool(0.8).then(|| LeaderView { gap: rng.random_range(0.5..100.0), speed: rng.random_range(0.0..30.0) }),
            follower: rng.random_bool(0.5).then(|| FollowerView {
                gap: rng.random_range(0.1..80.0),
                speed: rng.random_range(0.0..35.0),
                params: random_params(&mut rng),
            }),
        };
        let perception = Perception {
            own_length: rng.random_range(3.5..12.0),
            current,
            left: rng.random_bool(0.8).then(|| random_lane(&mut rng)),
            right: rng.random_bool(0.8).then(|| random_lane(&mut rng)),
            speed_limit: rng.random_range(10.0..40.0),
        };
        let target = match mobil_decide(&perception, v, &params) {
            LaneChangeDecision::Stay => continue,
            LaneChangeDecision::Left => perception.left.unwrap(),
            LaneChangeDecision::Right => perception.right.unwrap(),
        };
        accepted += 1;
        if let Some(nf) = target.follower {
            let a = limited_accel(nf.speed, nf.gap, nf.speed - v, &nf.params, perception.speed_limit);
            if nf.gap <= 0.0 || a < -params.safe_decel {
                violations += 1;
            }
        }
    }
    check(violations == 0 && accepted > 500, format!("{accepted} accepted changes in 10000 scenes, {violations} unsafe"))
}

// 5 -------------------------------------------------------------------------

/// Position where density crosses the midpoint of the two states.
fn front_position(seg: &MacroSegment, dx: f64, mid: f64) -> f64 {
    let rho: Vec<f64> = seg.cells.iter().map(|c| c.rho).collect();
    let k = rho.windows(2).position(|w| w[0] < mid && w[1] >= mid).expect("front inside domain");
    let frac = (mid - rho[k]) / (rho[k + 1] - rho[k]);
    (k as f64 + 0.5 + frac) * dx
}

fn ctm_shock() -> Outcome {
    let fd = FundamentalDiagram::<f64>::default();
    let (rho_up, rho_down, dx, n) = (0.01, 0.12, 25.0, 200);
    let q_up = fd.free_speed * rho_up;
    let q_down = fd.capacity / (fd.jam_density - fd.critical_density()) * (fd.jam_density - rho_down);
    let oracle = (q_down - q_up) / (rho_down - rho_up);
    let mut seg = MacroSegment::new((0..n).map(|i| MacroCell::new(dx, 1, if i < n / 2 { rho_up } else { rho_down })).collect(), fd);
    let dt = seg.max_time_step();
    let inflow = fd_flow(rho_up, &fd).map_err(|e| e.to_string())?;
    let outflow = fd_flow(rho_down, &fd).map_err(|e| e.to_string())?;
    let mid = 0.5 * (rho_up + rho_down);
    let x0 = front_position(&seg, dx, mid);
    let steps = (200.0 / dt).round() as usize;
    for _ in 0..steps {
        ctm_step(&mut seg, inflow, outflow, dt).map_err(|e| e.to_string())?;
    }
    let speed = (front_position(&seg, dx, mid) - x0) / (steps as f64 * dt);
    let err = (speed / oracle - 1.0).abs();
    check(err <= 0.05, format!("front speed {speed:.4} m/s vs Rankine-Hugoniot {oracle:.4} m/s ({:.2}%)", err * 100.0))
}

// 6 -------------------------------------------------------------------------

fn ring_files(clusters: &str, lod: &str) -> Vec<(&'static str, String)> {
    vec![
        ("scenario.xml", root_xml("ring", 0.25, 2500.0, true)),
        ("network.xml", std::fs::read_to_string(fixtures().join("ring/network.xml")).unwrap()),
        ("micro.xml", "<microscopic perception_horizon=\"150\"/>\n".into()),
        (
            "hybrid.xml",
            format!("<hybrid cell_length=\"50\">\n  <fundamental_diagram free_speed=\"25\" jam_density=\"0.15\" capacity=\"0.5\"/>\n{clusters}  <lod {lod}/>\n</hybrid>\n"),
        ),
    ]
}

fn ring_mass() -> Outcome {
    let clusters = [("micro", "east", 0, 500), ("macro", "east", 500, 1000), ("micro", "west", 0, 500), ("macro", "west", 500, 1000)]
        .iter()
        .map(|(r, road, a, b)| format!("  <cluster representation=\"{r}\" start_road=\"{road}\" start=\"{a}\" end_road=\"{road}\" end=\"{b}\"/>\n"))
        .collect::<String>();
    let model = scenario(&ring_files(&clusters, "enabled=\"false\""));
    let mut sim = Simulation::new(&model, &EngineConfig { seed: 3, ..Default::default() }).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for road in ["east", "west"] {
        for lane in 0..2 {
            for k in 0..15 {
                let p = DriverParams { desired_speed: rng.random_range(22.0..28.0), ..DriverParams::default() };
                sim.insert_vehicle(road, lane, 480.0 - 32.0 * k as f64, 10.0, p, 4.5, None).map_err(|e| e.to_string())?;
            }
        }
    }
    let m0 = sim.total_mass();
    let mut worst: f64 = 0.0;
    let mut cycles = 0;
    let targets = [ClusterId(0), ClusterId(2)];
    for step in 0..10_000u64 {
        if step % 250 == 0 {
            let target = targets[(step / 500) as usize % 2];
            let macro_now = sim.clusters().get(target).ok_or("cluster vanished")?.representation() == Representation::Macro;
            let action = if macro_now { Action::Refine(target) } else { Action::Coarsen(target) };
            sim.apply_action(action).map_err(|e| format!("step {step}: {e}"))?;
            if macro_now {
                cycles += 1;
            }
        }
        sim.step().map_err(|e| e.to_string())?;
        worst = worst.max((sim.total_mass() - m0).abs());
    }
    check(
        m0 == 60.0 && worst <= 1e-9 * m0 && cycles >= 20,
        format!("mass {m0}, max drift {worst:.2e} over 10000 steps, {cycles} aggregate/disaggregate cycles"),
    )
}

// 7 -------------------------------------------------------------------------

fn corridor_outflow(hybrid: bool) -> Result<u64, String> {
    let mut files = vec![
        ("scenario.xml", root_xml("corridor", 0.25, 3600.0, hybrid)),
        ("network.xml", straight_road(2000.0, 1, 25.0)),
        (
            "micro.xml",
            "<microscopic>\n  <input id=\"in\" road=\"main\" parameters=\"drivers.xml\" rhythm=\"flow.xml\"/>\n  <sink id=\"out\" road=\"main\"/>\n</microscopic>\n".into(),
        ),
        ("drivers.xml", "<generation>\n  <param name=\"desired_speed\" dist=\"normal\" mean=\"25\" sd=\"1.5\"/>\n</generation>\n".into()),
        ("flow.xml", "<rhythm kind=\"flow\" arrivals=\"poisson\">\n  <rate from=\"0\" value=\"1200\"/>\n</rhythm>\n".into()),
    ];
    if hybrid {
        files.push((
            "hybrid.xml",
            "<hybrid cell_length=\"50\" driver=\"drivers.xml\">\n  <cluster representation=\"micro\" start_road=\"main\" start=\"0\" end_road=\"main\" end=\"500\"/>\n  <cluster representation=\"macro\" start_road=\"main\" start=\"500\" end_road=\"main\" end=\"1500\"/>\n  <cluster representation=\"micro\" start_road=\"main\" start=\"1500\" end_road=\"main\" end=\"2000\"/>\n</hybrid>\n".into(),
        ));
    }
    let model = scenario(&files);
    let (sim, _) = run(&model, &EngineConfig { seed: 11, ..Default::default() }, &mut []);
    Ok(sim.map_err(|e| e.to_string())?.ledger().absorbed)
}

fn hybrid_consistency() -> Outcome {
    let reference = corridor_outflow(false)?;
    let hybrid = corridor_outflow(true)?;
    let rel = (hybrid as f64 / reference as f64 - 1.0).abs();
    check(reference > 0 && rel <= 0.10, format!("outflow hybrid {hybrid} vs all-micro {reference} ({:.2}%)", rel * 100.0))
}

// 8 and 9 -------------------------------------------------------------------

fn bottleneck(persistence: u32) -> Result<Simulation, String> {
    let mut model = fixture("bottleneck");
    let h = model.hybrid.as_mut().unwrap();
    h.lod.persistence = persistence;
    let (sim, _) = run(&model, &EngineConfig::default(), &mut []);
    sim.map_err(|e| e.to_string())
}

fn jam_localization() -> Outcome {
    let model = fixture("bottleneck");
    let dt = model.time_step;
    let sign = model.network.road(model.network.road_ix("main").unwrap()).signs[0].clone();
    let onset = (sign.active_from.unwrap() / dt).round() as u64;
    let restricted = (sign.position, sign.position + model.hybrid.as_ref().unwrap().cell_length);
    let mut notes = Vec::new();
    for k in [10, 6] {
        let sim = bottleneck(k)?;
        let min_len = sim.policy().min_cluster_length;
        let jam: Vec<_> = sim.transitions().iter().filter(|t| t.trigger == Trigger::Jam).collect();
        let kinds: Vec<&str> = jam.iter().map(|t| t.action.kind()).collect();
        let flagged = jam.first().map(|t| t.step);
        let expected_step = onset + k as u64 - 1;
        let refined = jam.last().filter(|t| matches!(t.action, Action::Refine(_)));
        let Some(r) = refined else { return Err(format!("K={k}: no refine, log {kinds:?}")) };
        let ok = kinds == ["split", "split", "refine"]
            && jam.iter().all(|t| Some(t.step) == flagged)
            && flagged == Some(expected_step)
            && r.start <= restricted.0
            && r.end >= restricted.1
            && (r.end - r.start - min_len).abs() < 1e-9
            && matches!(jam[0].action, Action::Split { cluster: ClusterId(1), .. })
            && jam[0].clusters == [ClusterId(1), ClusterId(3)]
            && jam[1].clusters == [ClusterId(3), ClusterId(4)]
            && r.action == Action::Refine(ClusterId(3));
        notes.push(format!("K={k}: flagged at step {} (expected {expected_step}), refined [{}, {})", flagged.unwrap_or(0), r.start, r.end));
        if !ok {
            return Err(format!("{} log {kinds:?}", notes.join("; ")));
        }
    }
    Ok(notes.join("; "))
}

fn anti_flapping() -> Outcome {
    let sim = bottleneck(10)?;
    let cooldown = sim.policy().cooldown;
    let mut last: BTreeMap<ClusterId, u64> = BTreeMap::new();
    let mut flaps = 0;
    for t in sim.transitions() {
        if let Action::Refine(id) | Action::Coarsen(id) = t.action {
            if last.get(&id).is_some_and(|&s| t.step < s + cooldown) {
                flaps += 1;
            }
            last.insert(id, t.step);
        }
    }
    let recoveries: Vec<_> =
        sim.transitions().iter().filter(|t| matches!(t.action, Action::Coarsen(ClusterId(3)))).map(|t| (t.step, t.trigger)).collect();
    check(
        recoveries.len() == 1 && recoveries[0].1 == Trigger::Recovery && flaps == 0,
        format!(
            "refined cluster coarsened {} time(s) (step {:?}), {flaps} switches within the {cooldown}-step cooldown",
            recoveries.len(),
            recoveries.first().map(|r| r.0)
        ),
    )
}

// 10 ------------------------------------------------------------------------

fn dir_digest(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn run_to_dir(model: &ScenarioModel, threads: usize, dir: &Path) -> Result<(), String> {
    let mut probes = output_probes(dir, Format::Csv, &["steps", "transitions", "trajectories", "mass"])?;
    let mut refs: Vec<&mut dyn Probe> = probes.iter_mut().map(|p| &mut **p as &mut dyn Probe).collect();
    let (sim, report) = run(model, &EngineConfig { seed: 42, threads, ..Default::default() }, &mut refs);
    sim.map_err(|e| e.to_string())?;
    check(report.probe_failures.is_empty(), format!("{:?}", report.probe_failures)).map(|_| ())
}

fn determinism() -> Outcome {
    let model = fixture("hybrid");
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    run_to_dir(&model, 1, &dirs[0])?;
    run_to_dir(&model, 1, &dirs[1])?;
    run_to_dir(&model, 4, &dirs[2])?;
    let (a, b, c) = (dir_digest(&dirs[0]), dir_digest(&dirs[1]), dir_digest(&dirs[2]));
    let bytes: usize = a.values().map(Vec::len).sum();
    check(a.len() == 4 && a == b && a == c, format!("{} files, {bytes} bytes, identical across 2 runs at 1 thread and 1 at 4 threads", a.len()))
}

// 11 ------------------------------------------------------------------------

#[derive(Default)]
struct Recorder {
    events: Vec<ProbeEvent>,
}

impl Probe for Recorder {
    fn name(&self) -> &str {
        "recorder"
    }
    fn on_simulation_start(&mut self, _: &ScenarioModel, _: &EngineConfig) -> Result<(), ProbeError> {
        self.events.push(ProbeEvent::SimulationStart);
        Ok(())
    }
    fn on_initialized(&mut self, _: &Simulation) -> Result<(), ProbeError> {
        self.events.push(ProbeEvent::Initialized);
        Ok(())
    }
    fn on_step_end(&mut self, _: &Simulation) -> Result<(), ProbeError> {
        self.events.push(ProbeEvent::StepEnd);
        Ok(())
    }
    fn on_final(&mut self, _: &Simulation) -> Result<(), ProbeError> {
        self.events.push(ProbeEvent::Final);
        Ok(())
    }
    fn on_error(&mut self, _: &EngineError) -> Result<(), ProbeError> {
        self.events.push(ProbeEvent::Error);
        Ok(())
    }
}

/// Hashes every snapshot it sees and checks it for internal consistency.
#[derive(Default)]
struct Canary {
    last_step: u64,
    hashes: Vec<u64>,
    problems: Vec<String>,
}

impl Probe for Canary {
    fn name(&self) -> &str {
        "canary"
    }
    fn on_step_end(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        let step = sim.step_index();
        let mut bad = String::new();
        if step != self.last_step + 1 {
            let _ = write!(bad, "step jumped {} -> {step}; ", self.last_step);
        }
        if (sim.time() - step as f64 * sim.time_step()).abs() > 1e-9 {
            let _ = write!(bad, "time {} at step {step}; ", sim.time());
        }
        if (sim.total_mass() - sim.expected_mass()).abs() > 1e-9 {
            let _ = write!(bad, "mass {} != ledger {}; ", sim.total_mass(), sim.expected_mass());
        }
        let mut h = DefaultHasher::new();
        let mut lanes: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
        for v in sim.micro().vehicles() {
            v.id.hash(&mut h);
            v.position.to_bits().hash(&mut h);
            v.speed.to_bits().hash(&mut h);
            if !(v.speed >= 0.0 && v.position.is_finite()) {
                let _ = write!(bad, "vehicle {} speed {} at {}; ", v.id, v.speed, v.position);
            }
            lanes.entry((v.road, v.lane)).or_default().push((v.position, v.rear()));
        }
        for list in lanes.values_mut() {
            list.sort_by(|a, b| a.0.total_cmp(&b.0));
            if list.windows(2).any(|w| w[1].1 - w[0].0 < -0.01) {
                let _ = write!(bad, "overlap at step {step}; ");
            }
        }
        for c in sim.clusters().list() {
            c.id.hash(&mut h);
            c.held_mass().to_bits().hash(&mut h);
        }
        if !bad.is_empty() {
            self.problems.push(bad);
        }
        self.hashes.push(h.finish());
        self.last_step = step;
        Ok(())
    }
}

struct Failing;

impl Probe for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn on_step_end(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        if sim.step_index() == 3 {
            return Err("deliberate".into());
        }
        Ok(())
    }
}

fn probe_contract() -> Outcome {
    use ProbeEvent::*;
    let model = fixture("hybrid");

    let mut rec = Recorder::default();
    let (sim, _) = run(&model, &EngineConfig { steps: Some(0), ..Default::default() }, &mut [&mut rec]);
    sim.map_err(|e| e.to_string())?;
    if rec.events != [SimulationStart, Initialized, Final] {
        return Err(format!("0-step sequence {:?}", rec.events));
    }

    // cells of 50 m at 25 m/s cannot take a 3 s step
    let mut broken = model.clone();
    broken.time_step = 3.0;
    let (mut a, mut b, mut c) = (Recorder::default(), Recorder::default(), Recorder::default());
    let (sim, _) = run(&broken, &EngineConfig::default(), &mut [&mut a, &mut b, &mut c]);
    let error_calls: Vec<usize> = [&a, &b, &c].iter().map(|r| r.events.iter().filter(|e| **e == Error).count()).collect();
    if sim.is_ok() || error_calls != [1, 1, 1] || a.events.contains(&Final) {
        return Err(format!("error run: ok={}, on_error calls {error_calls:?}", sim.is_ok()));
    }

    let mut canary = Canary::default();
    let mut failing = Failing;
    let mut after = Recorder::default();
    let (sim, report) =
        run(&fixture("bottleneck"), &EngineConfig { steps: Some(1000), ..Default::default() }, &mut [&mut canary, &mut failing, &mut after]);
    sim.map_err(|e| e.to_string())?;
    let mut again = Canary::default();
    let (sim, _) = run(&fixture("bottleneck"), &EngineConfig { steps: Some(1000), ..Default::default() }, &mut [&mut again]);
    sim.map_err(|e| e.to_string())?;
    let steps_seen = after.events.iter().filter(|e| **e == StepEnd).count();
    check(
        canary.problems.is_empty()
            && canary.hashes.len() == 1000
            && canary.hashes == again.hashes
            && report.probe_failures.len() == 1
            && steps_seen == 1000,
        format!(
            "0-step sequence ok, on_error once per probe, canary clean over {} steps{}, failing probe isolated",
            canary.hashes.len(),
            canary.problems.first().map(|p| format!(" ({p})")).unwrap_or_default()
        ),
    )
}

// 12 ------------------------------------------------------------------------

struct LedgerAudit {
    broken_at: Option<u64>,
}

impl Probe for LedgerAudit {
    fn on_step_end(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        let l = sim.ledger();
        if l.emitted + l.injected - l.absorbed != (sim.micro().len() + sim.queued()) as u64 && self.broken_at.is_none() {
            self.broken_at = Some(sim.step_index());
        }
        Ok(())
    }
}

fn generation_rate() -> Outcome {
    let model = scenario(&[
        ("scenario.xml", root_xml("generation", 0.25, 3600.0, false)),
        ("network.xml", straight_road(1500.0, 1, 25.0)),
        (
            "micro.xml",
            "<microscopic>\n  <input id=\"in\" road=\"main\" parameters=\"drivers.xml\" rhythm=\"flow.xml\"/>\n  <sink id=\"out\" road=\"main\"/>\n</microscopic>\n".into(),
        ),
        (
            "drivers.xml",
            "<generation>\n  <param name=\"desired_speed\" dist=\"constant\" value=\"25\"/>\n  <param name=\"time_headway\" dist=\"constant\" value=\"1\"/>\n</generation>\n".into(),
        ),
        ("flow.xml", "<rhythm kind=\"flow\">\n  <rate from=\"0\" value=\"1800\"/>\n</rhythm>\n".into()),
    ]);
    let mut audit = LedgerAudit { broken_at: None };
    let (sim, _) = run(&model, &EngineConfig::default(), &mut [&mut audit]);
    let sim = sim.map_err(|e| e.to_string())?;
    let rate = sim.ledger().inserted as f64 / sim.time() * 3600.0;
    let rel = (rate / 1800.0 - 1.0).abs();
    check(
        rel <= 0.01 && audit.broken_at.is_none(),
        format!(
            "realized {rate:.1} veh/h ({:.2}%), ledger identity {}",
            rel * 100.0,
            audit.broken_at.map_or(format!("held for all {} steps", sim.step_index()), |s| format!("broken at step {s}"))
        ),
    )
}

// 13 ------------------------------------------------------------------------

/// Applies one fault to the content of a file; returns `None` when it does not apply.
fn mutate(name: &str, content: &str, fault: usize) -> Option<String> {
    match fault {
        0 => Some(content[..content.len() / 2].to_string()),
        1 => {
            // first numeric attribute value after the declaration
            let body = content.find("?>").map_or(1, |p| p + 2);
            let i = (body..content.len()).find(|&i| content[..i].ends_with("=\"") && content.as_bytes()[i].is_ascii_digit())?;
            let end = content[i..].find('"')? + i;
            Some(format!("{}not-a-number{}", &content[..i], &content[end..]))
        }
        2 => {
            let i = content.find("/>")?;
            Some(format!("{} bogus=\"1\"{}", &content[..i], &content[i..]))
        }
        3 if name == "network.xml" => Some(content.replacen("to=\"", "to=\"nowhere", 1)),
        3 if name == "micro.xml" => Some(content.replacen("road=\"", "road=\"nowhere", 1)),
        _ => None,
    }
}

fn round_trip() -> Outcome {
    let mut parsed = 0;
    let mut mutants = 0;
    for entry in std::fs::read_dir(fixtures()).unwrap() {
        let dir = entry.unwrap().path();
        let model = parse_scenario(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        parsed += 1;
        let tmp = tempfile::tempdir().unwrap();
        let root = write_scenario(&model, tmp.path()).map_err(|e| e.to_string())?;
        let again = parse_scenario(&root).map_err(|e| format!("reparse {}: {e}", dir.display()))?;
        if canonical_files(&again) != canonical_files(&model) || again != model {
            return Err(format!("{} does not round-trip", dir.display()));
        }
        for (name, content) in canonical_files(&model) {
            for fault in 0..4 {
                let Some(bad) = mutate(&name, &content, fault) else { continue };
                std::fs::write(tmp.path().join(&name), bad).unwrap();
                match parse_scenario(&root) {
                    Ok(_) => return Err(format!("{}: mutant {fault} of {name} accepted", dir.display())),
                    Err(e) if e.path().file_name().is_some_and(|f| f.to_string_lossy() == name.as_str()) => mutants += 1,
                    Err(e) => return Err(format!("{}: mutant {fault} of {name} blamed {}", dir.display(), e.path().display())),
                }
            }
            std::fs::write(tmp.path().join(&name), content).unwrap();
            std::fs::remove_file(tmp.path().join(&name)).unwrap();
            match parse_scenario(&root) {
                Err(e) if e.path().ends_with(&name) => mutants += 1,
                other => return Err(format!("{}: missing {name} gave {:?}", dir.display(), other.err().map(|e| e.to_string()))),
            }
            write_scenario(&model, tmp.path()).map_err(|e| e.to_string())?;
        }
    }
    check(parsed >= 5, format!("{parsed} fixtures round-trip, {mutants} single-fault mutants each blamed on their file"))
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("IDM point checks", idm_points),
        ("equilibrium consistency", equilibrium),
        ("platoon convergence", platoon),
        ("MOBIL safety", mobil_safety),
        ("CTM shock speed", ctm_shock),
        ("ring mass conservation", ring_mass),
        ("hybrid vs all-micro outflow", hybrid_consistency),
        ("jam localization", jam_localization),
        ("anti-flapping", anti_flapping),
        ("determinism", determinism),
        ("engine/probe contract", probe_contract),
        ("generation rate and ledger", generation_rate),
        ("scenario round-trip", round_trip),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str()) || p == &n.to_string()) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
