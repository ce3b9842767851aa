//! Probes that write run results to files.
//!
//! Rows are buffered in memory and each file is written once, through a
//! temporary file renamed into place, when the run ends or fails. The column
//! layouts are listed in `docs/formats.md`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::engine::{ClusterStats, EngineError, Ledger, Probe, ProbeError, Simulation};
use crate::hybrid::Representation;

pub const STEPS_CSV: &str = "steps.csv";
pub const STEPS_JSON: &str = "steps.json";
pub const TRANSITIONS_CSV: &str = "transitions.csv";
pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const MASS_CSV: &str = "mass_audit.csv";

pub const STEP_COLUMNS: &str = "step,time,row,cluster,representation,corridor,start,end,vehicles,density,mean_speed,inflow,outflow,generated,inserted,absorbed,injected,queued,total_mass";
pub const TRANSITION_COLUMNS: &str = "step,time,action,clusters,position,road,road_position,start,end,trigger,pre_mass,post_mass";
pub const TRAJECTORY_COLUMNS: &str = "step,time,vehicle,road,lane,position,speed";
pub const MASS_COLUMNS: &str = "step,time,vehicles,cells,held,generators,total_mass,expected_mass,difference";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

/// Probe names accepted by [`output_probes`].
pub const PROBE_NAMES: [&str; 4] = ["steps", "transitions", "trajectories", "mass"];
/// Probes enabled when none are selected.
pub const DEFAULT_PROBES: [&str; 3] = ["steps", "transitions", "mass"];

/// Decimal rendering rounded to 9 significant digits, trailing zeros dropped.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("valid float");
    let magnitude = rounded.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let mut s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// Writes `content` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, content: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct StepTotals<'a> {
    micro_vehicles: usize,
    queued: usize,
    #[serde(flatten)]
    ledger: &'a Ledger,
    total_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
struct StepObject<'a> {
    step: u64,
    time: f64,
    clusters: Vec<ClusterStats>,
    totals: StepTotals<'a>,
}

/// One record per step: a row per cluster plus a totals row.
pub struct StepWriter {
    path: PathBuf,
    format: Format,
    buf: String,
}

impl StepWriter {
    pub fn new(dir: &Path, format: Format) -> Self {
        let (name, buf) = match format {
            Format::Csv => (STEPS_CSV, format!("{STEP_COLUMNS}\n")),
            Format::Json => (STEPS_JSON, String::from("[\n")),
        };
        Self { path: dir.join(name), format, buf }
    }

    fn flush(&mut self) -> Result<(), ProbeError> {
        let mut content = self.buf.clone();
        if self.format == Format::Json {
            if content.ends_with(",\n") {
                content.truncate(content.len() - 2);
                content.push('\n');
            }
            content.push_str("]\n");
        }
        write_atomic(&self.path, content.as_bytes())?;
        Ok(())
    }
}

fn representation(r: Representation) -> &'static str {
    r.as_str()
}

impl Probe for StepWriter {
    fn name(&self) -> &str {
        "steps"
    }

    fn on_step_end(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        let (step, time) = (sim.step_index(), sim.time());
        let stats = sim.cluster_stats();
        let l = sim.ledger();
        match self.format {
            Format::Csv => {
                for c in &stats {
                    let _ = writeln!(
                        self.buf,
                        "{step},{},cluster,{},{},{},{},{},{},{},{},{},{},,,,,,",
                        sig9(time),
                        c.id,
                        representation(c.representation),
                        c.corridor,
                        sig9(c.start),
                        sig9(c.end),
                        sig9(c.vehicles),
                        sig9(c.density),
                        sig9(c.mean_speed),
                        sig9(c.inflow),
                        sig9(c.outflow),
                    );
                }
                let _ = writeln!(
                    self.buf,
                    "{step},{},total,,,,,,{},,,,,{},{},{},{},{},{}",
                    sig9(time),
                    sim.micro().len(),
                    sig9(l.generated),
                    l.inserted,
                    l.absorbed,
                    l.injected,
                    sim.queued(),
                    sig9(sim.total_mass()),
                );
            }
            Format::Json => {
                let obj = StepObject {
                    step,
                    time,
                    clusters: stats,
                    totals: StepTotals { micro_vehicles: sim.micro().len(), queued: sim.queued(), ledger: l, total_mass: sim.total_mass() },
                };
                self.buf.push_str(&serde_json::to_string(&obj)?);
                self.buf.push_str(",\n");
            }
        }
        Ok(())
    }

    fn on_initialized(&mut self, _sim: &Simulation) -> Result<(), ProbeError> {
        self.flush()
    }

    fn on_final(&mut self, _sim: &Simulation) -> Result<(), ProbeError> {
        self.flush()
    }

    fn on_error(&mut self, _error: &EngineError) -> Result<(), ProbeError> {
        self.flush()
    }
}

/// One row per applied level-of-detail action.
pub struct TransitionWriter {
    path: PathBuf,
    written: usize,
    buf: String,
}

impl TransitionWriter {
    pub fn new(dir: &Path) -> Self {
        Self { path: dir.join(TRANSITIONS_CSV), written: 0, buf: format!("{TRANSITION_COLUMNS}\n") }
    }

    fn collect(&mut self, sim: &Simulation) {
        for t in &sim.transitions()[self.written..] {
            let c = sim.clusters().get(t.clusters[0]).map_or(0, |c| c.corridor);
            let (road, pos) = sim.corridors().get(c).locate(t.position);
            let ids: Vec<String> = t.clusters.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(
                self.buf,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                t.step,
                sig9(t.time),
                t.action.kind(),
                ids.join(" "),
                sig9(t.position),
                sim.network().road(road).id,
                sig9(pos),
                sig9(t.start),
                sig9(t.end),
                t.trigger,
                sig9(t.pre_mass),
                sig9(t.post_mass),
            );
        }
        self.written = sim.transitions().len();
    }
}

impl Probe for TransitionWriter {
    fn name(&self) -> &str {
        "transitions"
    }

    fn on_step_end(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        self.collect(sim);
        Ok(())
    }

    fn on_initialized(&mut self, _sim: &Simulation) -> Result<(), ProbeError> {
        write_atomic(&self.path, self.buf.as_bytes())?;
        Ok(())
    }

    fn on_final(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        self.collect(sim);
        write_atomic(&self.path, self.buf.as_bytes())?;
        Ok(())
    }

    fn on_error(&mut self, _error: &EngineError) -> Result<(), ProbeError> {
        write_atomic(&self.path, self.buf.as_bytes())?;
        Ok(())
    }
}

/// Position and speed of every vehicle after every step.
pub struct TrajectoryWriter {
    path: PathBuf,
    buf: String,
}

impl TrajectoryWriter {
    pub fn new(dir: &Path) -> Self {
        Self { path: dir.join(TRAJECTORIES_CSV), buf: format!("{TRAJECTORY_COLUMNS}\n") }
    }
}

impl Probe for TrajectoryWriter {
    fn name(&self) -> &str {
        "trajectories"
    }

    fn on_step_end(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        let (step, time) = (sim.step_index(), sig9(sim.time()));
        for v in sim.micro().vehicles() {
            let _ = writeln!(
                self.buf,
                "{step},{time},{},{},{},{},{}",
                v.id,
                sim.network().road(v.road).id,
                v.lane,
                sig9(v.position),
                sig9(v.speed)
            );
        }
        Ok(())
    }

    fn on_final(&mut self, _sim: &Simulation) -> Result<(), ProbeError> {
        write_atomic(&self.path, self.buf.as_bytes())?;
        Ok(())
    }

    fn on_error(&mut self, _error: &EngineError) -> Result<(), ProbeError> {
        write_atomic(&self.path, self.buf.as_bytes())?;
        Ok(())
    }
}

/// Mass by location against the ledger, every step.
pub struct MassAuditor {
    path: PathBuf,
    buf: String,
    /// Largest `|total − expected|` seen so far.
    pub worst: f64,
}

impl MassAuditor {
    pub fn new(dir: &Path) -> Self {
        Self { path: dir.join(MASS_CSV), buf: format!("{MASS_COLUMNS}\n"), worst: 0.0 }
    }

    fn record(&mut self, sim: &Simulation) {
        let b = sim.mass_breakdown();
        let (total, expected) = (b.total(), sim.expected_mass());
        self.worst = self.worst.max((total - expected).abs());
        let _ = writeln!(
            self.buf,
            "{},{},{},{},{},{},{},{},{}",
            sim.step_index(),
            sig9(sim.time()),
            sig9(b.vehicles),
            sig9(b.cells),
            sig9(b.held),
            sig9(b.generators),
            sig9(total),
            sig9(expected),
            sig9(total - expected)
        );
    }
}

impl Probe for MassAuditor {
    fn name(&self) -> &str {
        "mass"
    }

    fn on_initialized(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        self.record(sim);
        Ok(())
    }

    fn on_step_end(&mut self, sim: &Simulation) -> Result<(), ProbeError> {
        self.record(sim);
        Ok(())
    }

    fn on_final(&mut self, _sim: &Simulation) -> Result<(), ProbeError> {
        write_atomic(&self.path, self.buf.as_bytes())?;
        Ok(())
    }

    fn on_error(&mut self, _error: &EngineError) -> Result<(), ProbeError> {
        write_atomic(&self.path, self.buf.as_bytes())?;
        Ok(())
    }
}

/// Builds the named output probes writing into `dir`, in [`PROBE_NAMES`] order.
pub fn output_probes(dir: &Path, format: Format, names: &[&str]) -> Result<Vec<Box<dyn Probe>>, String> {
    if let Some(bad) = names.iter().find(|n| !PROBE_NAMES.contains(n)) {
        return Err(format!("unknown probe {bad:?}, expected one of {}", PROBE_NAMES.join(", ")));
    }
    let mut out: Vec<Box<dyn Probe>> = Vec::new();
    for name in PROBE_NAMES {
        if !names.contains(&name) {
            continue;
        }
        out.push(match name {
            "steps" => Box::new(StepWriter::new(dir, format)),
            "transitions" => Box::new(TransitionWriter::new(dir)),
            "trajectories" => Box::new(TrajectoryWriter::new(dir)),
            _ => Box::new(MassAuditor::new(dir)),
        });
    }
    Ok(out)
}
