use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hytraffic::output::{output_probes, Format, DEFAULT_PROBES};
use hytraffic::{parse_scenario, run, EngineConfig, Probe};

#[derive(Parser)]
#[command(name = "hytraffic", version, about = "Hybrid micro/macro traffic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its outputs.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Root scenario file, or a directory holding scenario.xml.
    #[arg(long)]
    scenario: PathBuf,
    /// Number of steps; overrides the scenario duration.
    #[arg(long, conflicts_with = "duration")]
    steps: Option<u64>,
    /// Simulated seconds; overrides the scenario duration.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Step record format: csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Controller overrides, e.g. `theta_down=0.4,persistence=8`.
    #[arg(long)]
    lod: Option<String>,
    /// Comma-separated outputs: steps, transitions, trajectories, mass.
    #[arg(long)]
    probes: Option<String>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn run_cmd(args: RunArgs) -> ExitCode {
    let usage = |msg: String| {
        eprintln!("error: {msg}");
        ExitCode::from(1)
    };
    let Some(format) = Format::parse(&args.format) else {
        return usage(format!("unknown format {:?}, expected csv or json", args.format));
    };
    let model = match parse_scenario(&args.scenario) {
        Ok(m) => m,
        Err(e) => return usage(e.to_string()),
    };

    let mut config = EngineConfig { seed: args.seed, threads: args.threads, ..EngineConfig::default() };
    if let Some(n) = args.steps {
        config.steps = Some(n);
    } else if let Some(d) = args.duration {
        if !(d >= 0.0 && d.is_finite()) {
            return usage(format!("duration {d} must be a non-negative number"));
        }
        config.steps = Some((d / model.time_step).round() as u64);
    }
    if let Some(list) = &args.lod {
        let mut policy = model.hybrid.as_ref().map(|h| h.lod.clone()).unwrap_or_default();
        if let Err(e) = policy.apply_overrides(list) {
            return usage(format!("--lod: {e}"));
        }
        if let Err((key, why)) = policy.validate() {
            return usage(format!("--lod: {key}: {why}"));
        }
        config.lod = Some(policy);
    }

    let names: Vec<&str> = match &args.probes {
        Some(list) => list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect(),
        None => DEFAULT_PROBES.to_vec(),
    };
    let mut probes = match output_probes(&args.out, format, &names) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        return usage(format!("{}: {e}", args.out.display()));
    }

    let mut refs: Vec<&mut dyn Probe> = probes.iter_mut().map(|p| &mut **p as &mut dyn Probe).collect();
    let (outcome, report) = run(&model, &config, &mut refs);
    for f in &report.probe_failures {
        eprintln!("warning: probe {} failed at step {} ({:?}): {}", f.probe, f.step, f.event, f.message);
    }
    match outcome {
        Ok(sim) => {
            let l = sim.ledger();
            println!(
                "{}: {} steps, {} inserted, {} absorbed, {} transitions, {:.2}s wall",
                model.name,
                report.steps,
                l.inserted,
                l.absorbed,
                sim.transitions().len(),
                report.wall_time.as_secs_f64()
            );
            if report.probe_failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error at step {}: {e}", report.steps);
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run(args) => run_cmd(args),
    }
}
