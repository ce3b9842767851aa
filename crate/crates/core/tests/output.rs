mod common;

use common::fixture;
use hytraffic::output::{output_probes, sig9, Format, MASS_COLUMNS, STEP_COLUMNS, TRANSITION_COLUMNS};
use hytraffic::{run, EngineConfig, Probe};

fn run_into(name: &str, steps: Option<u64>, format: Format, probes: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut list = output_probes(dir.path(), format, probes).unwrap();
    let mut refs: Vec<&mut dyn Probe> = list.iter_mut().map(|p| &mut **p as &mut dyn Probe).collect();
    let (sim, report) = run(&fixture(name), &EngineConfig { steps, ..Default::default() }, &mut refs);
    sim.unwrap();
    assert!(report.probe_failures.is_empty(), "{:?}", report.probe_failures);
    dir
}

fn read(dir: &tempfile::TempDir, name: &str) -> String {
    std::fs::read_to_string(dir.path().join(name)).unwrap()
}

#[test]
fn empty_run_writes_headers_only() {
    let dir = run_into("hybrid", Some(0), Format::Csv, &["steps", "transitions"]);
    assert_eq!(read(&dir, "steps.csv"), format!("{STEP_COLUMNS}\n"));
    assert_eq!(read(&dir, "transitions.csv"), format!("{TRANSITION_COLUMNS}\n"));
    assert!(!dir.path().join("mass_audit.csv").exists());
}

#[test]
fn step_rows_per_cluster_plus_total() {
    let dir = run_into("hybrid", Some(8), Format::Csv, &["steps"]);
    let text = read(&dir, "steps.csv");
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8 * 4);
    let width = STEP_COLUMNS.split(',').count();
    assert!(rows.iter().all(|r| r.len() == width));
    assert_eq!(rows[3][2], "total");
    assert_eq!(rows[1][4], "macro");
    assert_eq!(rows.last().unwrap()[0], "8");
}

#[test]
fn json_steps_are_an_array_of_objects() {
    let dir = run_into("hybrid", Some(5), Format::Json, &["steps"]);
    let v: serde_json::Value = serde_json::from_str(&read(&dir, "steps.json")).unwrap();
    let steps = v.as_array().unwrap();
    assert_eq!(steps.len(), 5);
    assert_eq!(steps[4]["step"], 5);
    assert_eq!(steps[0]["clusters"].as_array().unwrap().len(), 3);
    assert!(steps[0]["totals"]["total_mass"].is_number());
    let empty = run_into("hybrid", Some(0), Format::Json, &["steps"]);
    assert_eq!(serde_json::from_str::<serde_json::Value>(&read(&empty, "steps.json")).unwrap(), serde_json::json!([]));
}

#[test]
fn transition_log_of_the_bottleneck() {
    let dir = run_into("bottleneck", None, Format::Csv, &["transitions"]);
    let text = read(&dir, "transitions.csv");
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let head: Vec<(&str, &str, &str)> = rows.iter().take(3).map(|r| (r[2], r[3], r[4])).collect();
    assert_eq!(head, [("split", "C1 C3", "1450"), ("split", "C3 C4", "1650"), ("refine", "C3", "1450")]);
    assert!(rows.iter().all(|r| r[5] == "main"));
    assert!(rows.iter().all(|r| r[10] == r[11]), "pre and post mass differ");
}

#[test]
fn mass_audit_balances() {
    let dir = run_into("ring", Some(400), Format::Csv, &["mass"]);
    let text = read(&dir, "mass_audit.csv");
    assert_eq!(text.lines().next().unwrap(), MASS_COLUMNS);
    assert_eq!(text.lines().count(), 1 + 401);
    for line in text.lines().skip(1) {
        let diff: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(diff.abs() < 1e-9, "{line}");
    }
}

#[test]
fn trajectories_are_opt_in() {
    let dir = run_into("minimal", Some(40), Format::Csv, &["steps", "transitions", "mass"]);
    assert!(!dir.path().join("trajectories.csv").exists());
    let dir = run_into("minimal", Some(40), Format::Csv, &["trajectories"]);
    let text = read(&dir, "trajectories.csv");
    assert!(text.lines().count() > 1);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(3) == Some("main")));
}

#[test]
fn unknown_probe_is_rejected() {
    assert!(output_probes(std::path::Path::new("."), Format::Csv, &["steps", "bogus"]).is_err());
}

#[test]
fn numbers_round_to_nine_digits() {
    assert_eq!(sig9(2.0 / 3.0), "0.666666667");
    assert_eq!(sig9(1e9 + 0.5), "1000000000");
}
