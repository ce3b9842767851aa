#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hytraffic::{parse_scenario, ScenarioModel};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn fixture(name: &str) -> ScenarioModel {
    parse_scenario(fixtures().join(name)).unwrap()
}

/// Single road `main` of `length` m from an input to a sink, optionally split
/// into clusters given as `(representation, start, end)`.
pub fn corridor(length: f64, lanes: usize, rate: f64, clusters: &[(&str, f64, f64)], duration: f64) -> ScenarioModel {
    let dir = tempfile::tempdir().unwrap();
    let hybrid = !clusters.is_empty();
    let files = [
        (
            "scenario.xml",
            format!(
                "<scenario name=\"corridor\" time_step=\"0.25\" duration=\"{duration}\">\n  <infrastructure ref=\"network.xml\"/>\n  <level kind=\"microscopic\" ref=\"micro.xml\"/>\n{}</scenario>\n",
                if hybrid { "  <level kind=\"hybrid\" ref=\"hybrid.xml\"/>\n" } else { "" }
            ),
        ),
        (
            "network.xml",
            format!("<network free_speed=\"25\">\n  <node id=\"a\" kind=\"crossroads\"/>\n  <node id=\"b\" kind=\"crossroads\"/>\n  <road id=\"main\" from=\"a\" to=\"b\" length=\"{length}\" lanes=\"{lanes}\" speed_limit=\"25\"/>\n</network>\n"),
        ),
        (
            "micro.xml",
            "<microscopic>\n  <input id=\"in\" road=\"main\" parameters=\"drivers.xml\" rhythm=\"flow.xml\"/>\n  <sink id=\"out\" road=\"main\"/>\n</microscopic>\n".into(),
        ),
        ("drivers.xml", "<generation>\n  <param name=\"desired_speed\" dist=\"uniform\" lo=\"22\" hi=\"27\"/>\n</generation>\n".into()),
        ("flow.xml", format!("<rhythm kind=\"flow\" arrivals=\"poisson\">\n  <rate from=\"0\" value=\"{rate}\"/>\n</rhythm>\n")),
        (
            "hybrid.xml",
            format!(
                "<hybrid cell_length=\"50\" driver=\"drivers.xml\">\n{}</hybrid>\n",
                clusters
                    .iter()
                    .map(|(r, a, b)| format!("  <cluster representation=\"{r}\" start_road=\"main\" start=\"{a}\" end_road=\"main\" end=\"{b}\"/>\n"))
                    .collect::<String>()
            ),
        ),
    ];
    for (name, content) in files {
        std::fs::write(dir.path().join(name), content).unwrap();
    }
    parse_scenario(dir.path().join("scenario.xml")).unwrap()
}
