//! Runs a bundled scenario in-process and lists the artifacts it would write.

use isolab::scenario::{bundled, run_scenario, ScenarioConfig};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "sharpness-N".into());
    let text = bundled(&name).unwrap_or_else(|| panic!("no bundled scenario `{name}`"));
    let config = ScenarioConfig::parse(text).expect("bundled scenarios are valid");
    let outcome = run_scenario(&config, None).expect("scenario runs");
    for c in &outcome.checks {
        println!(
            "{} {:<26} {:.6} (limit {:.6})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.limit
        );
    }
    for (path, bytes) in &outcome.artifacts {
        println!("{path:<32} {} bytes", bytes.len());
    }
}
