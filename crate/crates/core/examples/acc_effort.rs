//! Peak and mean control effort of both certificates on cruise control.
//!
//! cargo run --release --example acc_effort -- [trajectories]

use std::path::Path;

use ssk::harness::config::ScenarioConfig;
use ssk::harness::run_ensemble;
use ssk::Family;

fn main() {
    let n = std::env::args().nth(1).unwrap_or_else(|| "50".into());
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/acc.json");
    let base = ScenarioConfig::load(&path, &[format!("trajectories={n}")]).unwrap();
    for family in [Family::Srcbf, Family::Scbf] {
        let r = run_ensemble(&base.with_family(family)).unwrap();
        println!(
            "{:<6} p={:.3} peak |u|^2={:.3e} mean |u|^2={:.3e}",
            family.as_str(),
            r.empirical_probability,
            r.effort_peak,
            r.effort_mean
        );
    }
}
