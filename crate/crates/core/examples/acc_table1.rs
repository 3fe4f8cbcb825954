//! Reciprocal vs plain certificate on adaptive cruise control, with and
//! without the braking limit.
//!
//! cargo run --release --example acc_table1 -- [trajectories]

use std::path::Path;

use ssk::harness::compare;
use ssk::harness::config::ScenarioConfig;

fn main() {
    let n = std::env::args().nth(1).unwrap_or_else(|| "200".into());
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/acc.json");
    let s = ScenarioConfig::load(&path, &[format!("trajectories={n}")]).unwrap();
    let report = compare(&s).unwrap();
    print!("{report}");
}
