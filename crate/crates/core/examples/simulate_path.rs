//! One controlled unicycle path written to CSV.
//!
//! cargo run --release --example simulate_path -- out.csv

use std::path::{Path, PathBuf};

use ssk::harness::config::ScenarioConfig;
use ssk::harness::ensemble::{initial_state, prepare, run_path};
use ssk::harness::io::write_trajectory_csv;

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "trajectory.csv".into()));
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/unicycle.json");
    let s = ScenarioConfig::load(&path, &["init_sampling=\"fixed\"".into()]).unwrap();
    let prepared = prepare(&s).unwrap();
    let x0 = initial_state(&s, &prepared.bench, 0);
    let (traj, counters) = run_path(&s, &prepared, &x0, 0).unwrap();
    write_trajectory_csv(&traj, &prepared.bench.h, 1, &out).unwrap();
    println!(
        "safe={} steps={} dropped rows={} -> {}",
        traj.safe,
        counters.steps,
        counters.degenerate_rows,
        out.display()
    );
}
