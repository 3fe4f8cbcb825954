//! Per-initial-point safety probability for both high-order certificates.
//!
//! cargo run --release --example unicycle_initial_points -- [points] [paths]

use std::path::Path;

use ssk::harness::config::ScenarioConfig;
use ssk::harness::ensemble::{comparison_families, initial_point_study};

fn main() {
    let mut args = std::env::args().skip(1);
    let points: usize = args.next().map_or(10, |a| a.parse().unwrap());
    let paths: usize = args.next().map_or(200, |a| a.parse().unwrap());
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/unicycle.json");
    let s = ScenarioConfig::load(&path, &["sigma_list=[0.1]".into()]).unwrap();
    let rows = initial_point_study(&s, points, paths, &comparison_families(2)).unwrap();
    for r in rows {
        println!(
            "point {:>2} x0=({:+.2}, {:+.2}, {:+.2}) {:<9} p={:.3} [{:.3}, {:.3}]",
            r.point, r.x0[0], r.x0[1], r.x0[2], r.family.as_str(), r.p, r.lo, r.hi
        );
    }
}
