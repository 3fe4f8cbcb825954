//! Safety probability of the plain and zeroing high-order certificates
//! across noise levels, from uniformly sampled initial states.
//!
//! cargo run --release --example unicycle_sweep -- [trajectories]

use std::path::Path;

use ssk::harness::config::ScenarioConfig;
use ssk::harness::ensemble::comparison_families;
use ssk::harness::sweep_noise;

fn main() {
    let n = std::env::args().nth(1).unwrap_or_else(|| "200".into());
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/unicycle.json");
    let s = ScenarioConfig::load(&path, &[format!("trajectories={n}")]).unwrap();
    let rows = sweep_noise(&s, &s.config.sigma_list, &comparison_families(2)).unwrap();
    for r in rows {
        println!("sigma={:<5} {:<9} p={:.3} [{:.3}, {:.3}]", r.sigma, r.family.as_str(), r.p, r.lo, r.hi);
    }
}
