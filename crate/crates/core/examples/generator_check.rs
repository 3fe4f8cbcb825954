//! Compares the analytic generator against a Monte Carlo Dynkin quotient.
//!
//! cargo run --release --example generator_check

use ssk::generator::{apply_generator, finite_difference_check};
use ssk::harness::models::{self, UnicycleParams};
use ssk::Vector;

fn main() {
    let bench = models::unicycle(&UnicycleParams::default()).unwrap();
    let x = Vector::from_vec(vec![1.0, 1.0, 0.0]);
    let u = Vector::zeros(1);
    for f in [&bench.h, &bench.chain_levels[0]] {
        let analytic = apply_generator(&bench.model, f, &x, &u).unwrap();
        let report = finite_difference_check(&bench.model, f, &x, &u, &[1e-2, 1e-3, 1e-4], 100_000, 7).unwrap();
        println!("{}: A = {analytic:.6}", f.name());
        for e in &report.entries {
            println!("  dt={:<8} estimate={:.6} se={:.2e} |err|={:.2e}", e.dt, e.estimate, e.std_error, e.abs_error);
        }
        println!("  passed: {}", report.passed);
    }
}
