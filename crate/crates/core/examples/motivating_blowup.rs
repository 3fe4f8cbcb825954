//! The reciprocal-barrier row on `dx = (x + u) dt + σ dW`, `h = 1 − x`:
//! the admissible control is pushed to −∞ as the state nears the boundary.
//!
//! cargo run --release --example motivating_blowup

use ssk::certificates::{srcbf_row, CertificateSpec};
use ssk::harness::models::{self, ScalarParams};

fn main() {
    println!("{:>8} {:>16} {:>16}", "x", "u_max (σ=1)", "u_max (σ=0)");
    for x in [0.0, 0.5, 0.9, 0.99, 0.999, 0.9999] {
        let bound = |sigma| {
            let b = models::scalar(&ScalarParams { sigma, x0: x }).unwrap();
            let spec = CertificateSpec::srcbf(b.h.clone(), 1.0).unwrap();
            let row = srcbf_row(&b.model, &spec, &b.x0).unwrap().unwrap();
            row.rhs / row.control_coeffs[0]
        };
        println!("{x:>8} {:>16.4} {:>16.4}", bound(1.0), bound(0.0));
    }
}
