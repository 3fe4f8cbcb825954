//! A two-input safety filter: one certificate row, one tracking row with
//! slack, and a control box.
//!
//! cargo run --release --example qp_filter

use ssk::certificates::{AffineConstraint, Sense};
use ssk::qp::{solve, ControlBox, QpProblem};
use ssk::Vector;

fn main() {
    let rows = vec![
        AffineConstraint {
            label: "barrier".into(),
            control_coeffs: Vector::from_vec(vec![1.0, 1.0]),
            slack_coeff: 0.0,
            rhs: 2.0,
            sense: Sense::Ge,
        },
        AffineConstraint {
            label: "tracking".into(),
            control_coeffs: Vector::from_vec(vec![1.0, -1.0]),
            slack_coeff: -1.0,
            rhs: -3.0,
            sense: Sense::Le,
        },
    ];
    let problem = QpProblem::new(2, true)
        .with_rows(rows)
        .with_box(Some(ControlBox::new(vec![-5.0, -5.0], vec![5.0, 0.5]).unwrap()));
    let sol = solve(&problem).unwrap();
    println!("status     {:?}", sol.status);
    println!("u          {:?}", sol.u.as_slice());
    println!("slack      {:?}", sol.slack);
    println!("objective  {:.6}", sol.objective);
    println!("active     {:?}", sol.active_set);
    println!("kkt        {:.2e}", sol.kkt_residual);
}
