//! Dense min-norm QP for per-step safety filters.
//!
//! ```text
//!     minimize    ½ Σ w_i u_i² + ½ w_δ δ²
//!     subject to  certificate / Lyapunov rows
//!                 lo ≤ u ≤ hi           (optional)
//! ```
//!
//! Problems have a handful of rows, so the solver enumerates candidate
//! active sets in lexicographic order, solves each equality-constrained
//! subproblem in closed form and returns the first candidate that is both
//! primal and dual feasible. For a strictly convex objective that point is
//! the unique minimizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::AffineConstraint;
use crate::sde::{Matrix, Vector};

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-10;
/// Largest row count (box rows included) for which an infeasible problem
/// reports a minimal conflicting subset.
const CONFLICT_SEARCH_LIMIT: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Per-control box `lo ≤ u ≤ hi`; infinite entries are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ControlBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, QpError> {
        let b = ControlBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn lower(lo: Vec<f64>) -> Self {
        let hi = vec![f64::INFINITY; lo.len()];
        ControlBox { lo, hi }
    }

    pub fn validate(&self) -> Result<(), QpError> {
        if self.lo.len() != self.hi.len() {
            return Err(QpError::Invalid("box bounds have different lengths".into()));
        }
        for (i, (lo, hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(QpError::Invalid(format!("box entry {i} has lo {lo} > hi {hi}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub num_controls: usize,
    pub slack_present: bool,
    pub weight_u: Vec<f64>,
    pub weight_slack: f64,
    pub rows: Vec<AffineConstraint>,
    pub control_box: Option<ControlBox>,
}

impl QpProblem {
    pub fn new(num_controls: usize, slack_present: bool) -> Self {
        QpProblem {
            num_controls,
            slack_present,
            weight_u: vec![1.0; num_controls],
            weight_slack: 1.0,
            rows: Vec::new(),
            control_box: None,
        }
    }

    pub fn with_rows(mut self, rows: Vec<AffineConstraint>) -> Self {
        self.rows = rows;
        self
    }

    pub fn with_box(mut self, control_box: Option<ControlBox>) -> Self {
        self.control_box = control_box;
        self
    }

    pub fn validate(&self) -> Result<(), QpError> {
        if self.weight_u.len() != self.num_controls {
            return Err(QpError::Invalid("one weight per control is required".into()));
        }
        if self.weight_u.iter().chain([&self.weight_slack]).any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(QpError::Invalid("weights must be positive and finite".into()));
        }
        for row in &self.rows {
            if row.control_coeffs.len() != self.num_controls {
                return Err(QpError::Invalid(format!(
                    "row '{}' has {} control coefficients, expected {}",
                    row.label,
                    row.control_coeffs.len(),
                    self.num_controls
                )));
            }
            if row.slack_coeff != 0.0 && !self.slack_present {
                return Err(QpError::Invalid(format!("row '{}' uses a slack the problem lacks", row.label)));
            }
            if !row.rhs.is_finite() || row.control_coeffs.iter().any(|c| !c.is_finite()) {
                return Err(QpError::Invalid(format!("row '{}' is not finite", row.label)));
            }
        }
        if let Some(b) = &self.control_box {
            b.validate()?;
            if b.lo.len() != self.num_controls {
                return Err(QpError::Invalid("box dimension differs from control dimension".into()));
            }
        }
        Ok(())
    }

    fn num_vars(&self) -> usize {
        self.num_controls + usize::from(self.slack_present)
    }

    fn weights(&self) -> Vector {
        let mut w = Vector::from_column_slice(&self.weight_u).resize_vertically(self.num_vars(), 0.0);
        if self.slack_present {
            w[self.num_controls] = self.weight_slack;
        }
        w
    }

    /// All rows, box rows included, as `a·z ≤ b` over `z = (u, δ)`.
    fn upper_rows(&self) -> Vec<UpperRow> {
        let m = self.num_vars();
        let mut out = Vec::with_capacity(self.rows.len() + 2 * self.num_controls);
        for row in &self.rows {
            let (a_u, a_s, b) = row.as_upper_bound();
            let mut a = a_u.resize_vertically(m, 0.0);
            if self.slack_present {
                a[self.num_controls] = a_s;
            }
            out.push(UpperRow { a, b, label: row.label.clone() });
        }
        if let Some(bx) = &self.control_box {
            for i in 0..self.num_controls {
                if bx.lo[i].is_finite() {
                    let mut a = Vector::zeros(m);
                    a[i] = -1.0;
                    out.push(UpperRow { a, b: -bx.lo[i], label: format!("box_lo[{i}]") });
                }
                if bx.hi[i].is_finite() {
                    let mut a = Vector::zeros(m);
                    a[i] = 1.0;
                    out.push(UpperRow { a, b: bx.hi[i], label: format!("box_hi[{i}]") });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct UpperRow {
    a: Vector,
    b: f64,
    label: String,
}

impl UpperRow {
    fn scale(&self, z: &Vector) -> f64 {
        1.0 + self.b.abs() + self.a.norm() * z.norm()
    }

    fn violation(&self, z: &Vector) -> f64 {
        (self.a.dot(z) - self.b) / self.scale(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    DegenerateRowDropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vector,
    pub slack: Option<f64>,
    pub objective: f64,
    /// Labels of rows holding with equality.
    pub active_set: Vec<String>,
    /// Multipliers of the active rows, in `active_set` order.
    pub multipliers: Vec<f64>,
    /// Relative KKT residual (stationarity, dual feasibility, complementary
    /// slackness and primal feasibility).
    pub kkt_residual: f64,
    pub status: QpStatus,
    /// For infeasible problems: a minimal set of mutually conflicting rows
    /// (computed when there are at most four rows).
    pub conflict: Vec<String>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        !matches!(self.status, QpStatus::Infeasible)
    }
}

struct Candidate {
    z: Vector,
    active: Vec<usize>,
    lambda: Vec<f64>,
}

/// Closed-form minimizer of `½ zᵀWz` on `{a_i·z = b_i, i ∈ active}`.
fn equality_candidate(w: &Vector, rows: &[UpperRow], active: &[usize]) -> Option<Candidate> {
    let m = w.len();
    let k = active.len();
    if k == 0 {
        return Some(Candidate { z: Vector::zeros(m), active: vec![], lambda: vec![] });
    }
    let winv = w.map(|v| 1.0 / v);
    let mut gram = Matrix::zeros(k, k);
    let mut rhs = Vector::zeros(k);
    for (r, &i) in active.iter().enumerate() {
        rhs[r] = rows[i].b;
        for (c, &j) in active.iter().enumerate() {
            gram[(r, c)] = rows[i].a.component_mul(&winv).dot(&rows[j].a);
        }
    }
    let diag_max = gram.diagonal().amax();
    if !(diag_max > 0.0) {
        return None;
    }
    let chol = gram.clone().cholesky()?;
    let l_diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if l_diag_min * l_diag_min < 1e-13 * diag_max {
        return None;
    }
    // z = −W⁻¹Aᵀλ with A z = b  ⇒  λ = −G⁻¹ b
    let lambda = -chol.solve(&rhs);
    let mut z = Vector::zeros(m);
    for (r, &i) in active.iter().enumerate() {
        z.axpy(-lambda[r], &rows[i].a.component_mul(&winv), 1.0);
    }
    Some(Candidate { z, active: active.to_vec(), lambda: lambda.iter().copied().collect() })
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn for_each_subset(n: usize, max_size: usize, mut visit: impl FnMut(&[usize]) -> bool) {
    for k in 0..=max_size.min(n) {
        let mut c: Vec<usize> = (0..k).collect();
        loop {
            if visit(&c) {
                return;
            }
            if k == 0 || !next_combination(&mut c, n) {
                break;
            }
        }
    }
}

fn objective(w: &Vector, z: &Vector) -> f64 {
    0.5 * w.component_mul(z).dot(z)
}

fn primal_feasible(rows: &[UpperRow], z: &Vector) -> bool {
    rows.iter().all(|r| r.violation(z) <= PRIMAL_TOL)
}

/// Solves the problem by active-set enumeration.
pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let w = problem.weights();
    let rows = problem.upper_rows();
    let m = w.len();

    let mut kkt: Option<Candidate> = None;
    let mut best_feasible: Option<(f64, Candidate)> = None;
    for_each_subset(rows.len(), m, |active| {
        let Some(cand) = equality_candidate(&w, &rows, active) else {
            return false;
        };
        if !primal_feasible(&rows, &cand.z) {
            return false;
        }
        let lam_scale = 1.0 + cand.lambda.iter().fold(0.0f64, |a, l| a.max(l.abs()));
        if cand.lambda.iter().all(|l| *l >= -DUAL_TOL * lam_scale) {
            kkt = Some(cand);
            return true;
        }
        let obj = objective(&w, &cand.z);
        if best_feasible.as_ref().is_none_or(|(o, _)| obj < *o) {
            best_feasible = Some((obj, cand));
        }
        false
    });

    let chosen = match (kkt, best_feasible) {
        (Some(c), _) => c,
        (None, Some((_, c))) => c,
        (None, None) => {
            let conflict = if rows.len() <= CONFLICT_SEARCH_LIMIT {
                minimal_conflict(&w, &rows)
            } else {
                Vec::new()
            };
            return Ok(QpSolution {
                u: Vector::zeros(problem.num_controls),
                slack: problem.slack_present.then_some(0.0),
                objective: f64::NAN,
                active_set: Vec::new(),
                multipliers: Vec::new(),
                kkt_residual: f64::INFINITY,
                status: QpStatus::Infeasible,
                conflict,
            });
        }
    };
    Ok(finish(problem, &w, &rows, chosen))
}

fn finish(problem: &QpProblem, w: &Vector, rows: &[UpperRow], cand: Candidate) -> QpSolution {
    let z = cand.z;
    let mut grad = w.component_mul(&z);
    let grad_scale = 1.0 + grad.norm();
    for (l, &i) in cand.lambda.iter().zip(&cand.active) {
        grad.axpy(*l, &rows[i].a, 1.0);
    }
    let stationarity = grad.amax() / grad_scale;
    let lam_scale = 1.0 + cand.lambda.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let dual = cand.lambda.iter().fold(0.0f64, |a, l| a.max(-l)) / lam_scale;
    let primal = rows.iter().fold(0.0f64, |a, r| a.max(r.violation(&z)));
    let complementarity = cand
        .lambda
        .iter()
        .zip(&cand.active)
        .map(|(l, &i)| l.abs() * rows[i].violation(&z).abs() / (1.0 + l.abs()))
        .fold(0.0f64, f64::max);
    let kkt_residual = stationarity.max(dual).max(primal.max(0.0)).max(complementarity);

    let u = z.rows(0, problem.num_controls).into_owned();
    let slack = problem.slack_present.then(|| z[problem.num_controls]);
    QpSolution {
        objective: objective(w, &z),
        u,
        slack,
        active_set: cand.active.iter().map(|&i| rows[i].label.clone()).collect(),
        multipliers: cand.lambda,
        kkt_residual,
        status: QpStatus::Optimal,
        conflict: Vec::new(),
    }
}

/// Smallest-cardinality infeasible subset, first in lexicographic order.
fn minimal_conflict(w: &Vector, rows: &[UpperRow]) -> Vec<String> {
    let m = w.len();
    let mut found = Vec::new();
    for_each_subset(rows.len(), rows.len(), |subset| {
        if subset.is_empty() {
            return false;
        }
        let sub: Vec<UpperRow> = subset.iter().map(|&i| rows[i].clone()).collect();
        let mut feasible = false;
        for_each_subset(sub.len(), m, |active| {
            if let Some(c) = equality_candidate(w, &sub, active) {
                if primal_feasible(&sub, &c.z) {
                    feasible = true;
                    return true;
                }
            }
            false
        });
        if !feasible {
            found = subset.iter().map(|&i| rows[i].label.clone()).collect();
            return true;
        }
        false
    });
    found
}

/// Componentwise clamp of `u` into the box.
pub fn saturate(u: &Vector, control_box: &ControlBox) -> Vector {
    Vector::from_iterator(
        u.len(),
        u.iter()
            .enumerate()
            .map(|(i, v)| v.max(control_box.lo[i]).min(control_box.hi[i])),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::Sense;

    fn row(label: &str, coeffs: &[f64], slack: f64, rhs: f64, sense: Sense) -> AffineConstraint {
        AffineConstraint {
            label: label.into(),
            control_coeffs: Vector::from_column_slice(coeffs),
            slack_coeff: slack,
            rhs,
            sense,
        }
    }

    #[test]
    fn unconstrained_minimum_is_zero() {
        let sol = solve(&QpProblem::new(2, true)).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.u, Vector::zeros(2));
        assert_eq!(sol.slack, Some(0.0));
        assert_eq!(sol.objective, 0.0);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn projection_onto_half_space() {
        let p = QpProblem::new(1, false).with_rows(vec![row("lb", &[1.0], 0.0, 3.0, Sense::Ge)]);
        let sol = solve(&p).unwrap();
        assert!((sol.u[0] - 3.0).abs() < 1e-14);
        assert!((sol.objective - 4.5).abs() < 1e-12);
        assert_eq!(sol.active_set, vec!["lb".to_string()]);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn conflicting_row_and_box_are_reported() {
        let mg = 1650.0 * 9.81;
        let p = QpProblem::new(1, false)
            .with_rows(vec![row("cert", &[1.0], 0.0, -2.0 * mg, Sense::Le)])
            .with_box(Some(ControlBox::lower(vec![-0.5 * mg])));
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert_eq!(sol.conflict, vec!["cert".to_string(), "box_lo[0]".to_string()]);
    }

    #[test]
    fn slack_absorbs_lyapunov_row() {
        // u − δ ≤ −2: split evenly between u and δ.
        let p = QpProblem::new(1, true).with_rows(vec![row("clf", &[1.0], -1.0, -2.0, Sense::Le)]);
        let sol = solve(&p).unwrap();
        assert!((sol.u[0] + 1.0).abs() < 1e-12);
        assert!((sol.slack.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_shift_the_split() {
        let mut p = QpProblem::new(1, true).with_rows(vec![row("clf", &[1.0], -1.0, -3.0, Sense::Le)]);
        p.weight_u = vec![2.0];
        let sol = solve(&p).unwrap();
        // minimize u² + ½δ² on u − δ = −3  ⇒  u = −1, δ = 2
        assert!((sol.u[0] + 1.0).abs() < 1e-12);
        assert!((sol.slack.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_clamps() {
        let mg = 1650.0 * 9.81;
        let b = ControlBox::lower(vec![-0.5 * mg]);
        assert_eq!(saturate(&Vector::from_element(1, -0.7 * mg), &b)[0], -0.5 * mg);
        assert_eq!(saturate(&Vector::from_element(1, -0.5 * mg), &b)[0], -0.5 * mg);
        assert_eq!(saturate(&Vector::from_element(1, 10.0), &b)[0], 10.0);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let mut p = QpProblem::new(1, false);
        p.weight_u = vec![0.0];
        assert!(solve(&p).is_err());
        let p = QpProblem::new(1, false).with_rows(vec![row("s", &[1.0], -1.0, 0.0, Sense::Le)]);
        assert!(solve(&p).is_err());
        assert!(ControlBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn redundant_rows_are_handled() {
        let p = QpProblem::new(2, false).with_rows(vec![
            row("a", &[1.0, 1.0], 0.0, 2.0, Sense::Ge),
            row("b", &[2.0, 2.0], 0.0, 4.0, Sense::Ge),
        ]);
        let sol = solve(&p).unwrap();
        assert!((sol.u[0] - 1.0).abs() < 1e-12 && (sol.u[1] - 1.0).abs() < 1e-12);
        assert_eq!(sol.active_set, vec!["a".to_string()]);
    }
}
