//! Per-step safety filter: certificate row (+ tracking row) → QP → control.

use log::debug;
use thiserror::Error;

use crate::certificates::{clf_row, CertificateError, CertificateSpec};
use crate::generator::SmoothFunction;
use crate::qp::{saturate, solve, ControlBox, QpError, QpProblem, QpStatus};
use crate::sde::{ControlLaw, SdeModel, State, Vector};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepCounters {
    pub steps: u64,
    pub infeasible_steps: u64,
    pub degenerate_rows: u64,
    pub effort_peak: f64,
    pub effort_sum: f64,
}

impl StepCounters {
    pub fn effort_mean(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.effort_sum / self.steps as f64
        }
    }
}

/// Min-norm safety filter for one certificate.
///
/// When the QP with the box is infeasible the step falls back to the
/// solution without the box, clamped into it. With `saturate_after` the
/// box never enters the QP and only clamps its answer.
#[derive(Debug, Clone)]
pub struct CertificateController {
    model: SdeModel,
    spec: CertificateSpec,
    clf: Option<SmoothFunction>,
    weight_u: Vec<f64>,
    weight_slack: f64,
    control_box: Option<ControlBox>,
    saturate_after: bool,
    counters: StepCounters,
    last_status: Option<QpStatus>,
}

impl CertificateController {
    pub fn new(model: SdeModel, spec: CertificateSpec) -> Self {
        let p = model.control_dim();
        CertificateController {
            model,
            spec,
            clf: None,
            weight_u: vec![1.0; p],
            weight_slack: 1.0,
            control_box: None,
            saturate_after: false,
            counters: StepCounters::default(),
            last_status: None,
        }
    }

    pub fn with_clf(mut self, clf: Option<SmoothFunction>) -> Self {
        self.clf = clf;
        self
    }

    pub fn with_weights(mut self, weight_u: Vec<f64>, weight_slack: f64) -> Self {
        self.weight_u = weight_u;
        self.weight_slack = weight_slack;
        self
    }

    pub fn with_box(mut self, control_box: Option<ControlBox>, saturate_after: bool) -> Self {
        self.control_box = control_box;
        self.saturate_after = saturate_after;
        self
    }

    pub fn counters(&self) -> StepCounters {
        self.counters
    }

    pub fn last_status(&self) -> Option<QpStatus> {
        self.last_status
    }

    fn problem(&self, rows: Vec<crate::certificates::AffineConstraint>, with_box: bool) -> QpProblem {
        let mut p = QpProblem::new(self.model.control_dim(), self.clf.is_some()).with_rows(rows);
        p.weight_u = self.weight_u.clone();
        p.weight_slack = self.weight_slack;
        if with_box {
            p.control_box = self.control_box.clone();
        }
        p
    }

    /// Control for state `x`, updating the step counters.
    pub fn step(&mut self, x: &Vector) -> Result<Vector, ControllerError> {
        let mut rows = Vec::with_capacity(2);
        let mut dropped = false;
        let mut trivially_infeasible = false;
        match self.spec.row(&self.model, x) {
            Ok(Some(row)) => rows.push(row),
            Ok(None) => {}
            Err(CertificateError::Degenerate { label, coefficient, .. }) => {
                debug!("dropping degenerate row {label} (coefficient {coefficient:e}) at {x:?}");
                dropped = true;
            }
            Err(CertificateError::TriviallyInfeasible { label, .. }) => {
                debug!("row {label} cannot be met by any control at {x:?}");
                trivially_infeasible = true;
            }
            Err(e) => return Err(e.into()),
        }
        if let Some(v) = &self.clf {
            if let Some(row) = clf_row(&self.model, v, x)? {
                rows.push(row);
            }
        }

        let box_in_qp = self.control_box.is_some() && !self.saturate_after;
        let sol = solve(&self.problem(rows.clone(), box_in_qp))?;
        let (mut u, mut status) = (sol.u, sol.status);
        if status == QpStatus::Infeasible && box_in_qp {
            let relaxed = solve(&self.problem(rows, false))?;
            u = relaxed.u;
        }
        if let Some(b) = &self.control_box {
            u = saturate(&u, b);
        }
        if trivially_infeasible {
            status = QpStatus::Infeasible;
        }
        if status == QpStatus::Infeasible {
            self.counters.infeasible_steps += 1;
        } else if dropped {
            status = QpStatus::DegenerateRowDropped;
        }
        if dropped {
            self.counters.degenerate_rows += 1;
        }
        let effort = u.norm_squared();
        self.counters.steps += 1;
        self.counters.effort_sum += effort;
        self.counters.effort_peak = self.counters.effort_peak.max(effort);
        self.last_status = Some(status);
        Ok(u)
    }
}

impl ControlLaw for CertificateController {
    type Error = ControllerError;

    fn control(&mut self, x: &State) -> Result<Vector, ControllerError> {
        self.step(&x.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::ClassKFunction;
    use crate::harness::models::{acc, unicycle, AccParams, UnicycleParams};

    #[test]
    fn scbf_acc_first_step_brakes_onto_the_row() {
        let b = acc(&AccParams::default()).unwrap();
        let spec = CertificateSpec::scbf(b.h.clone()).unwrap();
        let mut c = CertificateController::new(b.model.clone(), spec.clone()).with_clf(b.clf.clone());
        let u = c.step(&b.x0).unwrap();
        let row = spec.row(&b.model, &b.x0).unwrap().unwrap();
        assert!(row.margin(&u, 0.0).abs() < 1e-9 * (1.0 + row.rhs.abs()));
        assert!(u[0] < -7000.0);
        assert_eq!(c.last_status(), Some(QpStatus::Optimal));
    }

    #[test]
    fn infeasible_box_falls_back_to_clamped_solution() {
        let p = AccParams {
            x0: [30.0, 10.0, 55.0],
            ..AccParams::default()
        };
        let b = acc(&p).unwrap();
        let spec = CertificateSpec::scbf(b.h.clone()).unwrap();
        let mut c = CertificateController::new(b.model.clone(), spec)
            .with_clf(b.clf.clone())
            .with_box(b.bounded_box.clone(), false);
        let u = c.step(&b.x0).unwrap();
        assert_eq!(u[0], b.bounded_box.as_ref().unwrap().lo[0]);
        assert_eq!(c.counters().infeasible_steps, 1);
        assert_eq!(c.last_status(), Some(QpStatus::Infeasible));
    }

    #[test]
    fn degenerate_row_is_dropped_and_counted() {
        let b = unicycle(&UnicycleParams::default()).unwrap();
        let chain = b.chain().unwrap();
        let spec = CertificateSpec::ho_scbf(chain).unwrap();
        let mut c = CertificateController::new(b.model.clone(), spec);
        let u = c.step(&Vector::from_vec(vec![0.0, 0.0, 0.3])).unwrap();
        assert_eq!(u[0], 0.0);
        assert_eq!(c.counters().degenerate_rows, 1);
        assert_eq!(c.last_status(), Some(QpStatus::DegenerateRowDropped));
    }

    #[test]
    fn zeroing_row_is_looser_inside() {
        let b = acc(&AccParams::default()).unwrap();
        let zero = CertificateSpec::szcbf(b.h.clone(), ClassKFunction::linear(1.0)).unwrap();
        let mut c = CertificateController::new(b.model.clone(), zero).with_clf(b.clf.clone());
        // Far from the leader the zeroing row is slack and only tracking acts.
        let u = c.step(&b.x0).unwrap();
        assert!(u[0].abs() < 1.0);
    }
}
