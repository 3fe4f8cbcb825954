//! Closed-form worst-case safety probabilities and the supremum constants
//! they depend on.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::Family;
use crate::generator::SmoothFunction;
use crate::region::{Region, RegionError};
use crate::sde::Vector;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("initial state is not inside level {level} of the barrier chain (b_{level}(ξ) = {value})")]
    Hypothesis { level: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupMethod {
    Analytic,
    Grid,
    Sampled,
}

/// Estimated `sup b(x)` over a region.
///
/// Grid and sampled estimates are maxima over evaluated points, so they
/// never exceed the true supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub method: SupMethod,
    pub region: Region,
    pub sample_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
}

impl SupEstimate {
    pub fn analytic(value: f64, argmax: Vec<f64>, region: Region, justification: impl Into<String>) -> Self {
        SupEstimate {
            value,
            argmax,
            method: SupMethod::Analytic,
            region,
            sample_count: 0,
            justification: Some(justification.into()),
        }
    }
}

const ASCENT_ITERATIONS: usize = 50;

/// Maximum of `f` over a tensor grid followed by coordinate ascent from the
/// best grid point with step halving.
pub fn estimate_sup(
    f: &SmoothFunction,
    region: &Region,
    resolution: &[usize],
) -> Result<SupEstimate, BoundError> {
    estimate_sup_within(f, region, resolution, &[])
}

/// [`estimate_sup`] restricted to points where every function in `within`
/// is nonnegative.
pub fn estimate_sup_within(
    f: &SmoothFunction,
    region: &Region,
    resolution: &[usize],
    within: &[SmoothFunction],
) -> Result<SupEstimate, BoundError> {
    region.validate()?;
    let admissible = |x: &Vector| within.iter().all(|g| g.value(x) >= 0.0);
    let n = region.dim();
    if resolution.len() != n {
        return Err(BoundError::Argument(format!(
            "resolution has {} entries for a {n}-dimensional region",
            resolution.len()
        )));
    }
    if resolution.iter().any(|&r| r < 2) {
        return Err(BoundError::Argument("resolution must be at least 2 per dimension".into()));
    }
    let total: usize = resolution.iter().product();
    let mut idx = vec![0usize; n];
    let mut x = Vector::zeros(n);
    let mut best_val = f64::NEG_INFINITY;
    let mut best = Vector::zeros(n);
    let mut evaluations = 0usize;
    for _ in 0..total {
        for k in 0..n {
            let t = idx[k] as f64 / (resolution[k] - 1) as f64;
            x[k] = region.lo[k] + t * (region.hi[k] - region.lo[k]);
        }
        if admissible(&x) {
            let v = f.value(&x);
            evaluations += 1;
            if v > best_val {
                best_val = v;
                best.copy_from(&x);
            }
        }
        for k in 0..n {
            idx[k] += 1;
            if idx[k] < resolution[k] {
                break;
            }
            idx[k] = 0;
        }
    }

    if evaluations == 0 {
        return Err(BoundError::Argument(format!(
            "no grid point of the region satisfies the constraints on {}",
            f.name()
        )));
    }
    let mut step: Vec<f64> = (0..n)
        .map(|k| (region.hi[k] - region.lo[k]) / (resolution[k] - 1) as f64)
        .collect();
    for _ in 0..ASCENT_ITERATIONS {
        let mut improved = false;
        for k in 0..n {
            for dir in [1.0, -1.0] {
                let mut trial = best.clone();
                trial[k] = (trial[k] + dir * step[k]).clamp(region.lo[k], region.hi[k]);
                if !admissible(&trial) {
                    continue;
                }
                let v = f.value(&trial);
                evaluations += 1;
                if v > best_val {
                    best_val = v;
                    best = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    if !best_val.is_finite() {
        return Err(BoundError::Argument(format!("{} is not finite on the region", f.name())));
    }
    Ok(SupEstimate {
        value: best_val,
        argmax: best.iter().copied().collect(),
        method: SupMethod::Grid,
        region: region.clone(),
        sample_count: evaluations,
        justification: None,
    })
}

fn check_level(h_xi: f64, c: f64) -> Result<(), BoundError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(BoundError::Argument(format!("supremum must be positive and finite, got {c}")));
    }
    if !(0.0..=c).contains(&h_xi) {
        return Err(BoundError::Argument(format!("need 0 ≤ h(ξ) ≤ c, got h(ξ) = {h_xi}, c = {c}")));
    }
    Ok(())
}

/// `(h(ξ)/c)·e^{−cT}` for the zeroing certificate over horizon `T`.
pub fn szcbf_bound(h_xi: f64, c: f64, horizon: f64) -> Result<f64, BoundError> {
    check_level(h_xi, c)?;
    if !(horizon >= 0.0) {
        return Err(BoundError::Argument(format!("horizon must be nonnegative, got {horizon}")));
    }
    Ok((h_xi / c * (-c * horizon).exp()).clamp(0.0, 1.0))
}

/// `h(ξ)/c`, valid for all time.
pub fn scbf_bound(h_xi: f64, c: f64) -> Result<f64, BoundError> {
    check_level(h_xi, c)?;
    Ok(h_xi / c)
}

/// `∏ b_j(ξ)/c_j`; every level must be strictly positive at `ξ`.
pub fn ho_scbf_bound(chain_values: &[f64], sups: &[f64]) -> Result<f64, BoundError> {
    if chain_values.is_empty() || chain_values.len() != sups.len() {
        return Err(BoundError::Argument(format!(
            "need matching nonempty level lists, got {} values and {} sups",
            chain_values.len(),
            sups.len()
        )));
    }
    let mut p = 1.0;
    for (level, (&b, &c)) in chain_values.iter().zip(sups).enumerate() {
        if !(b > 0.0) {
            return Err(BoundError::Hypothesis { level, value: b });
        }
        check_level(b, c)?;
        p *= b / c;
    }
    Ok(p)
}

/// `P[sup V ≥ λ] ≤ min(1, v₀/λ)` for a nonnegative supermartingale.
pub fn kushner_supermartingale_bound(v0: f64, lambda: f64) -> Result<f64, BoundError> {
    if !(lambda > 0.0) {
        return Err(BoundError::Argument(format!("lambda must be positive, got {lambda}")));
    }
    if !(v0 >= 0.0) {
        return Err(BoundError::Argument(format!("v0 must be nonnegative, got {v0}")));
    }
    Ok((v0 / lambda).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub family: Family,
    pub bound: f64,
    /// `None` means the bound holds on an infinite horizon.
    pub horizon: Option<f64>,
    pub chain_values: Vec<f64>,
    pub sups: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    pub region: Region,
}

impl BoundReport {
    /// Bound for `family` from the chain values and sups at `ξ`.
    ///
    /// Reciprocal certificates carry no closed-form bound here and return
    /// an error.
    pub fn compute(
        family: Family,
        chain_values: Vec<f64>,
        sups: Vec<f64>,
        horizon: f64,
        gain: Option<f64>,
        region: Region,
    ) -> Result<Self, BoundError> {
        let first = |v: &[f64]| {
            v.first()
                .copied()
                .ok_or_else(|| BoundError::Argument("no chain values".into()))
        };
        let (bound, horizon) = match family {
            Family::Szcbf => (szcbf_bound(first(&chain_values)?, first(&sups)?, horizon)?, Some(horizon)),
            Family::Scbf => (scbf_bound(first(&chain_values)?, first(&sups)?)?, None),
            Family::HoScbf => (ho_scbf_bound(&chain_values, &sups)?, None),
            Family::Srcbf | Family::HoSzcbf => {
                return Err(BoundError::Argument(format!("no closed-form bound for {family}")))
            }
        };
        Ok(BoundReport {
            family,
            bound,
            horizon,
            chain_values,
            sups,
            gain,
            region,
        })
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let horizon = match self.horizon {
            Some(t) => format!("{t}"),
            None => "inf".into(),
        };
        write!(
            f,
            "{:<9} bound={:.6e} horizon={} b(xi)={:?} c={:?} region=lo{:?} hi{:?}",
            self.family.as_str(),
            self.bound,
            horizon,
            self.chain_values,
            self.sups,
            self.region.lo,
            self.region.hi
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::Matrix;

    fn disk_h() -> SmoothFunction {
        SmoothFunction::new(
            "h",
            |x: &Vector| 9.0 - x[0] * x[0] - x[1] * x[1],
            |x: &Vector| Vector::from_vec(vec![-2.0 * x[0], -2.0 * x[1]]),
            |_: &Vector| Matrix::from_diagonal(&Vector::from_vec(vec![-2.0, -2.0])),
        )
    }

    #[test]
    fn grid_sup_of_disk_barrier() {
        let r = Region::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let est = estimate_sup(&disk_h(), &r, &[40, 40]).unwrap();
        assert!(est.value <= 9.0);
        assert!(9.0 - est.value < 1e-9);
        assert_eq!(est.method, SupMethod::Grid);
    }

    #[test]
    fn masked_sup_stays_in_the_disk() {
        let r = Region::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let x_coord = SmoothFunction::new(
            "x",
            |x: &Vector| x[0],
            |_: &Vector| Vector::from_vec(vec![1.0, 0.0]),
            |_: &Vector| Matrix::zeros(2, 2),
        );
        let est = estimate_sup_within(&x_coord, &r, &[61, 61], &[disk_h()]).unwrap();
        assert!(est.value <= 3.0 && est.value > 3.0 - 1e-6, "{}", est.value);
        let free = estimate_sup(&x_coord, &r, &[61, 61]).unwrap();
        assert_eq!(free.value, 3.0);
    }

    #[test]
    fn constant_sup() {
        let r = Region::new(vec![0.0], vec![1.0]).unwrap();
        let est = estimate_sup(&SmoothFunction::constant("five", 5.0, 1), &r, &[2]).unwrap();
        assert_eq!(est.value, 5.0);
    }

    #[test]
    fn bad_resolution() {
        let r = Region::new(vec![0.0], vec![1.0]).unwrap();
        assert!(estimate_sup(&SmoothFunction::constant("c", 1.0, 1), &r, &[1]).is_err());
        assert!(estimate_sup(&SmoothFunction::constant("c", 1.0, 1), &r, &[3, 3]).is_err());
    }

    #[test]
    fn bound_preconditions() {
        assert!(szcbf_bound(10.0, 9.0, 1.0).is_err());
        assert!(szcbf_bound(1.0, 9.0, -1.0).is_err());
        assert!(scbf_bound(-1.0, 9.0).is_err());
        assert!(scbf_bound(1.0, 0.0).is_err());
        assert!(kushner_supermartingale_bound(1.0, 0.0).is_err());
        assert_eq!(
            ho_scbf_bound(&[9.0, -0.02], &[9.0, 17.0]),
            Err(BoundError::Hypothesis { level: 1, value: -0.02 })
        );
    }

    #[test]
    fn report_rejects_reciprocal() {
        let r = Region::new(vec![0.0], vec![1.0]).unwrap();
        assert!(BoundReport::compute(Family::Srcbf, vec![1.0], vec![2.0], 1.0, None, r).is_err());
    }
}
