//! Axis-aligned boxes in state space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sde::Vector;

#[derive(Debug, Error, PartialEq)]
pub enum RegionError {
    #[error("region bounds have different lengths ({lo} vs {hi})")]
    Length { lo: usize, hi: usize },
    #[error("region must be bounded and non-empty: lo[{index}]={lo}, hi[{index}]={hi}")]
    Invalid { index: usize, lo: f64, hi: f64 },
    #[error("region is empty (zero dimensions)")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, RegionError> {
        let region = Region { lo, hi };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<(), RegionError> {
        if self.lo.len() != self.hi.len() {
            return Err(RegionError::Length {
                lo: self.lo.len(),
                hi: self.hi.len(),
            });
        }
        if self.lo.is_empty() {
            return Err(RegionError::Empty);
        }
        for (index, (&lo, &hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(RegionError::Invalid { index, lo, hi });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &Vector) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn clamp(&self, x: &mut Vector) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, unit: &[f64]) -> Vector {
        Vector::from_iterator(
            self.dim(),
            unit.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .map(|(t, (lo, hi))| lo + t * (hi - lo)),
        )
    }

    /// First `count` points of the Halton sequence mapped into the box.
    ///
    /// Index 0 of the sequence (the `lo` corner) is skipped.
    pub fn halton_points(&self, count: usize) -> Vec<Vector> {
        const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
        let dim = self.dim();
        (1..=count as u64)
            .map(|i| {
                let unit: Vec<f64> = (0..dim)
                    .map(|k| radical_inverse(i, PRIMES[k % PRIMES.len()]))
                    .collect();
                self.from_unit(&unit)
            })
            .collect()
    }
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unbounded_and_inverted() {
        assert!(Region::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(Region::new(vec![1.0], vec![0.0]).is_err());
        assert!(Region::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Region::new(vec![], vec![]).is_err());
    }

    #[test]
    fn halton_points_stay_inside() {
        let r = Region::new(vec![-3.0, -3.0, -1.0], vec![3.0, 3.0, 1.0]).unwrap();
        let pts = r.halton_points(256);
        assert_eq!(pts.len(), 256);
        assert!(pts.iter().all(|p| r.contains(p)));
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }
}
