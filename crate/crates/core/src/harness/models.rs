//! Benchmark systems: adaptive cruise control, a differential-drive robot in
//! a disk, a velocity-controlled planar point and a scalar unstable system.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::generator::{build_chain, BarrierChain, GeneratorError, SmoothFunction};
use crate::qp::ControlBox;
use crate::region::Region;
use crate::sde::{Matrix, SdeError, SdeModel, Vector};

/// Everything a scenario needs about one system.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub model: SdeModel,
    pub h: SmoothFunction,
    /// Tracking Lyapunov function, if the benchmark has a performance goal.
    pub clf: Option<SmoothFunction>,
    /// Analytic chain levels `b_1..b_{r-1}`.
    pub chain_levels: Vec<SmoothFunction>,
    pub x0: Vector,
    pub region: Region,
    /// Box used for the "bounded control" cells of the comparison table.
    pub bounded_box: Option<ControlBox>,
    /// Radius for uniform-in-disk initial sampling of the planar position.
    pub disk_radius: Option<f64>,
}

impl Benchmark {
    pub fn relative_degree(&self) -> usize {
        self.chain_levels.len() + 1
    }

    pub fn chain(&self) -> Result<BarrierChain, GeneratorError> {
        build_chain(
            &self.model,
            &self.h,
            self.relative_degree(),
            Some(self.chain_levels.clone()),
            &self.region,
        )
    }
}

fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccParams {
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    #[serde(rename = "M")]
    pub mass: f64,
    pub gravity: f64,
    /// Braking limit as a fraction of `M·g` for bounded runs.
    pub scaled_control_min: f64,
    pub x_d: f64,
    pub tau: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub x0: [f64; 3],
}

impl Default for AccParams {
    fn default() -> Self {
        AccParams {
            f0: 0.1,
            f1: 5.0,
            f2: 0.25,
            mass: 1650.0,
            gravity: 9.81,
            scaled_control_min: -0.5,
            x_d: 22.0,
            tau: 1.8,
            sigma1: 1.0,
            sigma2: 1.0,
            x0: [18.0, 10.0, 150.0],
        }
    }
}

impl AccParams {
    pub fn rolling_resistance(&self, v: f64) -> f64 {
        self.f0 + self.f1 * v + self.f2 * v * v
    }
}

/// Follower speed `x1`, leader speed `x2`, gap `x3`:
///
/// ```text
///     dx1 = (−F_r(x1) + u)/M dt + σ1 dW1
///     dx2 = 0
///     dx3 = (x2 − x1) dt + σ2 dW3
/// ```
///
/// with headway barrier `h = x3 − τ x1` and `V = (x1 − x_d)²`.
pub fn acc(p: &AccParams) -> Result<Benchmark, SdeError> {
    let q = p.clone();
    let drift = move |x: &Vector| {
        Vector::from_vec(vec![-q.rolling_resistance(x[0]) / q.mass, 0.0, x[1] - x[0]])
    };
    let mass = p.mass;
    let (s1, s2) = (p.sigma1, p.sigma2);
    let x0 = Vector::from_column_slice(&p.x0);
    let model = SdeModel::new(
        "acc",
        3,
        1,
        3,
        drift,
        move |_| Matrix::from_column_slice(3, 1, &[1.0 / mass, 0.0, 0.0]),
        move |_| diag(&[s1, 0.0, s2]),
        &x0,
    )?;
    let tau = p.tau;
    let h = SmoothFunction::new(
        "h",
        move |x| x[2] - tau * x[0],
        move |_| Vector::from_vec(vec![-tau, 0.0, 1.0]),
        |_| Matrix::zeros(3, 3),
    );
    let xd = p.x_d;
    let clf = SmoothFunction::new(
        "V",
        move |x| (x[0] - xd).powi(2),
        move |x| Vector::from_vec(vec![2.0 * (x[0] - xd), 0.0, 0.0]),
        |_| diag(&[2.0, 0.0, 0.0]),
    );
    let region = Region::new(vec![0.0, 0.0, 0.0], vec![40.0, 40.0, 300.0])
        .expect("static region is valid");
    Ok(Benchmark {
        model,
        h,
        clf: Some(clf),
        chain_levels: vec![],
        x0,
        region,
        bounded_box: Some(ControlBox::lower(vec![p.scaled_control_min * p.mass * p.gravity])),
        disk_radius: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnicycleParams {
    pub v: f64,
    pub r: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub x0: [f64; 3],
}

impl Default for UnicycleParams {
    fn default() -> Self {
        UnicycleParams {
            v: 2.0,
            r: 3.0,
            sigma1: 0.1,
            sigma2: 0.1,
            x0: [0.0, 1.5, -PI / 2.0],
        }
    }
}

/// Constant-speed differential drive steered by its angular rate `w`:
///
/// ```text
///     dx = v cos θ dt + σ1 dW1,   dy = v sin θ dt + σ2 dW2,   dθ = w dt
/// ```
///
/// kept inside the disk `h = r² − x² − y² ≥ 0`. The control enters at the
/// second generator level,
///
/// ```text
///     b1 = A h = −2v(x cos θ + y sin θ) − σ1² − σ2².
/// ```
pub fn unicycle(p: &UnicycleParams) -> Result<Benchmark, SdeError> {
    let v = p.v;
    let (s1, s2) = (p.sigma1, p.sigma2);
    let x0 = Vector::from_column_slice(&p.x0);
    let model = SdeModel::new(
        "unicycle",
        3,
        1,
        2,
        move |x: &Vector| Vector::from_vec(vec![v * x[2].cos(), v * x[2].sin(), 0.0]),
        |_| Matrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
        move |_| Matrix::from_row_slice(3, 2, &[s1, 0.0, 0.0, s2, 0.0, 0.0]),
        &x0,
    )?;
    let r2 = p.r * p.r;
    let h = SmoothFunction::new(
        "h",
        move |x| r2 - x[0] * x[0] - x[1] * x[1],
        |x| Vector::from_vec(vec![-2.0 * x[0], -2.0 * x[1], 0.0]),
        |_| diag(&[-2.0, -2.0, 0.0]),
    );
    let noise = s1 * s1 + s2 * s2;
    let b1 = SmoothFunction::new(
        "b1",
        move |x| -2.0 * v * (x[0] * x[2].cos() + x[1] * x[2].sin()) - noise,
        move |x| {
            let (s, c) = x[2].sin_cos();
            Vector::from_vec(vec![-2.0 * v * c, -2.0 * v * s, 2.0 * v * (x[0] * s - x[1] * c)])
        },
        move |x| {
            let (s, c) = x[2].sin_cos();
            Matrix::from_row_slice(
                3,
                3,
                &[
                    0.0,
                    0.0,
                    2.0 * v * s,
                    0.0,
                    0.0,
                    -2.0 * v * c,
                    2.0 * v * s,
                    -2.0 * v * c,
                    2.0 * v * (x[0] * c + x[1] * s),
                ],
            )
        },
    );
    let region = Region::new(vec![-p.r, -p.r, -PI], vec![p.r, p.r, PI])
        .map_err(|e| SdeError::Argument(e.to_string()))?;
    Ok(Benchmark {
        model,
        h,
        clf: None,
        chain_levels: vec![b1],
        x0,
        region,
        bounded_box: None,
        disk_radius: Some(p.r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanarParams {
    pub r: f64,
    pub sigma: f64,
    pub x0: [f64; 2],
}

impl Default for PlanarParams {
    fn default() -> Self {
        PlanarParams {
            r: 3.0,
            sigma: 0.1,
            x0: [0.0, 1.5],
        }
    }
}

/// Point in the plane with directly commanded velocity,
/// `dp = u dt + σ dW`, in the disk `h = r² − |p|²` (relative degree 1).
pub fn planar(p: &PlanarParams) -> Result<Benchmark, SdeError> {
    let s = p.sigma;
    let x0 = Vector::from_column_slice(&p.x0);
    let model = SdeModel::new(
        "planar",
        2,
        2,
        2,
        |_| Vector::zeros(2),
        |_| Matrix::identity(2, 2),
        move |_| Matrix::identity(2, 2) * s,
        &x0,
    )?;
    let r2 = p.r * p.r;
    let h = SmoothFunction::new(
        "h",
        move |x| r2 - x[0] * x[0] - x[1] * x[1],
        |x| x * -2.0,
        |_| Matrix::identity(2, 2) * -2.0,
    );
    let region = Region::new(vec![-p.r, -p.r], vec![p.r, p.r])
        .map_err(|e| SdeError::Argument(e.to_string()))?;
    Ok(Benchmark {
        model,
        h,
        clf: None,
        chain_levels: vec![],
        x0,
        region,
        bounded_box: None,
        disk_radius: Some(p.r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarParams {
    pub sigma: f64,
    pub x0: f64,
}

impl Default for ScalarParams {
    fn default() -> Self {
        ScalarParams { sigma: 1.0, x0: 0.5 }
    }
}

/// `dx = (x + u) dt + σ dW` with `h = 1 − x`.
pub fn scalar(p: &ScalarParams) -> Result<Benchmark, SdeError> {
    let s = p.sigma;
    let x0 = Vector::from_element(1, p.x0);
    let model = SdeModel::new(
        "scalar",
        1,
        1,
        1,
        |x: &Vector| x.clone(),
        |_| Matrix::from_element(1, 1, 1.0),
        move |_| Matrix::from_element(1, 1, s),
        &x0,
    )?;
    let h = SmoothFunction::new(
        "h",
        |x| 1.0 - x[0],
        |_| Vector::from_element(1, -1.0),
        |_| Matrix::zeros(1, 1),
    );
    let region = Region::new(vec![-1.0], vec![1.0]).expect("static region is valid");
    Ok(Benchmark {
        model,
        h,
        clf: None,
        chain_levels: vec![],
        x0,
        region,
        bounded_box: None,
        disk_radius: None,
    })
}
