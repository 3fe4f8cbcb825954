//! Control-affine SDE models and sample-path integration.
//!
//! A model is the triple `(f, g, σ)` of
//!
//! ```text
//!     dX = (f(X) + g(X) u) dt + σ(X) dW
//! ```
//!
//! with state dimension `n`, control dimension `p` and noise dimension `d`.
//! Paths are integrated with fixed-step Euler–Maruyama, holding the control
//! constant over each step. Brownian increments come from [`NoiseStream`], a
//! counter-addressed ChaCha stream, so a `(seed, stream_id)` pair reproduces
//! the same path on any thread.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

type VectorField = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
type MatrixField = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite state after Euler-Maruyama step at t={time}: {state:?}")]
    Overflow { time: f64, state: Vec<f64> },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error("controller failed at step {step}: {source}")]
    Controller {
        step: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("integration failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: SdeError,
    },
}

/// The system `dX = (f(X) + g(X) u) dt + σ(X) dW`.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    state_dim: usize,
    control_dim: usize,
    noise_dim: usize,
    drift: VectorField,
    control_matrix: MatrixField,
    diffusion: MatrixField,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("noise_dim", &self.noise_dim)
            .finish()
    }
}

impl SdeModel {
    /// Builds a model and checks output shapes and finiteness at `probe`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F, G, S>(
        name: impl Into<String>,
        state_dim: usize,
        control_dim: usize,
        noise_dim: usize,
        drift: F,
        control_matrix: G,
        diffusion: S,
        probe: &Vector,
    ) -> Result<Self, SdeError>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        G: Fn(&Vector) -> Matrix + Send + Sync + 'static,
        S: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        if state_dim == 0 || control_dim == 0 || noise_dim == 0 {
            return Err(SdeError::Argument(
                "state, control and noise dimensions must be positive".into(),
            ));
        }
        let model = SdeModel {
            name: name.into(),
            state_dim,
            control_dim,
            noise_dim,
            drift: Arc::new(drift),
            control_matrix: Arc::new(control_matrix),
            diffusion: Arc::new(diffusion),
        };
        model.check_state(probe)?;
        let f = model.drift(probe);
        if f.len() != state_dim {
            return Err(SdeError::Dimension {
                what: "drift",
                expected: format!("{state_dim}"),
                got: format!("{}", f.len()),
            });
        }
        let g = model.control_matrix(probe);
        if g.shape() != (state_dim, control_dim) {
            return Err(SdeError::Dimension {
                what: "control matrix",
                expected: format!("{state_dim}x{control_dim}"),
                got: format!("{}x{}", g.nrows(), g.ncols()),
            });
        }
        let s = model.diffusion(probe);
        if s.shape() != (state_dim, noise_dim) {
            return Err(SdeError::Dimension {
                what: "diffusion",
                expected: format!("{state_dim}x{noise_dim}"),
                got: format!("{}x{}", s.nrows(), s.ncols()),
            });
        }
        let finite = f.iter().chain(g.iter()).chain(s.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(SdeError::Argument(format!(
                "model '{}' returns non-finite values at probe state",
                model.name
            )));
        }
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn drift(&self, x: &Vector) -> Vector {
        (self.drift)(x)
    }

    pub fn control_matrix(&self, x: &Vector) -> Matrix {
        (self.control_matrix)(x)
    }

    pub fn diffusion(&self, x: &Vector) -> Matrix {
        (self.diffusion)(x)
    }

    pub(crate) fn check_state(&self, x: &Vector) -> Result<(), SdeError> {
        if x.len() != self.state_dim {
            return Err(SdeError::Dimension {
                what: "state",
                expected: format!("{}", self.state_dim),
                got: format!("{}", x.len()),
            });
        }
        Ok(())
    }

    pub(crate) fn check_control(&self, u: &Vector) -> Result<(), SdeError> {
        if u.len() != self.control_dim {
            return Err(SdeError::Dimension {
                what: "control",
                expected: format!("{}", self.control_dim),
                got: format!("{}", u.len()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub values: Vector,
    pub time: f64,
}

impl State {
    pub fn new(values: Vector, time: f64) -> Self {
        State { values, time }
    }

    pub fn at_origin_time(values: &[f64]) -> Self {
        State {
            values: Vector::from_column_slice(values),
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && self.values.iter().all(|v| v.is_finite())
    }
}

/// Counter-addressed Gaussian increment source for one trajectory.
///
/// Block `counter` of a stream always occupies the same window of the
/// underlying ChaCha8 keystream, so increments depend only on
/// `(seed, stream_id, counter, d)`.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        NoiseStream {
            seed,
            stream_id,
            counter: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn set_counter(&mut self, counter: u64) {
        self.counter = counter;
    }

    /// `d` independent `Normal(0, dt)` draws for the current block, then
    /// advances the counter.
    pub fn gaussian_increments(&mut self, d: usize, dt: f64) -> Result<Vector, SdeError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SdeError::Argument(format!("dt must be positive, got {dt}")));
        }
        let scale = dt.sqrt();
        let mut out = self.standard_normals(d);
        out *= scale;
        Ok(out)
    }

    /// `d` standard normal draws for the current block, then advances the
    /// counter.
    pub fn standard_normals(&mut self, d: usize) -> Vector {
        // Box-Muller consumes two u64 (four 32-bit words) per pair.
        let words_per_block = 4 * d.div_ceil(2) as u128;
        self.rng.set_word_pos(self.counter as u128 * words_per_block);
        let mut out = Vector::zeros(d);
        let mut i = 0;
        while i < d {
            let u1: f64 = 1.0 - self.rng.random::<f64>();
            let u2: f64 = self.rng.random::<f64>();
            let radius = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            out[i] = radius * c;
            if i + 1 < d {
                out[i + 1] = radius * s;
            }
            i += 2;
        }
        self.counter += 1;
        out
    }

    /// `d` uniforms on `[0, 1)` for the current block, then advances the
    /// counter. Used for initial-state sampling on a dedicated stream.
    pub fn uniforms(&mut self, d: usize) -> Vec<f64> {
        self.rng.set_word_pos(self.counter as u128 * 2 * d as u128);
        let out = (0..d).map(|_| self.rng.random::<f64>()).collect();
        self.counter += 1;
        out
    }
}

/// One Euler–Maruyama step `x + (f(x) + g(x)u) dt + σ(x) dw`.
pub fn euler_maruyama_step(
    model: &SdeModel,
    x: &State,
    u: &Vector,
    dw: &Vector,
    dt: f64,
) -> Result<State, SdeError> {
    if !(dt > 0.0) {
        return Err(SdeError::Argument(format!("dt must be positive, got {dt}")));
    }
    model.check_state(&x.values)?;
    model.check_control(u)?;
    if dw.len() != model.noise_dim {
        return Err(SdeError::Dimension {
            what: "noise increment",
            expected: format!("{}", model.noise_dim),
            got: format!("{}", dw.len()),
        });
    }
    let mut rate = model.drift(&x.values);
    rate.gemv(1.0, &model.control_matrix(&x.values), u, 1.0);
    let mut next = x.values.clone();
    next.axpy(dt, &rate, 1.0);
    next.gemv(1.0, &model.diffusion(&x.values), dw, 1.0);
    let time = x.time + dt;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SdeError::Overflow {
            time,
            state: next.iter().copied().collect(),
        });
    }
    Ok(State { values: next, time })
}

/// A state-feedback law evaluated once per integration step.
pub trait ControlLaw {
    type Error: std::error::Error + Send + Sync + 'static;

    fn control(&mut self, x: &State) -> Result<Vector, Self::Error>;
}

/// Wraps an infallible closure as a [`ControlLaw`].
pub struct FnControl<F>(pub F);

impl<F> ControlLaw for FnControl<F>
where
    F: FnMut(&State) -> Vector,
{
    type Error = std::convert::Infallible;

    fn control(&mut self, x: &State) -> Result<Vector, Self::Error> {
        Ok((self.0)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub dt: f64,
    pub stop_on_exit: bool,
}

impl SimOptions {
    pub fn new(horizon: f64, dt: f64) -> Self {
        SimOptions {
            horizon,
            dt,
            stop_on_exit: true,
        }
    }

    pub fn continue_after_exit(mut self) -> Self {
        self.stop_on_exit = false;
        self
    }

    /// Number of steps covering `[0, horizon]` on the `dt` grid.
    pub fn steps(&self) -> Result<usize, SdeError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SdeError::Argument(format!("dt must be positive, got {}", self.dt)));
        }
        let ratio = self.horizon / self.dt;
        if !(ratio.is_finite()) || ratio < 1.0 - 1e-9 {
            return Err(SdeError::Argument(format!(
                "horizon {} must be at least dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(ratio.round().max(1.0) as usize)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub controls: Vec<Vector>,
    pub dt: f64,
    pub exit_time: Option<f64>,
    pub safe: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Rolls out one sample path under `controller`.
///
/// `inside` returns true while the state is in the safe set; the first grid
/// time it fails is recorded as the exit time (including `t = 0`).
pub fn simulate<C, E>(
    model: &SdeModel,
    controller: &mut C,
    x0: &State,
    options: SimOptions,
    stream: &mut NoiseStream,
    inside: E,
) -> Result<Trajectory, SimError>
where
    C: ControlLaw,
    E: Fn(&State) -> bool,
{
    let steps = options.steps()?;
    let dt = options.dt;
    model.check_state(&x0.values)?;
    let d = model.noise_dim();

    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut exit_time = None;
    let mut current = State::new(x0.values.clone(), 0.0);
    if !inside(&current) {
        exit_time = Some(0.0);
    }
    states.push(current.clone());
    if exit_time.is_none() || !options.stop_on_exit {
        for step in 0..steps {
            let u = controller
                .control(&current)
                .map_err(|e| SimError::Controller {
                    step,
                    source: Box::new(e),
                })?;
            let dw = stream.gaussian_increments(d, dt)?;
            let mut next = euler_maruyama_step(model, &current, &u, &dw, dt)
                .map_err(|source| SimError::Step { step, source })?;
            next.time = (step + 1) as f64 * dt;
            controls.push(u);
            if exit_time.is_none() && !inside(&next) {
                exit_time = Some(next.time);
            }
            states.push(next.clone());
            current = next;
            if exit_time.is_some() && options.stop_on_exit {
                break;
            }
        }
    }
    Ok(Trajectory {
        states,
        controls,
        dt,
        exit_time,
        safe: exit_time.is_none(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(n: usize) -> SdeModel {
        SdeModel::new(
            "zero",
            n,
            1,
            1,
            move |_| Vector::zeros(n),
            move |_| Matrix::zeros(n, 1),
            move |_| Matrix::zeros(n, 1),
            &Vector::zeros(n),
        )
        .unwrap()
    }

    #[test]
    fn increments_are_reproducible_per_counter() {
        let mut a = NoiseStream::new(1, 0);
        let mut b = NoiseStream::new(1, 0);
        let x = a.gaussian_increments(3, 0.0005).unwrap();
        let y = b.gaussian_increments(3, 0.0005).unwrap();
        assert_eq!(x, y);

        a.set_counter(0);
        assert_eq!(a.gaussian_increments(3, 0.0005).unwrap(), x);
        let next = a.gaussian_increments(3, 0.0005).unwrap();
        assert_ne!(next, x);

        // Random access to block 1 matches sequential generation.
        let mut c = NoiseStream::new(1, 0);
        c.set_counter(1);
        assert_eq!(c.gaussian_increments(3, 0.0005).unwrap(), next);
    }

    #[test]
    fn distinct_streams_differ() {
        let x = NoiseStream::new(1, 0).gaussian_increments(4, 1.0).unwrap();
        let y = NoiseStream::new(1, 1).gaussian_increments(4, 1.0).unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn sample_variance_matches_dt() {
        let dt = 0.0005;
        let n = 1_000_000usize;
        let mut stream = NoiseStream::new(1, 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        while count < n {
            let block = stream.gaussian_increments(10, dt).unwrap();
            for v in block.iter() {
                sum += v;
                sum_sq += v * v;
            }
            count += 10;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let tol = 3.0 * (2.0 / n as f64).sqrt() * dt;
        assert!((var - dt).abs() <= tol, "var {var} vs {dt} (tol {tol})");
    }

    #[test]
    fn non_positive_dt_is_rejected() {
        let mut s = NoiseStream::new(1, 0);
        assert!(matches!(s.gaussian_increments(3, 0.0), Err(SdeError::Argument(_))));
        assert!(matches!(s.gaussian_increments(3, -1.0), Err(SdeError::Argument(_))));
        let m = zero_model(2);
        let x = State::at_origin_time(&[1.0, 2.0]);
        let u = Vector::zeros(1);
        let dw = Vector::zeros(1);
        assert!(euler_maruyama_step(&m, &x, &u, &dw, 0.0).is_err());
    }

    #[test]
    fn zero_dynamics_only_advance_time() {
        let m = zero_model(2);
        let x = State::at_origin_time(&[1.0, -2.0]);
        let next = euler_maruyama_step(&m, &x, &Vector::zeros(1), &Vector::from_element(1, 0.3), 0.1)
            .unwrap();
        assert_eq!(next.values, x.values);
        assert_eq!(next.time, 0.1);
    }

    #[test]
    fn dimension_mismatches_are_reported() {
        let m = zero_model(2);
        let x = State::at_origin_time(&[1.0, -2.0]);
        let bad_u = Vector::zeros(2);
        let err = euler_maruyama_step(&m, &x, &bad_u, &Vector::zeros(1), 0.1).unwrap_err();
        assert!(matches!(err, SdeError::Dimension { what: "control", .. }));
        let bad_x = State::at_origin_time(&[1.0]);
        assert!(euler_maruyama_step(&m, &bad_x, &Vector::zeros(1), &Vector::zeros(1), 0.1).is_err());

        let wrong = SdeModel::new(
            "wrong",
            2,
            1,
            1,
            |_| Vector::zeros(3),
            |_| Matrix::zeros(2, 1),
            |_| Matrix::zeros(2, 1),
            &Vector::zeros(2),
        );
        assert!(matches!(wrong, Err(SdeError::Dimension { what: "drift", .. })));
    }

    #[test]
    fn overflow_carries_the_state() {
        let m = SdeModel::new(
            "blowup",
            1,
            1,
            1,
            |x| x * 1e308,
            |_| Matrix::zeros(1, 1),
            |_| Matrix::zeros(1, 1),
            &Vector::zeros(1),
        )
        .unwrap();
        let x = State::at_origin_time(&[10.0]);
        let err = euler_maruyama_step(&m, &x, &Vector::zeros(1), &Vector::zeros(1), 1.0).unwrap_err();
        match err {
            SdeError::Overflow { state, .. } => assert!(state[0].is_infinite()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_step_horizon() {
        let m = zero_model(1);
        let mut ctl = FnControl(|_: &State| Vector::zeros(1));
        let traj = simulate(
            &m,
            &mut ctl,
            &State::at_origin_time(&[0.0]),
            SimOptions::new(0.01, 0.01),
            &mut NoiseStream::new(0, 0),
            |_| true,
        )
        .unwrap();
        assert_eq!(traj.states.len(), 2);
        assert_eq!(traj.controls.len(), 1);
        assert!(traj.safe);
        assert_eq!(traj.exit_time, None);
    }

    #[test]
    fn horizon_shorter_than_dt_is_rejected() {
        assert!(SimOptions::new(0.001, 0.01).steps().is_err());
    }
}
