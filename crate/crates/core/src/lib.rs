//! Stochastic barrier-certificate safety filters for control-affine SDEs.
//!
//! The crate is organised bottom-up:
//!
//! * [`sde`] models `dX = (f + g u) dt + σ dW` and integrates sample paths
//!   with reproducible counter-based noise.
//! * [`generator`] evaluates the Itô generator of smooth functions and builds
//!   iterated-generator barrier chains.
//! * [`certificates`] turns a barrier (or Lyapunov) function into one affine
//!   row in the control.
//! * [`qp`] solves the small min-norm program over `(u, δ)`.
//! * [`bounds`] evaluates closed-form worst-case safety probabilities.
//! * [`harness`] wires these into benchmark scenarios, Monte Carlo ensembles
//!   and the `ssk` command line.

pub mod bounds;
pub mod certificates;
pub mod generator;
pub mod harness;
pub mod qp;
pub mod region;
pub mod sde;

pub use certificates::{AffineConstraint, CertificateSpec, ClassKFunction, Family, Sense};
pub use generator::{apply_generator, build_chain, decompose, BarrierChain, SmoothFunction};
pub use qp::{solve, ControlBox, QpProblem, QpSolution, QpStatus};
pub use region::Region;
pub use sde::{simulate, NoiseStream, SdeModel, SimOptions, State, Trajectory, Vector};
