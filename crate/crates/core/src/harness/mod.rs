//! Benchmark scenarios, Monte Carlo ensembles and the command line.

pub mod cli;
pub mod config;
pub mod controller;
pub mod ensemble;
pub mod io;
pub mod models;

pub use config::{ScenarioConfig, Scenario};
pub use ensemble::{compare, run_ensemble, sweep_noise, SafetyReport};
