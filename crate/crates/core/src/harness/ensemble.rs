//! Monte Carlo ensembles and the safety statistics computed from them.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, InitSampling, Scenario};
use super::controller::{CertificateController, StepCounters};
use super::models::Benchmark;
use crate::bounds::{estimate_sup_within, BoundReport};
use crate::certificates::Family;
use crate::generator::SmoothFunction;
use crate::sde::{simulate, NoiseStream, SimError, SimOptions, State, Trajectory, Vector};

/// Two-sided 95% standard-normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Stream ids at or above this value are reserved for initial-state
/// sampling, so noise and initial points never share a stream.
const INIT_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trajectory {index}: {source}")]
    Simulation {
        index: u64,
        #[source]
        source: SimError,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Wilson score interval for `k` successes out of `n` at quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeQuantiles {
    pub exits: usize,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl ExitTimeQuantiles {
    pub fn from_times(mut times: Vec<f64>) -> Option<Self> {
        if times.is_empty() {
            return None;
        }
        times.sort_by(f64::total_cmp);
        Some(ExitTimeQuantiles {
            exits: times.len(),
            q10: nearest_rank(&times, 0.1),
            q50: nearest_rank(&times, 0.5),
            q90: nearest_rank(&times, 0.9),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub model: String,
    pub family: Family,
    pub trajectories: u64,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub bounded: bool,
    pub saturate_after: bool,
    pub safe_count: u64,
    pub empirical_probability: f64,
    pub std_error: f64,
    pub wilson_interval_95: [f64; 2],
    pub theoretical_bound: Option<BoundReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_note: Option<String>,
    pub exit_time_quantiles: Option<ExitTimeQuantiles>,
    /// Largest `|u|²` applied on any step of any path.
    pub effort_peak: f64,
    /// Per-path time average of `|u|²`, averaged over paths.
    pub effort_mean: f64,
    pub total_steps: u64,
    pub infeasible_step_count: u64,
    pub degenerate_row_count: u64,
    /// Fraction of paths on which chain level `j` stayed positive at every
    /// recorded state.
    pub level_probabilities: Vec<f64>,
}

impl SafetyReport {
    /// True when no step was infeasible and no row was dropped.
    pub fn rows_always_enforced(&self) -> bool {
        self.infeasible_step_count == 0 && self.degenerate_row_count == 0
    }
}

/// Result of one sample path, without the stored states.
#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub safe: bool,
    pub exit_time: Option<f64>,
    pub counters: StepCounters,
    pub level_positive: Vec<bool>,
}

/// Initial state of trajectory `index`.
pub fn initial_state(scenario: &Scenario, bench: &Benchmark, index: u64) -> Vector {
    match scenario.config.init_sampling {
        InitSampling::Fixed => bench.x0.clone(),
        InitSampling::UniformInDisk => {
            let radius = bench.disk_radius.expect("checked on load");
            let mut stream = NoiseStream::new(scenario.config.seed, INIT_STREAM_BASE | index);
            let u = stream.uniforms(3);
            let rho = radius * u[0].sqrt();
            let phi = 2.0 * PI * u[1];
            let mut x = bench.x0.clone();
            x[0] = rho * phi.cos();
            x[1] = rho * phi.sin();
            if x.len() > 2 {
                x[2] = 2.0 * PI * u[2];
            }
            x
        }
    }
}

/// Prepared pieces shared by all paths of one ensemble.
pub struct Prepared {
    pub bench: Benchmark,
    pub controller: CertificateController,
    pub levels: Vec<SmoothFunction>,
}

pub fn prepare(scenario: &Scenario) -> Result<Prepared, RunError> {
    let bench = scenario.benchmark()?;
    let spec = scenario.certificate(&bench)?;
    let levels = match &spec.chain {
        Some(c) => c.levels().to_vec(),
        None => vec![bench.h.clone()],
    };
    let (wu, ws) = scenario.weights(&bench);
    let controller = CertificateController::new(bench.model.clone(), spec)
        .with_clf(bench.clf.clone())
        .with_weights(wu, ws)
        .with_box(scenario.control_box()?, scenario.config.saturate_after);
    Ok(Prepared { bench, controller, levels })
}

/// One stored trajectory with its controller counters.
pub fn run_path(
    scenario: &Scenario,
    prepared: &Prepared,
    x0: &Vector,
    stream_id: u64,
) -> Result<(Trajectory, StepCounters), RunError> {
    let mut controller = prepared.controller.clone();
    let mut stream = NoiseStream::new(scenario.config.seed, stream_id);
    let h = prepared.bench.h.clone();
    let options = SimOptions::new(scenario.horizon(), scenario.config.dt);
    let traj = simulate(
        &prepared.bench.model,
        &mut controller,
        &State::new(x0.clone(), 0.0),
        options,
        &mut stream,
        |s: &State| h.value(&s.values) > 0.0,
    )
    .map_err(|source| RunError::Simulation { index: stream_id, source })?;
    Ok((traj, controller.counters()))
}

fn outcome(prepared: &Prepared, traj: &Trajectory, counters: StepCounters) -> PathOutcome {
    let level_positive = prepared
        .levels
        .iter()
        .map(|b| traj.states.iter().all(|s| b.value(&s.values) > 0.0))
        .collect();
    PathOutcome {
        safe: traj.safe,
        exit_time: traj.exit_time,
        counters,
        level_positive,
    }
}

/// Paths `stream_base + i` for `i < trajectories`, in index order.
pub fn run_outcomes(scenario: &Scenario, stream_base: u64) -> Result<(Prepared, Vec<PathOutcome>), RunError> {
    let prepared = prepare(scenario)?;
    let n = scenario.config.trajectories as u64;
    let outcomes: Result<Vec<_>, RunError> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x0 = initial_state(scenario, &prepared.bench, i);
            let (traj, counters) = run_path(scenario, &prepared, &x0, stream_base + i)?;
            Ok(outcome(&prepared, &traj, counters))
        })
        .collect();
    Ok((prepared, outcomes?))
}

/// Closed-form bound at the fixed initial state, or the reason there is
/// none.
pub fn theoretical_bound(scenario: &Scenario, prepared: &Prepared) -> Result<BoundReport, String> {
    if scenario.config.init_sampling != InitSampling::Fixed {
        return Err("initial states are sampled; bounds need a fixed initial state".into());
    }
    let family = scenario.family();
    if matches!(family, Family::Srcbf | Family::HoSzcbf) {
        return Err(format!("no closed-form bound is implemented for {family}"));
    }
    let x0 = &prepared.bench.x0;
    let region = scenario.region();
    let resolution = scenario.sup_resolution();
    let levels: &[SmoothFunction] = if family == Family::HoScbf {
        &prepared.levels
    } else {
        &prepared.levels[..1]
    };
    let mut values = Vec::with_capacity(levels.len());
    let mut sups = Vec::with_capacity(levels.len());
    for (j, b) in levels.iter().enumerate() {
        let v = b.value(x0);
        if !(v > 0.0) {
            return Err(format!("initial state is outside level {j} of the chain (b_{j} = {v})"));
        }
        let est = estimate_sup_within(b, region, &resolution, &levels[..j]).map_err(|e| e.to_string())?;
        values.push(v);
        // The grid maximum can fall short of b_j(ξ) itself.
        sups.push(est.value.max(v));
    }
    BoundReport::compute(family, values, sups, scenario.horizon(), None, region.clone()).map_err(|e| e.to_string())
}

fn aggregate(scenario: &Scenario, prepared: &Prepared, outcomes: &[PathOutcome]) -> SafetyReport {
    let n = outcomes.len() as u64;
    let safe_count = outcomes.iter().filter(|o| o.safe).count() as u64;
    let p = safe_count as f64 / n as f64;
    let (lo, hi) = wilson_interval(safe_count, n, Z95);
    let exit_times = outcomes.iter().filter_map(|o| o.exit_time).collect();
    let effort_peak = outcomes.iter().map(|o| o.counters.effort_peak).fold(0.0, f64::max);
    let effort_mean = outcomes.iter().map(|o| o.counters.effort_mean()).sum::<f64>() / n as f64;
    let levels = prepared.levels.len();
    let level_probabilities = (0..levels)
        .map(|j| outcomes.iter().filter(|o| o.level_positive[j]).count() as f64 / n as f64)
        .collect();
    let (theoretical_bound, bound_note) = match theoretical_bound(scenario, prepared) {
        Ok(b) => (Some(b), None),
        Err(note) => (None, Some(note)),
    };
    SafetyReport {
        model: prepared.bench.model.name().to_string(),
        family: scenario.family(),
        trajectories: n,
        horizon: scenario.horizon(),
        dt: scenario.config.dt,
        seed: scenario.config.seed,
        bounded: scenario.config.control_box.is_some(),
        saturate_after: scenario.config.saturate_after,
        safe_count,
        empirical_probability: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        wilson_interval_95: [lo, hi],
        theoretical_bound,
        bound_note,
        exit_time_quantiles: ExitTimeQuantiles::from_times(exit_times),
        effort_peak,
        effort_mean,
        total_steps: outcomes.iter().map(|o| o.counters.steps).sum(),
        infeasible_step_count: outcomes.iter().map(|o| o.counters.infeasible_steps).sum(),
        degenerate_row_count: outcomes.iter().map(|o| o.counters.degenerate_rows).sum(),
        level_probabilities,
    }
}

/// Runs `trajectories` independent paths (stream id = path index).
pub fn run_ensemble(scenario: &Scenario) -> Result<SafetyReport, RunError> {
    let (prepared, outcomes) = run_outcomes(scenario, 0)?;
    Ok(aggregate(scenario, &prepared, &outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub family: Family,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
    pub trajectories: u64,
    pub std_error: f64,
}

impl SweepRow {
    fn from_report(sigma: f64, r: &SafetyReport) -> Self {
        SweepRow {
            sigma,
            family: r.family,
            p: r.empirical_probability,
            lo: r.wilson_interval_95[0],
            hi: r.wilson_interval_95[1],
            trajectories: r.trajectories,
            std_error: r.std_error,
        }
    }
}

/// The families compared in sweeps: the plain and zeroing forms at the
/// model's relative degree.
pub fn comparison_families(relative_degree: usize) -> [Family; 2] {
    if relative_degree == 1 {
        [Family::Scbf, Family::Szcbf]
    } else {
        [Family::HoScbf, Family::HoSzcbf]
    }
}

/// One ensemble per `(σ, family)`; initial states and noise streams are
/// shared across all cells.
pub fn sweep_noise(scenario: &Scenario, sigmas: &[f64], families: &[Family]) -> Result<Vec<SweepRow>, RunError> {
    if sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(RunError::Invalid("noise intensities must be nonnegative".into()));
    }
    let mut rows = Vec::with_capacity(sigmas.len() * families.len());
    for &sigma in sigmas {
        for &family in families {
            let s = scenario.with_sigma(sigma).with_family(family);
            let report = run_ensemble(&s)?;
            rows.push(SweepRow::from_report(sigma, &report));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub point: usize,
    pub x0: Vec<f64>,
    pub family: Family,
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Samples `points` initial states and runs `paths` trajectories from each
/// for every family, with matched noise across families.
pub fn initial_point_study(
    scenario: &Scenario,
    points: usize,
    paths: usize,
    families: &[Family],
) -> Result<Vec<PointRow>, RunError> {
    let mut sampler = scenario.clone();
    sampler.config.init_sampling = InitSampling::UniformInDisk;
    let bench = sampler.benchmark()?;
    if bench.disk_radius.is_none() {
        return Err(RunError::Invalid("initial-point study needs a disk-shaped safe set".into()));
    }
    let mut rows = Vec::new();
    for point in 0..points {
        let x0 = initial_state(&sampler, &bench, point as u64);
        for &family in families {
            let mut s = scenario.with_x0(&x0).with_family(family);
            s.config.init_sampling = InitSampling::Fixed;
            s.config.trajectories = paths;
            let (_, outcomes) = run_outcomes(&s, ((point as u64) + 1) << 32)?;
            let k = outcomes.iter().filter(|o| o.safe).count() as u64;
            let (lo, hi) = wilson_interval(k, paths as u64, Z95);
            rows.push(PointRow {
                point,
                x0: x0.iter().copied().collect(),
                family,
                p: k as f64 / paths as f64,
                lo,
                hi,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareCell {
    pub family: Family,
    pub bounded: bool,
    pub report: SafetyReport,
}

/// Reciprocal vs plain certificate, each with and without the control box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub model: String,
    pub trajectories: u64,
    pub seed: u64,
    pub saturate_after: bool,
    pub bounded_box: crate::qp::ControlBox,
    pub cells: Vec<CompareCell>,
}

impl CompareReport {
    pub fn cell(&self, family: Family, bounded: bool) -> Option<&SafetyReport> {
        self.cells
            .iter()
            .find(|c| c.family == family && c.bounded == bounded)
            .map(|c| &c.report)
    }
}

pub fn compare(scenario: &Scenario) -> Result<CompareReport, RunError> {
    let bench = scenario.benchmark()?;
    let bounded_box = match scenario.control_box()? {
        Some(b) => b,
        None => bench
            .bounded_box
            .clone()
            .ok_or_else(|| RunError::Invalid("no control box configured for the bounded cells".into()))?,
    };
    let mut cells = Vec::with_capacity(4);
    for family in [Family::Srcbf, Family::Scbf] {
        for bounded in [false, true] {
            let s = scenario
                .with_family(family)
                .with_box(bounded.then_some(&bounded_box));
            cells.push(CompareCell {
                family,
                bounded,
                report: run_ensemble(&s)?,
            });
        }
    }
    Ok(CompareReport {
        model: bench.model.name().to_string(),
        trajectories: scenario.config.trajectories as u64,
        seed: scenario.config.seed,
        saturate_after: scenario.config.saturate_after,
        bounded_box,
        cells,
    })
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} | {:>20} | {:>20}", "", "unbounded", "bounded")?;
        for family in [Family::Srcbf, Family::Scbf] {
            let show = |bounded| {
                self.cell(family, bounded)
                    .map(|r| format!("{:.3} [{:.3}, {:.3}]", r.empirical_probability, r.wilson_interval_95[0], r.wilson_interval_95[1]))
                    .unwrap_or_default()
            };
            writeln!(f, "{:<8} | {:>20} | {:>20}", family.as_str(), show(false), show(true))?;
        }
        Ok(())
    }
}
