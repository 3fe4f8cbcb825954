//! The `ssk` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use super::config::{ConfigError, Scenario, ScenarioConfig};
use super::ensemble::{
    compare, comparison_families, initial_point_study, initial_state, prepare, run_ensemble, run_path,
    sweep_noise, RunError,
};
use super::io::{self, IoError};
use crate::bounds::{
    estimate_sup_within, ho_scbf_bound, kushner_supermartingale_bound, scbf_bound, szcbf_bound,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Version string recorded in run manifests.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Parser)]
#[command(name = "ssk", version, about = "Stochastic barrier-certificate safety filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set model_params.sigma1=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write per-trajectory CSV files and a run manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of trajectories to write (defaults to `trajectories`).
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Run the ensemble and write `report.json`.
    Estimate {
        #[command(flatten)]
        common: Common,
    },
    /// Print closed-form safety bounds at the initial state.
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Reciprocal vs plain certificate, with and without the control box.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Safety probability across `sigma_list` for the plain and zeroing forms.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also sample this many initial points and compare per point.
        #[arg(long, default_value_t = 0)]
        initial_points: usize,
        /// Paths per initial point.
        #[arg(long, default_value_t = 500)]
        paths_per_point: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(RunError::Config(_)) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

fn load(common: &Common) -> Result<Scenario, ConfigError> {
    let mut overrides = common.overrides.clone();
    if let Ok(seed) = std::env::var("SSK_SEED") {
        overrides.push(format!("seed={}", seed.trim()));
    }
    ScenarioConfig::load(&common.config, &overrides)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Io(IoError::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: String,
    command: &'a str,
    seed: u64,
    config: &'a ScenarioConfig,
    files: Vec<String>,
}

fn simulate_cmd(common: &Common, paths: Option<usize>) -> Result<(), CliError> {
    let scenario = load(common)?;
    ensure_dir(&common.out)?;
    let prepared = prepare(&scenario)?;
    let count = paths.unwrap_or(scenario.config.trajectories);
    let mut files = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let x0 = initial_state(&scenario, &prepared.bench, i);
        let (traj, _) = run_path(&scenario, &prepared, &x0, i)?;
        let name = format!("trajectory_{i:05}.csv");
        io::write_trajectory_csv(
            &traj,
            &prepared.bench.h,
            prepared.bench.model.control_dim(),
            &common.out.join(&name),
        )?;
        files.push(name);
    }
    let manifest = Manifest {
        version: version_string(),
        command: "simulate",
        seed: scenario.config.seed,
        config: &scenario.config,
        files,
    };
    io::write_json(&manifest, &common.out.join("manifest.json"))?;
    println!("wrote {count} trajectories to {}", common.out.display());
    Ok(())
}

fn estimate_cmd(common: &Common) -> Result<(), CliError> {
    let scenario = load(common)?;
    ensure_dir(&common.out)?;
    let report = run_ensemble(&scenario)?;
    let path = common.out.join("report.json");
    io::write_json(&report, &path)?;
    println!(
        "{} {}: p = {:.4} [{:.4}, {:.4}] over {} paths -> {}",
        report.model,
        report.family,
        report.empirical_probability,
        report.wilson_interval_95[0],
        report.wilson_interval_95[1],
        report.trajectories,
        path.display()
    );
    Ok(())
}

/// Lines printed by `ssk bounds`.
pub fn bounds_lines(scenario: &Scenario) -> Result<Vec<String>, RunError> {
    let prepared = prepare(scenario)?;
    let bench = &prepared.bench;
    let x0 = &bench.x0;
    let region = scenario.region();
    let resolution = scenario.sup_resolution();
    let chain = bench.chain().map_err(|e| RunError::Config(e.into()))?;
    let levels = chain.levels();
    let mut values = Vec::new();
    let mut sups = Vec::new();
    for (j, b) in levels.iter().enumerate() {
        let est = estimate_sup_within(b, region, &resolution, &levels[..j])
            .map_err(|e| RunError::Invalid(e.to_string()))?;
        let v = b.value(x0);
        values.push(v);
        sups.push(est.value.max(v));
    }
    let t = scenario.horizon();
    let (h, c) = (values[0], sups[0]);
    let show = |r: Result<f64, crate::bounds::BoundError>| match r {
        Ok(p) => format!("{p:.12e}"),
        Err(e) => format!("n/a ({e})"),
    };
    let mut lines = vec![
        format!("x0 = {:?}", x0.as_slice()),
        format!("region lo = {:?} hi = {:?}", region.lo, region.hi),
        format!("chain values b_j(x0) = {values:?}"),
        format!("sups c_j = {sups:?}"),
        format!("szcbf_bound(T={t}) = {}", show(szcbf_bound(h, c, t))),
        format!("scbf_bound = {}", show(scbf_bound(h, c))),
        format!("kushner_supermartingale_bound(c - h, c) = {}", show(kushner_supermartingale_bound(c - h, c))),
    ];
    if levels.len() > 1 {
        lines.push(format!("ho_scbf_bound = {}", show(ho_scbf_bound(&values, &sups))));
    }
    Ok(lines)
}

fn bounds_cmd(common: &Common) -> Result<(), CliError> {
    let scenario = load(common)?;
    for line in bounds_lines(&scenario)? {
        println!("{line}");
    }
    Ok(())
}

fn compare_cmd(common: &Common) -> Result<(), CliError> {
    let scenario = load(common)?;
    ensure_dir(&common.out)?;
    let report = compare(&scenario)?;
    let path = common.out.join("compare.json");
    io::write_json(&report, &path)?;
    print!("{report}");
    println!("-> {}", path.display());
    Ok(())
}

fn sweep_cmd(common: &Common, initial_points: usize, paths_per_point: usize) -> Result<(), CliError> {
    let scenario = load(common)?;
    ensure_dir(&common.out)?;
    let bench = scenario.benchmark()?;
    let families = comparison_families(bench.relative_degree());
    let rows = sweep_noise(&scenario, &scenario.config.sigma_list, &families)?;
    let path = common.out.join("sweep.csv");
    io::write_sweep_csv(&rows, &path)?;
    for r in &rows {
        println!("sigma={:<5} {:<9} p={:.4} [{:.4}, {:.4}]", r.sigma, r.family.as_str(), r.p, r.lo, r.hi);
    }
    println!("-> {}", path.display());
    if initial_points > 0 {
        let points = initial_point_study(&scenario, initial_points, paths_per_point, &families)?;
        let path = common.out.join("initial_points.csv");
        io::write_point_csv(&points, &path)?;
        println!("-> {}", path.display());
    }
    Ok(())
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(value) = std::env::var("SSK_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| CliError::Other(format!("SSK_THREADS must be a positive integer, got '{value}'")))?;
        if n == 0 {
            return Err(CliError::Other("SSK_THREADS must be positive".into()));
        }
        // A second call in the same process keeps the first pool.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            info!("thread pool already configured");
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate { common, paths } => simulate_cmd(common, *paths),
        Command::Estimate { common } => estimate_cmd(common),
        Command::Bounds { common } => bounds_cmd(common),
        Command::Compare { common } => compare_cmd(common),
        Command::Sweep {
            common,
            initial_points,
            paths_per_point,
        } => sweep_cmd(common, *initial_points, *paths_per_point),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
