//! Command-line front end: configuration resolution, stream I/O and the
//! run directories tying the library into reproducible commands.
//!
//! Every command accepts `--config <json>` plus flag overrides; flags win.
//! The resolved configuration is echoed next to the outputs so a run can
//! be reproduced from its artifacts alone. All randomness flows from the
//! single `seed` field. Wall-clock timings land in a separate
//! `timings.json`; every other output is byte-identical across reruns.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::baseline::windowed_baseline;
use crate::datagen::{generate_stream, DriftScenario};
use crate::error::{Result, TdxError};
use crate::evaluation::{run_experiment, ExperimentPlan, KappaPolicy, TruthSource};
use crate::model::{forecast_grid, TdxModel};
use crate::modelselect::{select_hyperparams, sensitivity_sweep, SearchSpace, SweepKind};
use crate::objective::Hyperparams;
use crate::optimizer::{fit_static, fit_tdx, FitReport, SolverConfig};
use crate::stats::percentile;
use crate::stream::{
    normalize_time, read_stream_csv, window, write_stream_csv, TimeIndexedStream,
};

#[derive(Parser, Debug)]
#[command(
    name = "tdx",
    version,
    about = "Density forecasting for drifting univariate streams"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic drifting stream from a scenario file.
    Generate(GenerateArgs),
    /// Fit a model on a time window of a stream.
    Fit(FitArgs),
    /// Evaluate a fitted model's density on a grid at some time.
    Forecast(ForecastArgs),
    /// Approximate the density of a stream at a time index from data.
    Baseline(BaselineArgs),
    /// Run the full windowed comparison of TDX against the static model.
    Evaluate(EvaluateArgs),
    /// Two-phase hyperparameter grid search.
    Select(SelectArgs),
    /// Parameter sensitivity sweeps.
    Sweep(SweepArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Select(args) => cmd_select(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        Some(path) => {
            let reader = BufReader::new(File::open(path)?);
            serde_json::from_reader(reader)
                .map_err(|e| TdxError::Schema(format!("config file does not parse: {e}")))
        }
        None => Ok(C::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(out, value)?;
    Ok(())
}

fn require<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| TdxError::InvalidArgument(format!("missing required parameter `{name}`")))
}

/// Wall-clock measurements, kept out of the deterministic outputs.
#[derive(Debug, Serialize)]
struct TimingsFile {
    command: String,
    entries: Vec<TimingEntry>,
}

#[derive(Debug, Serialize)]
struct TimingEntry {
    label: String,
    fit_seconds: f64,
    n_observations: usize,
    seconds_per_observation: f64,
}

impl TimingEntry {
    fn from_report(label: String, report: &FitReport) -> Self {
        Self {
            label,
            fit_seconds: report.fit_seconds,
            n_observations: report.n_observations,
            seconds_per_observation: report.seconds_per_observation(),
        }
    }
}

// ---------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario JSON path.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output stream CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sidecar metadata path (default: `<out>.meta.json`).
    #[arg(long)]
    meta_out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenerateConfig {
    scenario: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: u64,
    meta_out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct GenerateMeta<'a> {
    seed: u64,
    n_rows: usize,
    n_time_points: usize,
    scenario: &'a DriftScenario,
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut cfg: GenerateConfig = load_config(args.config.as_deref())?;
    if let Some(v) = args.scenario {
        cfg.scenario = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.meta_out {
        cfg.meta_out = Some(v);
    }

    let scenario_path = require(cfg.scenario.clone(), "scenario")?;
    let out_path = require(cfg.out.clone(), "out")?;
    let scenario = DriftScenario::load_json(&scenario_path)?;
    let (samples, _) = generate_stream(&scenario, cfg.seed)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_stream_csv(&out_path, &samples)?;

    let meta_path = cfg
        .meta_out
        .clone()
        .unwrap_or_else(|| append_extension(&out_path, "meta.json"));
    let indexed = TimeIndexedStream::new(&samples)?;
    write_json(
        &meta_path,
        &GenerateMeta {
            seed: cfg.seed,
            n_rows: samples.len(),
            n_time_points: indexed.len(),
            scenario: &scenario,
        },
    )?;
    println!(
        "wrote {} rows over {} time points to {}",
        samples.len(),
        indexed.len(),
        out_path.display()
    );
    Ok(())
}

fn append_extension(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

// ---------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input stream CSV.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Map raw times onto [0, 1] before fitting.
    #[arg(long)]
    normalize_time: bool,
    /// Training window start (inclusive).
    #[arg(long)]
    window_lo: Option<f64>,
    /// Training window end (inclusive).
    #[arg(long)]
    window_hi: Option<f64>,
    /// Number of basis functions.
    #[arg(long)]
    m: Option<usize>,
    /// Basis bandwidth.
    #[arg(long)]
    h: Option<f64>,
    /// Polynomial order of the weight trajectories.
    #[arg(long)]
    r: Option<usize>,
    /// Regularization strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Half-weight age (default: half the window length).
    #[arg(long)]
    kappa: Option<f64>,
    /// Fit the static variant (order 0, no weighting).
    #[arg(long, name = "static")]
    static_variant: bool,
    /// Basis range override (default: window sample min/max).
    #[arg(long)]
    basis_lo: Option<f64>,
    #[arg(long)]
    basis_hi: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    artificial_bound: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output model JSON path.
    #[arg(long)]
    out_model: Option<PathBuf>,
    /// Output fit-report JSON path (default: `<out-model>.report.json`).
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// Output timings path (default: `<out-model>.timings.json`).
    #[arg(long)]
    out_timings: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FitConfig {
    stream: Option<PathBuf>,
    normalize_time: bool,
    window_lo: f64,
    window_hi: f64,
    m: Option<usize>,
    h: Option<f64>,
    r: usize,
    lambda: f64,
    kappa: Option<f64>,
    static_variant: bool,
    basis_lo: Option<f64>,
    basis_hi: Option<f64>,
    solver: SolverConfig,
    out_model: Option<PathBuf>,
    out_report: Option<PathBuf>,
    out_timings: Option<PathBuf>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            stream: None,
            normalize_time: false,
            window_lo: 0.0,
            window_hi: 1.0,
            m: None,
            h: None,
            r: 2,
            lambda: 1.0,
            kappa: None,
            static_variant: false,
            basis_lo: None,
            basis_hi: None,
            solver: SolverConfig::default(),
            out_model: None,
            out_report: None,
            out_timings: None,
        }
    }
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let mut cfg: FitConfig = load_config(args.config.as_deref())?;
    if let Some(v) = args.stream {
        cfg.stream = Some(v);
    }
    if args.normalize_time {
        cfg.normalize_time = true;
    }
    if let Some(v) = args.window_lo {
        cfg.window_lo = v;
    }
    if let Some(v) = args.window_hi {
        cfg.window_hi = v;
    }
    if let Some(v) = args.m {
        cfg.m = Some(v);
    }
    if let Some(v) = args.h {
        cfg.h = Some(v);
    }
    if let Some(v) = args.r {
        cfg.r = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.kappa {
        cfg.kappa = Some(v);
    }
    if args.static_variant {
        cfg.static_variant = true;
    }
    if let Some(v) = args.basis_lo {
        cfg.basis_lo = Some(v);
    }
    if let Some(v) = args.basis_hi {
        cfg.basis_hi = Some(v);
    }
    if let Some(v) = args.tolerance {
        cfg.solver.optimality_tolerance = v;
    }
    if let Some(v) = args.max_iterations {
        cfg.solver.max_iterations = v;
    }
    if let Some(v) = args.starts {
        cfg.solver.n_starts = v;
    }
    if let Some(v) = args.artificial_bound {
        cfg.solver.artificial_bound = v;
    }
    if let Some(v) = args.seed {
        cfg.solver.seed = v;
    }
    if let Some(v) = args.out_model {
        cfg.out_model = Some(v);
    }
    if let Some(v) = args.out_report {
        cfg.out_report = Some(v);
    }
    if let Some(v) = args.out_timings {
        cfg.out_timings = Some(v);
    }

    let stream_path = require(cfg.stream.clone(), "stream")?;
    let out_model = require(cfg.out_model.clone(), "out-model")?;
    let m = require(cfg.m, "m")?;
    let h = require(cfg.h, "h")?;

    let mut samples = read_stream_csv(&stream_path)?;
    if cfg.normalize_time {
        normalize_time(&mut samples)?;
    }
    let (xs, ts) = window(&samples, cfg.window_lo, cfg.window_hi, true);
    if xs.is_empty() {
        return Err(TdxError::InsufficientData(format!(
            "window [{}, {}] holds no samples",
            cfg.window_lo, cfg.window_hi
        )));
    }

    let kappa = cfg
        .kappa
        .unwrap_or((cfg.window_hi - cfg.window_lo) / 2.0);
    let hp = Hyperparams {
        m,
        h,
        r: cfg.r,
        lambda: cfg.lambda,
        kappa,
    };
    let basis_range = match (cfg.basis_lo, cfg.basis_hi) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => {
            return Err(TdxError::InvalidArgument(
                "basis-lo and basis-hi must be given together".into(),
            ))
        }
    };

    let (model, report) = if cfg.static_variant {
        fit_static(&xs, &ts, &hp, &cfg.solver, basis_range)?
    } else {
        fit_tdx(&xs, &ts, &hp, &cfg.solver, basis_range)?
    };

    if let Some(parent) = out_model.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    model.save_json(&out_model)?;
    let report_path = cfg
        .out_report
        .clone()
        .unwrap_or_else(|| append_extension(&out_model, "report.json"));
    write_json(&report_path, &report)?;
    let timings_path = cfg
        .out_timings
        .clone()
        .unwrap_or_else(|| append_extension(&out_model, "timings.json"));
    let label = if cfg.static_variant { "static" } else { "tdx" };
    write_json(
        &timings_path,
        &TimingsFile {
            command: "fit".into(),
            entries: vec![TimingEntry::from_report(label.into(), &report)],
        },
    )?;
    println!(
        "fitted {label} model on {} observations (objective {:.6}) -> {}",
        xs.len(),
        report.best_objective,
        out_model.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ForecastArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fitted model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Forecast time (may lie outside the training window).
    #[arg(long)]
    t: Option<f64>,
    /// Grid bounds (default: the basis center range).
    #[arg(long)]
    grid_lo: Option<f64>,
    #[arg(long)]
    grid_hi: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Output curve CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ForecastConfig {
    model: Option<PathBuf>,
    t: Option<f64>,
    grid_lo: Option<f64>,
    grid_hi: Option<f64>,
    grid_points: Option<usize>,
    out: Option<PathBuf>,
}

fn cmd_forecast(args: ForecastArgs) -> Result<()> {
    let mut cfg: ForecastConfig = load_config(args.config.as_deref())?;
    if let Some(v) = args.model {
        cfg.model = Some(v);
    }
    if let Some(v) = args.t {
        cfg.t = Some(v);
    }
    if let Some(v) = args.grid_lo {
        cfg.grid_lo = Some(v);
    }
    if let Some(v) = args.grid_hi {
        cfg.grid_hi = Some(v);
    }
    if let Some(v) = args.grid_points {
        cfg.grid_points = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }

    let model_path = require(cfg.model.clone(), "model")?;
    let t = require(cfg.t, "t")?;
    let out = require(cfg.out.clone(), "out")?;

    let model = TdxModel::load_json(&model_path)?;
    let (basis_lo, basis_hi) = model.basis().range();
    let lo = cfg.grid_lo.unwrap_or(basis_lo);
    let hi = cfg.grid_hi.unwrap_or(basis_hi);
    let points = cfg.grid_points.unwrap_or(200);
    let grid = forecast_grid(lo, hi, points)?;
    let curve = model.density_curve(t, &grid)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    curve.write_csv(&out)?;
    println!(
        "forecast density at t={t} on {points} points -> {}",
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    normalize_time: bool,
    /// Time index into the sorted distinct stream times.
    #[arg(long)]
    time_index: Option<usize>,
    /// Alternatively: the time value whose nearest index is used.
    #[arg(long)]
    at_time: Option<f64>,
    /// Pooling half-width in time points.
    #[arg(long)]
    half_width: Option<usize>,
    #[arg(long)]
    grid_lo: Option<f64>,
    #[arg(long)]
    grid_hi: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BaselineConfig {
    stream: Option<PathBuf>,
    normalize_time: bool,
    time_index: Option<usize>,
    at_time: Option<f64>,
    half_width: usize,
    grid_lo: Option<f64>,
    grid_hi: Option<f64>,
    grid_points: usize,
    out: Option<PathBuf>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            stream: None,
            normalize_time: false,
            time_index: None,
            at_time: None,
            half_width: 4,
            grid_lo: None,
            grid_hi: None,
            grid_points: 200,
            out: None,
        }
    }
}

fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    let mut cfg: BaselineConfig = load_config(args.config.as_deref())?;
    if let Some(v) = args.stream {
        cfg.stream = Some(v);
    }
    if args.normalize_time {
        cfg.normalize_time = true;
    }
    if let Some(v) = args.time_index {
        cfg.time_index = Some(v);
    }
    if let Some(v) = args.at_time {
        cfg.at_time = Some(v);
    }
    if let Some(v) = args.half_width {
        cfg.half_width = v;
    }
    if let Some(v) = args.grid_lo {
        cfg.grid_lo = Some(v);
    }
    if let Some(v) = args.grid_hi {
        cfg.grid_hi = Some(v);
    }
    if let Some(v) = args.grid_points {
        cfg.grid_points = v;
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }

    let stream_path = require(cfg.stream.clone(), "stream")?;
    let out = require(cfg.out.clone(), "out")?;

    let mut samples = read_stream_csv(&stream_path)?;
    if cfg.normalize_time {
        normalize_time(&mut samples)?;
    }
    let indexed = TimeIndexedStream::new(&samples)?;
    let index = match (cfg.time_index, cfg.at_time) {
        (Some(index), _) => index,
        (None, Some(t)) => indexed.nearest_index(t),
        (None, None) => {
            return Err(TdxError::InvalidArgument(
                "one of time-index or at-time is required".into(),
            ))
        }
    };

    let xs_all: Vec<f64> = samples.iter().map(|s| s.x).collect();
    let lo = match cfg.grid_lo {
        Some(lo) => lo,
        None => percentile(&xs_all, 0.005)?,
    };
    let hi = match cfg.grid_hi {
        Some(hi) => hi,
        None => percentile(&xs_all, 0.995)?,
    };
    let grid = forecast_grid(lo, hi, cfg.grid_points)?;
    let curve = windowed_baseline(&indexed, index, cfg.half_width, &grid)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    curve.write_csv(&out)?;
    println!(
        "baseline at time index {index} (t={}) -> {}",
        indexed.times()[index],
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    normalize_time: bool,
    /// Scenario JSON; when given the exact generator density is the
    /// truth, otherwise the windowed baseline approximation.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    baseline_half_width: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Fixed half-weight age (default: half of each training window).
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for report, latency CSV, config echo and timings.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvaluateConfig {
    stream: Option<PathBuf>,
    normalize_time: bool,
    scenario: Option<PathBuf>,
    baseline_half_width: usize,
    m: Option<usize>,
    h: Option<f64>,
    r: usize,
    lambda: f64,
    kappa: Option<f64>,
    plan: ExperimentPlan,
    solver: SolverConfig,
    out_dir: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            stream: None,
            normalize_time: false,
            scenario: None,
            baseline_half_width: 4,
            m: None,
            h: None,
            r: 2,
            lambda: 1.0,
            kappa: None,
            plan: ExperimentPlan::default(),
            solver: SolverConfig::default(),
            out_dir: None,
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg: EvaluateConfig = load_config(args.config.as_deref())?;
    if let Some(v) = args.stream {
        cfg.stream = Some(v);
    }
    if args.normalize_time {
        cfg.normalize_time = true;
    }
    if let Some(v) = args.scenario {
        cfg.scenario = Some(v);
    }
    if let Some(v) = args.baseline_half_width {
        cfg.baseline_half_width = v;
    }
    if let Some(v) = args.m {
        cfg.m = Some(v);
    }
    if let Some(v) = args.h {
        cfg.h = Some(v);
    }
    if let Some(v) = args.r {
        cfg.r = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.kappa {
        cfg.kappa = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.solver.seed = v;
    }
    if let Some(v) = args.out_dir {
        cfg.out_dir = Some(v);
    }

    let stream_path = require(cfg.stream.clone(), "stream")?;
    let out_dir = require(cfg.out_dir.clone(), "out-dir")?;
    let m = require(cfg.m, "m")?;
    let h = require(cfg.h, "h")?;

    let mut samples = read_stream_csv(&stream_path)?;
    if cfg.normalize_time {
        normalize_time(&mut samples)?;
    }

    let scenario = match &cfg.scenario {
        Some(path) => Some(DriftScenario::load_json(path)?),
        None => None,
    };
    let truth_density = scenario.as_ref().map(|s| s.true_density());
    let truth = match &truth_density {
        Some(density) => TruthSource::Exact(density),
        None => TruthSource::Baseline {
            half_width: cfg.baseline_half_width,
        },
    };

    // Both methods share M and h; the static fit ignores the rest.
    let hp = Hyperparams {
        m,
        h,
        r: cfg.r,
        lambda: cfg.lambda,
        kappa: cfg.kappa.unwrap_or(0.1),
    };
    let kappa_policy = match cfg.kappa {
        Some(kappa) => KappaPolicy::Fixed(kappa),
        None => KappaPolicy::HalfWindow,
    };

    let report = run_experiment(
        &samples,
        &truth,
        &cfg.plan,
        &hp,
        &hp,
        kappa_policy,
        &cfg.solver,
    )?;

    fs::create_dir_all(&out_dir)?;
    write_json(&out_dir.join("config.json"), &cfg)?;
    write_json(&out_dir.join("report.json"), &report)?;
    report.write_latency_csv(&out_dir.join("latency.csv"))?;
    let timings = TimingsFile {
        command: "evaluate".into(),
        entries: report
            .results
            .iter()
            .map(|r| {
                TimingEntry::from_report(
                    format!("{} {:.2}-{:.2}", r.method, r.window.0, r.window.1),
                    &r.fit,
                )
            })
            .collect(),
    };
    write_json(&out_dir.join("timings.json"), &timings)?;

    let best = &report.results[report.best_tdx];
    let best_static = &report.results[report.best_static];
    println!(
        "best tdx window [{}, {}) summed MAE {:.5}; best static window [{}, {}) summed MAE {:.5}",
        best.window.0,
        best.window.1,
        best.summed_mae,
        best_static.window.0,
        best_static.window.1,
        best_static.summed_mae
    );
    println!("report -> {}", out_dir.join("report.json").display());
    Ok(())
}

// ---------------------------------------------------------------------
// select
// ---------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    normalize_time: bool,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    baseline_half_width: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SelectConfig {
    stream: Option<PathBuf>,
    normalize_time: bool,
    scenario: Option<PathBuf>,
    baseline_half_width: usize,
    kappa: Option<f64>,
    plan: ExperimentPlan,
    space: SearchSpace,
    solver: SolverConfig,
    out_dir: Option<PathBuf>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            stream: None,
            normalize_time: false,
            scenario: None,
            baseline_half_width: 4,
            kappa: None,
            plan: ExperimentPlan::default(),
            space: SearchSpace::default(),
            solver: SolverConfig::default(),
            out_dir: None,
        }
    }
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let mut cfg: SelectConfig = load_config(args.config.as_deref())?;
    if let Some(v) = args.stream {
        cfg.stream = Some(v);
    }
    if args.normalize_time {
        cfg.normalize_time = true;
    }
    if let Some(v) = args.scenario {
        cfg.scenario = Some(v);
    }
    if let Some(v) = args.baseline_half_width {
        cfg.baseline_half_width = v;
    }
    if let Some(v) = args.kappa {
        cfg.kappa = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.solver.seed = v;
    }
    if let Some(v) = args.out_dir {
        cfg.out_dir = Some(v);
    }

    let stream_path = require(cfg.stream.clone(), "stream")?;
    let out_dir = require(cfg.out_dir.clone(), "out-dir")?;

    let mut samples = read_stream_csv(&stream_path)?;
    if cfg.normalize_time {
        normalize_time(&mut samples)?;
    }
    let scenario = match &cfg.scenario {
        Some(path) => Some(DriftScenario::load_json(path)?),
        None => None,
    };
    let truth_density = scenario.as_ref().map(|s| s.true_density());
    let truth = match &truth_density {
        Some(density) => TruthSource::Exact(density),
        None => TruthSource::Baseline {
            half_width: cfg.baseline_half_width,
        },
    };
    let kappa_policy = match cfg.kappa {
        Some(kappa) => KappaPolicy::Fixed(kappa),
        None => KappaPolicy::HalfWindow,
    };

    let (chosen, report) = select_hyperparams(
        &samples,
        &truth,
        &cfg.plan,
        &cfg.space,
        kappa_policy,
        &cfg.solver,
    )?;

    fs::create_dir_all(&out_dir)?;
    write_json(&out_dir.join("config.json"), &cfg)?;
    write_json(&out_dir.join("selection.json"), &report)?;
    println!(
        "selected m={} h={:.5} r={} lambda={} (kappa {:.5})",
        chosen.m, chosen.h, chosen.r, chosen.lambda, chosen.kappa
    );
    println!("report -> {}", out_dir.join("selection.json").display());
    Ok(())
}

// ---------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    normalize_time: bool,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    baseline_half_width: Option<usize>,
    /// One of: m_h_surface, r_lambda_heatmap, sample_count.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    window_lo: Option<f64>,
    #[arg(long)]
    window_hi: Option<f64>,
    /// Base hyperparameters for the heatmap and sample-count sweeps.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SweepConfig {
    stream: Option<PathBuf>,
    normalize_time: bool,
    scenario: Option<PathBuf>,
    baseline_half_width: usize,
    sweep: Option<SweepKind>,
    window_lo: f64,
    window_hi: f64,
    m: usize,
    h: f64,
    r: usize,
    lambda: f64,
    kappa: Option<f64>,
    solver: SolverConfig,
    out_dir: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            stream: None,
            normalize_time: false,
            scenario: None,
            baseline_half_width: 4,
            sweep: None,
            window_lo: 0.3,
            window_hi: 0.45,
            m: 10,
            h: 1.0,
            r: 2,
            lambda: 1.0,
            kappa: None,
            solver: SolverConfig::default(),
            out_dir: None,
        }
    }
}

fn parse_sweep_kind(name: &str) -> Result<SweepKind> {
    match name {
        "m_h_surface" => Ok(SweepKind::MHSurface),
        "r_lambda_heatmap" => Ok(SweepKind::RLambdaHeatmap),
        "sample_count" => Ok(SweepKind::SampleCount),
        other => Err(TdxError::InvalidArgument(format!(
            "unknown sweep kind `{other}` (expected m_h_surface, r_lambda_heatmap or sample_count)"
        ))),
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = load_config(args.config.as_deref())?;
    if let Some(v) = args.stream {
        cfg.stream = Some(v);
    }
    if args.normalize_time {
        cfg.normalize_time = true;
    }
    if let Some(v) = args.scenario {
        cfg.scenario = Some(v);
    }
    if let Some(v) = args.baseline_half_width {
        cfg.baseline_half_width = v;
    }
    if let Some(v) = args.sweep {
        cfg.sweep = Some(parse_sweep_kind(&v)?);
    }
    if let Some(v) = args.window_lo {
        cfg.window_lo = v;
    }
    if let Some(v) = args.window_hi {
        cfg.window_hi = v;
    }
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.h {
        cfg.h = v;
    }
    if let Some(v) = args.r {
        cfg.r = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.kappa {
        cfg.kappa = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.solver.seed = v;
    }
    if let Some(v) = args.out_dir {
        cfg.out_dir = Some(v);
    }

    let stream_path = require(cfg.stream.clone(), "stream")?;
    let out_dir = require(cfg.out_dir.clone(), "out-dir")?;
    let sweep = require(cfg.sweep, "sweep")?;

    let mut samples = read_stream_csv(&stream_path)?;
    if cfg.normalize_time {
        normalize_time(&mut samples)?;
    }
    let scenario = match &cfg.scenario {
        Some(path) => Some(DriftScenario::load_json(path)?),
        None => None,
    };
    let truth_density = scenario.as_ref().map(|s| s.true_density());
    let truth = match &truth_density {
        Some(density) => TruthSource::Exact(density),
        None => TruthSource::Baseline {
            half_width: cfg.baseline_half_width,
        },
    };

    let window = (cfg.window_lo, cfg.window_hi);
    let base = Hyperparams {
        m: cfg.m,
        h: cfg.h,
        r: cfg.r,
        lambda: cfg.lambda,
        kappa: cfg.kappa.unwrap_or((window.1 - window.0) / 2.0),
    };
    let table = sensitivity_sweep(&samples, &truth, window, sweep, &base, &cfg.solver)?;

    fs::create_dir_all(&out_dir)?;
    write_json(&out_dir.join("config.json"), &cfg)?;
    table.write_csv(&out_dir.join("sweep.csv"))?;
    println!(
        "{} rows -> {}",
        table.rows.len(),
        out_dir.join("sweep.csv").display()
    );
    Ok(())
}
