//! Forecast scoring: MAE against the true or baseline density, Wilcoxon
//! signed-rank significance tests, and the windowed experiment harness.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::windowed_baseline;
use crate::curve::DensityCurve;
use crate::datagen::{standard_normal_cdf, TrueDensity};
use crate::error::{Result, TdxError};
use crate::model::forecast_grid;
use crate::objective::Hyperparams;
use crate::optimizer::{fit_static, fit_tdx, FitReport, SolverConfig};
use crate::seeding::derive_seed;
use crate::stats::percentile;
use crate::stream::{distinct_times, window, StreamSample, TimeIndexedStream};

/// Mean absolute difference of two curves on the same grid.
pub fn mae(a: &DensityCurve, b: &DensityCurve) -> Result<f64> {
    if a.len() != b.len() || a.grid() != b.grid() {
        return Err(TdxError::GridMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Result of a two-sided Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WilcoxonOutcome {
    pub p_value: f64,
    pub significant: bool,
    /// Differences remaining after zero removal.
    pub n_used: usize,
    pub w_plus: f64,
    pub w_minus: f64,
}

/// Two-sided Wilcoxon signed-rank test on paired differences.
///
/// Zero differences are dropped and tied absolute values receive average
/// ranks. Up to 25 effective differences the p-value comes from exact
/// enumeration of the sign-flip null; beyond that a normal approximation
/// with tie-corrected variance and continuity correction is used. Fewer
/// than 5 effective differences yield `p = 1`.
pub fn wilcoxon_signed_rank(d: &[f64], alpha: f64) -> WilcoxonOutcome {
    let nonzero: Vec<f64> = d.iter().cloned().filter(|x| *x != 0.0).collect();
    let n = nonzero.len();
    if n < 5 {
        return WilcoxonOutcome {
            p_value: 1.0,
            significant: false,
            n_used: n,
            w_plus: 0.0,
            w_minus: 0.0,
        };
    }

    let ranks = average_ranks(&nonzero);
    let mut w_plus = 0.0;
    let mut w_minus = 0.0;
    for (&value, &rank) in nonzero.iter().zip(&ranks) {
        if value > 0.0 {
            w_plus += rank;
        } else {
            w_minus += rank;
        }
    }
    let w_min = w_plus.min(w_minus);

    let p_value = if n <= 25 {
        exact_two_sided_p(&ranks, w_min)
    } else {
        normal_two_sided_p(&nonzero, w_min)
    };
    WilcoxonOutcome {
        p_value,
        significant: p_value < alpha,
        n_used: n,
        w_plus,
        w_minus,
    }
}

/// Ranks of |d| with ties sharing their average rank.
fn average_ranks(d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].abs().partial_cmp(&d[b].abs()).expect("finite d"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p by dynamic programming over the sign-flip null.
///
/// Average ranks live on a half-integer grid, so doubling them makes the
/// subset-sum distribution integral.
fn exact_two_sided_p(ranks: &[f64], w_min: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let threshold = (2.0 * w_min).round() as usize;
    let below: u64 = counts[..=threshold.min(total)].iter().sum();
    let p = 2.0 * below as f64 / 2f64.powi(ranks.len() as i32);
    p.min(1.0)
}

/// Normal approximation with tie-corrected variance and continuity
/// correction.
fn normal_two_sided_p(d: &[f64], w_min: f64) -> f64 {
    let n = d.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    var -= tie_correction(d);
    let sd = var.sqrt();
    if sd == 0.0 {
        return 1.0;
    }
    let z = (w_min - mean + 0.5) / sd;
    (2.0 * standard_normal_cdf(z)).min(1.0)
}

/// Sum of (t^3 - t)/48 over tie groups of |d|.
fn tie_correction(d: &[f64]) -> f64 {
    let mut magnitudes: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    magnitudes.sort_by(|a, b| a.partial_cmp(b).expect("finite d"));
    let mut correction = 0.0;
    let mut i = 0;
    while i < magnitudes.len() {
        let mut j = i;
        while j + 1 < magnitudes.len() && magnitudes[j + 1] == magnitudes[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        correction += (t * t * t - t) / 48.0;
        i = j + 1;
    }
    correction
}

/// Time segmentation of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub ms_train: (f64, f64),
    pub ms_val: (f64, f64),
    pub train_windows: Vec<(f64, f64)>,
    pub test_window: (f64, f64),
    pub grid_points: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            ms_train: (0.0, 0.45),
            ms_val: (0.45, 0.5),
            train_windows: vec![(0.5, 0.8), (0.6, 0.8), (0.7, 0.8)],
            test_window: (0.8, 1.0),
            grid_points: 200,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let mut all = vec![self.ms_train, self.ms_val, self.test_window];
        all.extend_from_slice(&self.train_windows);
        for (lo, hi) in &all {
            if !(lo < hi) || *lo < 0.0 || *hi > 1.0 {
                return Err(TdxError::InvalidArgument(format!(
                    "plan window [{lo}, {hi}] is not a proper subinterval of [0, 1]"
                )));
            }
        }
        if self.train_windows.is_empty() {
            return Err(TdxError::InvalidArgument(
                "plan needs at least one training window".into(),
            ));
        }
        for (lo, hi) in &self.train_windows {
            if *hi > self.test_window.0 {
                return Err(TdxError::InvalidArgument(format!(
                    "training window [{lo}, {hi}] overlaps the test window"
                )));
            }
        }
        if self.grid_points < 2 {
            return Err(TdxError::InvalidArgument(
                "plan needs at least 2 grid points".into(),
            ));
        }
        Ok(())
    }
}

/// Where the harness gets its reference densities.
pub enum TruthSource<'a> {
    /// Exact generator density (synthetic data).
    Exact(&'a TrueDensity),
    /// Spline-smoothed histogram ensemble pooled over neighbouring time
    /// points (real data).
    Baseline { half_width: usize },
}

/// How the temporal half-weight age is chosen per training window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaPolicy {
    /// Half of the training window length.
    HalfWindow,
    Fixed(f64),
}

impl KappaPolicy {
    pub fn resolve(&self, window: (f64, f64)) -> f64 {
        match self {
            KappaPolicy::HalfWindow => (window.1 - window.0) / 2.0,
            KappaPolicy::Fixed(kappa) => *kappa,
        }
    }
}

/// MAE over the test window for one fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodWindowResult {
    pub method: String,
    pub window: (f64, f64),
    /// Time since the end of the training window, per test time point.
    pub latencies: Vec<f64>,
    pub maes: Vec<f64>,
    pub summed_mae: f64,
    pub fit: FitReport,
}

/// Per-test-time significance comparison of the best TDX and static fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WilcoxonPoint {
    pub t: f64,
    pub tdx_mae: f64,
    pub static_mae: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Full harness output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub alpha: f64,
    pub results: Vec<MethodWindowResult>,
    /// Index into `results` of the best TDX entry (smallest summed MAE).
    pub best_tdx: usize,
    /// Index into `results` of the best static entry.
    pub best_static: usize,
    pub wilcoxon: Vec<WilcoxonPoint>,
}

impl ExperimentReport {
    pub fn entry(&self, method: &str, window: (f64, f64)) -> Option<&MethodWindowResult> {
        self.results
            .iter()
            .find(|r| r.method == method && r.window == window)
    }

    /// Plot-ready CSV mirroring the latency curves: one row per
    /// (method, window, test time point).
    pub fn write_latency_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "latency,mae,method,window")?;
        for entry in &self.results {
            let label = entry.window.1 - entry.window.0;
            for (latency, mae) in entry.latencies.iter().zip(&entry.maes) {
                writeln!(out, "{latency},{mae},{},{label:.4}", entry.method)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

const WILCOXON_ALPHA: f64 = 0.01;

/// Runs the windowed experiment: fits TDX and the static variant on each
/// training window, scores 200-point forecast curves against the truth at
/// every test time point, selects each method's best window by summed
/// MAE, and tests TDX against static with a two-sided Wilcoxon
/// signed-rank test at every test time point.
pub fn run_experiment(
    samples: &[StreamSample],
    truth: &TruthSource<'_>,
    plan: &ExperimentPlan,
    tdx_hp: &Hyperparams,
    static_hp: &Hyperparams,
    kappa: KappaPolicy,
    cfg: &SolverConfig,
) -> Result<ExperimentReport> {
    plan.validate()?;
    let xs_all: Vec<f64> = samples.iter().map(|s| s.x).collect();
    let grid_lo = percentile(&xs_all, 0.005)?;
    let grid_hi = percentile(&xs_all, 0.995)?;
    let grid = forecast_grid(grid_lo, grid_hi, plan.grid_points)?;

    let test_times: Vec<f64> = distinct_times(samples)
        .into_iter()
        .filter(|t| *t >= plan.test_window.0 && *t <= plan.test_window.1)
        .collect();
    if test_times.is_empty() {
        return Err(TdxError::InsufficientData(
            "no stream time points fall in the test window".into(),
        ));
    }

    let indexed = TimeIndexedStream::new(samples)?;
    let mut truth_curves = Vec::with_capacity(test_times.len());
    for &t in &test_times {
        truth_curves.push(truth_curve(truth, &indexed, t, &grid)?);
    }

    let mut results = Vec::new();
    let mut models = Vec::new();
    let mut fit_counter = 0u64;
    for method in ["tdx", "static"] {
        for &train_window in &plan.train_windows {
            let (xs, ts) = window(samples, train_window.0, train_window.1, false);
            if xs.is_empty() {
                return Err(TdxError::InsufficientData(format!(
                    "training window [{}, {}] holds no samples",
                    train_window.0, train_window.1
                )));
            }
            let fit_cfg = SolverConfig {
                seed: derive_seed(cfg.seed, fit_counter),
                ..*cfg
            };
            fit_counter += 1;
            let (model, fit) = match method {
                "tdx" => {
                    let hp = Hyperparams {
                        kappa: kappa.resolve(train_window),
                        ..*tdx_hp
                    };
                    fit_tdx(&xs, &ts, &hp, &fit_cfg, None)?
                }
                _ => fit_static(&xs, &ts, static_hp, &fit_cfg, None)?,
            };

            let mut latencies = Vec::with_capacity(test_times.len());
            let mut maes = Vec::with_capacity(test_times.len());
            for (&t, truth_curve) in test_times.iter().zip(&truth_curves) {
                let prediction = model.density_curve(t, &grid)?;
                latencies.push(t - train_window.1);
                maes.push(mae(&prediction, truth_curve)?);
            }
            let summed_mae = maes.iter().sum();
            results.push(MethodWindowResult {
                method: method.to_string(),
                window: train_window,
                latencies,
                maes,
                summed_mae,
                fit,
            });
            models.push(model);
        }
    }

    let best_tdx = best_index(&results, "tdx")?;
    let best_static = best_index(&results, "static")?;

    let mut wilcoxon = Vec::with_capacity(test_times.len());
    for (i, (&t, truth_curve)) in test_times.iter().zip(&truth_curves).enumerate() {
        let tdx_curve = models[best_tdx].density_curve(t, &grid)?;
        let static_curve = models[best_static].density_curve(t, &grid)?;
        let d: Vec<f64> = (0..grid.len())
            .map(|g| {
                (tdx_curve.values()[g] - truth_curve.values()[g]).abs()
                    - (static_curve.values()[g] - truth_curve.values()[g]).abs()
            })
            .collect();
        let outcome = wilcoxon_signed_rank(&d, WILCOXON_ALPHA);
        wilcoxon.push(WilcoxonPoint {
            t,
            tdx_mae: results[best_tdx].maes[i],
            static_mae: results[best_static].maes[i],
            p_value: outcome.p_value,
            significant: outcome.significant,
        });
    }

    Ok(ExperimentReport {
        grid_lo,
        grid_hi,
        grid_points: plan.grid_points,
        alpha: WILCOXON_ALPHA,
        results,
        best_tdx,
        best_static,
        wilcoxon,
    })
}

fn truth_curve(
    truth: &TruthSource<'_>,
    indexed: &TimeIndexedStream,
    t: f64,
    grid: &[f64],
) -> Result<DensityCurve> {
    match truth {
        TruthSource::Exact(density) => Ok(density.curve(t, grid)),
        TruthSource::Baseline { half_width } => {
            windowed_baseline(indexed, indexed.nearest_index(t), *half_width, grid)
        }
    }
}

fn best_index(results: &[MethodWindowResult], method: &str) -> Result<usize> {
    results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.method == method)
        .min_by(|(_, a), (_, b)| {
            a.summed_mae
                .partial_cmp(&b.summed_mae)
                .expect("finite summed MAE")
        })
        .map(|(i, _)| i)
        .ok_or_else(|| TdxError::SelectionFailure(format!("no {method} results")))
}
