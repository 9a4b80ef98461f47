//! Two-phase hyperparameter search and the sensitivity sweeps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::windowed_baseline;
use crate::curve::DensityCurve;
use crate::error::{Result, TdxError};
use crate::evaluation::{mae, ExperimentPlan, KappaPolicy, TruthSource};
use crate::model::forecast_grid;
use crate::objective::Hyperparams;
use crate::optimizer::{fit_tdx, SolverConfig};
use crate::seeding::derive_seed;
use crate::stats::percentile;
use crate::stream::{distinct_times, window, StreamSample, TimeIndexedStream};

/// Hyperparameter grids for [`select_hyperparams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub m_values: Vec<usize>,
    pub h_grid_size: usize,
    pub r_values: Vec<usize>,
    pub lambda_values: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            m_values: vec![10, 12, 14],
            h_grid_size: 20,
            r_values: vec![1, 2, 3],
            lambda_values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() || self.r_values.is_empty() || self.lambda_values.is_empty() {
            return Err(TdxError::InvalidArgument(
                "search space sets must be non-empty".into(),
            ));
        }
        if self.h_grid_size < 1 {
            return Err(TdxError::InvalidArgument(
                "h grid needs at least one point".into(),
            ));
        }
        Ok(())
    }
}

/// Bandwidth search interval for `m` basis functions, tied to the
/// inner-percentile spread of the data so the bases neither gap nor blur.
pub fn h_bounds(xs: &[f64], m: usize) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(TdxError::InvalidArgument(format!(
            "h bounds need m >= 2, got {m}"
        )));
    }
    let p01 = percentile(xs, 0.01)?;
    let p99 = percentile(xs, 0.99)?;
    let spread = p99 - p01;
    if !(spread > 0.0) {
        return Err(TdxError::InsufficientData(format!(
            "degenerate sample: P99 - P01 = {spread}"
        )));
    }
    Ok((spread / m as f64 * 0.5, spread / m as f64 * 1.2))
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellScore {
    pub m: usize,
    pub h: f64,
    pub r: usize,
    pub lambda: f64,
    /// Summed validation MAE; `None` when the fit failed.
    pub mae: Option<f64>,
}

/// Both phase grids and the winning combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub phase1: Vec<CellScore>,
    pub phase2: Vec<CellScore>,
    pub chosen: Hyperparams,
}

/// Fixed order and regularization used while searching M and h.
const PHASE1_R: usize = 2;
const PHASE1_LAMBDA: f64 = 1.0;

/// Two-phase grid search: first M and h (at R=2, lambda=1), then R and
/// lambda at the winning M and h. Cells are scored by summed MAE over the
/// validation time points; ties break toward smaller M, then smaller h,
/// then smaller R, then larger lambda.
pub fn select_hyperparams(
    samples: &[StreamSample],
    truth: &TruthSource<'_>,
    plan: &ExperimentPlan,
    space: &SearchSpace,
    kappa: KappaPolicy,
    cfg: &SolverConfig,
) -> Result<(Hyperparams, SelectionReport)> {
    plan.validate()?;
    space.validate()?;
    let eval_times: Vec<f64> = distinct_times(samples)
        .into_iter()
        .filter(|t| *t >= plan.ms_val.0 && *t < plan.ms_val.1)
        .collect();
    if eval_times.is_empty() {
        return Err(TdxError::InsufficientData(
            "no stream time points fall in the validation window".into(),
        ));
    }
    let ctx = ScoringContext::new(
        samples,
        truth,
        plan.ms_train,
        plan.grid_points,
        Some(eval_times),
    )?;
    let kappa = kappa.resolve(plan.ms_train);

    // Phase 1: M and h.
    let mut phase1_cells = Vec::new();
    for &m in &space.m_values {
        let (h_lo, h_hi) = h_bounds(&ctx.train_xs, m)?;
        for i in 0..space.h_grid_size {
            let h = if space.h_grid_size == 1 {
                (h_lo + h_hi) / 2.0
            } else {
                h_lo + (h_hi - h_lo) * i as f64 / (space.h_grid_size - 1) as f64
            };
            phase1_cells.push(Hyperparams {
                m,
                h,
                r: PHASE1_R,
                lambda: PHASE1_LAMBDA,
                kappa,
            });
        }
    }
    let phase1 = score_cells(&ctx, &phase1_cells, cfg, 0);
    let best1 = pick_best(&phase1, phase1_tie_order)?;
    let (best_m, best_h) = (best1.m, best1.h);

    // Phase 2: R and lambda at the winning M and h.
    let mut phase2_cells = Vec::new();
    for &r in &space.r_values {
        for &lambda in &space.lambda_values {
            phase2_cells.push(Hyperparams {
                m: best_m,
                h: best_h,
                r,
                lambda,
                kappa,
            });
        }
    }
    let phase2 = score_cells(&ctx, &phase2_cells, cfg, phase1_cells.len() as u64);
    let best2 = pick_best(&phase2, phase2_tie_order)?;

    let chosen = Hyperparams {
        m: best_m,
        h: best_h,
        r: best2.r,
        lambda: best2.lambda,
        kappa,
    };
    let report = SelectionReport {
        phase1,
        phase2,
        chosen,
    };
    Ok((chosen, report))
}

/// Smaller M, then smaller h.
fn phase1_tie_order(a: &CellScore, b: &CellScore) -> std::cmp::Ordering {
    a.m.cmp(&b.m)
        .then(a.h.partial_cmp(&b.h).expect("finite h"))
}

/// Smaller R, then larger lambda.
fn phase2_tie_order(a: &CellScore, b: &CellScore) -> std::cmp::Ordering {
    a.r.cmp(&b.r)
        .then(b.lambda.partial_cmp(&a.lambda).expect("finite lambda"))
}

/// Shared scoring machinery: fit on a training window, score summed MAE
/// against the truth at a set of evaluation times.
struct ScoringContext {
    train_xs: Vec<f64>,
    train_ts: Vec<f64>,
    grid: Vec<f64>,
    eval_times: Vec<f64>,
    truth_curves: Vec<DensityCurve>,
}

impl ScoringContext {
    fn new(
        samples: &[StreamSample],
        truth: &TruthSource<'_>,
        train_window: (f64, f64),
        grid_points: usize,
        eval_times: Option<Vec<f64>>,
    ) -> Result<Self> {
        let (train_xs, train_ts) = window(samples, train_window.0, train_window.1, false);
        if train_xs.is_empty() {
            return Err(TdxError::InsufficientData(format!(
                "training window [{}, {}] holds no samples",
                train_window.0, train_window.1
            )));
        }
        let xs_all: Vec<f64> = samples.iter().map(|s| s.x).collect();
        let grid = forecast_grid(
            percentile(&xs_all, 0.005)?,
            percentile(&xs_all, 0.995)?,
            grid_points,
        )?;
        let eval_times = eval_times.unwrap_or_default();
        let indexed = TimeIndexedStream::new(samples)?;
        let truth_curves = eval_times
            .iter()
            .map(|&t| match truth {
                TruthSource::Exact(density) => Ok(density.curve(t, &grid)),
                TruthSource::Baseline { half_width } => {
                    windowed_baseline(&indexed, indexed.nearest_index(t), *half_width, &grid)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            train_xs,
            train_ts,
            grid,
            eval_times,
            truth_curves,
        })
    }

    /// Summed MAE of a fresh fit over the evaluation times.
    fn score(&self, hp: &Hyperparams, cfg: &SolverConfig) -> Result<f64> {
        let (model, _) = fit_tdx(&self.train_xs, &self.train_ts, hp, cfg, None)?;
        let mut total = 0.0;
        for (t, truth_curve) in self.eval_times.iter().zip(&self.truth_curves) {
            let prediction = model.density_curve(*t, &self.grid)?;
            total += mae(&prediction, truth_curve)?;
        }
        Ok(total)
    }

    /// Like [`score`] but on an explicit subsample of the training window.
    fn score_subsample(
        &self,
        hp: &Hyperparams,
        cfg: &SolverConfig,
        stride: usize,
    ) -> Result<(usize, f64)> {
        let xs: Vec<f64> = self.train_xs.iter().step_by(stride).cloned().collect();
        let ts: Vec<f64> = self.train_ts.iter().step_by(stride).cloned().collect();
        let (model, _) = fit_tdx(&xs, &ts, hp, cfg, None)?;
        let mut total = 0.0;
        for (t, truth_curve) in self.eval_times.iter().zip(&self.truth_curves) {
            let prediction = model.density_curve(*t, &self.grid)?;
            total += mae(&prediction, truth_curve)?;
        }
        Ok((xs.len(), total))
    }
}

fn score_cells(
    ctx: &ScoringContext,
    cells: &[Hyperparams],
    cfg: &SolverConfig,
    seed_offset: u64,
) -> Vec<CellScore> {
    cells
        .par_iter()
        .enumerate()
        .map(|(i, hp)| {
            let cell_cfg = SolverConfig {
                seed: derive_seed(cfg.seed, seed_offset + i as u64),
                ..*cfg
            };
            let mae = match ctx.score(hp, &cell_cfg) {
                Ok(score) => Some(score),
                Err(e) => {
                    log::warn!(
                        "grid cell (m={}, h={}, r={}, lambda={}) failed: {e}",
                        hp.m,
                        hp.h,
                        hp.r,
                        hp.lambda
                    );
                    None
                }
            };
            CellScore {
                m: hp.m,
                h: hp.h,
                r: hp.r,
                lambda: hp.lambda,
                mae,
            }
        })
        .collect()
}

/// Smallest MAE wins; `tie_order` decides between equal-MAE cells.
fn pick_best<F>(cells: &[CellScore], tie_order: F) -> Result<CellScore>
where
    F: Fn(&CellScore, &CellScore) -> std::cmp::Ordering,
{
    let mut best: Option<&CellScore> = None;
    for cell in cells {
        let Some(score) = cell.mae else { continue };
        let replace = match best {
            None => true,
            Some(b) => {
                let current = b.mae.expect("best always scored");
                score < current
                    || (score == current && tie_order(cell, b) == std::cmp::Ordering::Less)
            }
        };
        if replace {
            best = Some(cell);
        }
    }
    best.cloned()
        .ok_or_else(|| TdxError::SelectionFailure("every grid cell failed".into()))
}

/// Kinds of sensitivity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    MHSurface,
    RLambdaHeatmap,
    SampleCount,
}

/// Flat sweep output: named columns, one row per evaluated cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SweepTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Default basis counts for the M/h surface sweep.
const SWEEP_M_VALUES: [usize; 9] = [4, 5, 6, 7, 8, 9, 10, 11, 12];
const SWEEP_H_GRID: usize = 30;
const SWEEP_R_VALUES: [usize; 6] = [1, 2, 3, 4, 5, 6];
const SWEEP_LAMBDA_VALUES: [f64; 6] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
const SWEEP_STRIDES: [usize; 8] = [124, 62, 31, 16, 8, 4, 2, 1];
/// Forecast latency at which sweep cells are scored.
const SWEEP_LATENCY: f64 = 0.05;

/// Parameter sensitivity sweeps over a fixed training window.
///
/// Every cell is scored by the MAE of its forecast at the stream time
/// closest to `window end + 0.05` latency. `base` supplies the fixed
/// (M, h) for the R/lambda heatmap and the full combination for the
/// sample-count sweep; the surface sweep ignores it.
pub fn sensitivity_sweep(
    samples: &[StreamSample],
    truth: &TruthSource<'_>,
    train_window: (f64, f64),
    sweep: SweepKind,
    base: &Hyperparams,
    cfg: &SolverConfig,
) -> Result<SweepTable> {
    let eval_t = {
        let target = train_window.1 + SWEEP_LATENCY;
        let times = distinct_times(samples);
        times
            .iter()
            .cloned()
            .min_by(|a, b| {
                (a - target)
                    .abs()
                    .partial_cmp(&(b - target).abs())
                    .expect("finite times")
            })
            .ok_or_else(|| TdxError::InsufficientData("empty stream".into()))?
    };
    let ctx = ScoringContext::new(samples, truth, train_window, 200, Some(vec![eval_t]))?;

    match sweep {
        SweepKind::MHSurface => {
            // Shared h axis covering every m: from the tightest lower
            // bound to the widest upper bound.
            let m_min = *SWEEP_M_VALUES.iter().min().expect("non-empty");
            let m_max = *SWEEP_M_VALUES.iter().max().expect("non-empty");
            let (h_lo, _) = h_bounds(&ctx.train_xs, m_max)?;
            let (_, h_hi) = h_bounds(&ctx.train_xs, m_min)?;
            let mut cells = Vec::new();
            for &m in &SWEEP_M_VALUES {
                for i in 0..SWEEP_H_GRID {
                    let h = h_lo + (h_hi - h_lo) * i as f64 / (SWEEP_H_GRID - 1) as f64;
                    cells.push(Hyperparams {
                        m,
                        h,
                        r: PHASE1_R,
                        lambda: PHASE1_LAMBDA,
                        kappa: base.kappa,
                    });
                }
            }
            let scores = score_cells(&ctx, &cells, cfg, 0);
            let rows = scores
                .iter()
                .filter_map(|c| c.mae.map(|mae| vec![c.m as f64, c.h, mae]))
                .collect();
            Ok(SweepTable {
                columns: vec!["m".into(), "h".into(), "mae".into()],
                rows,
            })
        }
        SweepKind::RLambdaHeatmap => {
            let mut cells = Vec::new();
            for &r in &SWEEP_R_VALUES {
                for &lambda in &SWEEP_LAMBDA_VALUES {
                    cells.push(Hyperparams {
                        m: base.m,
                        h: base.h,
                        r,
                        lambda,
                        kappa: base.kappa,
                    });
                }
            }
            let scores = score_cells(&ctx, &cells, cfg, 0);
            let rows = scores
                .iter()
                .filter_map(|c| c.mae.map(|mae| vec![c.r as f64, c.lambda, mae]))
                .collect();
            Ok(SweepTable {
                columns: vec!["r".into(), "lambda".into(), "mae".into()],
                rows,
            })
        }
        SweepKind::SampleCount => {
            let mut rows = Vec::new();
            for (i, &stride) in SWEEP_STRIDES.iter().enumerate() {
                let cell_cfg = SolverConfig {
                    seed: derive_seed(cfg.seed, i as u64),
                    ..*cfg
                };
                match ctx.score_subsample(base, &cell_cfg, stride) {
                    Ok((used, mae)) => rows.push(vec![stride as f64, used as f64, mae]),
                    Err(e) => log::warn!("sample-count cell n={stride} failed: {e}"),
                }
            }
            if rows.is_empty() {
                return Err(TdxError::SelectionFailure(
                    "every sample-count cell failed".into(),
                ));
            }
            Ok(SweepTable {
                columns: vec!["n".into(), "sample_size".into(), "mae".into()],
                rows,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn h_bounds_match_closed_form() {
        // Percentile spread 10 over m bases.
        let xs: Vec<f64> = (0..=1000).map(|i| i as f64 / 100.0).collect();
        let (lo, hi) = h_bounds(&xs, 10).unwrap();
        let spread = percentile(&xs, 0.99).unwrap() - percentile(&xs, 0.01).unwrap();
        assert_abs_diff_eq!(lo, spread / 10.0 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, spread / 10.0 * 1.2, epsilon = 1e-12);
        assert!(lo < hi);

        let (lo14, hi14) = h_bounds(&xs, 14).unwrap();
        assert_abs_diff_eq!(lo14, spread / 14.0 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(hi14, spread / 14.0 * 1.2, epsilon = 1e-12);
    }

    #[test]
    fn h_bounds_reject_degenerate_samples() {
        let xs = vec![3.0; 100];
        assert!(h_bounds(&xs, 10).is_err());
    }

    #[test]
    fn pick_best_applies_tie_breaks() {
        let cell = |m: usize, h: f64, mae: f64| CellScore {
            m,
            h,
            r: 2,
            lambda: 1.0,
            mae: Some(mae),
        };
        let cells = vec![cell(12, 0.5, 1.0), cell(10, 0.7, 1.0), cell(10, 0.6, 1.0)];
        let best = pick_best(&cells, phase1_tie_order).unwrap();
        assert_eq!(best.m, 10);
        assert_eq!(best.h, 0.6);

        let failed = vec![CellScore {
            m: 10,
            h: 0.5,
            r: 2,
            lambda: 1.0,
            mae: None,
        }];
        assert!(pick_best(&failed, |a, b| (a.m).cmp(&b.m)).is_err());
    }

    #[test]
    fn phase2_tie_break_prefers_larger_lambda() {
        let cell = |r: usize, lambda: f64, mae: f64| CellScore {
            m: 10,
            h: 0.5,
            r,
            lambda,
            mae: Some(mae),
        };
        let cells = vec![cell(2, 1.0, 1.0), cell(1, 3.0, 1.0), cell(1, 5.0, 1.0)];
        let best = pick_best(&cells, phase2_tie_order).unwrap();
        assert_eq!(best.r, 1);
        assert_eq!(best.lambda, 5.0);
    }
}
