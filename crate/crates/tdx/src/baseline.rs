//! Ground-truth surrogate for real data: the mean of nine spline-smoothed
//! histograms with bin counts centered on Sturges' value.

use crate::curve::DensityCurve;
use crate::error::{Result, TdxError};
use crate::stream::TimeIndexedStream;

/// Sturges' bin count `ceil(log2(s)) + 1`.
pub fn sturges_bins(s: usize) -> Result<usize> {
    if s < 1 {
        return Err(TdxError::InvalidArgument(
            "Sturges' rule needs a positive sample size".into(),
        ));
    }
    Ok((s as f64).log2().ceil() as usize + 1)
}

/// Natural cubic spline through strictly increasing knots.
///
/// Second derivatives vanish at the boundary knots; evaluation outside
/// the knot range returns 0 (the baseline treats it as out of support).
#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second_derivs: Vec<f64>,
}

impl CubicSpline {
    pub fn fit_natural(knots: &[f64], values: &[f64]) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(TdxError::InvalidArgument(format!(
                "spline needs as many values as knots ({} vs {})",
                knots.len(),
                values.len()
            )));
        }
        if knots.len() < 2 {
            return Err(TdxError::InvalidArgument(
                "spline needs at least 2 knots".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TdxError::InvalidArgument(
                "spline knots must be strictly increasing".into(),
            ));
        }

        // Tridiagonal solve for the interior second derivatives; the
        // natural boundary conditions pin both ends at zero.
        let n = knots.len();
        let mut second = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for i in 1..n - 1 {
            let sig = (knots[i] - knots[i - 1]) / (knots[i + 1] - knots[i - 1]);
            let p = sig * second[i - 1] + 2.0;
            second[i] = (sig - 1.0) / p;
            let slope_right = (values[i + 1] - values[i]) / (knots[i + 1] - knots[i]);
            let slope_left = (values[i] - values[i - 1]) / (knots[i] - knots[i - 1]);
            tmp[i] =
                (6.0 * (slope_right - slope_left) / (knots[i + 1] - knots[i - 1]) - sig * tmp[i - 1])
                    / p;
        }
        for i in (1..n - 1).rev() {
            second[i] = second[i] * second[i + 1] + tmp[i];
        }

        Ok(Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second_derivs: second,
        })
    }

    /// Spline value at `x`; 0 outside the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x < self.knots[0] || x > self.knots[n - 1] {
            return 0.0;
        }
        let idx = match self
            .knots
            .binary_search_by(|k| k.partial_cmp(&x).expect("finite knots"))
        {
            Ok(exact) => exact.min(n - 2),
            Err(insert) => insert.saturating_sub(1).min(n - 2),
        };
        let (x0, x1) = (self.knots[idx], self.knots[idx + 1]);
        let hdiff = x1 - x0;
        let a = (x1 - x) / hdiff;
        let b = (x - x0) / hdiff;
        a * self.values[idx]
            + b * self.values[idx + 1]
            + ((a * a * a - a) * self.second_derivs[idx]
                + (b * b * b - b) * self.second_derivs[idx + 1])
                * hdiff
                * hdiff
                / 6.0
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

/// Baseline density from one pooled window of samples.
///
/// For each bin count in the nine-step band around Sturges' value
/// (floored at 2 bins) an equal-width histogram over the sample range is
/// scaled to density values, a natural cubic spline is fitted through the
/// bin centers, and the spline is evaluated over `grid` with negative
/// values clamped to zero. The returned curve is the pointwise mean of
/// the nine members.
pub fn baseline_density(samples: &[f64], grid: &[f64]) -> Result<DensityCurve> {
    let s = samples.len();
    if s < 9 {
        return Err(TdxError::InsufficientData(format!(
            "baseline density needs at least 9 samples in the window, got {s}"
        )));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(TdxError::InsufficientData(
            "baseline window is degenerate (all samples equal)".into(),
        ));
    }

    let center = sturges_bins(s)? as i64;
    let mut mean = vec![0.0; grid.len()];
    let mut members = 0usize;
    for offset in -4..=4_i64 {
        let bins = (center + offset).max(2) as usize;
        let member = histogram_spline(samples, lo, hi, bins, grid)?;
        for (acc, v) in mean.iter_mut().zip(&member) {
            *acc += v;
        }
        members += 1;
    }
    for v in &mut mean {
        *v /= members as f64;
    }
    DensityCurve::new(grid.to_vec(), mean)
}

fn histogram_spline(
    samples: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let n = samples.len() as f64;
    let centers: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    let density: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / n / width)
        .collect();
    let spline = CubicSpline::fit_natural(&centers, &density)?;
    Ok(grid.iter().map(|&x| spline.eval(x).max(0.0)).collect())
}

/// Baseline density at time index `i`, pooling all samples whose time
/// index lies within `i +/- half_width` (truncated at the stream edges).
pub fn windowed_baseline(
    stream: &TimeIndexedStream,
    time_index: usize,
    half_width: usize,
    grid: &[f64],
) -> Result<DensityCurve> {
    if time_index >= stream.len() {
        return Err(TdxError::InvalidArgument(format!(
            "time index {time_index} out of range (stream has {} time points)",
            stream.len()
        )));
    }
    let lo = time_index.saturating_sub(half_width);
    let hi = (time_index + half_width).min(stream.len() - 1);
    let mut pooled = Vec::new();
    for idx in lo..=hi {
        pooled.extend_from_slice(stream.values_at(idx));
    }
    if pooled.is_empty() {
        return Err(TdxError::InsufficientData(format!(
            "window around time index {time_index} holds no samples"
        )));
    }
    baseline_density(&pooled, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forecast_grid;
    use crate::stream::StreamSample;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn sturges_closed_form() {
        assert_eq!(sturges_bins(1).unwrap(), 1);
        assert_eq!(sturges_bins(2).unwrap(), 2);
        assert_eq!(sturges_bins(64).unwrap(), 7);
        assert_eq!(sturges_bins(100).unwrap(), 8);
        assert_eq!(sturges_bins(100_000).unwrap(), 18);
        assert!(sturges_bins(0).is_err());
    }

    #[test]
    fn spline_reproduces_constants_and_lines() {
        let knots = [0.0, 1.0, 2.0, 3.0];
        let constant = CubicSpline::fit_natural(&knots, &[2.5; 4]).unwrap();
        for x in [0.0, 0.4, 1.7, 3.0] {
            assert_abs_diff_eq!(constant.eval(x), 2.5, epsilon = 1e-12);
        }

        let line = CubicSpline::fit_natural(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        for x in [0.0, 0.5, 1.25, 2.0] {
            assert_abs_diff_eq!(line.eval(x), 1.0 + 2.0 * x, epsilon = 1e-12);
        }
    }

    #[test]
    fn spline_interpolates_and_is_c2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let knots: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        let values: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spline = CubicSpline::fit_natural(&knots, &values).unwrap();

        for (k, v) in knots.iter().zip(&values) {
            assert_abs_diff_eq!(spline.eval(*k), *v, epsilon = 1e-10);
        }
        // Finite-difference second derivative matches from both sides of
        // each interior knot.
        let eps = 1e-5;
        for k in knots.iter().skip(1).take(knots.len() - 2) {
            let left =
                (spline.eval(k - 2.0 * eps) - 2.0 * spline.eval(k - eps) + spline.eval(*k))
                    / (eps * eps);
            let right =
                (spline.eval(*k) - 2.0 * spline.eval(k + eps) + spline.eval(k + 2.0 * eps))
                    / (eps * eps);
            assert_abs_diff_eq!(left, right, epsilon = 1e-2);
        }
    }

    #[test]
    fn spline_rejects_bad_knots() {
        assert!(CubicSpline::fit_natural(&[0.0], &[1.0]).is_err());
        assert!(CubicSpline::fit_natural(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(CubicSpline::fit_natural(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn spline_is_zero_outside_knots() {
        let spline = CubicSpline::fit_natural(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(spline.eval(-0.1), 0.0);
        assert_eq!(spline.eval(1.1), 0.0);
    }

    #[test]
    fn uniform_samples_give_flat_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let grid = forecast_grid(0.1, 0.9, 100).unwrap();
        let curve = baseline_density(&samples, &grid).unwrap();
        for v in curve.values() {
            assert!((v - 1.0).abs() < 0.05, "baseline value {v}");
        }
    }

    #[test]
    fn normal_samples_match_true_pdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let grid = forecast_grid(-3.0, 3.0, 200).unwrap();
        let curve = baseline_density(&samples, &grid).unwrap();
        let mut mae = 0.0;
        for (x, v) in grid.iter().zip(curve.values()) {
            let truth = 0.3989422804014327 * (-0.5 * x * x).exp();
            mae += (v - truth).abs();
        }
        mae /= grid.len() as f64;
        assert!(mae < 0.02, "baseline MAE {mae}");
    }

    #[test]
    fn baseline_values_are_clamped_nonnegative() {
        // A spiky sample forces individual splines to undershoot, but the
        // published curve must stay nonnegative.
        let mut samples = vec![0.0; 200];
        samples.extend(vec![10.0; 5000]);
        samples.extend(vec![10.4; 200]);
        let grid = forecast_grid(-0.5, 10.6, 300).unwrap();
        let curve = baseline_density(&samples, &grid).unwrap();
        assert!(curve.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn baseline_needs_nine_samples() {
        let grid = [0.0, 0.5, 1.0];
        assert!(matches!(
            baseline_density(&[1.0; 8], &grid),
            Err(TdxError::InsufficientData(_))
        ));
    }

    #[test]
    fn ensemble_mean_is_bounded_by_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let samples: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let grid = forecast_grid(-2.5, 2.5, 50).unwrap();
        let curve = baseline_density(&samples, &grid).unwrap();

        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let center = sturges_bins(samples.len()).unwrap() as i64;
        let mut members = Vec::new();
        for offset in -4..=4_i64 {
            let bins = (center + offset).max(2) as usize;
            members.push(histogram_spline(&samples, lo, hi, bins, &grid).unwrap());
        }
        for (i, v) in curve.values().iter().enumerate() {
            let lo_m = members.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
            let hi_m = members
                .iter()
                .map(|m| m[i])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(*v >= lo_m - 1e-12 && *v <= hi_m + 1e-12);
        }
    }

    #[test]
    fn baseline_error_shrinks_with_sample_size() {
        let grid = forecast_grid(-3.0, 3.0, 200).unwrap();
        let mut maes = Vec::new();
        for (seed, n) in [(7u64, 1000usize), (8, 10_000), (9, 100_000)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let curve = baseline_density(&samples, &grid).unwrap();
            let mut mae = 0.0;
            for (x, v) in grid.iter().zip(curve.values()) {
                let truth = 0.3989422804014327 * (-0.5 * x * x).exp();
                mae += (v - truth).abs();
            }
            maes.push(mae / grid.len() as f64);
        }
        assert!(maes[0] > maes[1] && maes[1] > maes[2], "maes {maes:?}");
    }

    fn indexed_stream(times: usize, per_time: usize) -> TimeIndexedStream {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut samples = Vec::new();
        for k in 0..times {
            let t = k as f64 / (times - 1) as f64;
            for _ in 0..per_time {
                samples.push(StreamSample {
                    t,
                    x: rng.sample::<f64, _>(StandardNormal),
                });
            }
        }
        TimeIndexedStream::new(&samples).unwrap()
    }

    #[test]
    fn interior_window_pools_nine_time_points() {
        let stream = indexed_stream(120, 20);
        let grid = forecast_grid(-2.0, 2.0, 50).unwrap();
        // Interior: 9 time points of 20 samples each.
        let curve = windowed_baseline(&stream, 60, 4, &grid).unwrap();
        assert_eq!(curve.len(), 50);

        // The pooled count is observable through the insufficient-data
        // bound: with 1 sample per time point an interior window holds 9.
        let tiny = indexed_stream(120, 1);
        assert!(windowed_baseline(&tiny, 60, 4, &grid).is_ok());
        assert!(windowed_baseline(&tiny, 0, 4, &grid).is_err()); // only 5 pooled
    }

    #[test]
    fn edge_windows_truncate() {
        let stream = indexed_stream(120, 2);
        let grid = forecast_grid(-2.0, 2.0, 50).unwrap();
        // Index 0 pools indices 0..=4, i.e. 10 samples; just over the
        // nine-sample floor.
        assert!(windowed_baseline(&stream, 0, 4, &grid).is_ok());
        assert!(windowed_baseline(&stream, 130, 4, &grid).is_err());
    }

    #[test]
    fn stationary_stream_has_stable_adjacent_baselines() {
        let stream = indexed_stream(40, 600);
        let grid = forecast_grid(-2.5, 2.5, 200).unwrap();
        let a = windowed_baseline(&stream, 20, 4, &grid).unwrap();
        let b = windowed_baseline(&stream, 21, 4, &grid).unwrap();
        let mae: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mae < 0.02, "adjacent baseline MAE {mae}");
    }
}
