//! Small order-statistics helpers shared by the harness modules.

use crate::error::{Result, TdxError};

/// Percentile by linear interpolation of order statistics, `p` in [0, 1].
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(TdxError::InsufficientData(
            "percentile of an empty sample".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(TdxError::InvalidArgument(format!(
            "percentile level must lie in [0, 1], got {p}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> Result<f64> {
    percentile(values, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn percentile_interpolates_order_statistics() {
        let values = [4.0, 1.0, 3.0, 2.0];
        assert_abs_diff_eq!(percentile(&values, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(percentile(&values, 1.0).unwrap(), 4.0);
        assert_abs_diff_eq!(percentile(&values, 0.5).unwrap(), 2.5);
        assert_abs_diff_eq!(percentile(&values, 1.0 / 3.0).unwrap(), 2.0);
    }

    #[test]
    fn median_of_odd_sample_is_middle_value() {
        assert_abs_diff_eq!(median(&[5.0, 1.0, 3.0]).unwrap(), 3.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&[1.0], 1.5).is_err());
    }
}
