//! Fitting objective: temporally weighted log-likelihood, coefficient
//! regularization, and the analytic gradient used by the optimizer.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::compositional::IlrBasis;
use crate::error::{Result, TdxError};
use crate::model::{time_features, CoefficientMatrix};

/// Model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Number of basis functions.
    pub m: usize,
    /// Basis bandwidth.
    pub h: f64,
    /// Polynomial order of the weight trajectories.
    pub r: usize,
    /// Regularization strength.
    pub lambda: f64,
    /// Observation age at which the temporal weight is 0.5.
    pub kappa: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(TdxError::InvalidArgument(format!(
                "m must be at least 2, got {}",
                self.m
            )));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(TdxError::InvalidArgument(format!(
                "h must be positive, got {}",
                self.h
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(TdxError::InvalidArgument(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(TdxError::InvalidArgument(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Exponential age decay: the most recent observation gets weight 1 and an
/// observation `kappa` older gets weight 0.5.
pub fn temporal_weights(ts: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if ts.is_empty() {
        return Err(TdxError::InsufficientData(
            "temporal weights need at least one observation".into(),
        ));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(TdxError::InvalidArgument(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let newest = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rate = 0.5_f64.ln() / kappa;
    Ok(ts.iter().map(|t| (rate * (newest - t)).exp()).collect())
}

/// Precomputed per-sample quantities for one fitting problem.
///
/// Immutable after construction; the objective and gradient are pure
/// functions of `(data, coefficients)`.
#[derive(Debug, Clone)]
pub struct FitData {
    xs: Vec<f64>,
    ts: Vec<f64>,
    basis: BasisSet,
    ilr: IlrBasis,
    /// N x M basis evaluations.
    phi: Array2<f64>,
    /// N x (R+1) polynomial time features.
    feats: Array2<f64>,
    /// Temporal instance weights.
    w: Array1<f64>,
    r: usize,
}

impl FitData {
    /// Standard construction with temporal instance weights from
    /// `hp.kappa`. The basis spans `basis_range` when given, otherwise the
    /// min/max of the observed feature values.
    pub fn new(
        xs: &[f64],
        ts: &[f64],
        hp: &Hyperparams,
        basis_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        let w = temporal_weights(ts, hp.kappa)?;
        Self::with_weights(xs, ts, hp, basis_range, w)
    }

    /// Construction with all instance weights set to 1 (static variant).
    pub fn new_unweighted(
        xs: &[f64],
        ts: &[f64],
        hp: &Hyperparams,
        basis_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        Self::with_weights(xs, ts, hp, basis_range, vec![1.0; ts.len()])
    }

    fn with_weights(
        xs: &[f64],
        ts: &[f64],
        hp: &Hyperparams,
        basis_range: Option<(f64, f64)>,
        w: Vec<f64>,
    ) -> Result<Self> {
        hp.validate()?;
        if xs.is_empty() {
            return Err(TdxError::InsufficientData(
                "fit needs at least one observation".into(),
            ));
        }
        if xs.len() != ts.len() || xs.len() != w.len() {
            return Err(TdxError::InvalidArgument(format!(
                "xs, ts and weights must have equal lengths ({}, {}, {})",
                xs.len(),
                ts.len(),
                w.len()
            )));
        }
        if let Some(bad) = ts.iter().find(|t| !t.is_finite() || **t < 0.0 || **t > 1.0) {
            return Err(TdxError::InvalidArgument(format!(
                "times must lie in [0, 1], found {bad}"
            )));
        }
        if xs.len() < hp.m {
            log::warn!(
                "fitting {} basis functions on only {} observations",
                hp.m,
                xs.len()
            );
        }
        let (lo, hi) = match basis_range {
            Some(range) => range,
            None => {
                let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        };
        if !(lo < hi) {
            return Err(TdxError::InvalidArgument(format!(
                "degenerate basis range [{lo}, {hi}]"
            )));
        }
        let basis = BasisSet::new(hp.m, lo, hi, hp.h)?;
        let ilr = IlrBasis::new(hp.m)?;
        let phi = basis.eval_matrix(xs)?;
        let mut feats = Array2::zeros((ts.len(), hp.r + 1));
        for (i, &t) in ts.iter().enumerate() {
            feats.row_mut(i).assign(&time_features(hp.r, t));
        }
        Ok(Self {
            xs: xs.to_vec(),
            ts: ts.to_vec(),
            basis,
            ilr,
            phi,
            feats,
            w: Array1::from_vec(w),
            r: hp.r,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn ilr(&self) -> &IlrBasis {
        &self.ilr
    }

    pub fn order(&self) -> usize {
        self.r
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.w
    }

    pub fn times(&self) -> &[f64] {
        &self.ts
    }

    pub fn time_range(&self) -> (f64, f64) {
        let lo = self.ts.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    fn check_shape(&self, b: &Array2<f64>) -> Result<()> {
        let m = self.basis.len();
        if b.nrows() != m - 1 || b.ncols() != self.r + 1 {
            return Err(TdxError::InvalidArgument(format!(
                "coefficient matrix is {}x{}, expected {}x{}",
                b.nrows(),
                b.ncols(),
                m - 1,
                self.r + 1
            )));
        }
        Ok(())
    }
}

/// Sum of squared coefficients excluding the offset column, scaled by
/// `lambda`.
pub fn regularization_penalty(b: &CoefficientMatrix, lambda: f64) -> f64 {
    penalty_raw(b.matrix(), lambda)
}

fn penalty_raw(b: &Array2<f64>, lambda: f64) -> f64 {
    if b.ncols() < 2 {
        return 0.0;
    }
    let non_offset = b.slice(ndarray::s![.., 1..]);
    lambda * non_offset.iter().map(|v| v * v).sum::<f64>()
}

/// Temporally weighted log-likelihood of the coefficients on the data.
pub fn weighted_log_likelihood(data: &FitData, b: &CoefficientMatrix) -> Result<f64> {
    data.check_shape(b.matrix())?;
    let (ll, _) = likelihood_terms(data, b.matrix(), false)?;
    Ok(ll)
}

/// Objective in maximized form: weighted log-likelihood minus the
/// regularization penalty. The optimizer minimizes its negative.
pub fn objective_value(data: &FitData, b: &CoefficientMatrix, lambda: f64) -> Result<f64> {
    Ok(weighted_log_likelihood(data, b)? - penalty_raw(b.matrix(), lambda))
}

/// Analytic gradient of [`objective_value`] with respect to the
/// coefficients.
pub fn objective_gradient(
    data: &FitData,
    b: &CoefficientMatrix,
    lambda: f64,
) -> Result<Array2<f64>> {
    data.check_shape(b.matrix())?;
    let (_, grad) = likelihood_terms(data, b.matrix(), true)?;
    let mut grad = grad.expect("gradient requested");
    subtract_penalty_gradient(&mut grad, b.matrix(), lambda);
    Ok(grad)
}

/// Objective and gradient in one pass, sharing the exponential work.
pub(crate) fn value_and_gradient_raw(
    data: &FitData,
    b: &Array2<f64>,
    lambda: f64,
) -> Result<(f64, Array2<f64>)> {
    data.check_shape(b)?;
    let (ll, grad) = likelihood_terms(data, b, true)?;
    let mut grad = grad.expect("gradient requested");
    subtract_penalty_gradient(&mut grad, b, lambda);
    Ok((ll - penalty_raw(b, lambda), grad))
}

fn subtract_penalty_gradient(grad: &mut Array2<f64>, b: &Array2<f64>, lambda: f64) {
    // d/dB of lambda * sum of squared non-offset entries.
    if b.ncols() < 2 {
        return;
    }
    let mut non_offset = grad.slice_mut(ndarray::s![.., 1..]);
    non_offset.zip_mut_with(&b.slice(ndarray::s![.., 1..]), |g, bv| {
        *g -= 2.0 * lambda * bv;
    });
}

/// Shared likelihood computation.
///
/// Per sample the exponent vector `U B a(t_i)` is shifted by its maximum
/// before exponentiation. Both log terms shift identically, so the
/// likelihood value is exact, and the gradient only involves ratios that
/// are invariant under the shift.
fn likelihood_terms(
    data: &FitData,
    b: &Array2<f64>,
    with_gradient: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let u = data.ilr.matrix();
    let n = data.len();
    let m = data.basis.len();

    // Row i of `k` is (U B a(t_i))^T.
    let k = data.feats.dot(&b.t()).dot(&u.t());

    let mut ll = 0.0;
    // Row i collects w_i * (phi_i .* e_i / beta_phi - e_i / beta_one).
    let mut s = if with_gradient {
        Some(Array2::<f64>::zeros((n, m)))
    } else {
        None
    };
    let mut e = vec![0.0; m];
    for i in 0..n {
        let row = k.row(i);
        let shift = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(TdxError::NumericalOverflow { sample: i });
        }
        let mut beta_phi = 0.0;
        let mut beta_one = 0.0;
        for j in 0..m {
            let ej = (row[j] - shift).exp();
            e[j] = ej;
            beta_phi += data.phi[[i, j]] * ej;
            beta_one += ej;
        }
        let wi = data.w[i];
        let term = wi * (beta_phi.ln() - beta_one.ln());
        if !term.is_finite() {
            return Err(TdxError::NumericalOverflow { sample: i });
        }
        ll += term;
        if let Some(s) = s.as_mut() {
            for j in 0..m {
                s[[i, j]] = wi * (data.phi[[i, j]] * e[j] / beta_phi - e[j] / beta_one);
            }
        }
    }

    let grad = s.map(|s| u.t().dot(&s.t().dot(&data.feats)));
    Ok((ll, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn hp(m: usize, h: f64, r: usize, lambda: f64, kappa: f64) -> Hyperparams {
        Hyperparams {
            m,
            h,
            r,
            lambda,
            kappa,
        }
    }

    /// Central finite differences of the objective, step 1e-6.
    fn fd_gradient(data: &FitData, b: &Array2<f64>, lambda: f64) -> Array2<f64> {
        let step = 1e-6;
        let mut out = Array2::zeros(b.raw_dim());
        for idx in 0..b.len() {
            let (i, j) = (idx / b.ncols(), idx % b.ncols());
            let mut plus = b.clone();
            plus[[i, j]] += step;
            let mut minus = b.clone();
            minus[[i, j]] -= step;
            let f_plus =
                objective_value(data, &CoefficientMatrix::new(plus).unwrap(), lambda).unwrap();
            let f_minus =
                objective_value(data, &CoefficientMatrix::new(minus).unwrap(), lambda).unwrap();
            out[[i, j]] = (f_plus - f_minus) / (2.0 * step);
        }
        out
    }

    #[test]
    fn temporal_weights_follow_half_life() {
        let kappa = 0.1;
        let ts = vec![0.8, 0.7, 0.6];
        let w = temporal_weights(&ts, kappa).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn temporal_weights_reject_bad_input() {
        assert!(temporal_weights(&[], 0.1).is_err());
        assert!(temporal_weights(&[0.5], 0.0).is_err());
        assert!(temporal_weights(&[0.5], -1.0).is_err());
    }

    #[test]
    fn penalty_excludes_offset_column() {
        let zero = CoefficientMatrix::zeros(3, 2);
        assert_eq!(regularization_penalty(&zero, 5.0), 0.0);

        let offset_only =
            CoefficientMatrix::new(array![[4.0, 0.0, 0.0], [-7.0, 0.0, 0.0]]).unwrap();
        assert_eq!(regularization_penalty(&offset_only, 2.0), 0.0);

        let single = CoefficientMatrix::new(array![[0.0, 3.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(regularization_penalty(&single, 2.0), 18.0, epsilon = 1e-15);
    }

    #[test]
    fn penalty_is_increasing_in_lambda() {
        let b = CoefficientMatrix::new(array![[0.1, 0.4], [0.2, -0.7]]).unwrap();
        let mut last = -1.0;
        for lambda in [0.0, 0.5, 1.0, 4.0] {
            let z = regularization_penalty(&b, lambda);
            assert!(z >= 0.0);
            if lambda > 0.0 {
                assert!(z > last);
            }
            last = z;
        }
    }

    #[test]
    fn zero_coefficients_give_uniform_mixture_likelihood() {
        // Single sample at the newest time has weight 1, so the value is
        // log of the uniform two-bump mixture at x = 0.
        let hp = hp(2, 1.0, 1, 0.0, 0.5);
        let data = FitData::new(&[0.0], &[0.0], &hp, Some((0.0, 1.0))).unwrap();
        let b = CoefficientMatrix::zeros(2, 1);
        let ll = weighted_log_likelihood(&data, &b).unwrap();
        let expected = ((0.3989422804014327 + 0.24197072451914337) / 2.0_f64).ln();
        assert_abs_diff_eq!(ll, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ll, -1.1380, epsilon = 1e-4);
    }

    #[test]
    fn zero_coefficients_match_uniform_closed_form() {
        let hp = hp(4, 0.9, 2, 0.0, 0.3);
        let xs = [0.2, 3.1, 7.7, 5.0, 4.4];
        let ts = [0.1, 0.5, 0.9, 0.3, 0.7];
        let data = FitData::new(&xs, &ts, &hp, None).unwrap();
        let b = CoefficientMatrix::zeros(4, 2);
        let ll = weighted_log_likelihood(&data, &b).unwrap();

        let w = temporal_weights(&ts, hp.kappa).unwrap();
        let mut expected = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let phi = data.basis().eval(x).unwrap();
            expected += w[i] * (phi.sum() / 4.0).ln();
        }
        assert_abs_diff_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_sample_equals_doubled_weight() {
        let hp = hp(3, 1.0, 1, 0.0, 0.5);
        let b = CoefficientMatrix::new(array![[0.3, -0.2], [0.1, 0.4]]).unwrap();

        let dup = FitData::with_weights(
            &[1.0, 4.0, 4.0],
            &[0.2, 0.6, 0.6],
            &hp,
            Some((0.0, 5.0)),
            vec![0.7, 0.4, 0.4],
        )
        .unwrap();
        let single = FitData::with_weights(
            &[1.0, 4.0],
            &[0.2, 0.6],
            &hp,
            Some((0.0, 5.0)),
            vec![0.7, 0.8],
        )
        .unwrap();
        assert_abs_diff_eq!(
            weighted_log_likelihood(&dup, &b).unwrap(),
            weighted_log_likelihood(&single, &b).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn objective_invariant_under_sample_permutation() {
        let hp = hp(5, 0.8, 2, 1.5, 0.4);
        let xs = [0.5, 2.0, 3.5, 7.0, 9.1, 4.2];
        let ts = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let b = CoefficientMatrix::new(Array2::from_shape_fn((4, 3), |(i, j)| {
            0.2 * i as f64 - 0.3 * j as f64 + 0.1
        }))
        .unwrap();

        let data = FitData::new(&xs, &ts, &hp, Some((0.0, 10.0))).unwrap();
        let v1 = objective_value(&data, &b, hp.lambda).unwrap();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let xs_p: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
        let ts_p: Vec<f64> = perm.iter().map(|&i| ts[i]).collect();
        let data_p = FitData::new(&xs_p, &ts_p, &hp, Some((0.0, 10.0))).unwrap();
        let v2 = objective_value(&data_p, &b, hp.lambda).unwrap();
        assert_abs_diff_eq!(v1, v2, epsilon = 1e-12 * v1.abs().max(1.0));
    }

    #[test]
    fn zero_coefficients_have_zero_penalty_gradient() {
        let hp = hp(3, 1.0, 2, 4.0, 0.5);
        let data = FitData::new(&[0.5, 1.5], &[0.2, 0.8], &hp, Some((0.0, 2.0))).unwrap();
        let b0 = CoefficientMatrix::zeros(3, 2);
        let with_reg = objective_gradient(&data, &b0, hp.lambda).unwrap();
        let without_reg = objective_gradient(&data, &b0, 0.0).unwrap();
        for (a, b) in with_reg.iter().zip(without_reg.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &(m, r, lambda) in &[
            (2usize, 0usize, 0.0f64),
            (2, 3, 1.0),
            (10, 1, 5.0),
            (14, 2, 1.0),
            (5, 2, 0.0),
        ] {
            let n = 40;
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            let ts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let hp = hp(m, 0.9, r, lambda, 0.3);
            let data = FitData::new(&xs, &ts, &hp, Some((0.0, 10.0))).unwrap();
            let b_raw =
                Array2::from_shape_fn((m - 1, r + 1), |_| rng.random_range(-1.0..1.0));
            let b = CoefficientMatrix::new(b_raw.clone()).unwrap();

            let analytic = objective_gradient(&data, &b, lambda).unwrap();
            let numeric = fd_gradient(&data, &b_raw, lambda);
            for (a, g) in analytic.iter().zip(numeric.iter()) {
                let denom = g.abs().max(1e-8);
                assert!(
                    ((a - g) / denom).abs() < 1e-5,
                    "analytic {a} vs numeric {g} (m={m}, r={r}, lambda={lambda})"
                );
            }
        }
    }

    #[test]
    fn symmetric_data_has_zero_likelihood_gradient() {
        // Two samples mirrored about the midpoint of the two centers at one
        // shared time: the two per-sample terms cancel exactly.
        let hp = hp(2, 1.0, 0, 0.0, 0.5);
        let d = 0.3;
        let data = FitData::new(&[0.5 - d, 0.5 + d], &[0.4, 0.4], &hp, Some((0.0, 1.0))).unwrap();
        let b = CoefficientMatrix::zeros(2, 0);
        let grad = objective_gradient(&data, &b, 0.0).unwrap();
        assert_abs_diff_eq!(grad[[0, 0]], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn overflowing_coefficients_report_sample_index() {
        let hp = hp(2, 1.0, 1, 0.0, 0.5);
        let data = FitData::new(&[0.1, 0.9], &[0.0, 1.0], &hp, Some((0.0, 1.0))).unwrap();
        let b = CoefficientMatrix::new(array![[1e308, 1e308]]).unwrap();
        match weighted_log_likelihood(&data, &b) {
            Err(TdxError::NumericalOverflow { sample }) => assert_eq!(sample, 1),
            other => panic!("expected overflow error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let good = hp(3, 1.0, 1, 0.0, 0.5);
        assert!(FitData::new(&[], &[], &good, None).is_err());
        assert!(FitData::new(&[1.0], &[0.5, 0.6], &good, None).is_err());
        assert!(FitData::new(&[1.0], &[1.5], &good, None).is_err());
        assert!(FitData::new(&[1.0, 1.0], &[0.1, 0.2], &good, None).is_err());

        let data = FitData::new(&[0.0, 1.0], &[0.1, 0.2], &good, None).unwrap();
        let wrong_shape = CoefficientMatrix::zeros(4, 1);
        assert!(weighted_log_likelihood(&data, &wrong_shape).is_err());
    }
}
