//! Fixed Gaussian basis functions.
//!
//! The density model is a weighted sum of `m` unit-mass Gaussian bumps at
//! evenly spaced centers with a common bandwidth. The basis never changes
//! after construction; only the mixture weights evolve over time.

use ndarray::{Array1, Array2};

use crate::error::{Result, TdxError};

/// Floor applied to basis evaluations so that log-likelihoods stay finite
/// for samples far outside the basis range.
const DENSITY_FLOOR: f64 = 1e-300;

const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// `m` Gaussian bumps at equidistant centers with common standard
/// deviation `bandwidth`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    centers: Array1<f64>,
    bandwidth: f64,
}

impl BasisSet {
    /// Places `m` centers evenly over `[lo, hi]`, endpoints inclusive.
    pub fn new(m: usize, lo: f64, hi: f64, bandwidth: f64) -> Result<Self> {
        if m < 2 {
            return Err(TdxError::InvalidArgument(format!(
                "basis needs at least 2 functions, got {m}"
            )));
        }
        if !(lo < hi) {
            return Err(TdxError::InvalidArgument(format!(
                "basis range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(TdxError::InvalidArgument(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        let gap = (hi - lo) / (m - 1) as f64;
        let centers = Array1::from_iter((0..m).map(|j| lo + gap * j as f64));
        Ok(Self { centers, bandwidth })
    }

    /// Rebuilds a basis from persisted centers, validating spacing.
    pub fn from_centers(centers: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if centers.len() < 2 {
            return Err(TdxError::Schema(format!(
                "persisted basis needs at least 2 centers, got {}",
                centers.len()
            )));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(TdxError::Schema(format!(
                "persisted bandwidth must be positive, got {bandwidth}"
            )));
        }
        let gap = centers[1] - centers[0];
        if !(gap > 0.0) {
            return Err(TdxError::Schema(
                "persisted centers must be strictly increasing".into(),
            ));
        }
        for w in centers.windows(2) {
            let g = w[1] - w[0];
            if ((g - gap) / gap).abs() > 1e-9 {
                return Err(TdxError::Schema(
                    "persisted centers must be equidistant".into(),
                ));
            }
        }
        Ok(Self {
            centers: Array1::from_vec(centers),
            bandwidth,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &Array1<f64> {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Lower and upper center.
    pub fn range(&self) -> (f64, f64) {
        (self.centers[0], self.centers[self.centers.len() - 1])
    }

    /// Evaluates all basis functions at `x`.
    ///
    /// Entry `j` is the Gaussian pdf with mean `centers[j]` and standard
    /// deviation `bandwidth`, floored at 1e-300 so that downstream logs
    /// stay finite.
    pub fn eval(&self, x: f64) -> Result<Array1<f64>> {
        if !x.is_finite() {
            return Err(TdxError::Domain(format!(
                "basis evaluation point must be finite, got {x}"
            )));
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: f64) -> Array1<f64> {
        let norm = INV_SQRT_2PI / self.bandwidth;
        self.centers.mapv(|mu| {
            let z = (x - mu) / self.bandwidth;
            (norm * (-0.5 * z * z).exp()).max(DENSITY_FLOOR)
        })
    }

    /// Evaluates the basis at every point: row `i` is `eval(xs[i])`.
    pub fn eval_matrix(&self, xs: &[f64]) -> Result<Array2<f64>> {
        if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
            return Err(TdxError::Domain(format!(
                "basis evaluation points must be finite, found {bad}"
            )));
        }
        let m = self.len();
        let mut out = Array2::zeros((xs.len(), m));
        for (i, &x) in xs.iter().enumerate() {
            out.row_mut(i).assign(&self.eval_unchecked(x));
        }
        Ok(out)
    }
}
