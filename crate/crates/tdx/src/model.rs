//! The fitted density model: polynomial time features, the weight
//! trajectory over time, and density evaluation at arbitrary `(x, t)`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::compositional::{Composition, IlrBasis};
use crate::curve::DensityCurve;
use crate::error::{Result, TdxError};

/// Regression coefficients: row `j` holds the polynomial coefficients of
/// the j-th ilr coordinate, column `k` the coefficient of `t^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    b: Array2<f64>,
}

impl CoefficientMatrix {
    pub fn new(b: Array2<f64>) -> Result<Self> {
        if let Some(bad) = b.iter().find(|v| !v.is_finite()) {
            return Err(TdxError::Domain(format!(
                "coefficients must be finite, found {bad}"
            )));
        }
        Ok(Self { b })
    }

    pub fn zeros(m: usize, r: usize) -> Self {
        Self {
            b: Array2::zeros((m - 1, r + 1)),
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.b
    }

    /// (rows, cols) = (M-1, R+1).
    pub fn shape(&self) -> (usize, usize) {
        (self.b.nrows(), self.b.ncols())
    }
}

/// Polynomial time features `(t^0, t^1, ..., t^r)`.
pub fn time_features(r: usize, t: f64) -> Array1<f64> {
    let mut a = Array1::zeros(r + 1);
    let mut p = 1.0;
    for k in 0..=r {
        a[k] = p;
        p *= t;
    }
    a
}

/// A fitted temporal density model.
///
/// Evaluation is pure; the model is immutable after fitting and can be
/// shared freely across threads.
#[derive(Debug, Clone)]
pub struct TdxModel {
    basis: BasisSet,
    ilr: IlrBasis,
    coeffs: CoefficientMatrix,
    r: usize,
    train_time_range: (f64, f64),
    kappa: f64,
    lambda: f64,
}

impl TdxModel {
    pub fn new(
        basis: BasisSet,
        coeffs: CoefficientMatrix,
        r: usize,
        train_time_range: (f64, f64),
        kappa: f64,
        lambda: f64,
    ) -> Result<Self> {
        let m = basis.len();
        let (rows, cols) = coeffs.shape();
        if rows != m - 1 || cols != r + 1 {
            return Err(TdxError::InvalidArgument(format!(
                "coefficient matrix is {rows}x{cols}, expected {}x{} for m={m}, r={r}",
                m - 1,
                r + 1
            )));
        }
        if !(train_time_range.0 < train_time_range.1) {
            return Err(TdxError::InvalidArgument(format!(
                "training time range must satisfy t_lo < t_hi, got [{}, {}]",
                train_time_range.0, train_time_range.1
            )));
        }
        let ilr = IlrBasis::new(m)?;
        Ok(Self {
            basis,
            ilr,
            coeffs,
            r,
            train_time_range,
            kappa,
            lambda,
        })
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn coefficients(&self) -> &CoefficientMatrix {
        &self.coeffs
    }

    pub fn order(&self) -> usize {
        self.r
    }

    pub fn train_time_range(&self) -> (f64, f64) {
        self.train_time_range
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Mixture weights at time `t`. Extrapolation beyond the training
    /// window is the intended use, so `t` is unrestricted apart from
    /// finiteness.
    pub fn weight_trajectory(&self, t: f64) -> Result<Composition> {
        if !t.is_finite() {
            return Err(TdxError::Domain(format!("time must be finite, got {t}")));
        }
        let v = self.coeffs.matrix().dot(&time_features(self.r, t));
        self.ilr.inverse(v.view())
    }

    /// Density estimate at feature value `x` and time `t`.
    pub fn density_at(&self, x: f64, t: f64) -> Result<f64> {
        let gamma = self.weight_trajectory(t)?;
        let phi = self.basis.eval(x)?;
        Ok(phi.dot(&gamma.weights()))
    }

    /// Density along a grid at a fixed time.
    pub fn density_curve(&self, t: f64, grid: &[f64]) -> Result<DensityCurve> {
        let gamma = self.weight_trajectory(t)?;
        let phi = self.basis.eval_matrix(grid)?;
        let values = phi.dot(&gamma.weights());
        DensityCurve::new(grid.to_vec(), values.to_vec())
    }

    /// Saves the model as versioned JSON.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            m: self.basis.len(),
            h: self.basis.bandwidth(),
            centers: self.basis.centers().to_vec(),
            r: self.r,
            b: self.coeffs.matrix().iter().cloned().collect(),
            t_lo: self.train_time_range.0,
            t_hi: self.train_time_range.1,
            kappa: self.kappa,
            lambda: self.lambda,
        };
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    /// Loads a model saved by [`TdxModel::save_json`].
    pub fn load_json(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let file: ModelFile = serde_json::from_reader(reader)
            .map_err(|e| TdxError::Schema(format!("model file does not parse: {e}")))?;
        Self::from_model_file(file)
    }

    /// Parses a model from its JSON text form.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)
            .map_err(|e| TdxError::Schema(format!("model json does not parse: {e}")))?;
        Self::from_model_file(file)
    }

    /// Serializes the model to its JSON text form.
    pub fn to_json_string(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            m: self.basis.len(),
            h: self.basis.bandwidth(),
            centers: self.basis.centers().to_vec(),
            r: self.r,
            b: self.coeffs.matrix().iter().cloned().collect(),
            t_lo: self.train_time_range.0,
            t_hi: self.train_time_range.1,
            kappa: self.kappa,
            lambda: self.lambda,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    fn from_model_file(file: ModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(TdxError::Schema(format!(
                "unsupported model file version {} (expected {MODEL_FILE_VERSION})",
                file.version
            )));
        }
        if file.centers.len() != file.m {
            return Err(TdxError::Schema(format!(
                "model file declares m={} but has {} centers",
                file.m,
                file.centers.len()
            )));
        }
        let expected = (file.m - 1) * (file.r + 1);
        if file.b.len() != expected {
            return Err(TdxError::Schema(format!(
                "model file has {} coefficients, expected {expected} for m={}, r={}",
                file.b.len(),
                file.m,
                file.r
            )));
        }
        let basis = BasisSet::from_centers(file.centers, file.h)?;
        let b = Array2::from_shape_vec((file.m - 1, file.r + 1), file.b)
            .map_err(|e| TdxError::Schema(format!("coefficient shape error: {e}")))?;
        Self::new(
            basis,
            CoefficientMatrix::new(b)?,
            file.r,
            (file.t_lo, file.t_hi),
            file.kappa,
            file.lambda,
        )
    }
}

const MODEL_FILE_VERSION: u32 = 1;

/// On-disk model schema. Coefficients are stored row-major.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    m: usize,
    h: f64,
    centers: Vec<f64>,
    r: usize,
    b: Vec<f64>,
    t_lo: f64,
    t_hi: f64,
    kappa: f64,
    lambda: f64,
}

/// `n` equally spaced points over `[lo, hi]`, endpoints inclusive.
pub fn forecast_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(TdxError::InvalidArgument(format!(
            "grid bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    if n < 2 {
        return Err(TdxError::InvalidArgument(format!(
            "grid needs at least 2 points, got {n}"
        )));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|k| lo + step * k as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_model(m: usize, r: usize) -> TdxModel {
        let basis = BasisSet::new(m, 0.0, 1.0, 1.0).unwrap();
        TdxModel::new(
            basis,
            CoefficientMatrix::zeros(m, r),
            r,
            (0.0, 1.0),
            0.5,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn time_features_are_monomials() {
        let a = time_features(2, 0.5);
        assert_eq!(a.to_vec(), vec![1.0, 0.5, 0.25]);
        assert_eq!(time_features(0, 7.3).to_vec(), vec![1.0]);
        assert_eq!(time_features(3, 0.0).to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_coefficients_give_uniform_weights() {
        let model = uniform_model(4, 2);
        for t in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let gamma = model.weight_trajectory(t).unwrap();
            for w in gamma.weights() {
                assert_abs_diff_eq!(*w, 0.25, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn constant_two_part_trajectory_matches_closed_form() {
        // A single offset coefficient ln(3)/sqrt(2) pins the weights at
        // (0.25, 0.75) for every t.
        let basis = BasisSet::new(2, 0.0, 1.0, 1.0).unwrap();
        let b = Array2::from_shape_vec((1, 1), vec![3.0_f64.ln() / 2.0_f64.sqrt()]).unwrap();
        let model = TdxModel::new(
            basis,
            CoefficientMatrix::new(b).unwrap(),
            0,
            (0.0, 1.0),
            0.5,
            0.0,
        )
        .unwrap();
        for t in [0.0, 0.3, 1.0, 5.0] {
            let gamma = model.weight_trajectory(t).unwrap();
            assert_abs_diff_eq!(gamma.weights()[0], 0.25, epsilon = 1e-12);
            assert_abs_diff_eq!(gamma.weights()[1], 0.75, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_always_sum_to_one() {
        let basis = BasisSet::new(5, 0.0, 12.0, 0.9).unwrap();
        let b = Array2::from_shape_fn((4, 3), |(i, j)| 0.3 * (i as f64 + 1.0) - 0.2 * j as f64);
        let model = TdxModel::new(
            basis,
            CoefficientMatrix::new(b).unwrap(),
            2,
            (0.0, 1.0),
            0.5,
            1.0,
        )
        .unwrap();
        for t in [-1.0, 0.0, 0.5, 1.0, 2.0] {
            let sum: f64 = model.weight_trajectory(t).unwrap().weights().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_two_bump_density_matches_hand_value() {
        // B = 0, centers (0, 1), h = 1: density at x 0 is the mean of the
        // standard normal pdf at 0 and at 1.
        let model = uniform_model(2, 1);
        let expected = (0.3989422804014327 + 0.24197072451914337) / 2.0;
        for t in [0.0, 0.7, 3.0] {
            assert_abs_diff_eq!(model.density_at(0.0, t).unwrap(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn density_curve_matches_pointwise_evaluation() {
        let basis = BasisSet::new(6, 0.0, 10.0, 1.1).unwrap();
        let b = Array2::from_shape_fn((5, 2), |(i, j)| 0.15 * i as f64 - 0.4 * j as f64);
        let model = TdxModel::new(
            basis,
            CoefficientMatrix::new(b).unwrap(),
            1,
            (0.2, 0.8),
            0.3,
            2.0,
        )
        .unwrap();
        let grid = forecast_grid(-1.0, 11.0, 37).unwrap();
        let curve = model.density_curve(0.9, &grid).unwrap();
        for (i, &x) in grid.iter().enumerate() {
            assert_abs_diff_eq!(
                curve.values()[i],
                model.density_at(x, 0.9).unwrap(),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn static_model_is_time_invariant() {
        let model = uniform_model(3, 0);
        let grid = forecast_grid(0.0, 1.0, 11).unwrap();
        let c0 = model.density_curve(0.0, &grid).unwrap();
        let c1 = model.density_curve(1.0, &grid).unwrap();
        assert_eq!(c0, c1);
    }

    #[test]
    fn forecast_grid_examples() {
        assert_eq!(forecast_grid(0.0, 1.0, 2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(
            forecast_grid(0.0, 1.0, 5).unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        let g = forecast_grid(0.0, 12.0, 200).unwrap();
        assert_eq!(g.len(), 200);
        assert_abs_diff_eq!(g[1] - g[0], 12.0 / 199.0, epsilon = 1e-15);
        assert!(forecast_grid(1.0, 0.0, 5).is_err());
        assert!(forecast_grid(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let basis = BasisSet::new(4, 0.5, 9.5, 0.75).unwrap();
        let b = Array2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64 * 0.11 - 0.2);
        let model = TdxModel::new(
            basis,
            CoefficientMatrix::new(b).unwrap(),
            2,
            (0.1, 0.9),
            0.4,
            1.5,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save_json(&path).unwrap();
        let back = TdxModel::load_json(&path).unwrap();
        assert_eq!(model.basis(), back.basis());
        assert_eq!(model.coefficients(), back.coefficients());
        assert_eq!(model.order(), back.order());
        assert_eq!(model.train_time_range(), back.train_time_range());
        assert_eq!(model.kappa(), back.kappa());
        assert_eq!(model.lambda(), back.lambda());
    }

    #[test]
    fn corrupt_model_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");

        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            TdxModel::load_json(&path),
            Err(TdxError::Schema(_))
        ));

        std::fs::write(
            &path,
            r#"{"version":99,"m":2,"h":1.0,"centers":[0.0,1.0],"r":0,"b":[0.0],"t_lo":0.0,"t_hi":1.0,"kappa":0.5,"lambda":0.0}"#,
        )
        .unwrap();
        assert!(matches!(
            TdxModel::load_json(&path),
            Err(TdxError::Schema(_))
        ));

        // Wrong coefficient count for the declared shape.
        std::fs::write(
            &path,
            r#"{"version":1,"m":3,"h":1.0,"centers":[0.0,0.5,1.0],"r":1,"b":[0.0,0.0,0.0],"t_lo":0.0,"t_hi":1.0,"kappa":0.5,"lambda":0.0}"#,
        )
        .unwrap();
        assert!(matches!(
            TdxModel::load_json(&path),
            Err(TdxError::Schema(_))
        ));
    }

    #[test]
    fn density_integrates_to_one() {
        let basis = BasisSet::new(7, 0.0, 12.0, 0.8).unwrap();
        let b = Array2::from_shape_fn((6, 2), |(i, j)| 0.2 * i as f64 + 0.1 * j as f64 - 0.5);
        let model = TdxModel::new(
            basis,
            CoefficientMatrix::new(b).unwrap(),
            1,
            (0.0, 1.0),
            0.5,
            1.0,
        )
        .unwrap();
        let h = model.basis().bandwidth();
        let (lo, hi) = model.basis().range();
        let (lo, hi) = (lo - 10.0 * h, hi + 10.0 * h);
        let n = 20_000;
        let step = (hi - lo) / n as f64;
        for t in [0.0, 0.5, 1.5] {
            let mut acc = 0.0;
            for k in 0..=n {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                acc += w * model.density_at(lo + step * k as f64, t).unwrap();
            }
            assert_abs_diff_eq!(acc * step, 1.0, epsilon = 1e-6);
        }
    }
}
