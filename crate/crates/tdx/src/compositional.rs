//! Isometric log-ratio transform between the M-part simplex and R^(M-1).
//!
//! Mixture weights of the density model live on a simplex (positive, summing
//! to one). The ilr transform maps them to an unconstrained Euclidean space
//! where they can be modelled by ordinary regression, and back.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Result, TdxError};

/// A vector of strictly positive proportions summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    weights: Array1<f64>,
}

impl Composition {
    /// Validates positivity and the unit-sum constraint (tolerance 1e-12).
    pub fn new(weights: Array1<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(TdxError::InvalidArgument(format!(
                "composition needs at least 2 parts, got {}",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(TdxError::Domain(format!(
                "composition weights must be strictly positive, found {w}"
            )));
        }
        let sum: f64 = weights.sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(TdxError::Domain(format!(
                "composition weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Orthonormal ilr basis for compositions of `m` parts.
///
/// `u` is an M x (M-1) matrix with orthonormal, zero-sum columns. It is
/// built once per model; both transform directions are pure functions.
#[derive(Debug, Clone)]
pub struct IlrBasis {
    m: usize,
    u: Array2<f64>,
}

impl IlrBasis {
    /// Builds the basis for `m >= 2` parts.
    ///
    /// Column `j` (1-based) starts from the sign pattern (-1 in the first
    /// `j` rows, `j` in row `j+1`, zero below) and is normalized to unit
    /// Euclidean length.
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(TdxError::InvalidArgument(format!(
                "ilr basis needs at least 2 parts, got {m}"
            )));
        }
        let mut u = Array2::zeros((m, m - 1));
        for j in 1..m {
            // ||column_j||^2 = j * 1 + j^2 = j (j + 1)
            let norm = ((j * (j + 1)) as f64).sqrt();
            for i in 0..j {
                u[[i, j - 1]] = -1.0 / norm;
            }
            u[[j, j - 1]] = j as f64 / norm;
        }
        Ok(Self { m, u })
    }

    pub fn parts(&self) -> usize {
        self.m
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.u
    }

    /// Maps a composition to its ilr coordinates `U^T log(gamma)`.
    pub fn forward(&self, gamma: &Composition) -> Result<Array1<f64>> {
        if gamma.len() != self.m {
            return Err(TdxError::InvalidArgument(format!(
                "composition has {} parts, basis expects {}",
                gamma.len(),
                self.m
            )));
        }
        let logs = gamma.weights().mapv(f64::ln);
        Ok(self.u.t().dot(&logs))
    }

    /// Maps ilr coordinates back to the simplex: `exp(Uv) / sum(exp(Uv))`.
    ///
    /// The exponent vector is shifted by its maximum before exponentiation;
    /// the ratio is invariant under the shift, so the result is exact while
    /// staying finite for arbitrarily large coordinates.
    pub fn inverse(&self, v: ArrayView1<'_, f64>) -> Result<Composition> {
        if v.len() != self.m - 1 {
            return Err(TdxError::InvalidArgument(format!(
                "ilr coordinates have length {}, basis expects {}",
                v.len(),
                self.m - 1
            )));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(TdxError::Domain(format!(
                "ilr coordinates must be finite, found {bad}"
            )));
        }
        let uv = self.u.dot(&v);
        Ok(softmax(uv.view()))
    }
}

/// Shift-invariant softmax onto the simplex. Inputs must be finite.
pub(crate) fn softmax(logits: ArrayView1<'_, f64>) -> Composition {
    let shift = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = logits.mapv(|x| (x - shift).exp());
    let total = e.sum();
    e /= total;
    Composition { weights: e }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn basis_m3_matches_closed_form() {
        let basis = IlrBasis::new(3).unwrap();
        let s2 = 2.0_f64.sqrt();
        let s6 = 6.0_f64.sqrt();
        let expected = array![[-1.0 / s2, -1.0 / s6], [1.0 / s2, -1.0 / s6], [0.0, 2.0 / s6]];
        for (a, b) in basis.matrix().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn basis_m2_matches_closed_form() {
        let basis = IlrBasis::new(2).unwrap();
        let s2 = 2.0_f64.sqrt();
        assert_abs_diff_eq!(basis.matrix()[[0, 0]], -1.0 / s2, epsilon = 1e-15);
        assert_abs_diff_eq!(basis.matrix()[[1, 0]], 1.0 / s2, epsilon = 1e-15);
    }

    #[test]
    fn basis_rejects_m_below_two() {
        assert!(IlrBasis::new(0).is_err());
        assert!(IlrBasis::new(1).is_err());
    }

    #[test]
    fn columns_orthonormal_and_zero_sum_up_to_64() {
        for m in 2..=64 {
            let basis = IlrBasis::new(m).unwrap();
            let u = basis.matrix();
            let gram = u.t().dot(u);
            for i in 0..m - 1 {
                for j in 0..m - 1 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(gram[[i, j]], expect, epsilon = 1e-12);
                }
                let col_sum: f64 = u.column(i).sum();
                assert_abs_diff_eq!(col_sum, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_uniform_maps_to_origin() {
        let basis = IlrBasis::new(2).unwrap();
        let gamma = Composition::new(array![0.5, 0.5]).unwrap();
        let v = basis.forward(&gamma).unwrap();
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn forward_two_part_closed_form() {
        // v = (log(0.75) - log(0.25)) / sqrt(2) = ln(3)/sqrt(2)
        let basis = IlrBasis::new(2).unwrap();
        let gamma = Composition::new(array![0.25, 0.75]).unwrap();
        let v = basis.forward(&gamma).unwrap();
        assert_abs_diff_eq!(v[0], 3.0_f64.ln() / 2.0_f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn inverse_zero_vector_is_uniform() {
        let basis = IlrBasis::new(5).unwrap();
        let gamma = basis.inverse(Array1::zeros(4).view()).unwrap();
        for w in gamma.weights() {
            assert_abs_diff_eq!(*w, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn inverse_two_part_closed_form() {
        let basis = IlrBasis::new(2).unwrap();
        let v = array![3.0_f64.ln() / 2.0_f64.sqrt()];
        let gamma = basis.inverse(v.view()).unwrap();
        assert_abs_diff_eq!(gamma.weights()[0], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(gamma.weights()[1], 0.75, epsilon = 1e-14);
    }

    #[test]
    fn inverse_survives_huge_coordinates() {
        let basis = IlrBasis::new(3).unwrap();
        let gamma = basis.inverse(array![0.0, 1e4].view()).unwrap();
        let sum: f64 = gamma.weights().sum();
        assert!(gamma.weights().iter().all(|w| w.is_finite()));
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_rejects_non_finite() {
        let basis = IlrBasis::new(3).unwrap();
        assert!(basis.inverse(array![f64::NAN, 0.0].view()).is_err());
        assert!(basis.inverse(array![f64::INFINITY, 0.0].view()).is_err());
    }

    #[test]
    fn composition_validation() {
        assert!(Composition::new(array![0.5, 0.5]).is_ok());
        assert!(Composition::new(array![0.0, 1.0]).is_err());
        assert!(Composition::new(array![-0.1, 1.1]).is_err());
        assert!(Composition::new(array![0.4, 0.4]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_recovers_composition(raw in prop::collection::vec(1e-6f64..1.0, 2..16)) {
            let total: f64 = raw.iter().sum();
            let weights = Array1::from_iter(raw.iter().map(|w| w / total));
            // Normalization rounding can leave the sum a few ulps off; re-close it.
            let gamma = Composition::new(&weights / weights.sum()).unwrap();
            let basis = IlrBasis::new(gamma.len()).unwrap();
            let v = basis.forward(&gamma).unwrap();
            let back = basis.inverse(v.view()).unwrap();
            for (a, b) in back.weights().iter().zip(gamma.weights().iter()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn inverse_lands_on_simplex(v in prop::collection::vec(-30.0f64..30.0, 1..12)) {
            let basis = IlrBasis::new(v.len() + 1).unwrap();
            let gamma = basis.inverse(Array1::from_vec(v).view()).unwrap();
            let sum: f64 = gamma.weights().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            // The largest part can round to exactly 1.0 when coordinates are
            // extreme, so only positivity is strict here.
            prop_assert!(gamma.weights().iter().all(|w| *w > 0.0 && *w <= 1.0));
        }

        #[test]
        fn inverse_is_interior_for_moderate_coordinates(v in prop::collection::vec(-4.0f64..4.0, 1..8)) {
            let basis = IlrBasis::new(v.len() + 1).unwrap();
            let gamma = basis.inverse(Array1::from_vec(v).view()).unwrap();
            prop_assert!(gamma.weights().iter().all(|w| *w > 0.0 && *w < 1.0));
        }
    }
}
