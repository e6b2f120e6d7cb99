//! The learned transform g(x) = A x + b.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CondoError, Result};

/// Whether A is a full matrix or restricted to a diagonal (location-scale).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    FullAffine,
    LocationScale,
}

/// An affine map over M-dimensional feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    matrix_a: DMatrix<f64>,
    offset_b: DVector<f64>,
    kind: MapKind,
}

impl AffineMap {
    pub fn new(matrix_a: DMatrix<f64>, offset_b: DVector<f64>, kind: MapKind) -> Result<Self> {
        if !matrix_a.is_square() {
            return Err(CondoError::DimensionMismatch(format!(
                "A must be square, got {}x{}",
                matrix_a.nrows(),
                matrix_a.ncols()
            )));
        }
        if matrix_a.nrows() != offset_b.len() {
            return Err(CondoError::DimensionMismatch(format!(
                "A is {}x{} but b has length {}",
                matrix_a.nrows(),
                matrix_a.ncols(),
                offset_b.len()
            )));
        }
        if kind == MapKind::LocationScale {
            for i in 0..matrix_a.nrows() {
                for j in 0..matrix_a.ncols() {
                    if i != j && matrix_a[(i, j)] != 0.0 {
                        return Err(CondoError::Validation(format!(
                            "location_scale map has nonzero off-diagonal A[{i},{j}] = {}",
                            matrix_a[(i, j)]
                        )));
                    }
                }
            }
        }
        Ok(AffineMap {
            matrix_a,
            offset_b,
            kind,
        })
    }

    /// Builds a location-scale map from per-dimension scales and offsets.
    pub fn location_scale(scales: DVector<f64>, offsets: DVector<f64>) -> Result<Self> {
        let a = DMatrix::from_diagonal(&scales);
        AffineMap::new(a, offsets, MapKind::LocationScale)
    }

    pub fn identity(m: usize, kind: MapKind) -> Self {
        AffineMap {
            matrix_a: DMatrix::identity(m, m),
            offset_b: DVector::zeros(m),
            kind,
        }
    }

    pub fn dim(&self) -> usize {
        self.offset_b.len()
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn matrix_a(&self) -> &DMatrix<f64> {
        &self.matrix_a
    }

    pub fn offset_b(&self) -> &DVector<f64> {
        &self.offset_b
    }

    pub fn det(&self) -> f64 {
        self.matrix_a.determinant()
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(CondoError::DimensionMismatch(format!(
                "map is {}-dimensional but input has length {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(&self.matrix_a * x + &self.offset_b)
    }

    /// Applies the map row-wise: row n of the output is A . row_n + b.
    pub fn apply(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.dim() {
            return Err(CondoError::DimensionMismatch(format!(
                "map is {}-dimensional but data has {} columns",
                self.dim(),
                data.ncols()
            )));
        }
        let mut out = data * self.matrix_a.transpose();
        for mut row in out.row_iter_mut() {
            row += self.offset_b.transpose();
        }
        Ok(out)
    }

    /// The analytic inverse x -> A^-1 (x - b).
    pub fn inverse(&self) -> Result<AffineMap> {
        let inv = self.matrix_a.clone().try_inverse().ok_or_else(|| {
            CondoError::SingularMatrix("cannot invert the transform's A matrix".into())
        })?;
        let b = -(&inv * &self.offset_b);
        AffineMap::new(inv, b, self.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_is_noop() {
        let map = AffineMap::identity(2, MapKind::FullAffine);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(map.apply(&x).unwrap(), x);
    }

    #[test]
    fn diagonal_scale_and_shift() {
        let map =
            AffineMap::location_scale(DVector::from_vec(vec![2.0]), DVector::from_vec(vec![3.0]))
                .unwrap();
        let y = map.apply_vec(&DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(y[0], 5.0);
    }

    #[test]
    fn permutation_map() {
        let map = AffineMap::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DVector::zeros(2),
            MapKind::FullAffine,
        )
        .unwrap();
        let y = map.apply_vec(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn location_scale_rejects_off_diagonal() {
        let res = AffineMap::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
            MapKind::LocationScale,
        );
        assert!(matches!(res, Err(CondoError::Validation(_))));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let map = AffineMap::identity(2, MapKind::FullAffine);
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(matches!(
            map.apply(&x),
            Err(CondoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn inverse_round_trip() {
        let map = AffineMap::new(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.7, 0.0, 1.2]),
            DVector::from_vec(vec![2.0, -1.0]),
            MapKind::FullAffine,
        )
        .unwrap();
        let inv = map.inverse().unwrap();
        let x = DVector::from_vec(vec![0.3, -0.9]);
        let back = inv.apply_vec(&map.apply_vec(&x).unwrap()).unwrap();
        assert_relative_eq!(back, x, epsilon = 1e-12);
    }

    // apply is affine-linear: apply(ax + bz) = a apply(x) + b apply(z) - (a+b-1) b0.
    #[test]
    fn affine_combination_identity() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = rng.gen_range(1..=4);
            let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-2.0..2.0));
            let b = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
            let map = AffineMap::new(a, b.clone(), MapKind::FullAffine).unwrap();
            let x = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
            let z = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
            let (alpha, beta): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let lhs = map.apply_vec(&(&x * alpha + &z * beta)).unwrap();
            let rhs = map.apply_vec(&x).unwrap() * alpha + map.apply_vec(&z).unwrap() * beta
                - &b * (alpha + beta - 1.0);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12, max_relative = 1e-12);
        }
    }
}
