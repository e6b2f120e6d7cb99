//! Evaluation metrics: rMSE against oracle features, silhouette score, and
//! fixed-hyperplane classifier accuracy for 2-d scenarios.

use nalgebra::DMatrix;

use crate::error::{CondoError, Result};

/// Root mean squared error over all N x M entries.
pub fn rmse(adapted: &DMatrix<f64>, oracle: &DMatrix<f64>) -> Result<f64> {
    if adapted.shape() != oracle.shape() {
        return Err(CondoError::DimensionMismatch(format!(
            "rmse shapes differ: {:?} vs {:?}",
            adapted.shape(),
            oracle.shape()
        )));
    }
    let n = (adapted.nrows() * adapted.ncols()) as f64;
    let sum: f64 = adapted
        .iter()
        .zip(oracle.iter())
        .map(|(a, o)| (a - o) * (a - o))
        .sum();
    Ok((sum / n).sqrt())
}

/// Mean silhouette score with Euclidean distances: s(i) = (b - a)/max(a, b),
/// `a` the mean distance to the sample's own cluster and `b` the smallest
/// mean distance to another cluster. Samples in singleton clusters score 0.
pub fn silhouette(features: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(CondoError::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(CondoError::InvalidArgument(
            "silhouette needs at least 2 distinct labels".into(),
        ));
    }

    let dist = |a: usize, b: usize| -> f64 {
        let mut acc = 0.0;
        for j in 0..features.ncols() {
            let d = features[(a, j)] - features[(b, j)];
            acc += d * d;
        }
        acc.sqrt()
    };

    let mut total = 0.0;
    for i in 0..n {
        if counts[labels[i]] == 1 {
            continue; // singleton scores 0
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
            }
        }
        let a = sums[labels[i]] / (counts[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

/// Fraction of samples on the correct side of the fixed hyperplane
/// w . x - c = 0: a sample agrees when sign(w . x - c) > 0 matches its label.
pub fn fixed_classifier_accuracy(
    features: &DMatrix<f64>,
    labels: &[bool],
    w: [f64; 2],
    c: f64,
) -> Result<f64> {
    if features.ncols() != 2 {
        return Err(CondoError::DimensionMismatch(format!(
            "fixed classifiers are 2-dimensional, features have {} columns",
            features.ncols()
        )));
    }
    if labels.len() != features.nrows() {
        return Err(CondoError::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            features.nrows()
        )));
    }
    let hits = (0..features.nrows())
        .filter(|&r| {
            let score = w[0] * features[(r, 0)] + w[1] * features[(r, 1)] - c;
            (score > 0.0) == labels[r]
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// The up-vs-down hyperplane of the two-circles scenario: x_1 = 1.
pub const UP_DOWN_CLASSIFIER: ([f64; 2], f64) = ([0.0, 1.0], 1.0);
/// The left-vs-right hyperplane of the two-circles scenario: x_0 = 0.
pub const LEFT_RIGHT_CLASSIFIER: ([f64; 2], f64) = ([1.0, 0.0], 0.0);

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn rmse_identical_is_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn rmse_constant_difference() {
        let a = DMatrix::from_element(3, 2, 5.0);
        let b = DMatrix::from_element(3, 2, 3.0);
        assert_relative_eq!(rmse(&a, &b).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn rmse_hand_arithmetic() {
        let a = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        assert_relative_eq!(
            rmse(&a, &b).unwrap(),
            (25.0f64 / 2.0).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn rmse_shape_mismatch() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(3, 2);
        assert!(matches!(
            rmse(&a, &b),
            Err(CondoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn rmse_row_permutation_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let a = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-2.0..2.0));
        let b = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-2.0..2.0));
        let perm = [2usize, 0, 4, 1, 3];
        let ap = DMatrix::from_fn(5, 2, |r, c| a[(perm[r], c)]);
        let bp = DMatrix::from_fn(5, 2, |r, c| b[(perm[r], c)]);
        assert_relative_eq!(
            rmse(&a, &b).unwrap(),
            rmse(&ap, &bp).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn silhouette_separated_clusters() {
        // {0, 0.1} vs {10, 10.1}: score (hand-evaluated) is 0.99005.
        let f = DMatrix::from_column_slice(4, 1, &[0.0, 0.1, 10.0, 10.1]);
        let s = silhouette(&f, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.97, "score {s}");
        // Outer points see b = 10.05, inner points b = 9.95; a = 0.1 for all.
        let expect = 0.5 * ((10.05 - 0.1) / 10.05 + (9.95 - 0.1) / 9.95);
        assert_relative_eq!(s, expect, epsilon = 1e-10);
    }

    #[test]
    fn silhouette_random_labels_near_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let f = DMatrix::from_fn(200, 2, |_, _| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..2)).collect();
        let s = silhouette(&f, &labels).unwrap();
        assert!(s.abs() < 0.1, "score {s}");
    }

    #[test]
    fn silhouette_identical_points_different_labels() {
        let f = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let s = silhouette(&f, &[0, 1]).unwrap();
        assert!(s <= 0.0);
    }

    #[test]
    fn silhouette_single_label_is_an_error() {
        let f = DMatrix::zeros(3, 1);
        assert!(matches!(
            silhouette(&f, &[0, 0, 0]),
            Err(CondoError::InvalidArgument(_))
        ));
    }

    #[test]
    fn silhouette_rigid_motion_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let f = DMatrix::from_fn(30, 2, |_, _| rng.gen_range(-2.0..2.0));
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let s1 = silhouette(&f, &labels).unwrap();
        let theta = 0.7f64;
        let rot =
            DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let mut g = &f * rot.transpose();
        for mut row in g.row_iter_mut() {
            row[0] += 5.0;
            row[1] -= 2.0;
        }
        let s2 = silhouette(&g, &labels).unwrap();
        assert_relative_eq!(s1, s2, epsilon = 1e-10);
    }

    #[test]
    fn classifier_accuracy_and_complement() {
        let f = DMatrix::from_row_slice(4, 2, &[0.0, 2.0, 0.0, 1.5, 0.0, 0.5, 0.0, -1.0]);
        let labels = [true, true, false, false];
        let (w, c) = UP_DOWN_CLASSIFIER;
        let acc = fixed_classifier_accuracy(&f, &labels, w, c).unwrap();
        assert_eq!(acc, 1.0);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let acc_flipped = fixed_classifier_accuracy(&f, &flipped, w, c).unwrap();
        assert_relative_eq!(acc_flipped, 1.0 - acc, epsilon = 1e-15);
    }

    #[test]
    fn classifier_requires_two_columns() {
        let f = DMatrix::zeros(2, 3);
        assert!(matches!(
            fixed_classifier_accuracy(&f, &[true, false], [1.0, 0.0], 0.0),
            Err(CondoError::DimensionMismatch(_))
        ));
    }
}
