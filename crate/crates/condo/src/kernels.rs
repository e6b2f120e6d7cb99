//! Feature-space and confounder-space kernels.
//!
//! The feature kernel is a per-dimension (ARD) RBF whose bandwidths are
//! recomputed for every batch from the current residuals. The confounder
//! kernel is a product of per-entry kernels (RBF for continuous entries,
//! near-binary white kernel for categorical entries) plus a zero-mean
//! heteroscedastic noise component that contributes only when the two
//! arguments are exactly equal. Noise levels are predicted by kernel
//! regression over KMeans prototypes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::affine::AffineMap;
use crate::data::{ConfounderEncoder, ConfounderEntry, ConfounderSchema, ConfounderValue};
use crate::error::{CondoError, Result};

/// Background similarity between distinct category tokens.
pub const CATEGORICAL_BACKGROUND: f64 = 1e-8;

/// ARD radial basis function kernel with per-dimension bandwidths.
#[derive(Debug, Clone)]
pub struct RbfKernel {
    bandwidths: DVector<f64>,
}

impl RbfKernel {
    pub fn new(bandwidths: DVector<f64>) -> Result<Self> {
        if bandwidths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(CondoError::InvalidArgument(
                "RBF bandwidths must be positive and finite".into(),
            ));
        }
        Ok(RbfKernel { bandwidths })
    }

    pub fn bandwidths(&self) -> &DVector<f64> {
        &self.bandwidths
    }

    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    /// k(x, x') = exp(-sum_i (x_i - x'_i)^2 / (2 sigma_i^2)).
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(CondoError::DimensionMismatch(format!(
                "RBF kernel is {}-dimensional, inputs have lengths {} and {}",
                self.dim(),
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_unchecked(x.as_slice(), y.as_slice()))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..x.len() {
            let d = x[i] - y[i];
            let s = self.bandwidths[i];
            q += d * d / (2.0 * s * s);
        }
        (-q).exp()
    }
}

/// Per-dimension bandwidth from the current batch residuals:
/// sigma_i^2 is the mean squared difference between the target batch and the
/// adapted source batch in dimension i, paired row by row. The returned
/// sigma_i is floored at `bandwidth_floor`.
pub fn dynamic_bandwidth(
    target_batch: &DMatrix<f64>,
    source_batch: &DMatrix<f64>,
    map: &AffineMap,
    bandwidth_floor: f64,
) -> Result<DVector<f64>> {
    if target_batch.shape() != source_batch.shape() {
        return Err(CondoError::DimensionMismatch(format!(
            "batch shapes differ: target {:?} vs source {:?}",
            target_batch.shape(),
            source_batch.shape()
        )));
    }
    let adapted = map.apply(source_batch)?;
    let n = target_batch.nrows() as f64;
    let m = target_batch.ncols();
    let mut sigma = DVector::zeros(m);
    for i in 0..m {
        let mut acc = 0.0;
        for r in 0..target_batch.nrows() {
            let d = target_batch[(r, i)] - adapted[(r, i)];
            acc += d * d;
        }
        sigma[i] = (acc / n).sqrt().max(bandwidth_floor);
    }
    Ok(sigma)
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// k x d centroid matrix.
    pub centroids: DMatrix<f64>,
    /// Cluster index per input row.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squared distances at convergence.
    pub sse: f64,
    /// SSE after each Lloyd iteration; non-increasing.
    pub sse_trace: Vec<f64>,
}

fn sq_dist(points: &DMatrix<f64>, row: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..points.ncols() {
        let d = points[(row, j)] - centroids[(c, j)];
        acc += d * d;
    }
    acc
}

/// Lloyd's algorithm with k-means++ style seeding, run to assignment fixpoint
/// or 100 iterations. Deterministic for a fixed RNG state.
pub fn kmeans<R: Rng>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> Result<KmeansResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(CondoError::InvalidArgument(format!(
            "kmeans needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let d = points.ncols();

    // k-means++ seeding: first centroid uniform, then proportional to the
    // squared distance to the nearest chosen centroid. A point identical to
    // a chosen centroid has weight zero, so duplicates are never re-picked
    // while distinct points remain.
    let mut centroids = DMatrix::zeros(k, d);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|r| sq_dist(points, r, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (r, w) in nearest.iter().enumerate() {
                t -= w;
                if t <= 0.0 {
                    chosen = r;
                    break;
                }
            }
            chosen
        } else {
            // Fewer distinct points than k; reuse an arbitrary point.
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (r, w) in nearest.iter_mut().enumerate() {
            *w = w.min(sq_dist(points, r, &centroids, c));
        }
    }

    let mut assignment = vec![0usize; n];
    let mut sse_trace = Vec::new();
    let mut sse = f64::INFINITY;
    for _ in 0..100 {
        // Assign.
        let mut new_assignment = vec![0usize; n];
        let mut new_sse = 0.0;
        for (r, slot) in new_assignment.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(points, r, &centroids, 0);
            for c in 1..k {
                let dd = sq_dist(points, r, &centroids, c);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            *slot = best;
            new_sse += best_d;
        }
        debug_assert!(
            new_sse <= sse * (1.0 + 1e-12) + 1e-12,
            "Lloyd SSE increased: {sse} -> {new_sse}"
        );
        sse = new_sse;
        sse_trace.push(sse);
        let converged = new_assignment == assignment && sse_trace.len() > 1;
        assignment = new_assignment;
        if converged {
            break;
        }

        // Update: each centroid becomes the mean of its assigned points; an
        // empty cluster is re-seeded to the point farthest from its centroid.
        let mut counts = vec![0usize; k];
        let mut sums = DMatrix::<f64>::zeros(k, d);
        for r in 0..n {
            counts[assignment[r]] += 1;
            for j in 0..d {
                sums[(assignment[r], j)] += points[(r, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points, a, &centroids, assignment[a]).total_cmp(&sq_dist(
                            points,
                            b,
                            &centroids,
                            assignment[b],
                        ))
                    })
                    .unwrap();
                centroids.row_mut(c).copy_from(&points.row(far));
            }
        }
    }

    Ok(KmeansResult {
        centroids,
        assignment,
        sse,
        sse_trace,
    })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

#[derive(Debug, Clone)]
enum EntryKernel {
    /// exp(-d^2 / (2 l^2)) on a continuous entry.
    Rbf { length_scale: f64 },
    /// 1 for equal tokens, a small background constant otherwise.
    White { background: f64 },
}

impl EntryKernel {
    fn eval(&self, a: &ConfounderEntry, b: &ConfounderEntry) -> f64 {
        match (self, a, b) {
            (
                EntryKernel::Rbf { length_scale },
                ConfounderEntry::Continuous(x),
                ConfounderEntry::Continuous(y),
            ) => {
                let d = x - y;
                (-d * d / (2.0 * length_scale * length_scale)).exp()
            }
            (
                EntryKernel::White { background },
                ConfounderEntry::Categorical(s),
                ConfounderEntry::Categorical(t),
            ) => {
                if s == t {
                    1.0
                } else {
                    *background
                }
            }
            _ => unreachable!("schema checked before evaluation"),
        }
    }
}

/// Confounder-space kernel: product of per-entry kernels plus a diagonal
/// heteroscedastic noise term predicted from KMeans prototypes.
#[derive(Debug, Clone)]
pub struct ConfounderKernel {
    schema: ConfounderSchema,
    entry_kernels: Vec<EntryKernel>,
    encoder: ConfounderEncoder,
    /// k x d prototype centroids in encoded confounder space.
    prototypes: DMatrix<f64>,
    /// Mean residual target (variance scale) per prototype.
    prototype_noise: DVector<f64>,
    /// Length scale of the noise smoother; the median distance from each
    /// training point to its assigned prototype.
    noise_scale: f64,
}

impl ConfounderKernel {
    /// Fits the kernel on training confounders.
    ///
    /// `residual_targets` are squared residuals (variance scale) of some
    /// per-sample predictor; the heteroscedastic component smooths their
    /// per-prototype means over confounder space. `k` is clamped to the
    /// number of samples and to the number of distinct encoded points.
    pub fn fit<R: Rng>(
        values: &[ConfounderValue],
        schema: &ConfounderSchema,
        residual_targets: &[f64],
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(CondoError::InvalidArgument(
                "cannot fit a confounder kernel on an empty value list".into(),
            ));
        }
        if residual_targets.len() != values.len() {
            return Err(CondoError::DimensionMismatch(format!(
                "{} residual targets for {} confounder values",
                residual_targets.len(),
                values.len()
            )));
        }

        let mut entry_kernels = Vec::with_capacity(schema.len());
        for (i, (_, kind)) in schema.0.iter().enumerate() {
            match kind {
                crate::data::ConfounderKind::Continuous => {
                    let mut dists = Vec::new();
                    let xs: Vec<f64> = values
                        .iter()
                        .map(|v| match &v.entries[i] {
                            ConfounderEntry::Continuous(x) => *x,
                            _ => unreachable!(),
                        })
                        .collect();
                    for a in 0..xs.len() {
                        for b in (a + 1)..xs.len() {
                            dists.push((xs[a] - xs[b]).abs());
                        }
                    }
                    let length_scale = median(&mut dists).max(1e-6);
                    entry_kernels.push(EntryKernel::Rbf { length_scale });
                }
                crate::data::ConfounderKind::Categorical => {
                    entry_kernels.push(EntryKernel::White {
                        background: CATEGORICAL_BACKGROUND,
                    });
                }
            }
        }

        let encoder = ConfounderEncoder::fit(schema, values)?;
        let encoded = encoder.encode_all(values)?;
        let n_distinct = {
            let mut seen: Vec<ConfounderValue> = Vec::new();
            for v in values {
                if !seen.contains(v) {
                    seen.push(v.clone());
                }
            }
            seen.len()
        };
        let k_eff = k.min(values.len()).min(n_distinct).max(1);
        let km = kmeans(&encoded, k_eff, rng)?;

        let mut noise = DVector::zeros(k_eff);
        let mut counts = vec![0usize; k_eff];
        for (r, &c) in km.assignment.iter().enumerate() {
            noise[c] += residual_targets[r];
            counts[c] += 1;
        }
        for c in 0..k_eff {
            if counts[c] > 0 {
                noise[c] /= counts[c] as f64;
            }
        }

        let mut proto_dists: Vec<f64> = km
            .assignment
            .iter()
            .enumerate()
            .map(|(r, &c)| sq_dist(&encoded, r, &km.centroids, c).sqrt())
            .collect();
        let noise_scale = median(&mut proto_dists).max(1e-6);

        Ok(ConfounderKernel {
            schema: schema.clone(),
            entry_kernels,
            encoder,
            prototypes: km.centroids,
            prototype_noise: noise,
            noise_scale,
        })
    }

    pub fn schema(&self) -> &ConfounderSchema {
        &self.schema
    }

    /// Product of the per-entry RBF/white kernels, without the noise term.
    pub fn primary(&self, a: &ConfounderValue, b: &ConfounderValue) -> Result<f64> {
        a.matches_schema(&self.schema)?;
        b.matches_schema(&self.schema)?;
        let mut out = 1.0;
        for (i, kernel) in self.entry_kernels.iter().enumerate() {
            out *= kernel.eval(&a.entries[i], &b.entries[i]);
        }
        Ok(out)
    }

    /// Predicted noise level at `y`: kernel regression of the prototype noise
    /// levels over encoded confounder space. Weights are normalized against
    /// the nearest prototype so the prediction is well defined arbitrarily
    /// far from the training data.
    pub fn noise_at(&self, y: &ConfounderValue) -> Result<f64> {
        let enc = self.encoder.encode_lenient(y)?;
        let k = self.prototypes.nrows();
        let mut sq = Vec::with_capacity(k);
        for c in 0..k {
            let mut acc = 0.0;
            for j in 0..self.prototypes.ncols() {
                let d = enc[j] - self.prototypes[(c, j)];
                acc += d * d;
            }
            sq.push(acc);
        }
        let min_sq = sq.iter().copied().fold(f64::INFINITY, f64::min);
        let two_l2 = 2.0 * self.noise_scale * self.noise_scale;
        let mut wsum = 0.0;
        let mut acc = 0.0;
        for (c, &d2) in sq.iter().enumerate() {
            let w = (-(d2 - min_sq) / two_l2).exp();
            wsum += w;
            acc += w * self.prototype_noise[c];
        }
        Ok(acc / wsum)
    }

    /// Full kernel: primary product plus the heteroscedastic term, which is
    /// zero-mean noise and therefore contributes only when y = y' exactly.
    pub fn eval(&self, a: &ConfounderValue, b: &ConfounderValue) -> Result<f64> {
        let mut out = self.primary(a, b)?;
        if a == b {
            out += self.noise_at(a)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::MapKind;
    use crate::data::ConfounderKind;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn rbf_zero_distance_is_one() {
        let k = RbfKernel::new(DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn rbf_half_value_at_sigma_sqrt_2ln2() {
        // Solving exp(-d^2 / 2) = 1/2 gives d = sqrt(2 ln 2).
        let k = RbfKernel::new(DVector::from_vec(vec![1.0])).unwrap();
        let x = DVector::from_vec(vec![0.0]);
        let y = DVector::from_vec(vec![(2.0 * 2f64.ln()).sqrt()]);
        assert_relative_eq!(k.eval(&x, &y).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rbf_tail_decays() {
        let k = RbfKernel::new(DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let x = DVector::zeros(2);
        let y = DVector::from_vec(vec![50.0, 50.0]);
        assert!(k.eval(&x, &y).unwrap() < 1e-10);
    }

    #[test]
    fn rbf_symmetric() {
        let k = RbfKernel::new(DVector::from_vec(vec![0.7, 1.3, 2.0])).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0));
            let y = DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0));
            assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
        }
    }

    #[test]
    fn dynamic_bandwidth_matches_hand_arithmetic() {
        // M=1, A=I, b=0, target (1,3), source (0,0): sigma^2 = (1+9)/2 = 5.
        let target = DMatrix::from_column_slice(2, 1, &[1.0, 3.0]);
        let source = DMatrix::from_column_slice(2, 1, &[0.0, 0.0]);
        let map = AffineMap::identity(1, MapKind::LocationScale);
        let sigma = dynamic_bandwidth(&target, &source, &map, 1e-6).unwrap();
        assert_relative_eq!(sigma[0], 5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn dynamic_bandwidth_floors_zero_residual() {
        let batch = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let map = AffineMap::identity(2, MapKind::LocationScale);
        let sigma = dynamic_bandwidth(&batch, &batch, &map, 1e-6).unwrap();
        assert!(sigma.iter().all(|&s| s == 1e-6));
    }

    #[test]
    fn dynamic_bandwidth_homogeneous_in_scale() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let target = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-2.0..2.0));
        let source = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-2.0..2.0));
        let map = AffineMap::identity(2, MapKind::LocationScale);
        let s1 = dynamic_bandwidth(&target, &source, &map, 1e-9).unwrap();
        let c = 3.5;
        let s2 = dynamic_bandwidth(&(&target * c), &(&source * c), &map, 1e-9).unwrap();
        assert_relative_eq!(&s1 * c, s2, epsilon = 1e-10);
    }

    #[test]
    fn dynamic_bandwidth_row_permutation_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let target = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-2.0..2.0));
        let source = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-2.0..2.0));
        let map = AffineMap::identity(2, MapKind::LocationScale);
        let s1 = dynamic_bandwidth(&target, &source, &map, 1e-9).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let tp = DMatrix::from_fn(6, 2, |r, c| target[(perm[r], c)]);
        let sp = DMatrix::from_fn(6, 2, |r, c| source[(perm[r], c)]);
        let s2 = dynamic_bandwidth(&tp, &sp, &map, 1e-9).unwrap();
        assert_relative_eq!(s1, s2, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_single_cluster_is_column_mean() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let km = kmeans(&pts, 1, &mut rng).unwrap();
        assert_relative_eq!(km.centroids[(0, 0)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(km.centroids[(0, 1)], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_separated_clusters() {
        let pts = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 10.0, 10.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let km = kmeans(&pts, 2, &mut rng).unwrap();
        let mut cs: Vec<f64> = km.centroids.column(0).iter().copied().collect();
        cs.sort_by(f64::total_cmp);
        assert_eq!(cs, vec![0.0, 10.0]);
        assert_eq!(km.sse, 0.0);
    }

    #[test]
    fn kmeans_k_equals_n_zero_sse() {
        let pts = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 4.0, 8.0, 16.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let km = kmeans(&pts, 5, &mut rng).unwrap();
        assert_eq!(km.sse, 0.0);
    }

    #[test]
    fn kmeans_k_too_large_is_an_error() {
        let pts = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        assert!(matches!(
            kmeans(&pts, 3, &mut rng),
            Err(CondoError::InvalidArgument(_))
        ));
    }

    #[test]
    fn kmeans_sse_non_increasing() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let pts = DMatrix::from_fn(60, 3, |_, _| rng.gen_range(-1.0..1.0));
        let km = kmeans(&pts, 7, &mut rng).unwrap();
        for w in km.sse_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "SSE increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn kmeans_deterministic_per_seed() {
        let mut rng = ChaCha20Rng::seed_from_u64(100);
        let pts = DMatrix::from_fn(30, 2, |_, _| rng.gen_range(-1.0..1.0));
        let a = kmeans(&pts, 4, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let b = kmeans(&pts, 4, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignment, b.assignment);
    }

    fn cont_schema() -> ConfounderSchema {
        ConfounderSchema::new(vec![("y".into(), ConfounderKind::Continuous)])
    }

    #[test]
    fn empty_input_is_an_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(matches!(
            ConfounderKernel::fit(&[], &cont_schema(), &[], 3, &mut rng),
            Err(CondoError::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_residuals_mean_zero_noise() {
        let values: Vec<_> = (0..6)
            .map(|i| ConfounderValue::continuous(i as f64))
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let k = ConfounderKernel::fit(&values, &cont_schema(), &[0.0; 6], 3, &mut rng).unwrap();
        let y = ConfounderValue::continuous(2.5);
        assert_eq!(k.noise_at(&y).unwrap(), 0.0);
        assert_eq!(
            k.eval(&values[0], &values[0]).unwrap(),
            k.primary(&values[0], &values[0]).unwrap()
        );
    }

    #[test]
    fn single_prototype_constant_noise_field() {
        let values: Vec<_> = (0..4)
            .map(|i| ConfounderValue::continuous(i as f64))
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let k = ConfounderKernel::fit(&values, &cont_schema(), &[4.0; 4], 1, &mut rng).unwrap();
        for y in [-10.0, 0.0, 3.0, 100.0] {
            assert_relative_eq!(
                k.noise_at(&ConfounderValue::continuous(y)).unwrap(),
                4.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn two_cluster_noise_prediction() {
        // Two tight clusters with residual levels 1 and 9. The noise smoother
        // scale is the intra-cluster radius, so predictions stay near each
        // cluster's own level.
        let values = vec![
            ConfounderValue::continuous(0.0),
            ConfounderValue::continuous(0.0),
            ConfounderValue::continuous(10.0),
            ConfounderValue::continuous(10.0),
        ];
        let targets = [1.0, 1.0, 9.0, 9.0];
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let k = ConfounderKernel::fit(&values, &cont_schema(), &targets, 2, &mut rng).unwrap();
        let at0 = k.noise_at(&ConfounderValue::continuous(0.0)).unwrap();
        let at10 = k.noise_at(&ConfounderValue::continuous(10.0)).unwrap();
        assert!((at0 - 1.0).abs() < 0.1, "noise at 0 was {at0}");
        assert!((at10 - 9.0).abs() < 0.1, "noise at 10 was {at10}");
    }

    #[test]
    fn categorical_kernel_values() {
        let schema = ConfounderSchema::new(vec![("c".into(), ConfounderKind::Categorical)]);
        let values = vec![
            ConfounderValue::categorical("a"),
            ConfounderValue::categorical("b"),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let k = ConfounderKernel::fit(&values, &schema, &[0.0, 0.0], 2, &mut rng).unwrap();
        assert_eq!(k.primary(&values[0], &values[0]).unwrap(), 1.0);
        assert_eq!(
            k.primary(&values[0], &values[1]).unwrap(),
            CATEGORICAL_BACKGROUND
        );
    }

    #[test]
    fn mixed_schema_product() {
        let schema = ConfounderSchema::new(vec![
            ("c".into(), ConfounderKind::Categorical),
            ("y".into(), ConfounderKind::Continuous),
        ]);
        let values = vec![
            ConfounderValue::new(vec![
                ConfounderEntry::Categorical("a".into()),
                ConfounderEntry::Continuous(1.0),
            ]),
            ConfounderValue::new(vec![
                ConfounderEntry::Categorical("b".into()),
                ConfounderEntry::Continuous(4.0),
            ]),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let k = ConfounderKernel::fit(&values, &schema, &[0.0, 0.0], 2, &mut rng).unwrap();
        // Equal category and zero continuous distance: product is exactly 1.
        assert_eq!(k.primary(&values[0], &values[0]).unwrap(), 1.0);
        // Schema mismatch is an error.
        let bad = ConfounderValue::continuous(1.0);
        assert!(matches!(
            k.primary(&values[0], &bad),
            Err(CondoError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn kernel_symmetry_and_self_dominance() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let values: Vec<_> = (0..12)
            .map(|_| ConfounderValue::continuous(rng.gen_range(-3.0..3.0)))
            .collect();
        let targets: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..2.0)).collect();
        let k = ConfounderKernel::fit(&values, &cont_schema(), &targets, 4, &mut rng).unwrap();
        for a in &values {
            for b in &values {
                let ab = k.eval(a, b).unwrap();
                let ba = k.eval(b, a).unwrap();
                assert_eq!(ab, ba);
                assert!(k.primary(a, a).unwrap() >= k.primary(a, b).unwrap());
            }
        }
    }
}
