//! Per-domain conditional-distribution estimators and the confounder prior.
//!
//! Three estimators are provided: a homoscedastic multivariate linear
//! Gaussian model (regression on encoded confounders), an independent
//! per-feature Gaussian process, and a Nadaraya-Watson sampler that draws
//! conditional samples by reweighting dataset rows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distributions::WeightedIndex;
use rand::prelude::*;

use crate::data::{ConfounderEncoder, ConfounderValue, Dataset};
use crate::error::{CondoError, Result};
use crate::kernels::{kmeans, ConfounderKernel};

/// Weighted collection of confounder values over which expected divergences
/// are averaged.
#[derive(Debug, Clone)]
pub struct ConfounderPrior {
    pub values: Vec<ConfounderValue>,
    /// Positive weights summing to 1.
    pub weights: DVector<f64>,
}

/// Pools the confounders of both datasets with uniform weight. When `dedup`
/// is set and every schema entry is categorical, identical values are merged
/// and their weights accumulated; the weighted expectation of any function of
/// y is unchanged. Continuous confounders are never deduplicated.
pub fn build_prior(source: &Dataset, target: &Dataset, dedup: bool) -> Result<ConfounderPrior> {
    if source.schema() != target.schema() {
        return Err(CondoError::SchemaMismatch(
            "source and target confounder schemas differ".into(),
        ));
    }
    let n_total = source.n_samples() + target.n_samples();
    let uniform = 1.0 / n_total as f64;
    let pooled = source
        .confounders()
        .iter()
        .chain(target.confounders().iter());

    if dedup && source.schema().all_categorical() {
        let mut values: Vec<ConfounderValue> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut index: std::collections::HashMap<ConfounderValue, usize> =
            std::collections::HashMap::new();
        for v in pooled {
            match index.get(v) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(v.clone(), values.len());
                    values.push(v.clone());
                    counts.push(1);
                }
            }
        }
        let weights =
            DVector::from_iterator(counts.len(), counts.iter().map(|&c| c as f64 * uniform));
        Ok(ConfounderPrior { values, weights })
    } else {
        let values: Vec<ConfounderValue> = pooled.cloned().collect();
        let weights = DVector::from_element(n_total, uniform);
        Ok(ConfounderPrior { values, weights })
    }
}

/// Homoscedastic linear-Gaussian conditional model: x | y ~ N(B phi(y), Sigma)
/// with phi the one-hot/intercept encoding of y.
#[derive(Debug, Clone)]
pub struct LinearGaussianEstimator {
    encoder: ConfounderEncoder,
    /// M x P coefficient matrix; the last encoded column is the intercept.
    coef: DMatrix<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
}

/// Ridge-regularized least squares of features on encoded confounders, with
/// residual covariance Sigma = (1/N) R^T R + ridge I and precision Lambda =
/// Sigma^-1. Ridge shrinkage stands in for the graphical lasso; an externally
/// estimated precision can be supplied via
/// [`LinearGaussianEstimator::with_precision`].
pub fn fit_linear_gaussian(data: &Dataset, ridge: f64) -> Result<LinearGaussianEstimator> {
    let n = data.n_samples();
    let m = data.n_features();
    let encoder = ConfounderEncoder::fit(data.schema(), data.confounders())?;
    let p = encoder.width() + 1;

    let mut phi = DMatrix::zeros(n, p);
    for (r, v) in data.confounders().iter().enumerate() {
        let e = encoder.encode(v)?;
        for c in 0..encoder.width() {
            phi[(r, c)] = e[c];
        }
        phi[(r, p - 1)] = 1.0;
    }

    // Ridge on all coefficients except the intercept.
    let mut gram = phi.transpose() * &phi;
    for i in 0..p - 1 {
        gram[(i, i)] += ridge;
    }
    let rhs = phi.transpose() * data.features();
    let w = match Cholesky::new(gram.clone()) {
        Some(chol) => chol.solve(&rhs),
        None => {
            // Degenerate design (e.g. ridge = 0 with collinear columns);
            // fall back to an SVD least-squares solve.
            let svd = gram.svd(true, true);
            svd.solve(&rhs, 1e-12)
                .map_err(|e| CondoError::NumericalFailure(format!("regression solve: {e}")))?
        }
    };

    let residuals = data.features() - &phi * &w;
    let mut covariance = residuals.transpose() * &residuals / n as f64;
    for i in 0..m {
        covariance[(i, i)] += ridge;
    }
    let precision = Cholesky::new(covariance.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| {
            CondoError::SingularCovariance(
                "residual covariance is singular; use a positive ridge".into(),
            )
        })?;

    Ok(LinearGaussianEstimator {
        encoder,
        coef: w.transpose(),
        covariance,
        precision,
    })
}

impl LinearGaussianEstimator {
    /// Conditional mean B phi(y) and the (y-independent) covariance.
    pub fn conditional(&self, y: &ConfounderValue) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut phi = DVector::zeros(self.encoder.width() + 1);
        let e = self.encoder.encode(y)?;
        phi.rows_mut(0, self.encoder.width()).copy_from(&e);
        phi[self.encoder.width()] = 1.0;
        Ok((&self.coef * phi, self.covariance.clone()))
    }

    pub fn coef(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Replaces the precision matrix (and covariance) with an externally
    /// estimated one, e.g. from a graphical-lasso implementation.
    pub fn with_precision(mut self, precision: DMatrix<f64>) -> Result<Self> {
        let covariance = Cholesky::new(precision.clone())
            .map(|c| c.inverse())
            .ok_or_else(|| {
                CondoError::SingularCovariance("supplied precision is not invertible".into())
            })?;
        self.precision = precision;
        self.covariance = covariance;
        Ok(self)
    }
}

/// One fitted GP per feature column, sharing the training confounders.
#[derive(Debug, Clone)]
pub struct GpEstimator {
    train: Vec<ConfounderValue>,
    features: Vec<GpFeature>,
}

#[derive(Debug, Clone)]
struct GpFeature {
    kernel: ConfounderKernel,
    /// Cholesky factor of K + diag(noise), K the primary Gram matrix.
    chol: Cholesky<f64, Dyn>,
    /// (K + diag(noise))^-1 (x - mean) / std, cached once.
    dual: DVector<f64>,
    mean: f64,
    std: f64,
}

const GP_JITTER: f64 = 1e-6;

/// Fits one independent GP per feature. The prior mean is the feature's
/// training mean (features are standardized internally); per-sample noise
/// comes from the kernel's heteroscedastic component, floored at a small
/// jitter. Cholesky failures escalate the jitter three times (x10 each)
/// before giving up.
pub fn fit_gp<R: Rng>(data: &Dataset, k: usize, rng: &mut R) -> Result<GpEstimator> {
    let n = data.n_samples();
    if n < 2 {
        return Err(CondoError::InvalidArgument(
            "GP fitting needs at least 2 samples".into(),
        ));
    }
    let encoder = ConfounderEncoder::fit(data.schema(), data.confounders())?;
    let encoded = encoder.encode_all(data.confounders())?;
    let n_distinct = {
        let mut seen: Vec<&ConfounderValue> = Vec::new();
        for v in data.confounders() {
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
        seen.len()
    };
    let k_eff = k.min(n).min(n_distinct).max(1);

    let mut features = Vec::with_capacity(data.n_features());
    for col in 0..data.n_features() {
        let x = data.features().column(col);
        let mean = x.mean();
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-12);
        let x_std = DVector::from_iterator(n, x.iter().map(|v| (v - mean) / std));

        // Squared residuals of a prototype-mean predictor, on the
        // standardized scale; these are the heteroscedastic noise targets.
        let km = kmeans(&encoded, k_eff, rng)?;
        let mut cluster_mean = vec![0.0; k_eff];
        let mut counts = vec![0usize; k_eff];
        for (r, &c) in km.assignment.iter().enumerate() {
            cluster_mean[c] += x_std[r];
            counts[c] += 1;
        }
        for c in 0..k_eff {
            if counts[c] > 0 {
                cluster_mean[c] /= counts[c] as f64;
            }
        }
        let residual_targets: Vec<f64> = km
            .assignment
            .iter()
            .enumerate()
            .map(|(r, &c)| (x_std[r] - cluster_mean[c]).powi(2))
            .collect();

        let kernel =
            ConfounderKernel::fit(data.confounders(), data.schema(), &residual_targets, k, rng)?;

        let mut gram = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = kernel.primary(&data.confounders()[a], &data.confounders()[b])?;
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        for r in 0..n {
            let noise = kernel.noise_at(&data.confounders()[r])?.max(GP_JITTER);
            gram[(r, r)] += noise;
        }

        let mut jitter = GP_JITTER;
        let chol = loop {
            match Cholesky::new(gram.clone()) {
                Some(c) => break c,
                None => {
                    jitter *= 10.0;
                    if jitter > GP_JITTER * 1e3 {
                        return Err(CondoError::NumericalFailure(format!(
                            "GP Gram matrix for feature {col} is not positive definite \
                             after jitter escalation"
                        )));
                    }
                    for r in 0..n {
                        gram[(r, r)] += jitter;
                    }
                }
            }
        };
        let dual = chol.solve(&x_std);

        features.push(GpFeature {
            kernel,
            chol,
            dual,
            mean,
            std,
        });
    }

    Ok(GpEstimator {
        train: data.confounders().to_vec(),
        features,
    })
}

impl GpEstimator {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Posterior mean and variance per feature at confounder value `y`.
    /// The variance includes the predicted heteroscedastic noise at `y`, so
    /// it describes the conditional distribution of observations.
    pub fn conditional(&self, y: &ConfounderValue) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.train.len();
        let mut means = DVector::zeros(self.features.len());
        let mut vars = DVector::zeros(self.features.len());
        for (i, gp) in self.features.iter().enumerate() {
            let mut kstar = DVector::zeros(n);
            for (r, ytrain) in self.train.iter().enumerate() {
                kstar[r] = gp.kernel.primary(y, ytrain)?;
            }
            let mean_std = kstar.dot(&gp.dual);
            let solved = gp.chol.solve(&kstar);
            let reduction = kstar.dot(&solved);
            let var_f = (gp.kernel.primary(y, y)? - reduction).max(0.0);
            let var_std = var_f + gp.kernel.noise_at(y)?;
            means[i] = gp.mean + gp.std * mean_std;
            vars[i] = gp.std * gp.std * var_std;
        }
        Ok((means, vars))
    }

    /// Prior variance (including noise) at `y`, for tests and diagnostics.
    pub fn prior_variance(&self, y: &ConfounderValue) -> Result<DVector<f64>> {
        let mut vars = DVector::zeros(self.features.len());
        for (i, gp) in self.features.iter().enumerate() {
            vars[i] = gp.std * gp.std * (gp.kernel.primary(y, y)? + gp.kernel.noise_at(y)?);
        }
        Ok(vars)
    }
}

/// Nadaraya-Watson conditional sampler: rows are reweighted by the
/// confounder kernel at the query value and drawn with replacement.
#[derive(Debug, Clone)]
pub struct NwSampler {
    features: DMatrix<f64>,
    confounders: Vec<ConfounderValue>,
    kernel: ConfounderKernel,
}

/// Raw-kernel values below this are considered unsupported: the query y
/// matches no sample better than the white-kernel background.
const DEGENERATE_WEIGHT_THRESHOLD: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct NwWeights {
    /// Normalized weights, one per dataset row; they sum to 1.
    pub weights: DVector<f64>,
    /// True when no sample had meaningful kernel similarity to the query.
    pub degenerate: bool,
}

pub fn fit_nw_sampler<R: Rng>(data: &Dataset, k: usize, rng: &mut R) -> Result<NwSampler> {
    let n = data.n_samples();
    let m = data.n_features();
    let encoder = ConfounderEncoder::fit(data.schema(), data.confounders())?;
    let encoded = encoder.encode_all(data.confounders())?;
    let n_distinct = {
        let mut seen: Vec<&ConfounderValue> = Vec::new();
        for v in data.confounders() {
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
        seen.len()
    };
    let k_eff = k.min(n).min(n_distinct).max(1);

    // Residual targets: per-sample mean squared deviation of standardized
    // features from a prototype-mean predictor.
    let mut col_mean = vec![0.0; m];
    let mut col_std = vec![0.0; m];
    for j in 0..m {
        let c = data.features().column(j);
        col_mean[j] = c.mean();
        let var = c.iter().map(|v| (v - col_mean[j]).powi(2)).sum::<f64>() / n as f64;
        col_std[j] = var.sqrt().max(1e-12);
    }
    let km = kmeans(&encoded, k_eff, rng)?;
    let mut cluster_mean = DMatrix::<f64>::zeros(k_eff, m);
    let mut counts = vec![0usize; k_eff];
    for (r, &c) in km.assignment.iter().enumerate() {
        counts[c] += 1;
        for j in 0..m {
            cluster_mean[(c, j)] += (data.features()[(r, j)] - col_mean[j]) / col_std[j];
        }
    }
    for c in 0..k_eff {
        if counts[c] > 0 {
            for j in 0..m {
                cluster_mean[(c, j)] /= counts[c] as f64;
            }
        }
    }
    let residual_targets: Vec<f64> = km
        .assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| {
            (0..m)
                .map(|j| {
                    let z = (data.features()[(r, j)] - col_mean[j]) / col_std[j];
                    (z - cluster_mean[(c, j)]).powi(2)
                })
                .sum::<f64>()
                / m as f64
        })
        .collect();

    let kernel =
        ConfounderKernel::fit(data.confounders(), data.schema(), &residual_targets, k, rng)?;
    Ok(NwSampler {
        features: data.features().clone(),
        confounders: data.confounders().to_vec(),
        kernel,
    })
}

impl NwSampler {
    /// w_i = k(y, y_i) / sum_j k(y, y_j). Emits a warning (and sets the
    /// `degenerate` flag) when the query is unsupported in this domain;
    /// the near-uniform background weights are still returned.
    pub fn weights(&self, y: &ConfounderValue) -> Result<NwWeights> {
        let n = self.confounders.len();
        let mut raw = DVector::zeros(n);
        let mut max_raw = 0.0f64;
        for (i, yi) in self.confounders.iter().enumerate() {
            let v = self.kernel.eval(y, yi)?;
            raw[i] = v;
            max_raw = max_raw.max(v);
        }
        let degenerate = max_raw < DEGENERATE_WEIGHT_THRESHOLD;
        if degenerate {
            log::warn!(
                "degenerate Nadaraya-Watson weights: max kernel value {max_raw:.3e}; \
                 the query confounder is unsupported in this domain"
            );
        }
        let total: f64 = raw.iter().sum();
        Ok(NwWeights {
            weights: raw / total,
            degenerate,
        })
    }

    /// Draws `n` feature rows i.i.d. with probabilities `weights(y)`.
    pub fn sample<R: Rng>(
        &self,
        y: &ConfounderValue,
        n: usize,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(CondoError::InvalidArgument(
                "sample count must be at least 1".into(),
            ));
        }
        let w = self.weights(y)?;
        let dist = WeightedIndex::new(w.weights.iter().copied())
            .map_err(|e| CondoError::NumericalFailure(format!("weighted sampling: {e}")))?;
        let mut out = DMatrix::zeros(n, self.features.ncols());
        for r in 0..n {
            let pick = dist.sample(rng);
            out.row_mut(r).copy_from(&self.features.row(pick));
        }
        Ok(out)
    }
}
