//! Method dispatch and training loops.
//!
//! Closed-form Gaussian OT, closed-form per-dimension reverse KL, and batch
//! gradient descent with momentum for the iterative objectives. Every fit
//! owns a single ChaCha RNG seeded from the config, so results are
//! bit-reproducible for a fixed seed.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::affine::{AffineMap, MapKind};
use crate::config::{FitConfig, FitMethod};
use crate::data::{validate_pair, ConfounderKind, ConfounderSchema, ConfounderValue, Dataset};
use crate::error::{CondoError, Result};
use crate::estimators::{
    build_prior, fit_gp, fit_linear_gaussian, fit_nw_sampler, ConfounderPrior,
};
use crate::kernels::{dynamic_bandwidth, RbfKernel};
use crate::model::FitReport;
use crate::objectives::{
    forward_kl_objective, mmd_batch_objective, reverse_kl_1d_closed_form, reverse_kl_objective,
    KlCovariance, KlProblem, ObjectiveEval,
};

/// Fits an adaptation from `source` to `target` with the configured method.
/// Categorical-confounder deduplication of the prior is enabled; it is an
/// exact algebraic identity, not an approximation.
pub fn fit(source: &Dataset, target: &Dataset, config: &FitConfig) -> Result<FitReport> {
    fit_with_dedup(source, target, config, true)
}

/// Same as [`fit`], with explicit control over prior deduplication.
pub fn fit_with_dedup(
    source: &Dataset,
    target: &Dataset,
    config: &FitConfig,
    dedup: bool,
) -> Result<FitReport> {
    config.validate()?;
    validate_pair(source, target)?;
    match config.method {
        FitMethod::GaussianOt => fit_gaussian_ot(source, target, config),
        FitMethod::Mmd => fit_plain_mmd(source, target, config),
        FitMethod::CondoMmd => fit_condo_mmd(source, target, config, dedup),
        FitMethod::CondoLinearForwardKl
        | FitMethod::CondoLinearReverseKl
        | FitMethod::CondoGpReverseKl => fit_condo_kl(source, target, config, dedup),
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root (inverse root when `invert`) via eigendecomposition,
/// flooring eigenvalues at `floor`.
fn sym_root(m: &DMatrix<f64>, floor: f64, invert: bool) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        if *v < floor {
            *v = floor;
        }
        if *v <= 0.0 {
            return Err(CondoError::SingularMatrix(
                "covariance is not positive definite after eigenvalue flooring".into(),
            ));
        }
        *v = if invert { 1.0 / v.sqrt() } else { v.sqrt() };
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Closed-form optimal-transport map between Gaussians:
/// A = Sig_Q^-1/2 (Sig_Q^1/2 Sig_P Sig_Q^1/2)^1/2 Sig_Q^-1/2 (symmetric),
/// b = mu_P - A mu_Q, with Q the source and P the target moments. The
/// pushforward identity A Sig_Q A^T = Sig_P holds by construction.
pub fn gaussian_ot_map(
    mu_source: &DVector<f64>,
    cov_source: &DMatrix<f64>,
    mu_target: &DVector<f64>,
    cov_target: &DMatrix<f64>,
    eig_floor: f64,
) -> Result<AffineMap> {
    let m = mu_source.len();
    if cov_source.shape() != (m, m) || cov_target.shape() != (m, m) || mu_target.len() != m {
        return Err(CondoError::DimensionMismatch(
            "moment shapes disagree in gaussian_ot_map".into(),
        ));
    }
    let q_sqrt = sym_root(cov_source, eig_floor, false)?;
    let q_inv_sqrt = sym_root(cov_source, eig_floor, true)?;
    let inner = &q_sqrt * cov_target * &q_sqrt;
    let inner_sqrt = sym_root(&inner, 0.0, false)?;
    let a = symmetrize(&(&q_inv_sqrt * inner_sqrt * &q_inv_sqrt));
    let b = mu_target - &a * mu_source;
    AffineMap::new(a, b, MapKind::FullAffine)
}

fn column_moments(data: &Dataset) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.n_samples() as f64;
    let m = data.n_features();
    let mut mu = DVector::zeros(m);
    for j in 0..m {
        mu[j] = data.features().column(j).mean();
    }
    let mut cov = DMatrix::zeros(m, m);
    for r in 0..data.n_samples() {
        for i in 0..m {
            let di = data.features()[(r, i)] - mu[i];
            for j in i..m {
                cov[(i, j)] += di * (data.features()[(r, j)] - mu[j]);
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            cov[(i, j)] /= n;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    (mu, cov)
}

/// Gaussian OT baseline: matches the pooled first and second moments,
/// ignoring confounders. Location-scale fits use the univariate rule per
/// dimension: a_i = sigma_target_i / sigma_source_i.
pub fn fit_gaussian_ot(
    source: &Dataset,
    target: &Dataset,
    config: &FitConfig,
) -> Result<FitReport> {
    let start = Instant::now();
    let (mu_q, cov_q) = column_moments(source);
    let (mu_p, cov_p) = column_moments(target);
    let transform = match config.transform_kind {
        MapKind::FullAffine => gaussian_ot_map(&mu_q, &cov_q, &mu_p, &cov_p, config.ridge)?,
        MapKind::LocationScale => {
            let m = mu_q.len();
            let mut scale = DVector::zeros(m);
            let mut offset = DVector::zeros(m);
            for i in 0..m {
                let sq = cov_q[(i, i)].max(config.ridge).sqrt();
                let sp = cov_p[(i, i)].max(config.ridge).sqrt();
                if sq <= 0.0 {
                    return Err(CondoError::SingularMatrix(format!(
                        "source variance of feature {i} is zero; set a positive ridge"
                    )));
                }
                scale[i] = sp / sq;
                offset[i] = mu_p[i] - scale[i] * mu_q[i];
            }
            AffineMap::location_scale(scale, offset)?
        }
    };
    Ok(FitReport {
        transform,
        objective_trace: Vec::new(),
        final_objective: 0.0,
        config: config.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, PartialEq)]
pub(crate) enum KlKind {
    Forward,
    Reverse,
}

fn kl_eval(kind: KlKind, problem: &KlProblem, map: &AffineMap) -> Result<ObjectiveEval> {
    match kind {
        KlKind::Forward => forward_kl_objective(problem, map),
        KlKind::Reverse => reverse_kl_objective(problem, map),
    }
}

fn map_is_orientable(a: &DMatrix<f64>, kind: MapKind) -> bool {
    match kind {
        MapKind::LocationScale => a.diagonal().iter().all(|&v| v > 0.0),
        MapKind::FullAffine => a.determinant() > 0.0,
    }
}

/// Final map, per-iteration objective trace, and final objective value.
type DescentOutcome = (AffineMap, Vec<(u64, f64)>, f64);

/// Full-batch gradient descent with momentum on a KL problem, starting from
/// the identity. Gradients are normalized by the number of prior points so
/// deduplicated and raw priors follow identical trajectories. Steps that
/// would cross the det(A) > 0 barrier are halved until feasible.
pub(crate) fn minimize_kl_iterative(
    problem: &KlProblem,
    kind: KlKind,
    config: &FitConfig,
) -> Result<DescentOutcome> {
    let m = problem.n_features();
    let norm = problem.n_points() as f64;
    let mut map = AffineMap::identity(m, config.transform_kind);
    let mut vel_a = DMatrix::<f64>::zeros(m, m);
    let mut vel_b = DVector::<f64>::zeros(m);
    let mut trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let eval = kl_eval(kind, problem, &map)?;
        debug_assert!(map.det() > 0.0);
        if !eval.value.is_finite() {
            return Err(CondoError::NumericalFailure(format!(
                "KL objective diverged at iteration {it}; reduce the learning rate"
            )));
        }
        trace.push((it as u64, eval.value));

        vel_a = &vel_a * config.momentum + eval.grad_a / norm;
        vel_b = &vel_b * config.momentum + eval.grad_b / norm;
        let mut step_a = &vel_a * config.learning_rate;
        let mut step_b = &vel_b * config.learning_rate;
        let mut halvings = 0;
        loop {
            let cand = map.matrix_a() - &step_a;
            if map_is_orientable(&cand, config.transform_kind) {
                let b = map.offset_b() - &step_b;
                map = AffineMap::new(cand, b, config.transform_kind)?;
                break;
            }
            // The raw step crossed the log barrier; shrink it (and the
            // stored velocity, to bleed off the momentum that caused it).
            step_a /= 2.0;
            step_b /= 2.0;
            vel_a /= 2.0;
            vel_b /= 2.0;
            halvings += 1;
            if halvings > 80 {
                return Err(CondoError::NumericalFailure(
                    "could not find a feasible step inside the determinant barrier".into(),
                ));
            }
        }
    }

    let final_value = kl_eval(kind, problem, &map)?.value;
    if config.iterations >= 10 {
        let anchor = trace[config.iterations - 10].1;
        let rel = (anchor - final_value) / final_value.abs().max(1e-12);
        if rel > 1e-3 {
            log::warn!(
                "KL descent still improving after {} iterations \
                 (relative improvement {rel:.2e} over the last 10); \
                 consider more iterations",
                config.iterations
            );
        }
    }
    Ok((map, trace, final_value))
}

fn conditional_moment_rows<F>(
    prior: &ConfounderPrior,
    m: usize,
    mut conditional: F,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: FnMut(&ConfounderValue) -> Result<(DVector<f64>, DVector<f64>)>,
{
    let n = prior.values.len();
    let mut means = DMatrix::zeros(n, m);
    let mut vars = DMatrix::zeros(n, m);
    for (i, y) in prior.values.iter().enumerate() {
        let (mu, var) = conditional(y)?;
        for j in 0..m {
            means[(i, j)] = mu[j];
            vars[(i, j)] = var[j];
        }
    }
    Ok((means, vars))
}

/// Builds the KL problem for a method: conditional moments of both domains
/// cached at every prior point. Location-scale problems carry per-dimension
/// marginal variances so the objective separates across features.
fn assemble_kl_problem(
    source: &Dataset,
    target: &Dataset,
    prior: &ConfounderPrior,
    config: &FitConfig,
    rng: &mut ChaCha20Rng,
) -> Result<KlProblem> {
    let m = source.n_features();
    let n = prior.values.len();

    if config.method == FitMethod::CondoGpReverseKl {
        let gp_s = fit_gp(source, config.prototypes_k, rng)?;
        let gp_t = fit_gp(target, config.prototypes_k, rng)?;
        let (mean_s, var_s) = conditional_moment_rows(prior, m, |y| gp_s.conditional(y))?;
        let (mean_t, var_t) = conditional_moment_rows(prior, m, |y| gp_t.conditional(y))?;
        return KlProblem::new(
            mean_s,
            mean_t,
            KlCovariance::Diagonal {
                source: var_s,
                target: var_t,
            },
            prior.weights.clone(),
        );
    }

    let est_s = fit_linear_gaussian(source, config.ridge)?;
    let est_t = fit_linear_gaussian(target, config.ridge)?;
    let mut mean_s = DMatrix::zeros(n, m);
    let mut mean_t = DMatrix::zeros(n, m);
    for (i, y) in prior.values.iter().enumerate() {
        let (mu_s, _) = est_s.conditional(y)?;
        let (mu_t, _) = est_t.conditional(y)?;
        for j in 0..m {
            mean_s[(i, j)] = mu_s[j];
            mean_t[(i, j)] = mu_t[j];
        }
    }
    let cov = match config.transform_kind {
        MapKind::FullAffine => KlCovariance::Full {
            source: est_s.covariance().clone(),
            target: est_t.covariance().clone(),
        },
        MapKind::LocationScale => {
            let rep = |c: &DMatrix<f64>| DMatrix::from_fn(n, m, |_, j| c[(j, j)]);
            KlCovariance::Diagonal {
                source: rep(est_s.covariance()),
                target: rep(est_t.covariance()),
            }
        }
    };
    KlProblem::new(mean_s, mean_t, cov, prior.weights.clone())
}

fn fit_condo_kl(
    source: &Dataset,
    target: &Dataset,
    config: &FitConfig,
    dedup: bool,
) -> Result<FitReport> {
    let start = Instant::now();
    let kind = match config.method {
        FitMethod::CondoLinearForwardKl => KlKind::Forward,
        FitMethod::CondoLinearReverseKl | FitMethod::CondoGpReverseKl => KlKind::Reverse,
        _ => unreachable!("dispatched by fit_with_dedup"),
    };
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let prior = build_prior(source, target, dedup)?;
    let problem = assemble_kl_problem(source, target, &prior, config, &mut rng)?;

    let (transform, trace, final_objective) =
        if config.transform_kind == MapKind::LocationScale && kind == KlKind::Reverse {
            // The diagonal reverse-KL objective separates across features;
            // solve each dimension exactly.
            let (var_s, var_t) = match &problem.cov {
                KlCovariance::Diagonal { source, target } => (source, target),
                KlCovariance::Full { .. } => unreachable!("location_scale assembles diagonals"),
            };
            let m = problem.n_features();
            let mut scale = DVector::zeros(m);
            let mut offset = DVector::zeros(m);
            for j in 0..m {
                let col = |mat: &DMatrix<f64>| DVector::from_column_slice(mat.column(j).as_slice());
                let (mj, bj) = reverse_kl_1d_closed_form(
                    &col(&problem.mean_source),
                    &col(var_s),
                    &col(&problem.mean_target),
                    &col(var_t),
                    &problem.weights,
                )?;
                scale[j] = mj;
                offset[j] = bj;
            }
            let map = AffineMap::location_scale(scale, offset)?;
            let value = reverse_kl_objective(&problem, &map)?.value;
            (map, Vec::new(), value)
        } else {
            minimize_kl_iterative(&problem, kind, config)?
        };

    Ok(FitReport {
        transform,
        objective_trace: trace,
        final_objective,
        config: config.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One MMD iteration's inputs and outputs, exposed to observers for logging
/// and verification.
pub struct MmdIterationRecord<'a> {
    pub iteration: u64,
    pub confounder: &'a ConfounderValue,
    pub target_batch: &'a DMatrix<f64>,
    pub source_batch: &'a DMatrix<f64>,
    /// Transform at which the objective and bandwidth were evaluated.
    pub map: &'a AffineMap,
    pub bandwidths: &'a DVector<f64>,
    pub objective: f64,
}

pub fn fit_condo_mmd(
    source: &Dataset,
    target: &Dataset,
    config: &FitConfig,
    dedup: bool,
) -> Result<FitReport> {
    run_mmd(source, target, config, dedup, &mut |_| {})
}

/// [`fit_condo_mmd`] with a per-iteration observer callback.
pub fn fit_condo_mmd_with_observer(
    source: &Dataset,
    target: &Dataset,
    config: &FitConfig,
    dedup: bool,
    observer: &mut dyn FnMut(&MmdIterationRecord),
) -> Result<FitReport> {
    run_mmd(source, target, config, dedup, observer)
}

/// Replaces all confounders with a single constant token, so conditioning
/// does nothing and the MMD acts on the marginal distributions.
fn with_constant_confounder(data: &Dataset) -> Dataset {
    let schema = ConfounderSchema::new(vec![("_marginal".into(), ConfounderKind::Categorical)]);
    let values = vec![ConfounderValue::categorical("all"); data.n_samples()];
    Dataset::new(
        data.features().clone(),
        values,
        data.feature_names().to_vec(),
        schema,
    )
    .expect("constant confounders are always valid")
}

/// Plain MMD baseline: conditional MMD with a constant confounder.
pub fn fit_plain_mmd(source: &Dataset, target: &Dataset, config: &FitConfig) -> Result<FitReport> {
    let source = with_constant_confounder(source);
    let target = with_constant_confounder(target);
    run_mmd(&source, &target, config, true, &mut |_| {})
}

/// Prior index, target batch, source batch, bandwidths, objective.
type MmdDraw = (
    usize,
    DMatrix<f64>,
    DMatrix<f64>,
    DVector<f64>,
    ObjectiveEval,
);

fn run_mmd(
    source: &Dataset,
    target: &Dataset,
    config: &FitConfig,
    dedup: bool,
    observer: &mut dyn FnMut(&MmdIterationRecord),
) -> Result<FitReport> {
    let start = Instant::now();
    let m = source.n_features();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let nw_target = fit_nw_sampler(target, config.prototypes_k, &mut rng)?;
    let nw_source = fit_nw_sampler(source, config.prototypes_k, &mut rng)?;
    let prior = build_prior(source, target, dedup)?;
    let prior_dist = WeightedIndex::new(prior.weights.iter().copied())
        .map_err(|e| CondoError::NumericalFailure(format!("prior weights: {e}")))?;

    let mut map = AffineMap::identity(m, config.transform_kind);
    let mut vel_a = DMatrix::<f64>::zeros(m, m);
    let mut vel_b = DVector::<f64>::zeros(m);
    let mut trace = Vec::with_capacity(config.iterations);

    let draw = |map: &AffineMap, rng: &mut ChaCha20Rng| -> Result<MmdDraw> {
        let idx = prior_dist.sample(rng);
        let y = &prior.values[idx];
        let tb = nw_target.sample(y, config.batch_size, rng)?;
        let sb = nw_source.sample(y, config.batch_size, rng)?;
        let sigma = dynamic_bandwidth(&tb, &sb, map, config.bandwidth_floor)?;
        let kernel = RbfKernel::new(sigma.clone())?;
        let eval = mmd_batch_objective(&tb, &sb, map, &kernel)?;
        Ok((idx, tb, sb, sigma, eval))
    };

    for it in 0..config.iterations {
        let (idx, tb, sb, sigma, eval) = draw(&map, &mut rng)?;
        observer(&MmdIterationRecord {
            iteration: it as u64,
            confounder: &prior.values[idx],
            target_batch: &tb,
            source_batch: &sb,
            map: &map,
            bandwidths: &sigma,
            objective: eval.value,
        });
        trace.push((it as u64, eval.value));

        vel_a = &vel_a * config.momentum + eval.grad_a;
        vel_b = &vel_b * config.momentum + eval.grad_b;
        let a = map.matrix_a() - &vel_a * config.learning_rate;
        let b = map.offset_b() - &vel_b * config.learning_rate;
        map = AffineMap::new(a, b, config.transform_kind)?;
    }

    // One extra evaluation at the final parameters for the reported objective.
    let (_, _, _, _, eval) = draw(&map, &mut rng)?;
    Ok(FitReport {
        transform: map,
        objective_trace: trace,
        final_objective: eval.value,
        config: config.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}
