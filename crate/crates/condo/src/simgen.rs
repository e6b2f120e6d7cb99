//! Deterministic generators for the synthetic adaptation scenarios.
//!
//! Each scenario draws latent features from a conditional law given the
//! confounder, then applies an (invertible) batch effect to produce the
//! observed source. Five splits are emitted: source, target, the oracle
//! (pre-batch-effect) source, and heldout source/oracle pairs whose
//! confounders are drawn from the target's label distribution.
//!
//! Conditional laws:
//! - homoscedastic_linear:      x | y ~ N(3y + 2, 1)
//! - heteroscedastic_linear:    x | y ~ N(3y + 2, (0.25 + 0.5 y)^2)
//! - nonlinear_heteroscedastic: x | y ~ N(8 sin(y/2) + y, (0.25 + 0.5 y / 4)^2)
//! - categorical_1d:            4 categories with means {0, 4, 8, 12}, sd 1
//! - two_circles_2d:            two circles centered (0,0) and (0,2), radius
//!   drawn from N(1, 0.1) and angle from U[0, 2pi)
//!
//! The continuous confounder is uniform on (0, 8) in the target and on
//! (4, 8) in the source when label shift is on. The categorical source
//! distribution under label shift is (0.4, 0.3, 0.2, 0.1) against a uniform
//! target; the two-circles source takes 1/4 of its points from the upper
//! circle against the target's 1/2.
//!
//! Feature shift applies the inverse of a fixed true map to the latent
//! features: in one dimension latent = 0.5 x_observed - 3; in the
//! two-circles scenario A* = [[1.5, 0.7], [0, 1.2]], b* = (2, -1). When
//! noise is on, unit Gaussian noise is added in the latent frame before the
//! batch effect, so mapping the observed source back recovers the oracle up
//! to N(0, 1) residuals.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;

use crate::affine::{AffineMap, MapKind};
use crate::data::{ConfounderKind, ConfounderSchema, ConfounderValue, Dataset};
use crate::error::{CondoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    HomoscedasticLinear,
    HeteroscedasticLinear,
    NonlinearHeteroscedastic,
    Categorical1d,
    TwoCircles2d,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::HomoscedasticLinear => "homoscedastic_linear",
            Scenario::HeteroscedasticLinear => "heteroscedastic_linear",
            Scenario::NonlinearHeteroscedastic => "nonlinear_heteroscedastic",
            Scenario::Categorical1d => "categorical_1d",
            Scenario::TwoCircles2d => "two_circles_2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "homoscedastic_linear" => Ok(Scenario::HomoscedasticLinear),
            "heteroscedastic_linear" => Ok(Scenario::HeteroscedasticLinear),
            "nonlinear_heteroscedastic" => Ok(Scenario::NonlinearHeteroscedastic),
            "categorical_1d" => Ok(Scenario::Categorical1d),
            "two_circles_2d" => Ok(Scenario::TwoCircles2d),
            other => Err(CondoError::InvalidArgument(format!(
                "unknown scenario '{other}'"
            ))),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Scenario::TwoCircles2d => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n_source: usize,
    pub n_target: usize,
    pub label_shift: bool,
    pub feature_shift: bool,
    pub noise: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub source: Dataset,
    pub target: Dataset,
    /// Latent (pre-batch-effect) source features, same confounders as source.
    pub oracle_source: Dataset,
    /// Fresh source draw with confounders from the target label distribution.
    pub heldout_source: Dataset,
    pub heldout_oracle: Dataset,
    /// Map from observed source to the latent/target frame.
    pub true_map: AffineMap,
}

const CATEGORY_MEANS: [f64; 4] = [0.0, 4.0, 8.0, 12.0];
const CATEGORY_SOURCE_SKEW: [f64; 4] = [0.4, 0.3, 0.2, 0.1];

fn true_map_for(spec: &ScenarioSpec) -> AffineMap {
    if !spec.feature_shift {
        let kind = match spec.scenario {
            Scenario::TwoCircles2d => MapKind::FullAffine,
            _ => MapKind::LocationScale,
        };
        return AffineMap::identity(spec.scenario.n_features(), kind);
    }
    match spec.scenario {
        Scenario::TwoCircles2d => AffineMap::new(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.7, 0.0, 1.2]),
            DVector::from_vec(vec![2.0, -1.0]),
            MapKind::FullAffine,
        )
        .unwrap(),
        _ => AffineMap::location_scale(
            DVector::from_element(1, 0.5),
            DVector::from_element(1, -3.0),
        )
        .unwrap(),
    }
}

enum Domain {
    Source,
    Target,
    /// Source mechanics with the target's label distribution.
    Heldout,
}

fn draw_confounder(spec: &ScenarioSpec, domain: &Domain, rng: &mut ChaCha20Rng) -> ConfounderValue {
    let shifted = spec.label_shift && matches!(domain, Domain::Source);
    match spec.scenario {
        Scenario::HomoscedasticLinear
        | Scenario::HeteroscedasticLinear
        | Scenario::NonlinearHeteroscedastic => {
            let lo = if shifted { 4.0 } else { 0.0 };
            ConfounderValue::continuous(rng.gen_range(lo..8.0))
        }
        Scenario::Categorical1d => {
            let u: f64 = rng.gen();
            let k = if shifted {
                let mut acc = 0.0;
                let mut k = 3;
                for (i, p) in CATEGORY_SOURCE_SKEW.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                k
            } else {
                (u * 4.0).floor().min(3.0) as usize
            };
            ConfounderValue::categorical(format!("c{k}"))
        }
        Scenario::TwoCircles2d => {
            let upper_prob = if shifted { 0.25 } else { 0.5 };
            let token = if rng.gen::<f64>() < upper_prob {
                "up"
            } else {
                "down"
            };
            ConfounderValue::categorical(token)
        }
    }
}

fn draw_latent(spec: &ScenarioSpec, y: &ConfounderValue, rng: &mut ChaCha20Rng) -> DVector<f64> {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    match spec.scenario {
        Scenario::HomoscedasticLinear
        | Scenario::HeteroscedasticLinear
        | Scenario::NonlinearHeteroscedastic => {
            let yv = match &y.entries[0] {
                crate::data::ConfounderEntry::Continuous(v) => *v,
                _ => unreachable!(),
            };
            let (mean, sd) = match spec.scenario {
                Scenario::HomoscedasticLinear => (3.0 * yv + 2.0, 1.0),
                Scenario::HeteroscedasticLinear => (3.0 * yv + 2.0, 0.25 + 0.5 * yv),
                Scenario::NonlinearHeteroscedastic => {
                    (8.0 * (yv / 2.0).sin() + yv, 0.25 + 0.5 * yv / 4.0)
                }
                _ => unreachable!(),
            };
            DVector::from_element(1, mean + sd * std_normal.sample(rng))
        }
        Scenario::Categorical1d => {
            let token = match &y.entries[0] {
                crate::data::ConfounderEntry::Categorical(t) => t.as_str(),
                _ => unreachable!(),
            };
            let k: usize = token[1..].parse().unwrap();
            DVector::from_element(1, CATEGORY_MEANS[k] + std_normal.sample(rng))
        }
        Scenario::TwoCircles2d => {
            let token = match &y.entries[0] {
                crate::data::ConfounderEntry::Categorical(t) => t.as_str(),
                _ => unreachable!(),
            };
            let cy = if token == "up" { 2.0 } else { 0.0 };
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let radius = 1.0 + 0.1 * std_normal.sample(rng);
            DVector::from_vec(vec![radius * theta.cos(), cy + radius * theta.sin()])
        }
    }
}

struct Split {
    observed: DMatrix<f64>,
    latent: DMatrix<f64>,
    confounders: Vec<ConfounderValue>,
}

fn draw_split(
    spec: &ScenarioSpec,
    domain: Domain,
    n: usize,
    inverse_map: &AffineMap,
    rng: &mut ChaCha20Rng,
) -> Split {
    let m = spec.scenario.n_features();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut observed = DMatrix::zeros(n, m);
    let mut latent = DMatrix::zeros(n, m);
    let mut confounders = Vec::with_capacity(n);
    let apply_batch_effect = !matches!(domain, Domain::Target);
    for r in 0..n {
        let y = draw_confounder(spec, &domain, rng);
        let x_latent = draw_latent(spec, &y, rng);
        let mut x = x_latent.clone();
        if apply_batch_effect {
            if spec.noise {
                for j in 0..m {
                    x[j] += std_normal.sample(rng);
                }
            }
            x = inverse_map.apply_vec(&x).unwrap();
        }
        for j in 0..m {
            observed[(r, j)] = x[j];
            latent[(r, j)] = x_latent[j];
        }
        confounders.push(y);
    }
    Split {
        observed,
        latent,
        confounders,
    }
}

/// Generates a scenario. Both datasets, the oracle splits, and the true map
/// are deterministic functions of the spec (including the seed).
pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedData> {
    if spec.n_source < 2 || spec.n_target < 2 {
        return Err(CondoError::InvalidArgument(
            "scenario needs n_source >= 2 and n_target >= 2".into(),
        ));
    }
    let schema = match spec.scenario {
        Scenario::Categorical1d | Scenario::TwoCircles2d => {
            ConfounderSchema::new(vec![("y".into(), ConfounderKind::Categorical)])
        }
        _ => ConfounderSchema::new(vec![("y".into(), ConfounderKind::Continuous)]),
    };
    let feature_names: Vec<String> = (0..spec.scenario.n_features())
        .map(|i| format!("x{i}"))
        .collect();
    let true_map = true_map_for(spec);
    let inverse_map = true_map.inverse()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let target = draw_split(spec, Domain::Target, spec.n_target, &inverse_map, &mut rng);
    let source = draw_split(spec, Domain::Source, spec.n_source, &inverse_map, &mut rng);
    let heldout = draw_split(spec, Domain::Heldout, spec.n_source, &inverse_map, &mut rng);

    let mk = |features: DMatrix<f64>, confounders: Vec<ConfounderValue>| {
        Dataset::new(features, confounders, feature_names.clone(), schema.clone())
    };
    Ok(GeneratedData {
        target: mk(target.observed, target.confounders)?,
        oracle_source: mk(source.latent.clone(), source.confounders.clone())?,
        source: mk(source.observed, source.confounders)?,
        heldout_oracle: mk(heldout.latent.clone(), heldout.confounders.clone())?,
        heldout_source: mk(heldout.observed, heldout.confounders)?,
        true_map,
    })
}
