//! Confounded domain adaptation.
//!
//! Learns an affine (or location-scale) map from a source dataset to a
//! target dataset by minimizing the expected divergence between
//! confounder-conditional distributions. KL-based and MMD-based objectives
//! are provided, along with classic Gaussian-OT and plain-MMD baselines,
//! synthetic scenario generators, and evaluation metrics.

pub mod affine;
pub mod config;
pub mod data;
pub mod error;
pub mod estimators;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod simgen;
pub mod solver;
pub mod svg;

pub use affine::{AffineMap, MapKind};
pub use config::{FitConfig, FitMethod};
pub use data::{
    validate_pair, ConfounderEncoder, ConfounderEntry, ConfounderKind, ConfounderSchema,
    ConfounderValue, Dataset,
};
pub use error::{CondoError, Result};
pub use estimators::{
    build_prior, fit_gp, fit_linear_gaussian, fit_nw_sampler, ConfounderPrior, GpEstimator,
    LinearGaussianEstimator, NwSampler,
};
pub use kernels::{dynamic_bandwidth, kmeans, ConfounderKernel, RbfKernel};
pub use model::{deserialize_model, serialize_model, FitReport};
pub use objectives::{
    forward_kl_objective, mmd_batch_objective, reverse_kl_1d_closed_form, reverse_kl_objective,
    KlCovariance, KlProblem, ObjectiveEval,
};
pub use simgen::{generate, GeneratedData, Scenario, ScenarioSpec};
pub use solver::{
    fit, fit_condo_mmd, fit_condo_mmd_with_observer, fit_gaussian_ot, fit_plain_mmd,
    fit_with_dedup, gaussian_ot_map, MmdIterationRecord,
};
