//! Fit configuration: method selection and optimizer hyperparameters.

use serde::{Deserialize, Serialize};

use crate::affine::MapKind;
use crate::error::{CondoError, Result};

/// Adaptation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Closed-form Gaussian optimal-transport map (baseline).
    GaussianOt,
    /// Confounder-unaware MMD minimization (baseline).
    Mmd,
    /// Linear-Gaussian conditionals, forward KL.
    CondoLinearForwardKl,
    /// Linear-Gaussian conditionals, reverse KL.
    CondoLinearReverseKl,
    /// Per-feature Gaussian-process conditionals, reverse KL (diagonal maps only).
    CondoGpReverseKl,
    /// Conditional MMD with Nadaraya-Watson sampling.
    CondoMmd,
}

impl FitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FitMethod::GaussianOt => "gaussian_ot",
            FitMethod::Mmd => "mmd",
            FitMethod::CondoLinearForwardKl => "condo_linear_forward_kl",
            FitMethod::CondoLinearReverseKl => "condo_linear_reverse_kl",
            FitMethod::CondoGpReverseKl => "condo_gp_reverse_kl",
            FitMethod::CondoMmd => "condo_mmd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian_ot" => Ok(FitMethod::GaussianOt),
            "mmd" => Ok(FitMethod::Mmd),
            "condo_linear_forward_kl" => Ok(FitMethod::CondoLinearForwardKl),
            "condo_linear_reverse_kl" => Ok(FitMethod::CondoLinearReverseKl),
            "condo_gp_reverse_kl" => Ok(FitMethod::CondoGpReverseKl),
            "condo_mmd" => Ok(FitMethod::CondoMmd),
            other => Err(CondoError::InvalidArgument(format!(
                "unknown method '{other}'"
            ))),
        }
    }

    /// Per-method learning-rate default: KL objectives take larger steps than MMD.
    pub fn default_learning_rate(&self) -> f64 {
        match self {
            FitMethod::Mmd | FitMethod::CondoMmd => 1e-3,
            _ => 1e-2,
        }
    }
}

/// All knobs for a fit. Every numeric field is range-checked by [`FitConfig::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: FitMethod,
    pub transform_kind: MapKind,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub ridge: f64,
    pub bandwidth_floor: f64,
    pub prototypes_k: usize,
}

impl FitConfig {
    pub fn new(method: FitMethod, transform_kind: MapKind) -> Self {
        FitConfig {
            method,
            transform_kind,
            iterations: 1000,
            batch_size: 128,
            learning_rate: method.default_learning_rate(),
            momentum: 0.9,
            seed: 0,
            ridge: 1e-3,
            bandwidth_floor: 1e-6,
            prototypes_k: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CondoError::InvalidArgument(
                "batch_size must be positive".into(),
            ));
        }
        if self.prototypes_k == 0 {
            return Err(CondoError::InvalidArgument(
                "prototypes_k must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CondoError::InvalidArgument(format!(
                "learning_rate must be a positive real, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CondoError::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(CondoError::InvalidArgument(format!(
                "ridge must be nonnegative, got {}",
                self.ridge
            )));
        }
        if !(self.bandwidth_floor > 0.0 && self.bandwidth_floor.is_finite()) {
            return Err(CondoError::InvalidArgument(format!(
                "bandwidth_floor must be positive, got {}",
                self.bandwidth_floor
            )));
        }
        if self.method == FitMethod::CondoGpReverseKl && self.transform_kind == MapKind::FullAffine
        {
            return Err(CondoError::InvalidArgument(
                "condo_gp_reverse_kl models features independently and only supports \
                 location_scale transforms"
                    .into(),
            ));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        let mut cfg = FitConfig::new(FitMethod::CondoLinearReverseKl, MapKind::LocationScale);
        cfg.learning_rate = 1e-3;
        cfg
    }
}
