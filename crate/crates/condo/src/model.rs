//! Fit reports and the on-disk model format.
//!
//! Model files are JSON. Floats are written with shortest round-trip
//! formatting, so serialize/deserialize is the identity on every finite
//! field.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::{AffineMap, MapKind};
use crate::config::FitConfig;
use crate::error::{CondoError, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything a fit produces: the transform, its optimization trace, and the
/// configuration that led to it.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub transform: AffineMap,
    /// (iteration, objective value), one entry per iteration for iterative
    /// methods; empty for closed-form methods.
    pub objective_trace: Vec<(u64, f64)>,
    pub final_objective: f64,
    pub config: FitConfig,
    pub wall_time_seconds: f64,
}

/// The exact JSON layout of a model file.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    method: String,
    transform_kind: MapKind,
    m: usize,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    config: FitConfig,
    final_objective: f64,
    seed: u64,
    objective_trace: Vec<(u64, f64)>,
    wall_time_seconds: f64,
}

impl ModelFile {
    fn from_report(report: &FitReport) -> Self {
        let a = report.transform.matrix_a();
        let m = report.transform.dim();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            method: report.config.method.name().to_string(),
            transform_kind: report.transform.kind(),
            m,
            a: (0..m)
                .map(|r| (0..m).map(|c| a[(r, c)]).collect())
                .collect(),
            b: report.transform.offset_b().iter().copied().collect(),
            config: report.config.clone(),
            final_objective: report.final_objective,
            seed: report.config.seed,
            objective_trace: report.objective_trace.clone(),
            wall_time_seconds: report.wall_time_seconds,
        }
    }

    fn into_report(self) -> Result<FitReport> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(CondoError::Validation(format!(
                "unsupported model format_version {}",
                self.format_version
            )));
        }
        if self.method != self.config.method.name() {
            return Err(CondoError::Validation(format!(
                "model method '{}' disagrees with config method '{}'",
                self.method,
                self.config.method.name()
            )));
        }
        if self.a.len() != self.m || self.a.iter().any(|row| row.len() != self.m) {
            return Err(CondoError::Validation(format!(
                "field 'a' is not an {m}x{m} matrix",
                m = self.m
            )));
        }
        if self.b.len() != self.m {
            return Err(CondoError::Validation(format!(
                "field 'b' has length {} but m = {}",
                self.b.len(),
                self.m
            )));
        }
        let a = DMatrix::from_fn(self.m, self.m, |r, c| self.a[r][c]);
        let b = DVector::from_vec(self.b);
        // AffineMap::new enforces the diagonal invariant for location_scale.
        let transform = AffineMap::new(a, b, self.transform_kind)?;
        Ok(FitReport {
            transform,
            objective_trace: self.objective_trace,
            final_objective: self.final_objective,
            config: self.config,
            wall_time_seconds: self.wall_time_seconds,
        })
    }
}

/// Serializes a fit report to the model JSON format.
pub fn serialize_model(report: &FitReport) -> String {
    let file = ModelFile::from_report(report);
    let mut out = serde_json::to_string_pretty(&file).expect("model file is always serializable");
    out.push('\n');
    out
}

/// Parses a model file, validating structure and invariants.
pub fn deserialize_model(bytes: &[u8]) -> Result<FitReport> {
    let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| {
        CondoError::Parse(format!(
            "model JSON at line {}, column {}: {}",
            e.line(),
            e.column(),
            e
        ))
    })?;
    file.into_report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FitMethod;

    fn sample_report() -> FitReport {
        let transform = AffineMap::new(
            DMatrix::from_row_slice(2, 2, &[1.25, -0.5, 0.75, 2.0]),
            DVector::from_vec(vec![0.1, -0.2]),
            MapKind::FullAffine,
        )
        .unwrap();
        let mut config = FitConfig::new(FitMethod::CondoLinearReverseKl, MapKind::FullAffine);
        config.seed = 42;
        FitReport {
            transform,
            objective_trace: vec![(0, 10.5), (1, 3.25)],
            final_objective: 3.25,
            config,
            wall_time_seconds: 0.125,
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let report = sample_report();
        let json = serialize_model(&report);
        let back = deserialize_model(json.as_bytes()).unwrap();
        assert_eq!(back, report);
        // And the bytes themselves are stable.
        assert_eq!(serialize_model(&back), json);
    }

    #[test]
    fn truncated_json_is_a_parse_error() {
        let json = serialize_model(&sample_report());
        let err = deserialize_model(&json.as_bytes()[..json.len() / 2]).unwrap_err();
        assert!(matches!(err, CondoError::Parse(_)), "{err}");
    }

    #[test]
    fn off_diagonal_location_scale_rejected_on_load() {
        let report = sample_report();
        let mut value: serde_json::Value = serde_json::from_str(&serialize_model(&report)).unwrap();
        value["transform_kind"] = "location_scale".into();
        value["config"]["transform_kind"] = "location_scale".into();
        let err = deserialize_model(value.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, CondoError::Validation(_)), "{err}");
    }
}
