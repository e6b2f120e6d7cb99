//! Datasets: a feature matrix plus per-sample confounder records.
//!
//! Confounders are mixed continuous/categorical. Categorical values are kept
//! as string tokens in the dataset and interned to dense one-hot columns at
//! fit time by [`ConfounderEncoder`].

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CondoError, Result};

/// Kind of a confounder column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfounderKind {
    Continuous,
    Categorical,
}

impl fmt::Display for ConfounderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfounderKind::Continuous => write!(f, "continuous"),
            ConfounderKind::Categorical => write!(f, "categorical"),
        }
    }
}

/// Ordered list of confounder columns: (name, kind).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfounderSchema(pub Vec<(String, ConfounderKind)>);

impl ConfounderSchema {
    pub fn new(entries: Vec<(String, ConfounderKind)>) -> Self {
        ConfounderSchema(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(n, _)| n.as_str())
    }

    pub fn kind(&self, i: usize) -> ConfounderKind {
        self.0[i].1
    }

    pub fn all_categorical(&self) -> bool {
        self.0
            .iter()
            .all(|(_, k)| *k == ConfounderKind::Categorical)
    }
}

/// One confounder entry: a finite real or a category token.
#[derive(Debug, Clone)]
pub enum ConfounderEntry {
    Continuous(f64),
    Categorical(String),
}

impl ConfounderEntry {
    pub fn kind(&self) -> ConfounderKind {
        match self {
            ConfounderEntry::Continuous(_) => ConfounderKind::Continuous,
            ConfounderEntry::Categorical(_) => ConfounderKind::Categorical,
        }
    }
}

impl PartialEq for ConfounderEntry {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            // Values are finite by invariant, so bit equality is value equality.
            (ConfounderEntry::Continuous(a), ConfounderEntry::Continuous(b)) => {
                a.to_bits() == b.to_bits()
            }
            (ConfounderEntry::Categorical(a), ConfounderEntry::Categorical(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for ConfounderEntry {}

impl std::hash::Hash for ConfounderEntry {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            ConfounderEntry::Continuous(v) => {
                state.write_u8(0);
                state.write_u64(v.to_bits());
            }
            ConfounderEntry::Categorical(t) => {
                state.write_u8(1);
                t.hash(state);
            }
        }
    }
}

/// A full confounder record for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfounderValue {
    pub entries: Vec<ConfounderEntry>,
}

impl ConfounderValue {
    pub fn new(entries: Vec<ConfounderEntry>) -> Self {
        ConfounderValue { entries }
    }

    pub fn continuous(v: f64) -> Self {
        ConfounderValue::new(vec![ConfounderEntry::Continuous(v)])
    }

    pub fn categorical(token: impl Into<String>) -> Self {
        ConfounderValue::new(vec![ConfounderEntry::Categorical(token.into())])
    }

    /// Checks arity and per-entry kinds against a schema.
    pub fn matches_schema(&self, schema: &ConfounderSchema) -> Result<()> {
        if self.entries.len() != schema.len() {
            return Err(CondoError::SchemaMismatch(format!(
                "confounder arity {} does not match schema arity {}",
                self.entries.len(),
                schema.len()
            )));
        }
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.kind() != schema.kind(i) {
                return Err(CondoError::SchemaMismatch(format!(
                    "entry {} is {} but schema expects {}",
                    i,
                    entry.kind(),
                    schema.kind(i)
                )));
            }
            match entry {
                ConfounderEntry::Continuous(v) if !v.is_finite() => {
                    return Err(CondoError::Validation(format!(
                        "confounder entry {i} is not finite"
                    )));
                }
                ConfounderEntry::Categorical(t) if t.is_empty() => {
                    return Err(CondoError::Validation(format!(
                        "confounder entry {i} is an empty category token"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A dataset: N samples of M features plus N confounder records.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: DMatrix<f64>,
    confounders: Vec<ConfounderValue>,
    feature_names: Vec<String>,
    schema: ConfounderSchema,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        confounders: Vec<ConfounderValue>,
        feature_names: Vec<String>,
        schema: ConfounderSchema,
    ) -> Result<Self> {
        let (n, m) = features.shape();
        if n == 0 || m == 0 {
            return Err(CondoError::InvalidArgument(format!(
                "dataset must have at least one row and one feature (got {n}x{m})"
            )));
        }
        if feature_names.len() != m {
            return Err(CondoError::DimensionMismatch(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                m
            )));
        }
        if confounders.len() != n {
            return Err(CondoError::DimensionMismatch(format!(
                "{} confounder records for {} rows",
                confounders.len(),
                n
            )));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(CondoError::Validation(format!(
                "feature matrix contains non-finite value {v}"
            )));
        }
        for value in &confounders {
            value.matches_schema(&schema)?;
        }
        Ok(Dataset {
            features,
            confounders,
            feature_names,
            schema,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn confounders(&self) -> &[ConfounderValue] {
        &self.confounders
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn schema(&self) -> &ConfounderSchema {
        &self.schema
    }
}

/// Checks that two datasets can be adapted to each other: same feature width
/// and identical confounder schemas.
pub fn validate_pair(source: &Dataset, target: &Dataset) -> Result<()> {
    if source.n_features() != target.n_features() {
        return Err(CondoError::DimensionMismatch(format!(
            "source has {} features, target has {}",
            source.n_features(),
            target.n_features()
        )));
    }
    if source.schema() != target.schema() {
        return Err(CondoError::SchemaMismatch(
            "source and target confounder schemas differ".into(),
        ));
    }
    Ok(())
}

/// Token -> dense id map plus the tokens in first-seen order.
type CategoryTable = (HashMap<String, usize>, Vec<String>);

/// Interns categorical tokens into dense one-hot columns.
///
/// The encoded layout is one column per continuous entry and one column per
/// seen category of each categorical entry, in schema order. Column order is
/// deterministic: categories appear in first-seen order over the fitting data.
#[derive(Debug, Clone)]
pub struct ConfounderEncoder {
    schema: ConfounderSchema,
    categories: Vec<Option<CategoryTable>>,
    width: usize,
}

impl ConfounderEncoder {
    /// Builds the encoder from the values seen at fit time.
    pub fn fit(schema: &ConfounderSchema, values: &[ConfounderValue]) -> Result<Self> {
        let mut categories: Vec<Option<CategoryTable>> = vec![None; schema.len()];
        for (i, (_, kind)) in schema.0.iter().enumerate() {
            if *kind == ConfounderKind::Categorical {
                categories[i] = Some((HashMap::new(), Vec::new()));
            }
        }
        for value in values {
            value.matches_schema(schema)?;
            for (i, entry) in value.entries.iter().enumerate() {
                if let ConfounderEntry::Categorical(token) = entry {
                    let (map, order) = categories[i].as_mut().expect("kind checked above");
                    if !map.contains_key(token) {
                        map.insert(token.clone(), order.len());
                        order.push(token.clone());
                    }
                }
            }
        }
        let width = schema
            .0
            .iter()
            .enumerate()
            .map(|(i, (_, kind))| match kind {
                ConfounderKind::Continuous => 1,
                ConfounderKind::Categorical => categories[i].as_ref().unwrap().1.len(),
            })
            .sum();
        Ok(ConfounderEncoder {
            schema: schema.clone(),
            categories,
            width,
        })
    }

    /// Encoded width (without intercept).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn schema(&self) -> &ConfounderSchema {
        &self.schema
    }

    /// Encodes a value; unseen category tokens are an error.
    pub fn encode(&self, value: &ConfounderValue) -> Result<DVector<f64>> {
        self.encode_inner(value, true)
    }

    /// Encodes a value; unseen category tokens map to an all-zero one-hot
    /// block instead of an error. Used by kernels, which must evaluate at
    /// arbitrary query points.
    pub fn encode_lenient(&self, value: &ConfounderValue) -> Result<DVector<f64>> {
        self.encode_inner(value, false)
    }

    fn encode_inner(&self, value: &ConfounderValue, strict: bool) -> Result<DVector<f64>> {
        value.matches_schema(&self.schema)?;
        let mut out = DVector::zeros(self.width);
        let mut col = 0;
        for (i, entry) in value.entries.iter().enumerate() {
            match entry {
                ConfounderEntry::Continuous(v) => {
                    out[col] = *v;
                    col += 1;
                }
                ConfounderEntry::Categorical(token) => {
                    let (map, order) = self.categories[i].as_ref().unwrap();
                    match map.get(token) {
                        Some(&id) => out[col + id] = 1.0,
                        None if strict => {
                            return Err(CondoError::UnknownCategory(token.clone()));
                        }
                        None => {}
                    }
                    col += order.len();
                }
            }
        }
        Ok(out)
    }

    /// Encodes a whole list into an n x width matrix.
    pub fn encode_all(&self, values: &[ConfounderValue]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(values.len(), self.width);
        for (r, v) in values.iter().enumerate() {
            let row = self.encode(v)?;
            out.row_mut(r).copy_from(&row.transpose());
        }
        Ok(out)
    }
}
