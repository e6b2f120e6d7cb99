//! CSV dataset I/O and the truth.json side file.
//!
//! CSV contract: first line is a header; features are all numeric columns
//! not named as confounders; UTF-8 with "." as the decimal separator and no
//! quoting of numerics. Floats are written with shortest round-trip
//! formatting, so write-then-read reproduces values exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::{AffineMap, MapKind};
use crate::data::{ConfounderEntry, ConfounderKind, ConfounderSchema, ConfounderValue, Dataset};
use crate::error::{CondoError, Result};

/// Shortest representation that round-trips through f64 parsing.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

/// A raw CSV table: header plus string records.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CondoError::Parse(format!(
                "column '{name}' not found (available: {})",
                self.headers.join(", ")
            ))
        })
    }

    /// Parses the given columns as an N x |cols| numeric matrix.
    pub fn numeric_matrix(&self, cols: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rows.len(), cols.len());
        for (r, row) in self.rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out[(r, j)] = parse_float(&row[c], r, &self.headers[c])?;
            }
        }
        Ok(out)
    }
}

fn parse_float(s: &str, row: usize, column: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        CondoError::Parse(format!(
            "line {}, column '{}': '{}' is not a number",
            row + 2, // 1-based, after the header line
            column,
            s
        ))
    })
}

pub fn read_table(path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CondoError::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CondoError::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CondoError::Parse(format!("{}: {e}", path.display())))?;
        rows.push(record.iter().map(|f| f.to_string()).collect());
    }
    if rows.is_empty() {
        return Err(CondoError::Parse(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(CsvTable { headers, rows })
}

pub fn write_table(path: &Path, table: &CsvTable) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CondoError::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
    writer
        .write_record(&table.headers)
        .and_then(|_| {
            for row in &table.rows {
                writer.write_record(row)?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| CondoError::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

/// Parses a `name:kind[,name:kind...]` confounder specification.
pub fn parse_confounder_spec(spec: &str) -> Result<Vec<(String, ConfounderKind)>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, kind) = part.split_once(':').ok_or_else(|| {
            CondoError::InvalidArgument(format!(
                "confounder spec '{part}' must be name:kind with kind continuous|categorical"
            ))
        })?;
        let kind = match kind.trim() {
            "continuous" => ConfounderKind::Continuous,
            "categorical" => ConfounderKind::Categorical,
            other => {
                return Err(CondoError::InvalidArgument(format!(
                    "unknown confounder kind '{other}' (use continuous or categorical)"
                )));
            }
        };
        out.push((name.trim().to_string(), kind));
    }
    if out.is_empty() {
        return Err(CondoError::InvalidArgument(
            "confounder spec is empty".into(),
        ));
    }
    Ok(out)
}

/// Builds a dataset from a table: the named columns are confounders, every
/// other column is a numeric feature, in file order.
pub fn dataset_from_table(
    table: &CsvTable,
    confounders: &[(String, ConfounderKind)],
) -> Result<Dataset> {
    let conf_indices: Vec<usize> = confounders
        .iter()
        .map(|(name, _)| table.column_index(name))
        .collect::<Result<_>>()?;
    let feature_cols: Vec<usize> = (0..table.headers.len())
        .filter(|i| !conf_indices.contains(i))
        .collect();
    if feature_cols.is_empty() {
        return Err(CondoError::Parse(
            "no feature columns left after removing confounders".into(),
        ));
    }
    let features = table.numeric_matrix(&feature_cols)?;
    let feature_names = feature_cols
        .iter()
        .map(|&i| table.headers[i].clone())
        .collect();

    let mut values = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let mut entries = Vec::with_capacity(confounders.len());
        for ((_, kind), &idx) in confounders.iter().zip(&conf_indices) {
            let cell = &row[idx];
            entries.push(match kind {
                ConfounderKind::Continuous => {
                    ConfounderEntry::Continuous(parse_float(cell, r, &table.headers[idx])?)
                }
                ConfounderKind::Categorical => {
                    ConfounderEntry::Categorical(cell.trim().to_string())
                }
            });
        }
        values.push(ConfounderValue::new(entries));
    }
    let schema = ConfounderSchema::new(confounders.to_vec());
    Dataset::new(features, values, feature_names, schema)
}

pub fn read_dataset(path: &Path, confounders: &[(String, ConfounderKind)]) -> Result<Dataset> {
    dataset_from_table(&read_table(path)?, confounders)
}

pub fn dataset_to_table(data: &Dataset) -> CsvTable {
    let mut headers: Vec<String> = data.feature_names().to_vec();
    headers.extend(data.schema().names().map(str::to_string));
    let mut rows = Vec::with_capacity(data.n_samples());
    for r in 0..data.n_samples() {
        let mut row: Vec<String> = (0..data.n_features())
            .map(|j| format_float(data.features()[(r, j)]))
            .collect();
        for entry in &data.confounders()[r].entries {
            row.push(match entry {
                ConfounderEntry::Continuous(v) => format_float(*v),
                ConfounderEntry::Categorical(t) => t.clone(),
            });
        }
        rows.push(row);
    }
    CsvTable { headers, rows }
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_table(path, &dataset_to_table(data))
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    transform_kind: MapKind,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// Writes the scenario's true map as truth.json.
pub fn write_truth(path: &Path, map: &AffineMap) -> Result<()> {
    let m = map.dim();
    let file = TruthFile {
        transform_kind: map.kind(),
        a: (0..m)
            .map(|r| (0..m).map(|c| map.matrix_a()[(r, c)]).collect())
            .collect(),
        b: map.offset_b().iter().copied().collect(),
    };
    let mut json = serde_json::to_string_pretty(&file).expect("truth file serializes");
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<AffineMap> {
    let bytes = std::fs::read(path)?;
    let file: TruthFile = serde_json::from_slice(&bytes).map_err(|e| {
        CondoError::Parse(format!(
            "{} at line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    let m = file.b.len();
    if file.a.len() != m || file.a.iter().any(|r| r.len() != m) {
        return Err(CondoError::Validation(
            "truth.json matrix shape disagrees with offset length".into(),
        ));
    }
    AffineMap::new(
        DMatrix::from_fn(m, m, |r, c| file.a[r][c]),
        DVector::from_vec(file.b),
        file.transform_kind,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let schema = vec![
            ("site".to_string(), ConfounderKind::Categorical),
            ("age".to_string(), ConfounderKind::Continuous),
        ];
        let data = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.5, -0.25, 1e-17, 3.0]),
            vec![
                ConfounderValue::new(vec![
                    ConfounderEntry::Categorical("a".into()),
                    ConfounderEntry::Continuous(41.5),
                ]),
                ConfounderValue::new(vec![
                    ConfounderEntry::Categorical("b, quoted".into()),
                    ConfounderEntry::Continuous(62.0),
                ]),
            ],
            vec!["x0".into(), "x1".into()],
            ConfounderSchema::new(schema.clone()),
        )
        .unwrap();
        write_dataset(&path, &data).unwrap();
        let back = read_dataset(&path, &schema).unwrap();
        assert_eq!(back.features(), data.features());
        assert_eq!(back.confounders(), data.confounders());
        assert_eq!(back.feature_names(), data.feature_names());
    }

    #[test]
    fn missing_confounder_column_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "x0,y\n1.0,2.0\n").unwrap();
        let err = read_dataset(&path, &[("site".into(), ConfounderKind::Categorical)]).unwrap_err();
        assert!(err.to_string().contains("site"), "{err}");
    }

    #[test]
    fn non_numeric_feature_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "x0,y\n1.0,2.0\noops,3.0\n").unwrap();
        let err = read_dataset(&path, &[("y".into(), ConfounderKind::Continuous)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("x0"), "{msg}");
    }

    #[test]
    fn confounder_spec_parsing() {
        let spec = parse_confounder_spec("age:continuous, site:categorical").unwrap();
        assert_eq!(spec.len(), 2);
        assert_eq!(spec[0], ("age".to_string(), ConfounderKind::Continuous));
        assert_eq!(spec[1], ("site".to_string(), ConfounderKind::Categorical));
        assert!(parse_confounder_spec("age").is_err());
        assert!(parse_confounder_spec("age:float").is_err());
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        let map = AffineMap::new(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.7, 0.0, 1.2]),
            DVector::from_vec(vec![2.0, -1.0]),
            MapKind::FullAffine,
        )
        .unwrap();
        write_truth(&path, &map).unwrap();
        assert_eq!(read_truth(&path).unwrap(), map);
    }

    proptest! {
        // Shortest round-trip formatting is exact for finite doubles.
        #[test]
        fn float_format_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            let s = format_float(v);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
