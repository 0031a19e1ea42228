//! Typed tabular data: feature values, column metadata and labelled rows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("parse error at row {row}, column {column:?}: {message}")]
    ParseError {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One cell of a row.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    Numeric(f64),
    Categorical(String),
    Missing,
}

impl FeatureValue {
    /// Builds a numeric value, rejecting NaN and infinities.
    pub fn numeric(x: f64) -> Option<Self> {
        x.is_finite().then_some(FeatureValue::Numeric(x))
    }

    /// Builds a categorical value; empty text becomes [`FeatureValue::Missing`].
    pub fn categorical(s: impl Into<String>) -> Self {
        let s = s.into();
        if s.is_empty() {
            FeatureValue::Missing
        } else {
            FeatureValue::Categorical(s)
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, FeatureValue::Missing)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FeatureValue::Numeric(x) => Some(*x),
            _ => None,
        }
    }
}

/// Renders values the way they appear in serializations: integers without a
/// decimal point, other numbers as the shortest round-tripping decimal,
/// missing as empty text.
impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Numeric(x) => f.write_str(&format_number(*x)),
            FeatureValue::Categorical(s) => f.write_str(s),
            FeatureValue::Missing => Ok(()),
        }
    }
}

pub fn format_number(x: f64) -> String {
    // f64's Display is already the shortest round-trip form and never uses
    // exponent notation; only negative zero needs normalizing.
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub raw_name: String,
    /// Human-readable name used in serializations. Defaults to `raw_name`.
    #[serde(default)]
    pub display_name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_display_map: Option<BTreeMap<String, String>>,
}

impl ColumnSpec {
    pub fn new(raw_name: impl Into<String>, kind: ColumnKind) -> Self {
        let raw_name = raw_name.into();
        ColumnSpec {
            display_name: raw_name.clone(),
            raw_name,
            kind,
            value_display_map: None,
        }
    }

    pub fn numeric(raw_name: impl Into<String>) -> Self {
        Self::new(raw_name, ColumnKind::Numeric)
    }

    pub fn categorical(raw_name: impl Into<String>) -> Self {
        Self::new(raw_name, ColumnKind::Categorical)
    }

    pub fn with_display_name(mut self, name: impl Into<String>) -> Self {
        self.display_name = name.into();
        self
    }

    pub fn with_value_map<I, K, V>(mut self, entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        self.value_display_map = Some(
            entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        );
        self
    }

    fn normalize(&mut self) {
        if self.display_name.is_empty() {
            self.display_name = self.raw_name.clone();
        }
    }
}

/// Column metadata document: either a bare array of column specs or an
/// object carrying columns plus optional class names and label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub columns: Vec<ColumnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MetadataDoc {
    Columns(Vec<ColumnSpec>),
    Full(Metadata),
}

impl Metadata {
    pub fn new(columns: Vec<ColumnSpec>) -> Self {
        Metadata {
            columns,
            class_names: None,
            label_column: None,
        }
    }

    pub fn with_class_names<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.class_names = Some(names.into_iter().map(Into::into).collect());
        self
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let doc: MetadataDoc =
            serde_json::from_str(text).map_err(|e| DatasetError::Metadata(e.to_string()))?;
        let mut meta = match doc {
            MetadataDoc::Columns(columns) => Metadata::new(columns),
            MetadataDoc::Full(m) => m,
        };
        for c in &mut meta.columns {
            c.normalize();
        }
        Ok(meta)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// Labelled rows with typed columns. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<ColumnSpec>,
    rows: Vec<Vec<FeatureValue>>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        columns: Vec<ColumnSpec>,
        rows: Vec<Vec<FeatureValue>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c.raw_name.as_str()) {
                return Err(DatasetError::Invalid(format!(
                    "duplicate column {:?}",
                    c.raw_name
                )));
            }
            if c.display_name.is_empty() {
                return Err(DatasetError::Invalid(format!(
                    "column {:?} has an empty display name",
                    c.raw_name
                )));
            }
        }
        if rows.len() != labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(DatasetError::Invalid(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
            for v in row {
                match v {
                    FeatureValue::Numeric(x) if !x.is_finite() => {
                        return Err(DatasetError::Invalid(format!("row {i}: non-finite value")))
                    }
                    FeatureValue::Categorical(s) if s.is_empty() => {
                        return Err(DatasetError::Invalid(format!(
                            "row {i}: empty categorical value"
                        )))
                    }
                    _ => {}
                }
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(DatasetError::Invalid(format!(
                "label index {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Dataset {
            columns,
            rows,
            labels,
            class_names,
        })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<FeatureValue>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[FeatureValue] {
        &self.rows[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Replaces categorical values that have a display mapping. Numeric and
    /// missing values are untouched.
    pub fn apply_display_maps(&self) -> Dataset {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.columns)
                    .map(|(v, col)| match (v, &col.value_display_map) {
                        (FeatureValue::Categorical(s), Some(map)) => match map.get(s) {
                            Some(display) => FeatureValue::categorical(display.clone()),
                            None => v.clone(),
                        },
                        _ => v.clone(),
                    })
                    .collect()
            })
            .collect();
        Dataset {
            columns: self.columns.clone(),
            rows,
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Dataset {
        Dataset {
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| indices.iter().map(|&i| r[i].clone()).collect())
                .collect(),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Reads a CSV file with a header row. Column order follows `meta.columns`.
pub fn load_csv(
    path: impl AsRef<Path>,
    meta: &Metadata,
    label_column: &str,
) -> Result<Dataset, DatasetError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_csv(&text, meta, label_column)
}

pub fn parse_csv(text: &str, meta: &Metadata, label_column: &str) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| header.iter().position(|h| h == name);

    let label_pos =
        position(label_column).ok_or_else(|| DatasetError::MissingColumn(label_column.to_string()))?;
    let mut col_pos = Vec::with_capacity(meta.columns.len());
    for col in &meta.columns {
        let p = position(&col.raw_name)
            .ok_or_else(|| DatasetError::MissingColumn(col.raw_name.clone()))?;
        col_pos.push(p);
    }
    for h in &header {
        if h != label_column && !meta.columns.iter().any(|c| &c.raw_name == h) {
            return Err(DatasetError::MissingColumn(format!(
                "{h} (present in header, absent from metadata)"
            )));
        }
    }

    let mut class_names = meta.class_names.clone().unwrap_or_default();
    let fixed_classes = meta.class_names.is_some();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        if record.len() != header.len() {
            return Err(DatasetError::ParseError {
                row: row_no,
                column: String::new(),
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(meta.columns.len());
        for (col, &p) in meta.columns.iter().zip(&col_pos) {
            row.push(parse_cell(&record[p], col, row_no)?);
        }
        let label_text = &record[label_pos];
        let label = match class_names.iter().position(|c| c == label_text) {
            Some(l) => l,
            None if !fixed_classes => {
                class_names.push(label_text.to_string());
                class_names.len() - 1
            }
            None => {
                return Err(DatasetError::ParseError {
                    row: row_no,
                    column: label_column.to_string(),
                    message: format!("unknown class {label_text:?}"),
                })
            }
        };
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut columns = meta.columns.clone();
    for c in &mut columns {
        c.normalize();
    }
    Dataset::new(columns, rows, labels, class_names)
}

fn parse_cell(cell: &str, col: &ColumnSpec, row: usize) -> Result<FeatureValue, DatasetError> {
    if cell.trim().is_empty() {
        return Ok(FeatureValue::Missing);
    }
    match col.kind {
        ColumnKind::Categorical => Ok(FeatureValue::categorical(cell)),
        ColumnKind::Numeric => {
            let err = |message: String| DatasetError::ParseError {
                row,
                column: col.raw_name.clone(),
                message,
            };
            let x: f64 = cell
                .trim()
                .parse()
                .map_err(|_| err(format!("{cell:?} is not a number")))?;
            FeatureValue::numeric(x).ok_or_else(|| err(format!("{cell:?} is not finite")))
        }
    }
}
