//! Serializations produced by a text-generation model.
//!
//! Each serializer splits a row into units, sends one request per unit and
//! joins the generations in column order with single spaces. Units of one
//! row may be generated concurrently; a failing unit aborts the row and
//! reports the lowest failing unit index.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::backend::{bounded_map, BackendError, GenerationParams, GenerationRequest, Generator};
use crate::dataset::{ColumnSpec, Dataset, FeatureValue};
use crate::serialize::{list_template, SerializeError, SerializedExample, SerializerId};

pub const PAIR_INSTRUCTION: &str = "Write this information as a sentence: ";
pub const REWRITE_INSTRUCTION: &str = "Rewrite all list items in the input as a natural text.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmSerializeError {
    #[error("backend failed on unit {unit}: {source}")]
    Backend {
        unit: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Serialize(#[from] SerializeError),
    #[error("subject {0:?} is not in the configured lexicon")]
    UnknownSubject(String),
}

/// Allowed subjects for the guided full rewrite (`The {subject} is`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectLexicon(BTreeSet<String>);

impl Default for SubjectLexicon {
    fn default() -> Self {
        Self::new(["person", "car", "patient"])
    }
}

impl SubjectLexicon {
    pub fn new<S: Into<String>>(subjects: impl IntoIterator<Item = S>) -> Self {
        SubjectLexicon(subjects.into_iter().map(Into::into).collect())
    }

    pub fn insert(&mut self, subject: impl Into<String>) {
        self.0.insert(subject.into());
    }

    pub fn contains(&self, subject: &str) -> bool {
        self.0.contains(subject)
    }
}

/// Settings shared by the LLM-assisted serializers.
#[derive(Debug, Clone)]
pub struct LlmSerializer {
    pub params: GenerationParams,
    /// Upper bound on concurrent unit requests for one row.
    pub max_concurrency: usize,
    pub subjects: SubjectLexicon,
}

impl Default for LlmSerializer {
    fn default() -> Self {
        LlmSerializer {
            params: GenerationParams::default(),
            max_concurrency: 1,
            subjects: SubjectLexicon::default(),
        }
    }
}

fn pair_text(col: &ColumnSpec, v: &FeatureValue) -> String {
    format!("{}: {}", col.display_name, v)
}

fn check_arity(cols: &[ColumnSpec], row: &[FeatureValue]) -> Result<(), SerializeError> {
    if cols.len() != row.len() {
        return Err(SerializeError::ArityMismatch {
            columns: cols.len(),
            row: row.len(),
        });
    }
    Ok(())
}

impl LlmSerializer {
    fn run_units(&self, prompts: Vec<String>, backend: &dyn Generator) -> Result<String, LlmSerializeError> {
        let results = bounded_map(&prompts, self.max_concurrency, |_, p| {
            backend.generate(&GenerationRequest::new(p.clone()).with_params(&self.params))
        });
        let mut parts = Vec::with_capacity(results.len());
        for (unit, r) in results.into_iter().enumerate() {
            let text = r.map_err(|source| LlmSerializeError::Backend { unit, source })?;
            if !text.is_empty() {
                parts.push(text);
            }
        }
        Ok(parts.join(" "))
    }

    /// One request per column with the bare `name: value` pair.
    pub fn table_to_text(
        &self,
        cols: &[ColumnSpec],
        row: &[FeatureValue],
        backend: &dyn Generator,
    ) -> Result<String, LlmSerializeError> {
        check_arity(cols, row)?;
        let prompts = cols.iter().zip(row).map(|(c, v)| pair_text(c, v)).collect();
        self.run_units(prompts, backend)
    }

    /// Consecutive pairs of columns (a trailing singleton when the count is
    /// odd), each rendered `name: value, name: value` after the instruction.
    pub fn text_t0_pairs(
        &self,
        cols: &[ColumnSpec],
        row: &[FeatureValue],
        backend: &dyn Generator,
    ) -> Result<String, LlmSerializeError> {
        check_arity(cols, row)?;
        let pairs: Vec<String> = cols.iter().zip(row).map(|(c, v)| pair_text(c, v)).collect();
        let prompts = pairs
            .chunks(2)
            .map(|group| format!("{PAIR_INSTRUCTION}{}", group.join(", ")))
            .collect();
        self.run_units(prompts, backend)
    }

    /// One request holding the whole list serialization, guided with
    /// `The {subject} is`. The guide is kept at the front of the output.
    pub fn text_gpt3_full(
        &self,
        cols: &[ColumnSpec],
        row: &[FeatureValue],
        backend: &dyn Generator,
        subject: &str,
    ) -> Result<String, LlmSerializeError> {
        if !self.subjects.contains(subject) {
            return Err(LlmSerializeError::UnknownSubject(subject.to_string()));
        }
        let list = list_template(cols, row)?;
        let guide = format!("The {subject} is");
        let request = GenerationRequest::new(format!("{REWRITE_INSTRUCTION}\n\n{list}\n\n"))
            .with_params(&self.params)
            .with_guide_prefix(guide.clone());
        let generation = backend
            .generate(&request)
            .map_err(|source| LlmSerializeError::Backend { unit: 0, source })?;
        Ok(format!("{guide}{generation}"))
    }

    pub fn serialize_row(
        &self,
        id: SerializerId,
        ds: &Dataset,
        row_index: usize,
        backend: &dyn Generator,
        subject: &str,
    ) -> Result<SerializedExample, LlmSerializeError> {
        let (cols, row) = (ds.columns(), ds.row(row_index));
        let text = match id {
            SerializerId::TableToText => self.table_to_text(cols, row, backend)?,
            SerializerId::TextPairs => self.text_t0_pairs(cols, row, backend)?,
            SerializerId::TextFull => self.text_gpt3_full(cols, row, backend, subject)?,
            other => return Err(SerializeError::NeedsBackend(other).into()),
        };
        Ok(SerializedExample {
            row_index,
            serializer_id: id,
            seed: None,
            text,
        })
    }
}

/// How many of a row's non-missing values appear verbatim in a generated
/// serialization.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CoverageReport {
    pub covered: usize,
    pub total: usize,
    pub fraction: f64,
    /// Display names of columns whose value was not found.
    pub absent: Vec<String>,
}

pub fn coverage(cols: &[ColumnSpec], row: &[FeatureValue], text: &str) -> CoverageReport {
    let mut covered = 0;
    let mut total = 0;
    let mut absent = Vec::new();
    for (c, v) in cols.iter().zip(row) {
        if v.is_missing() {
            continue;
        }
        total += 1;
        if text.contains(&v.to_string()) {
            covered += 1;
        } else {
            absent.push(c.display_name.clone());
        }
    }
    CoverageReport {
        covered,
        total,
        fraction: if total == 0 { 1.0 } else { covered as f64 / total as f64 },
        absent,
    }
}
