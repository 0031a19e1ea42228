//! Template serializations of a single row, plus the ablation variants that
//! strip or scramble information.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnKind, ColumnSpec, Dataset, FeatureValue};
use crate::rng::seeded;

/// Number of uniform-width bins used when permuting numeric values.
pub const NUM_BINS: usize = 10;

/// Default feature cap for the short list serialization.
pub const DEFAULT_MAX_FEATURES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SerializeError {
    #[error("row has {row} values but {columns} columns were given")]
    ArityMismatch { columns: usize, row: usize },
    #[error("format {0} needs a permutation plan")]
    MissingPlan(SerializerId),
    #[error("format {0} needs a generation backend")]
    NeedsBackend(SerializerId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SerializerId {
    #[serde(rename = "list")]
    List,
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "list-values")]
    ListValues,
    #[serde(rename = "list-permuted-names")]
    ListPermutedNames,
    #[serde(rename = "list-permuted-values")]
    ListPermutedValues,
    #[serde(rename = "list-short")]
    ListShort,
    #[serde(rename = "table2text")]
    TableToText,
    #[serde(rename = "text-pairs")]
    TextPairs,
    #[serde(rename = "text-full")]
    TextFull,
}

impl SerializerId {
    pub const ALL: [SerializerId; 9] = [
        SerializerId::List,
        SerializerId::Text,
        SerializerId::ListValues,
        SerializerId::ListPermutedNames,
        SerializerId::ListPermutedValues,
        SerializerId::ListShort,
        SerializerId::TableToText,
        SerializerId::TextPairs,
        SerializerId::TextFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SerializerId::List => "list",
            SerializerId::Text => "text",
            SerializerId::ListValues => "list-values",
            SerializerId::ListPermutedNames => "list-permuted-names",
            SerializerId::ListPermutedValues => "list-permuted-values",
            SerializerId::ListShort => "list-short",
            SerializerId::TableToText => "table2text",
            SerializerId::TextPairs => "text-pairs",
            SerializerId::TextFull => "text-full",
        }
    }

    /// Whether the format calls out to a language model.
    pub fn is_generative(self) -> bool {
        matches!(
            self,
            SerializerId::TableToText | SerializerId::TextPairs | SerializerId::TextFull
        )
    }
}

impl fmt::Display for SerializerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SerializerId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SerializerId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| format!("unknown serialization format {s:?}"))
    }
}

/// Text of one serialized row plus where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedExample {
    pub row_index: usize,
    pub serializer_id: SerializerId,
    pub seed: Option<u64>,
    pub text: String,
}

fn check_arity(cols: &[ColumnSpec], row: &[FeatureValue]) -> Result<(), SerializeError> {
    if cols.len() == row.len() {
        Ok(())
    } else {
        Err(SerializeError::ArityMismatch {
            columns: cols.len(),
            row: row.len(),
        })
    }
}

fn list_lines<'a>(lines: impl Iterator<Item = (&'a str, String)>) -> String {
    lines
        .map(|(name, value)| format!("- {name}: {value}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `- {name}: {value}` per column, newline separated.
pub fn list_template(cols: &[ColumnSpec], row: &[FeatureValue]) -> Result<String, SerializeError> {
    check_arity(cols, row)?;
    Ok(list_lines(
        cols.iter()
            .zip(row)
            .map(|(c, v)| (c.display_name.as_str(), v.to_string())),
    ))
}

/// `The {name} is {value}.` per column, space separated. A missing value
/// leaves the sentence as `The {name} is.`
pub fn text_template(cols: &[ColumnSpec], row: &[FeatureValue]) -> Result<String, SerializeError> {
    check_arity(cols, row)?;
    Ok(cols
        .iter()
        .zip(row)
        .map(|(c, v)| match v {
            FeatureValue::Missing => format!("The {} is.", c.display_name),
            v => format!("The {} is {}.", c.display_name, v),
        })
        .collect::<Vec<_>>()
        .join(" "))
}

pub fn list_only_values(cols: &[ColumnSpec], row: &[FeatureValue]) -> Result<String, SerializeError> {
    check_arity(cols, row)?;
    Ok(row
        .iter()
        .map(|v| format!("- {v}"))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// List template over the first `max_features` columns.
pub fn list_short(
    cols: &[ColumnSpec],
    row: &[FeatureValue],
    max_features: usize,
) -> Result<String, SerializeError> {
    check_arity(cols, row)?;
    let n = max_features.min(cols.len());
    list_template(&cols[..n], &row[..n])
}

/// Line `i` pairs the name of column `plan.name_permutation[i]` with the
/// value of column `i`.
pub fn list_permuted_names(
    cols: &[ColumnSpec],
    row: &[FeatureValue],
    plan: &PermutationPlan,
) -> Result<String, SerializeError> {
    check_arity(cols, row)?;
    let perm = plan
        .name_permutation
        .as_ref()
        .ok_or(SerializeError::MissingPlan(SerializerId::ListPermutedNames))?;
    if perm.len() != cols.len() {
        return Err(SerializeError::ArityMismatch {
            columns: perm.len(),
            row: cols.len(),
        });
    }
    Ok(list_lines(
        row.iter()
            .enumerate()
            .map(|(i, v)| (cols[perm[i]].display_name.as_str(), v.to_string())),
    ))
}

pub fn list_permuted_values(
    cols: &[ColumnSpec],
    row: &[FeatureValue],
    plan: &PermutationPlan,
) -> Result<String, SerializeError> {
    check_arity(cols, row)?;
    if plan.value_permutations.len() != cols.len() {
        return Err(SerializeError::MissingPlan(SerializerId::ListPermutedValues));
    }
    Ok(list_lines(cols.iter().zip(row).zip(&plan.value_permutations).map(
        |((c, v), perm)| (c.display_name.as_str(), perm.apply(v).to_string()),
    )))
}

/// A bijection over category tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPermutation {
    pub mapping: BTreeMap<String, String>,
}

/// Ten uniform bins over a numeric column and a bijection over bin indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPermutation {
    /// `NUM_BINS + 1` strictly increasing edges from the column min to max.
    pub edges: Vec<f64>,
    /// `bin_map[b]` is the image of bin `b`.
    pub bin_map: Vec<usize>,
}

impl BinPermutation {
    /// Bins are left-closed and right-open, except the last which also
    /// contains the maximum. Values outside the range clamp to the end bins.
    pub fn bin_of(&self, x: f64) -> usize {
        let last = self.edges.len() - 2;
        (0..last)
            .find(|&b| x < self.edges[b + 1])
            .unwrap_or(last)
    }

    pub fn midpoint(&self, bin: usize) -> f64 {
        (self.edges[bin] + self.edges[bin + 1]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValuePermutation {
    Identity,
    Categories(CategoryPermutation),
    Bins(BinPermutation),
}

impl ValuePermutation {
    /// Missing stays missing. Categories outside the plan's domain pass
    /// through, and numeric values are replaced by the midpoint of the image
    /// bin.
    pub fn apply(&self, v: &FeatureValue) -> FeatureValue {
        match (self, v) {
            (_, FeatureValue::Missing) | (ValuePermutation::Identity, _) => v.clone(),
            (ValuePermutation::Categories(p), FeatureValue::Categorical(s)) => {
                match p.mapping.get(s) {
                    Some(t) => FeatureValue::Categorical(t.clone()),
                    None => v.clone(),
                }
            }
            (ValuePermutation::Bins(b), FeatureValue::Numeric(x)) => {
                FeatureValue::Numeric(b.midpoint(b.bin_map[b.bin_of(*x)]))
            }
            _ => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    Names,
    Values,
}

/// Permutations fixed once per dataset and seed, applied identically to
/// every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub seed: u64,
    pub name_permutation: Option<Vec<usize>>,
    /// One entry per column in values mode, empty in names mode.
    pub value_permutations: Vec<ValuePermutation>,
}

impl PermutationPlan {
    pub fn identity_names(n: usize, seed: u64) -> Self {
        PermutationPlan {
            seed,
            name_permutation: Some((0..n).collect()),
            value_permutations: Vec::new(),
        }
    }

    /// Bin edges of each numeric column that was binned, by column index.
    pub fn bin_edges(&self) -> BTreeMap<usize, &[f64]> {
        self.value_permutations
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                ValuePermutation::Bins(b) => Some((i, b.edges.as_slice())),
                _ => None,
            })
            .collect()
    }
}

/// Uniformly random permutation of `0..n`, never the identity when `n >= 2`.
fn non_identity_permutation(n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 {
        return perm;
    }
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Uniform edges `min + i * (max - min) / 10`, with the last edge pinned to
/// `max` exactly.
pub fn uniform_edges(min: f64, max: f64, bins: usize) -> Vec<f64> {
    let width = max - min;
    let mut edges: Vec<f64> = (0..=bins)
        .map(|i| min + width * (i as f64) / (bins as f64))
        .collect();
    edges[bins] = max;
    edges
}

pub fn build_permutation_plan(ds: &Dataset, mode: PermutationMode, seed: u64) -> PermutationPlan {
    let mut rng = seeded(seed);
    match mode {
        PermutationMode::Names => PermutationPlan {
            seed,
            name_permutation: Some(non_identity_permutation(ds.n_columns(), &mut rng)),
            value_permutations: Vec::new(),
        },
        PermutationMode::Values => {
            let value_permutations = ds
                .columns()
                .iter()
                .enumerate()
                .map(|(j, col)| match col.kind {
                    ColumnKind::Categorical => {
                        let domain: BTreeSet<&str> = ds
                            .rows()
                            .iter()
                            .filter_map(|r| match &r[j] {
                                FeatureValue::Categorical(s) => Some(s.as_str()),
                                _ => None,
                            })
                            .collect();
                        if domain.len() < 2 {
                            return ValuePermutation::Identity;
                        }
                        let domain: Vec<&str> = domain.into_iter().collect();
                        let perm = non_identity_permutation(domain.len(), &mut rng);
                        ValuePermutation::Categories(CategoryPermutation {
                            mapping: domain
                                .iter()
                                .enumerate()
                                .map(|(i, s)| (s.to_string(), domain[perm[i]].to_string()))
                                .collect(),
                        })
                    }
                    ColumnKind::Numeric => {
                        let (min, max) = ds
                            .rows()
                            .iter()
                            .filter_map(|r| r[j].as_f64())
                            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                                (lo.min(x), hi.max(x))
                            });
                        if min >= max {
                            return ValuePermutation::Identity;
                        }
                        ValuePermutation::Bins(BinPermutation {
                            edges: uniform_edges(min, max, NUM_BINS),
                            bin_map: non_identity_permutation(NUM_BINS, &mut rng),
                        })
                    }
                })
                .collect();
            PermutationPlan {
                seed,
                name_permutation: None,
                value_permutations,
            }
        }
    }
}

/// A deterministic serialization format bound to any plan it needs.
#[derive(Debug, Clone)]
pub enum Format {
    List,
    Text,
    ListValues,
    ListShort { max_features: usize },
    ListPermutedNames(PermutationPlan),
    ListPermutedValues(PermutationPlan),
}

impl Format {
    /// Builds the format for `id`, computing the permutation plan from `ds`
    /// where one is required.
    pub fn for_dataset(
        id: SerializerId,
        ds: &Dataset,
        seed: u64,
        max_features: usize,
    ) -> Result<Self, SerializeError> {
        Ok(match id {
            SerializerId::List => Format::List,
            SerializerId::Text => Format::Text,
            SerializerId::ListValues => Format::ListValues,
            SerializerId::ListShort => Format::ListShort { max_features },
            SerializerId::ListPermutedNames => {
                Format::ListPermutedNames(build_permutation_plan(ds, PermutationMode::Names, seed))
            }
            SerializerId::ListPermutedValues => Format::ListPermutedValues(
                build_permutation_plan(ds, PermutationMode::Values, seed),
            ),
            id => return Err(SerializeError::NeedsBackend(id)),
        })
    }

    pub fn id(&self) -> SerializerId {
        match self {
            Format::List => SerializerId::List,
            Format::Text => SerializerId::Text,
            Format::ListValues => SerializerId::ListValues,
            Format::ListShort { .. } => SerializerId::ListShort,
            Format::ListPermutedNames(_) => SerializerId::ListPermutedNames,
            Format::ListPermutedValues(_) => SerializerId::ListPermutedValues,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Format::ListPermutedNames(p) | Format::ListPermutedValues(p) => Some(p.seed),
            _ => None,
        }
    }

    pub fn render(&self, cols: &[ColumnSpec], row: &[FeatureValue]) -> Result<String, SerializeError> {
        match self {
            Format::List => list_template(cols, row),
            Format::Text => text_template(cols, row),
            Format::ListValues => list_only_values(cols, row),
            Format::ListShort { max_features } => list_short(cols, row, *max_features),
            Format::ListPermutedNames(plan) => list_permuted_names(cols, row, plan),
            Format::ListPermutedValues(plan) => list_permuted_values(cols, row, plan),
        }
    }

    pub fn serialize_row(&self, ds: &Dataset, row_index: usize) -> Result<SerializedExample, SerializeError> {
        Ok(SerializedExample {
            row_index,
            serializer_id: self.id(),
            seed: self.seed(),
            text: self.render(ds.columns(), ds.row(row_index))?,
        })
    }

    pub fn serialize_all(&self, ds: &Dataset) -> Result<Vec<SerializedExample>, SerializeError> {
        (0..ds.n_rows()).map(|i| self.serialize_row(ds, i)).collect()
    }
}
