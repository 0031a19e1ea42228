//! Evaluation protocol: seeded 80/20 splits, class-balanced shot sampling
//! with replacement, answer-choice classification of the test rows and
//! ROC AUC aggregated over seeds.
//!
//! The harness never fits a model on the shots. Shot sets are exported so
//! that an external fine-tuning run can consume exactly the same examples.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{bounded_map, Scorer};
use crate::dataset::Dataset;
use crate::prompt::{classify, ClassScores, ClassifyError, PromptError, TaskTemplate};
use crate::rng::{derive, seeded};
use crate::serialize::{Format, SerializeError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUC needs both a positive and a negative example")]
    SingleClass,
    #[error("no class has both positive and negative examples")]
    NoEligibleClass,
    #[error("class {0} has no training rows")]
    MissingClassInTrain(usize),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score is not a number")]
    NonFiniteScore,
    #[error("need at least {needed} rows, dataset has {rows}")]
    TooFewRows { needed: usize, rows: usize },
    #[error(transparent)]
    Serialize(#[from] SerializeError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("row {row}: {source}")]
    Classify {
        row: usize,
        #[source]
        source: ClassifyError,
    },
    #[error("seed {seed}, k {k}: {source}")]
    Run {
        seed: u64,
        k: usize,
        #[source]
        source: Box<EvalError>,
    },
}

impl EvalError {
    fn at(self, seed: u64, k: usize) -> EvalError {
        EvalError::Run {
            seed,
            k,
            source: Box::new(self),
        }
    }

    /// The error without `(seed, k)` context.
    pub fn root(&self) -> &EvalError {
        match self {
            EvalError::Run { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Seeded permutation; the first `floor(0.8 n)` rows train, the rest test.
pub fn split(n_rows: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut seeded(seed));
    let n_train = n_rows * 4 / 5;
    let test = order.split_off(n_train);
    (order, test)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSet {
    pub seed: u64,
    pub k: usize,
    /// Dataset row indices, all from the training split, possibly repeated.
    pub indices: Vec<usize>,
}

/// Draws `floor(k / |C|)` rows per class uniformly with replacement; the
/// `k mod |C|` classes first in a seeded shuffle draw one more. The
/// combined draw is shuffled.
pub fn sample_shots(
    labels: &[usize],
    n_classes: usize,
    train: &[usize],
    k: usize,
    seed: u64,
) -> Result<ShotSet, EvalError> {
    let mut shots = ShotSet {
        seed,
        k,
        indices: Vec::with_capacity(k),
    };
    if k == 0 {
        return Ok(shots);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for &i in train {
        by_class[labels[i]].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(EvalError::MissingClassInTrain(c));
    }
    let mut rng = seeded(seed);
    let mut extra: Vec<usize> = (0..n_classes).collect();
    extra.shuffle(&mut rng);
    extra.truncate(k % n_classes);
    for (c, rows) in by_class.iter().enumerate() {
        let quota = k / n_classes + usize::from(extra.contains(&c));
        for _ in 0..quota {
            shots.indices.push(rows[rng.random_range(0..rows.len())]);
        }
    }
    shots.indices.shuffle(&mut rng);
    Ok(shots)
}

/// Mann-Whitney AUC: the chance a random positive outscores a random
/// negative, ties counting one half.
pub fn auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NonFiniteScore);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut negatives_below, mut wins, mut ties) = (0u64, 0u64, 0u64);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let pos = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        let neg = (end - start) as u64 - pos;
        wins += pos * negatives_below;
        ties += pos * neg;
        negatives_below += neg;
        start = end;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    // doubled to keep the half-ties integral until the final division
    Ok((2 * wins + ties) as f64 / (2 * n_pos * n_neg) as f64)
}

/// Unweighted mean of one-vs-rest AUCs over classes that have both
/// positives and negatives.
pub fn auc_macro_ovr(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64, EvalError> {
    if probs.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: probs.len(),
            labels: labels.len(),
        });
    }
    let n_classes = probs.iter().map(Vec::len).max().unwrap_or(0);
    let mut total = 0.0;
    let mut eligible = 0;
    for c in 0..n_classes {
        let is_c: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if is_c.iter().all(|&b| b) || !is_c.iter().any(|&b| b) {
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|p| p.get(c).copied().unwrap_or(0.0)).collect();
        total += auc_binary(&scores, &is_c)?;
        eligible += 1;
    }
    if eligible == 0 {
        return Err(EvalError::NoEligibleClass);
    }
    Ok(total / eligible as f64)
}

/// Binary tasks use the class-1 probability; others the macro average.
pub fn auc_for(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64, EvalError> {
    if n_classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        auc_binary(&scores, &pos)
    } else {
        auc_macro_ovr(probs, labels)
    }
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for a single
/// value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub serializer_id: String,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub per_seed_auc: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Turns a dataset row into the text placed in the prompt.
pub trait RowSerializer: Sync {
    fn id(&self) -> String;
    fn serialize(&self, ds: &Dataset, row: usize) -> Result<String, EvalError>;
}

impl RowSerializer for Format {
    fn id(&self) -> String {
        Format::id(self).to_string()
    }

    fn serialize(&self, ds: &Dataset, row: usize) -> Result<String, EvalError> {
        Ok(self.render(ds.columns(), ds.row(row))?)
    }
}

/// Serializations produced ahead of time, e.g. by a generation model.
#[derive(Debug, Clone)]
pub struct Precomputed {
    pub id: String,
    pub texts: Vec<String>,
}

impl RowSerializer for Precomputed {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn serialize(&self, _ds: &Dataset, row: usize) -> Result<String, EvalError> {
        Ok(self.texts[row].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Test rows classified concurrently.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            shots: vec![0, 4, 8, 16, 32],
            seeds: (0..5).collect(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub reports: Vec<EvalReport>,
    /// One per `(seed, k)` with `k > 0`.
    pub shot_sets: Vec<ShotSet>,
}

/// Classifies every listed row and returns the scores in the same order.
pub fn classify_rows(
    ds: &Dataset,
    rows: &[usize],
    template: &TaskTemplate,
    serializer: &dyn RowSerializer,
    scorer: &dyn Scorer,
    workers: usize,
) -> Result<Vec<ClassScores>, EvalError> {
    template.check_classes(ds.n_classes())?;
    bounded_map(rows, workers, |_, &row| {
        let text = serializer.serialize(ds, row)?;
        classify(&template.render(&text), scorer).map_err(|source| EvalError::Classify { row, source })
    })
    .into_iter()
    .collect()
}

/// Runs every `(seed, k)` cell. Test predictions do not depend on the shots,
/// so each seed's test split is classified once and reused for all `k`.
pub fn run_experiment(
    ds: &Dataset,
    template: &TaskTemplate,
    serializer: &dyn RowSerializer,
    scorer: &dyn Scorer,
    config: &ExperimentConfig,
) -> Result<ExperimentOutput, EvalError> {
    if ds.n_rows() < 2 {
        return Err(EvalError::TooFewRows {
            needed: 2,
            rows: ds.n_rows(),
        });
    }
    let mut aucs = vec![Vec::with_capacity(config.seeds.len()); config.shots.len()];
    let mut shot_sets = Vec::new();
    for &seed in &config.seeds {
        let (train, test) = split(ds.n_rows(), seed);
        let first_k = config.shots.first().copied().unwrap_or(0);
        let scores = classify_rows(ds, &test, template, serializer, scorer, config.workers)
            .map_err(|e| e.at(seed, first_k))?;
        let probs: Vec<Vec<f64>> = scores.into_iter().map(|s| s.probs).collect();
        let labels: Vec<usize> = test.iter().map(|&i| ds.labels()[i]).collect();
        let auc = auc_for(&probs, &labels, ds.n_classes()).map_err(|e| e.at(seed, first_k))?;
        for (ki, &k) in config.shots.iter().enumerate() {
            if k > 0 {
                let shots = sample_shots(ds.labels(), ds.n_classes(), &train, k, derive(seed, k as u64))
                    .map_err(|e| e.at(seed, k))?;
                shot_sets.push(ShotSet { seed, ..shots });
            }
            aucs[ki].push(auc);
        }
    }
    let reports = config
        .shots
        .iter()
        .zip(aucs)
        .map(|(&k, per_seed_auc)| {
            let (mean, sd) = mean_sd(&per_seed_auc);
            EvalReport {
                serializer_id: serializer.id(),
                k,
                seeds: config.seeds.clone(),
                per_seed_auc,
                mean,
                sd,
            }
        })
        .collect();
    Ok(ExperimentOutput { reports, shot_sets })
}
