//! Explaining predictions after the fact.
//!
//! A surrogate L2-regularized logistic regression is fit to a classifier's
//! predictions with the serialized features as covariates; its weights rank
//! which inputs drive the predictions. Relative risks with log-method
//! confidence intervals measure the raw association of a binary feature
//! with an outcome.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::bounded_map;
use crate::claims::{ClaimsRecord, ConceptKind};
use crate::dataset::{ColumnKind, Dataset, FeatureValue};
use crate::rng::seeded;

/// Regularization grid, as `C = 1 / l2`, searched from weakest penalty down.
pub const C_GRID: [f64; 8] = [100.0, 10.0, 1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5];
pub const MAX_ITERATIONS: usize = 10_000;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
/// Normal quantile of a two-sided 95% interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntrospectError {
    #[error("targets hold a single class")]
    SingleClass,
    #[error("optimizer did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("exposure group {0} is empty")]
    EmptyGroup(&'static str),
}

/// One-hot categorical indicators named `{column}_{value}` and one column
/// per numeric feature, optionally z-scored. Missing values encode as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Feature index range of each dataset column.
    pub groups: Vec<std::ops::Range<usize>>,
}

type Encoder = Box<dyn Fn(&FeatureValue) -> Vec<f64>>;

impl DesignMatrix {
    pub fn from_dataset(ds: &Dataset, standardize: bool) -> DesignMatrix {
        let mut names = Vec::new();
        let mut groups = Vec::new();
        let mut encoders: Vec<Encoder> = Vec::new();
        for (j, col) in ds.columns().iter().enumerate() {
            let start = names.len();
            match col.kind {
                ColumnKind::Categorical => {
                    let levels: BTreeSet<String> = ds
                        .rows()
                        .iter()
                        .filter(|r| !r[j].is_missing())
                        .map(|r| r[j].to_string())
                        .collect();
                    let levels: Vec<String> = levels.into_iter().collect();
                    names.extend(levels.iter().map(|v| format!("{}_{v}", col.raw_name)));
                    encoders.push(Box::new(move |v: &FeatureValue| {
                        let s = (!v.is_missing()).then(|| v.to_string());
                        levels.iter().map(|l| f64::from(s.as_ref() == Some(l))).collect()
                    }));
                }
                ColumnKind::Numeric => {
                    let xs: Vec<f64> = ds.rows().iter().filter_map(|r| r[j].as_f64()).collect();
                    let (mean, sd) = if standardize && !xs.is_empty() {
                        let m = xs.iter().sum::<f64>() / xs.len() as f64;
                        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
                        (m, if var > 0.0 { var.sqrt() } else { 1.0 })
                    } else {
                        (0.0, 1.0)
                    };
                    names.push(col.raw_name.clone());
                    encoders.push(Box::new(move |v: &FeatureValue| {
                        vec![v.as_f64().map_or(0.0, |x| (x - mean) / sd)]
                    }));
                }
            }
            groups.push(start..names.len());
        }
        let rows = ds
            .rows()
            .iter()
            .map(|r| r.iter().zip(&encoders).flat_map(|(v, enc)| enc(v)).collect())
            .collect();
        DesignMatrix {
            feature_names: names,
            rows,
            groups,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn subset(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| self.rows[i].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogisticFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + dot(&self.weights, x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss of soft or hard targets plus `l2 / 2 * |w|^2`; the
/// intercept is not penalized.
pub fn objective(x: &[Vec<f64>], y: &[f64], l2: f64, weights: &[f64], intercept: f64) -> f64 {
    let n = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &t)| {
            let z = intercept + dot(weights, row);
            softplus(z) - t * z
        })
        .sum();
    loss / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`objective`], intercept first.
pub fn gradient(x: &[Vec<f64>], y: &[f64], l2: f64, weights: &[f64], intercept: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mut g = vec![0.0; weights.len() + 1];
    for (row, &t) in x.iter().zip(y) {
        let r = sigmoid(intercept + dot(weights, row)) - t;
        g[0] += r;
        for (gj, xj) in g[1..].iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    for (gj, w) in g[1..].iter_mut().zip(weights) {
        *gj = *gj / n + l2 * w;
    }
    g[0] /= n;
    g
}

fn check_targets(y: &[f64]) -> Result<(), IntrospectError> {
    if y.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(IntrospectError::Invalid("targets must lie in [0, 1]".into()));
    }
    if y.iter().all(|&t| t == 0.0) || y.iter().all(|&t| t == 1.0) {
        return Err(IntrospectError::SingleClass);
    }
    Ok(())
}

/// Damped Newton's method with backtracking on the convex [`objective`].
/// Targets may be hard (0/1) or probabilities.
pub fn fit_logistic(x: &[Vec<f64>], y: &[f64], l2: f64) -> Result<LogisticFit, IntrospectError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(IntrospectError::Invalid(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(IntrospectError::Invalid("l2 must be positive".into()));
    }
    check_targets(y)?;
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(IntrospectError::Invalid("ragged design matrix".into()));
    }
    let n = x.len();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let mut theta = DVector::<f64>::zeros(p + 1);
    let base = y.iter().sum::<f64>() / n as f64;
    theta[0] = (base / (1.0 - base)).ln();
    let unpack = |t: &DVector<f64>| (t[0], t.as_slice()[1..].to_vec());

    let mut f = {
        let (b, w) = unpack(&theta);
        objective(x, y, l2, &w, b)
    };
    for iteration in 0..MAX_ITERATIONS {
        let (b, w) = unpack(&theta);
        let g = DVector::from_vec(gradient(x, y, l2, &w, b));
        let grad_norm = g.norm();
        if grad_norm <= GRADIENT_TOLERANCE {
            return Ok(LogisticFit {
                weights: w,
                intercept: b,
                iterations: iteration,
                grad_norm,
            });
        }
        let s = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let q = sigmoid(b + dot(&w, &x[i]));
                q * (1.0 - q) / n as f64
            }),
        );
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= s[i];
        }
        let mut hessian = design.transpose() * weighted;
        for j in 1..=p {
            hessian[(j, j)] += l2;
        }
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                // saturated probabilities make the intercept row vanish
                for j in 0..=p {
                    hessian[(j, j)] += 1e-10;
                }
                hessian.cholesky().map(|ch| ch.solve(&g)).unwrap_or_else(|| g.clone())
            }
        };
        let decrement = g.dot(&step);
        let mut t = 1.0;
        loop {
            let candidate = &theta - &step * t;
            let (cb, cw) = unpack(&candidate);
            let fc = objective(x, y, l2, &cw, cb);
            if fc <= f - 1e-4 * t * decrement {
                theta = candidate;
                f = fc;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                // no representable decrease left: the iterate is optimal to
                // machine precision
                if decrement <= 1e-20 * f.abs().max(1.0) {
                    return Ok(LogisticFit {
                        weights: w,
                        intercept: b,
                        iterations: iteration,
                        grad_norm,
                    });
                }
                return Err(IntrospectError::NonConvergence {
                    iterations: iteration,
                    grad_norm,
                });
            }
        }
    }
    let (b, w) = unpack(&theta);
    let grad_norm = DVector::from_vec(gradient(x, y, l2, &w, b)).norm();
    Err(IntrospectError::NonConvergence {
        iterations: MAX_ITERATIONS,
        grad_norm,
    })
}

/// What the surrogate regresses on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateTarget {
    /// The predicted label, `prob >= 0.5`.
    #[default]
    HardLabel,
    /// The predicted probability itself.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOptions {
    pub folds: usize,
    pub fold_seed: u64,
    pub target: SurrogateTarget,
    pub standardize: bool,
    pub c_grid: Vec<f64>,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        SurrogateOptions {
            folds: 4,
            fold_seed: 0,
            target: SurrogateTarget::HardLabel,
            standardize: true,
            c_grid: C_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub feature: String,
    pub weight: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateResult {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    /// 1 for the largest signed weight; ties keep feature order.
    pub ranks: Vec<usize>,
    pub intercept: f64,
    pub c: f64,
    pub folds: usize,
    /// Mean held-out log loss per grid value, in grid order.
    pub cv_loss: Vec<(f64, f64)>,
}

impl SurrogateResult {
    /// Features sorted by rank.
    pub fn ranked(&self) -> Vec<FeatureWeight> {
        let mut out: Vec<FeatureWeight> = self
            .feature_names
            .iter()
            .zip(&self.weights)
            .zip(&self.ranks)
            .map(|((f, &w), &r)| FeatureWeight {
                feature: f.clone(),
                weight: w,
                rank: r,
            })
            .collect();
        out.sort_by_key(|f| f.rank);
        out
    }
}

pub fn ranks_descending(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; weights.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Assigns rows to folds, dealing each class's shuffled rows round-robin.
pub fn stratified_folds(classes: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    let mut assignment = vec![0; classes.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

fn log_loss(fit: &LogisticFit, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &t)| {
            let z = fit.intercept + dot(&fit.weights, row);
            softplus(z) - t * z
        })
        .sum();
    total / x.len() as f64
}

/// Fits the surrogate to `probs` (one per dataset row), choosing `C` by
/// stratified cross-validated log loss and refitting on all rows.
pub fn surrogate_importance(
    ds: &Dataset,
    probs: &[f64],
    opts: &SurrogateOptions,
) -> Result<SurrogateResult, IntrospectError> {
    if probs.len() != ds.n_rows() {
        return Err(IntrospectError::Invalid(format!(
            "{} probabilities for {} rows",
            probs.len(),
            ds.n_rows()
        )));
    }
    if opts.folds < 2 || opts.c_grid.is_empty() {
        return Err(IntrospectError::Invalid("need at least 2 folds and one C value".into()));
    }
    let design = DesignMatrix::from_dataset(ds, opts.standardize);
    let y: Vec<f64> = match opts.target {
        SurrogateTarget::HardLabel => probs.iter().map(|&p| f64::from(p >= 0.5)).collect(),
        SurrogateTarget::Probability => probs.to_vec(),
    };
    check_targets(&y)?;
    let classes: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    let assignment = stratified_folds(&classes, opts.folds, opts.fold_seed);

    let folds: Vec<usize> = (0..opts.folds).collect();
    let mut cv_loss = Vec::with_capacity(opts.c_grid.len());
    for &c in &opts.c_grid {
        let losses = bounded_map(&folds, opts.folds, |_, &fold| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != fold).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == fold).collect();
            let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let fit = fit_logistic(&design.subset(&train), &ty, 1.0 / c)?;
            let hy: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            Ok::<_, IntrospectError>(log_loss(&fit, &design.subset(&test), &hy))
        });
        let losses = losses.into_iter().collect::<Result<Vec<_>, _>>()?;
        cv_loss.push((c, losses.iter().sum::<f64>() / losses.len() as f64));
    }
    let (c, _) = cv_loss
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |best, (c, l)| if l < best.1 { (c, l) } else { best });
    let fit = fit_logistic(&design.rows, &y, 1.0 / c)?;
    Ok(SurrogateResult {
        ranks: ranks_descending(&fit.weights),
        feature_names: design.feature_names,
        weights: fit.weights,
        intercept: fit.intercept,
        c,
        folds: opts.folds,
        cv_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRisk {
    /// Infinite when no unexposed row has the outcome.
    pub rr: f64,
    /// `None` when a cell needed for the interval is zero.
    pub ci: Option<(f64, f64)>,
    /// `rr` as the exact fraction `a (c + d) / (c (a + b))`.
    pub ratio: (u128, u128),
}

impl RelativeRisk {
    pub fn zero_cell(&self) -> bool {
        self.ci.is_none()
    }
}

/// Outcome rate among the exposed over the rate among the unexposed, with a
/// Katz log-method 95% interval.
pub fn relative_risk(a: u64, b: u64, c: u64, d: u64) -> Result<RelativeRisk, IntrospectError> {
    if a + b == 0 {
        return Err(IntrospectError::EmptyGroup("exposed"));
    }
    if c + d == 0 {
        return Err(IntrospectError::EmptyGroup("unexposed"));
    }
    let num = u128::from(a) * u128::from(c + d);
    let den = u128::from(c) * u128::from(a + b);
    let rr = num as f64 / den as f64;
    let ci = (a > 0 && c > 0).then(|| {
        let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
        let se = (1.0 / a - 1.0 / (a + b) + 1.0 / c - 1.0 / (c + d)).max(0.0).sqrt();
        let ln = rr.ln();
        (((ln - Z_95 * se).exp()).min(rr), ((ln + Z_95 * se).exp()).max(rr))
    });
    Ok(RelativeRisk {
        rr,
        ci,
        ratio: (num, den),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRisk {
    pub id: String,
    pub name: String,
    pub kind: ConceptKind,
    /// `[a, b, c, d]`: exposed with/without outcome, unexposed with/without.
    pub counts: [u64; 4],
    pub risk: RelativeRisk,
}

/// Relative risk of the outcome for every concept, exposure meaning the
/// concept appears anywhere in the record. Concepts present in every record
/// (or none) have no comparison group and are left out. Records without a
/// label are ignored.
pub fn concept_relative_risks(
    records: &[ClaimsRecord],
    labels: &HashMap<String, bool>,
) -> Vec<ConceptRisk> {
    let labelled: Vec<(&ClaimsRecord, bool)> = records
        .iter()
        .filter_map(|r| labels.get(&r.patient_id).map(|&l| (r, l)))
        .collect();
    let mut names: BTreeMap<(ConceptKind, String), String> = BTreeMap::new();
    let mut exposure: Vec<BTreeSet<(ConceptKind, String)>> = Vec::with_capacity(labelled.len());
    for (r, _) in &labelled {
        let mut seen = BTreeSet::new();
        for v in &r.visits {
            for c in v.conditions.iter().chain(&v.procedures) {
                names.entry((c.kind, c.id.clone())).or_insert_with(|| c.name.clone());
                seen.insert((c.kind, c.id.clone()));
            }
        }
        exposure.push(seen);
    }
    let total_pos = labelled.iter().filter(|(_, l)| *l).count() as u64;
    let total_neg = labelled.len() as u64 - total_pos;
    let mut out = Vec::new();
    for (key, name) in names {
        let (mut a, mut b) = (0, 0);
        for ((_, label), seen) in labelled.iter().zip(&exposure) {
            if seen.contains(&key) {
                if *label {
                    a += 1
                } else {
                    b += 1
                }
            }
        }
        let (c, d) = (total_pos - a, total_neg - b);
        if let Ok(risk) = relative_risk(a, b, c, d) {
            out.push(ConceptRisk {
                id: key.1,
                name,
                kind: key.0,
                counts: [a, b, c, d],
                risk,
            });
        }
    }
    out
}
