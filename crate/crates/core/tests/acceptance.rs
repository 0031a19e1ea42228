//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion with its runtime against the time limit, and exits non-zero
//! when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use tabser::backend::{
    bounded_map, BackendConfig, BackendError, CachedBackend, GenerationRequest, Generator, HttpBackend,
    Limited, MockBackend, MockRule, Scorer,
};
use tabser::claims::{
    apply_concept_map, estimate_tokens, load_claims_jsonl, parse_concept_map, select_concepts,
    serialize_claims, ClaimsStyle, Scope, SelectionOrder, SelectionStrategy, WordRatioEstimator,
};
use tabser::dataset::{load_csv, ColumnKind, Dataset, FeatureValue, Metadata};
use tabser::fewshot::{
    auc_binary, auc_macro_ovr, run_experiment, sample_shots, split, ExperimentConfig,
};
use tabser::introspect::{
    fit_logistic, gradient, objective, relative_risk, sigmoid, surrogate_importance, SurrogateOptions,
};
use tabser::prompt::{bundled_template, classify, ClassScores, TaskTemplate, BUNDLED_TEMPLATES};
use tabser::serialize::{
    build_permutation_plan, list_permuted_names, list_permuted_values, list_short, list_template,
    text_template, uniform_edges, PermutationMode, ValuePermutation, NUM_BINS,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// 1 ------------------------------------------------------------------------
fn golden_serializations() -> Outcome {
    for name in GOLDEN_DATASETS {
        let ds = golden_dataset(name, "list");
        let got = list_template(ds.columns(), ds.row(0)).map_err(|e| e.to_string())?;
        ensure!(got == read_fixture(&format!("golden/{name}/list.txt")), "{name} list:\n{got}");
        let ds = golden_dataset(name, "text");
        let got = text_template(ds.columns(), ds.row(0)).map_err(|e| e.to_string())?;
        ensure!(got == read_fixture(&format!("golden/{name}/text.txt")), "{name} text:\n{got}");
    }
    let rec = &load_claims_jsonl(fixture("golden/eol/record.jsonl")).map_err(|e| e.to_string())?[0];
    let strategy = SelectionStrategy::new(SelectionOrder::Oldest, Scope::Both);
    for (style, file) in [(ClaimsStyle::List, "list"), (ClaimsStyle::Text, "text")] {
        let sel = select_concepts(rec, strategy, 1024, style, &WordRatioEstimator).map_err(|e| e.to_string())?;
        let got = serialize_claims(rec, &sel, style).map_err(|e| e.to_string())?;
        ensure!(got == read_fixture(&format!("golden/eol/{file}.txt")), "eol {file}:\n{got}");
    }
    let map = parse_concept_map(&read_fixture("golden/eol/permuted_names.tsv")).map_err(|e| e.to_string())?;
    let permuted = rec.with_concept_map(&map);
    let sel = select_concepts(&permuted, strategy, 1024, ClaimsStyle::List, &WordRatioEstimator).unwrap();
    let got = serialize_claims(&permuted, &sel, ClaimsStyle::List).unwrap();
    ensure!(got == read_fixture("golden/eol/list_permuted_names.txt"), "eol permuted:\n{got}");
    ensure!(apply_concept_map(&rec.visits[0].conditions, &map)[1].name == "chronic kidney disease", "concept map");
    Ok("9 datasets x 2 templates + 3 claims examples byte-identical".into())
}

// 2 ------------------------------------------------------------------------
fn template_suite() -> Outcome {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
    let mut n = 0;
    for (name, src) in BUNDLED_TEMPLATES {
        let t = TaskTemplate::from_path(dir.join(format!("{name}.txt"))).map_err(|e| format!("{name}: {e}"))?;
        ensure!(t.to_source() == src, "{name} does not round-trip");
        ensure!(t.body().ends_with("\nAnswer: "), "{name} body ending");
        n += 1;
    }
    ensure!(n == 12, "expected 12 templates, found {n}");
    let income = bundled_template("income").unwrap();
    ensure!(income.answer_choices() == ["No", "Yes"], "income choices {:?}", income.answer_choices());
    let question = "Does this person earn more than 50000 dollars per year? Yes or no?";
    let rendered = income.render("- Age: 30");
    ensure!(
        rendered.text == format!("- Age: 30\n\n{question}\nAnswer: "),
        "income render {:?}",
        rendered.text
    );
    ensure!(rendered.choices == ["No", "Yes"], "rendered choices");
    let car = bundled_template("car").unwrap();
    ensure!(car.answer_choices() == ["Unacceptable", "Acceptable", "Good", "Very good"], "car choices");
    Ok("12 templates parse and round-trip; Income question exact".into())
}

// 3 ------------------------------------------------------------------------
struct Fixed(Vec<f64>);

impl Scorer for Fixed {
    fn score_choices(&self, _: &str, choices: &[String]) -> Result<Vec<f64>, BackendError> {
        assert_eq!(choices.len(), self.0.len());
        Ok(self.0.clone())
    }
}

fn scoring_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let template = bundled_template("car").unwrap();
    for case in 0..1000 {
        let n = rng.random_range(2..=6);
        let scale = [1.0, 10.0, 100.0, 1000.0][case % 4];
        let mut logits: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..1.0) * scale).collect();
        if case % 5 == 0 {
            logits[n - 1] = logits[0]; // planted tie
        }
        let oracle = softmax_oracle(&logits);
        let got = ClassScores::from_logprobs(logits.clone()).map_err(|e| e.to_string())?;
        for (p, q) in got.probs.iter().zip(&oracle) {
            ensure!((p - q).abs() <= 1e-12, "case {case}: {p} vs {q}");
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first_max = logits.iter().position(|&l| l == max).unwrap();
        ensure!(got.predicted == first_max, "case {case}: argmax");
        let shift = rng.random_range(-100.0..100.0);
        let shifted = ClassScores::from_logprobs(logits.iter().map(|l| l + shift).collect()).unwrap();
        for (p, q) in shifted.probs.iter().zip(&got.probs) {
            ensure!((p - q).abs() <= 1e-12, "case {case}: shift changed {q} to {p}");
        }
        ensure!(shifted.predicted == got.predicted || logits.iter().filter(|&&l| l == max).count() > 1 && {
            let sm = shifted.logprobs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            shifted.logprobs[shifted.predicted] == sm
        }, "case {case}: shift changed argmax");
        if n == 4 {
            let via = classify(&template.render("x"), &Fixed(logits.clone())).unwrap();
            ensure!(via.probs == got.probs, "classify differs from from_logprobs");
        }
    }
    Ok("1000 vectors within 1e-12 of log-sum-exp oracle; shift/argmax invariant".into())
}

// 4 ------------------------------------------------------------------------
fn auc_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(2..=60);
        let k = rng.random_range(2..=4);
        let tie_heavy = case % 2 == 0;
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k)
                    .map(|_| {
                        let x: f64 = rng.random_range(0.0..1.0);
                        if tie_heavy { (x * 3.0).floor() + 1.0 } else { x + 1e-3 }
                    })
                    .collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|r| r / s).collect()
            })
            .collect();
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let got = auc_binary(&scores, &pos).map_err(|e| e.to_string())?;
        let want = brute_auc(&scores, &pos);
        ensure!((got - want).abs() <= 1e-12, "case {case} binary {got} vs {want}");
        worst = worst.max((got - want).abs());
        let got = auc_macro_ovr(&probs, &labels).map_err(|e| e.to_string())?;
        let want = brute_macro_auc(&probs, &labels, k).unwrap();
        ensure!((got - want).abs() <= 1e-12, "case {case} macro {got} vs {want}");
        worst = worst.max((got - want).abs());
    }
    Ok(format!("200 instances; max deviation {worst:e}"))
}

// 5 ------------------------------------------------------------------------
fn shot_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n_classes in [2, 4] {
        for trial in 0..10 {
            let n = rng.random_range(40..200);
            // skewed classes, each present
            let mut labels: Vec<usize> = (0..n).map(|_| if rng.random_bool(0.6) { 0 } else { rng.random_range(0..n_classes) }).collect();
            for (c, l) in labels.iter_mut().take(n_classes).enumerate() {
                *l = c;
            }
            let seed = rng.random();
            let (train, test) = split(n, seed);
            ensure!(train.len() == n * 4 / 5 && train.len() + test.len() == n, "split sizes for n={n}");
            ensure!((train.clone(), test.clone()) == split(n, seed), "split not deterministic");
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort();
            ensure!(all == (0..n).collect::<Vec<_>>(), "split not a partition");
            let mut train = train;
            for c in 0..n_classes {
                if !train.iter().any(|&i| labels[i] == c) {
                    train.push(c);
                }
            }
            let train_set: BTreeSet<usize> = train.iter().copied().collect();
            for k in [0, 4, 8, 16, 32, 64] {
                let s = sample_shots(&labels, n_classes, &train, k, seed ^ k as u64).map_err(|e| e.to_string())?;
                ensure!(s.indices.len() == k, "k={k}: {} shots", s.indices.len());
                ensure!(s.indices.iter().all(|i| train_set.contains(i)), "shot outside train");
                let mut counts = vec![0usize; n_classes];
                for &i in &s.indices {
                    counts[labels[i]] += 1;
                }
                let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
                ensure!(hi - lo <= 1, "trial {trial} k={k} |C|={n_classes}: counts {counts:?}");
                if k % n_classes == 0 {
                    ensure!(lo == hi, "unequal counts {counts:?} for divisible k");
                }
                if k == 32 && n_classes == 2 {
                    ensure!(counts == [16, 16], "k=32 counts {counts:?}");
                }
                ensure!(s == sample_shots(&labels, n_classes, &train, k, seed ^ k as u64).unwrap(), "shots not deterministic");
            }
        }
    }
    for n in 2..200 {
        let (tr, te) = split(n, n as u64);
        ensure!(tr.len() == n * 4 / 5 && te.len() == n - n * 4 / 5, "n={n}");
    }
    ensure!(split(10, 0).0.len() == 8 && split(5, 0).0.len() == 4, "split examples");
    Ok("balance, subset, determinism and 80/20 floor rule hold".into())
}

// 6 ------------------------------------------------------------------------
fn parse_lines(text: &str) -> Vec<(String, String)> {
    if text.is_empty() {
        return Vec::new();
    }
    text.lines()
        .map(|l| {
            let body = l.strip_prefix("- ").expect("list line");
            let (n, v) = body.split_once(": ").expect("name: value");
            (n.to_string(), v.to_string())
        })
        .collect()
}

fn sorted<T: Ord + Clone>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort();
    v
}

fn ablation_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut binned = 0;
    for case in 0..100 {
        let ds = random_dataset(&mut rng);
        let seed = rng.random();
        let names: Vec<String> = ds.columns().iter().map(|c| c.display_name.clone()).collect();

        let plan = build_permutation_plan(&ds, PermutationMode::Names, seed);
        let mut first_names = None;
        for row in ds.rows() {
            let lines = parse_lines(&list_permuted_names(ds.columns(), row, &plan).unwrap());
            let got_names: Vec<String> = lines.iter().map(|l| l.0.clone()).collect();
            let got_values: Vec<String> = lines.iter().map(|l| l.1.clone()).collect();
            let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            ensure!(sorted(&got_names) == sorted(&names), "case {case}: name multiset");
            ensure!(got_values == values, "case {case}: values must stay in column order");
            if names.len() >= 2 {
                ensure!(got_names != names, "case {case}: identity name permutation");
            }
            match &first_names {
                None => first_names = Some(got_names),
                Some(f) => ensure!(*f == got_names, "case {case}: permutation differs across rows"),
            }
        }

        let plan = build_permutation_plan(&ds, PermutationMode::Values, seed);
        for (j, col) in ds.columns().iter().enumerate() {
            let column: Vec<&FeatureValue> = ds.rows().iter().map(|r| &r[j]).collect();
            let outputs: Vec<String> = ds
                .rows()
                .iter()
                .map(|r| parse_lines(&list_permuted_values(ds.columns(), r, &plan).unwrap())[j].1.clone())
                .collect();
            for (v, o) in column.iter().zip(&outputs) {
                if v.is_missing() {
                    ensure!(o.is_empty(), "case {case}: missing became {o:?}");
                }
            }
            match col.kind {
                ColumnKind::Categorical => {
                    let domain: BTreeSet<String> = column.iter().filter(|v| !v.is_missing()).map(|v| v.to_string()).collect();
                    let mut map: BTreeMap<String, String> = BTreeMap::new();
                    for (v, o) in column.iter().zip(&outputs) {
                        if !v.is_missing() {
                            let prev = map.insert(v.to_string(), o.clone());
                            ensure!(prev.is_none() || prev.as_ref() == Some(o), "case {case}: category not a function");
                        }
                    }
                    let image: BTreeSet<String> = map.values().cloned().collect();
                    ensure!(image == domain, "case {case}: category map not a bijection on the domain");
                    if domain.len() >= 2 {
                        ensure!(map.iter().any(|(a, b)| a != b), "case {case}: identity category map");
                    }
                }
                ColumnKind::Numeric => {
                    let xs: Vec<f64> = column.iter().filter_map(|v| v.as_f64()).collect();
                    let (min, max) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                    if min >= max {
                        ensure!(matches!(plan.value_permutations[j], ValuePermutation::Identity), "degenerate column binned");
                        continue;
                    }
                    binned += 1;
                    let edges = plan.bin_edges()[&j].to_vec();
                    ensure!(edges.len() == NUM_BINS + 1, "edge count");
                    for (i, e) in edges.iter().enumerate() {
                        let analytic = if i == NUM_BINS { max } else { min + (max - min) * i as f64 / 10.0 };
                        ensure!(close(*e, analytic, 1e-12), "case {case}: edge {i} {e} vs {analytic}");
                    }
                    ensure!(edges == uniform_edges(min, max, NUM_BINS), "edges");
                    let bin = |x: f64| (0..NUM_BINS - 1).find(|&b| x < edges[b + 1]).unwrap_or(NUM_BINS - 1);
                    let mids: Vec<f64> = (0..NUM_BINS).map(|b| (edges[b] + edges[b + 1]) / 2.0).collect();
                    let mut map: BTreeMap<usize, String> = BTreeMap::new();
                    for (v, o) in column.iter().zip(&outputs) {
                        if let Some(x) = v.as_f64() {
                            let prev = map.insert(bin(x), o.clone());
                            ensure!(prev.is_none() || prev.as_ref() == Some(o), "case {case}: bin map not a function");
                            ensure!(
                                mids.iter().any(|m| FeatureValue::Numeric(*m).to_string() == *o),
                                "case {case}: {o} is not a bin midpoint"
                            );
                        }
                    }
                    let image: BTreeSet<&String> = map.values().collect();
                    ensure!(image.len() == map.len(), "case {case}: bin map not injective");
                    if let ValuePermutation::Bins(b) = &plan.value_permutations[j] {
                        ensure!(sorted(&b.bin_map) == (0..NUM_BINS).collect::<Vec<_>>(), "bin map is not a permutation");
                        ensure!(b.bin_map.iter().enumerate().any(|(i, &t)| i != t), "identity bin map");
                    }
                }
            }
        }

        for row in ds.rows() {
            let text = list_short(ds.columns(), row, 10).unwrap();
            let expected = ds.n_columns().min(10);
            ensure!(parse_lines(&text).len() == expected, "case {case}: list_short lines");
            ensure!(text == list_template(&ds.columns()[..expected], &row[..expected]).unwrap(), "list_short prefix");
        }
    }
    ensure!(list_short(&[], &[], 10).unwrap().is_empty(), "empty list_short");
    let wide: Vec<_> = (0..25).map(|i| tabser::dataset::ColumnSpec::numeric(format!("c{i}"))).collect();
    let row: Vec<_> = (0..25).map(|i| FeatureValue::Numeric(i as f64)).collect();
    ensure!(list_short(&wide, &row, 10).unwrap().lines().count() == 10, "wide list_short");
    Ok(format!("100 datasets; {binned} binned columns checked"))
}

// 7 ------------------------------------------------------------------------
fn claims_budget() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut admitted = 0usize;
    let mut truncated = 0usize;
    for i in 0..200 {
        let rec = random_claims(&mut rng, i);
        for strategy in SelectionStrategy::all() {
            for style in [ClaimsStyle::List, ClaimsStyle::Text, ClaimsStyle::ListShort] {
                let summary = estimate_tokens(&serialize_claims(&rec, &[], style).unwrap());
                let budget = summary + rng.random_range(0..300);
                let got = select_concepts(&rec, strategy, budget, style, &WordRatioEstimator).unwrap();
                let want = oracle_selection(&rec, strategy, budget, style);
                ensure!(got == want, "record {i} {strategy:?} {style:?} budget {budget}: {} vs oracle {}", got.len(), want.len());
                let text = serialize_claims(&rec, &got, style).unwrap();
                ensure!(estimate_tokens(&text) <= budget, "record {i}: over budget");
                ensure!(oracle_tokens(&text) == estimate_tokens(&text), "token estimate mismatch");
                admitted += got.len();
                truncated += usize::from(got.len() < oracle_ranking(&rec, strategy).len());
                let tiny = select_concepts(&rec, strategy, summary.saturating_sub(1), style, &WordRatioEstimator).unwrap();
                ensure!(tiny.is_empty(), "budget below the summary admitted concepts");
            }
        }
    }
    Ok(format!("200 records x 12 strategies x 3 styles; {admitted} concepts admitted, {truncated} selections truncated by budget"))
}

// 8 ------------------------------------------------------------------------
fn eval_fixture() -> (Dataset, TaskTemplate) {
    let meta = Metadata::from_path(fixture("eval20/meta.json")).unwrap();
    let ds = load_csv(fixture("eval20/data.csv"), &meta, "label").unwrap();
    let t = TaskTemplate::from_path(fixture("eval20/template.txt")).unwrap();
    (ds, t)
}

fn mock(file: &str) -> MockBackend {
    let rule: MockRule = serde_json::from_str(&read_fixture(file)).unwrap();
    MockBackend::new(rule).unwrap()
}

fn end_to_end() -> Outcome {
    let (ds, template) = eval_fixture();
    let config = ExperimentConfig {
        shots: vec![0, 4, 8, 16, 32],
        seeds: (0..5).collect(),
        workers: 4,
    };
    let planted = mock("eval20/mock_planted.json");
    for format in [tabser::serialize::Format::List, tabser::serialize::Format::Text] {
        let out = run_experiment(&ds, &template, &format, &planted, &config).map_err(|e| e.to_string())?;
        for r in &out.reports {
            ensure!(r.per_seed_auc.iter().all(|&a| a == 1.0), "planted k={} AUCs {:?}", r.k, r.per_seed_auc);
            ensure!(r.mean == 1.0 && r.sd == 0.0, "planted mean/sd");
        }
        ensure!(out.shot_sets.len() == 4 * 5, "shot exports");
        let again = run_experiment(&ds, &template, &format, &planted, &config).unwrap();
        ensure!(serde_json::to_vec(&out).unwrap() == serde_json::to_vec(&again).unwrap(), "reports differ between runs");
    }
    let empty = mock("eval20/mock_empty.json");
    let out = run_experiment(&ds, &template, &tabser::serialize::Format::Text, &empty, &config).unwrap();
    ensure!(out.reports.iter().all(|r| r.per_seed_auc.iter().all(|&a| a == 0.5)), "empty mock AUC");

    // the same through the command line, twice
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("report{run}.json"));
        let f = |p: &str| fixture(p).display().to_string();
        let code = tabser::cli::run([
            "tabser".to_string(), "eval".into(),
            "--dataset".into(), f("eval20/data.csv"),
            "--meta".into(), f("eval20/meta.json"),
            "--template".into(), f("eval20/template.txt"),
            "--format".into(), "text".into(),
            "--backend".into(), format!("mock:{}", f("eval20/mock_planted.json")),
            "--shots".into(), "0,4,8,16,32".into(),
            "--seeds".into(), "5".into(),
            "--threads".into(), "3".into(),
            "--out".into(), out.display().to_string(),
        ]);
        ensure!(code == 0, "cli exit code {code}");
        ensure!(tabser::cli::manifest_path(&out).exists(), "manifest missing");
        outputs.push(std::fs::read(&out).unwrap());
    }
    ensure!(outputs[0] == outputs[1], "cli reports differ between runs");
    Ok("planted AUC 1.000 for every k and seed; empty mock 0.5; byte-identical reruns".into())
}

// 9 ------------------------------------------------------------------------
fn surrogate_introspection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let n = rng.random_range(120..200);
        let d = rng.random_range(3..7);
        let j = rng.random_range(0..d);
        let mut cols: Vec<tabser::dataset::ColumnSpec> =
            (0..d).map(|i| tabser::dataset::ColumnSpec::numeric(format!("x{i}"))).collect();
        cols.push(tabser::dataset::ColumnSpec::categorical("noise"));
        let rows: Vec<Vec<FeatureValue>> = (0..n)
            .map(|_| {
                let mut r: Vec<FeatureValue> = (0..d).map(|_| FeatureValue::Numeric(rng.random_range(-2.0..2.0))).collect();
                r.push(FeatureValue::categorical(["a", "b", "c"][rng.random_range(0..3)]));
                r
            })
            .collect();
        let probs: Vec<f64> = rows.iter().map(|r| sigmoid(3.0 * r[j].as_f64().unwrap())).collect();
        let ds = Dataset::new(cols, rows, vec![0; n], vec!["No".into(), "Yes".into()]).unwrap();
        let opts = SurrogateOptions { fold_seed: trial, ..Default::default() };
        let res = surrogate_importance(&ds, &probs, &opts).map_err(|e| e.to_string())?;
        let top = res.ranks.iter().position(|&r| r == 1).unwrap();
        ensure!(res.feature_names[top] == format!("x{j}"), "trial {trial}: top feature {} instead of x{j}", res.feature_names[top]);
        let again = surrogate_importance(&ds, &probs, &opts).unwrap();
        ensure!(again == res, "surrogate not deterministic");
    }

    let x: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| f64::from(0.8 * r[0] - 1.2 * r[3] + rng.random_range(-1.0..1.0) > 0.0))
        .collect();
    let l2 = 0.05;
    let fit = fit_logistic(&x, &y, l2).map_err(|e| e.to_string())?;
    ensure!(fit.grad_norm <= 1e-6, "gradient norm {} at solution", fit.grad_norm);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let g = gradient(&x, &y, l2, &w, b);
        let h = 1e-6;
        for k in 0..6 {
            let (mut wp, mut wm, mut bp, mut bm) = (w.clone(), w.clone(), b, b);
            if k == 0 {
                bp += h;
                bm -= h;
            } else {
                wp[k - 1] += h;
                wm[k - 1] -= h;
            }
            let fd = (objective(&x, &y, l2, &wp, bp) - objective(&x, &y, l2, &wm, bm)) / (2.0 * h);
            let rel = (fd - g[k]).abs() / g[k].abs().max(1e-2);
            ensure!(rel <= 1e-4, "finite difference mismatch {fd} vs {}", g[k]);
            worst = worst.max(rel);
        }
    }
    let f0 = objective(&x, &y, l2, &fit.weights, fit.intercept);
    for _ in 0..100 {
        let w: Vec<f64> = fit.weights.iter().map(|w| w + rng.random_range(-0.1..0.1)).collect();
        let b = fit.intercept + rng.random_range(-0.1..0.1);
        ensure!(f0 <= objective(&x, &y, l2, &w, b), "perturbation lowered the objective");
    }
    Ok(format!("planted feature ranked first in 10/10 trials; worst gradient deviation {worst:.1e}"))
}

// 10 -----------------------------------------------------------------------
fn relative_risk_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..1000 {
        let a = rng.random_range(1..500);
        let b = rng.random_range(0..500);
        let c = rng.random_range(1..500);
        let d = rng.random_range(0..500);
        let r = relative_risk(a, b, c, d).map_err(|e| e.to_string())?;
        let (rr, lo, hi) = katz_oracle(a, b, c, d);
        let (glo, ghi) = r.ci.ok_or("interval missing")?;
        ensure!(close(r.rr, rr, 1e-12) && close(glo, lo, 1e-12) && close(ghi, hi, 1e-12), "case {case}: ({a},{b},{c},{d})");
        ensure!(glo <= r.rr && r.rr <= ghi && glo > 0.0, "case {case}: interval order");
        let s = relative_risk(c, d, a, b).unwrap();
        ensure!(r.ratio.0 * s.ratio.0 == r.ratio.1 * s.ratio.1, "case {case}: reciprocal identity");
        ensure!(r.ratio == (s.ratio.1, s.ratio.0), "case {case}: swapped ratio");
        let (slo, shi) = s.ci.unwrap();
        ensure!(close(glo * shi, 1.0, 1e-12) && close(ghi * slo, 1.0, 1e-12), "case {case}: interval reciprocity");
    }
    ensure!(relative_risk(10, 90, 10, 90).unwrap().rr == 1.0, "symmetric table");
    ensure!(relative_risk(20, 80, 10, 90).unwrap().rr == 2.0, "doubled risk");
    ensure!(relative_risk(0, 5, 3, 3).unwrap().ci.is_none(), "zero cell not flagged");
    Ok("1000 tables within 1e-12 of the Katz formula; exact reciprocity".into())
}

// 11 -----------------------------------------------------------------------
#[derive(Default)]
struct Gate {
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl Gate {
    fn enter(&self) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(2));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Generator for Gate {
    fn generate(&self, r: &GenerationRequest) -> Result<String, BackendError> {
        self.enter();
        Ok(format!("gen:{}", r.prompt.len()))
    }
}

impl Scorer for Gate {
    fn score_choices(&self, _: &str, choices: &[String]) -> Result<Vec<f64>, BackendError> {
        self.enter();
        Ok((0..choices.len()).map(|i| -(i as f64)).collect())
    }
}

fn oracle_suffix_sum(entry: &serde_json::Value) -> f64 {
    let prompt_len = entry["prompt"].as_str().unwrap().len();
    let lp = &entry["response"]["choices"][0]["logprobs"];
    let tokens: Vec<&str> = lp["tokens"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    let mut end = 0;
    let mut sum = 0.0;
    for (t, v) in tokens.iter().zip(lp["token_logprobs"].as_array().unwrap()) {
        end += t.len();
        if end > prompt_len {
            sum += v.as_f64().unwrap();
        }
    }
    sum
}

fn backend_contracts() -> Outcome {
    // cache: a second run issues no calls
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let prompts: Vec<String> = (0..20).map(|i| format!("prompt {i}")).collect();
    let choices = vec!["No".to_string(), "Yes".to_string()];
    for pass in 0..2 {
        let gate = Arc::new(Gate::default());
        let cached = CachedBackend::open(gate.clone(), &cache).map_err(|e| e.to_string())?;
        for p in &prompts {
            cached.generate(&GenerationRequest::new(p.clone())).unwrap();
            cached.score_choices(p, &choices).unwrap();
        }
        let calls = gate.calls.load(Ordering::SeqCst);
        ensure!(calls == if pass == 0 { 40 } else { 0 }, "pass {pass}: {calls} backend calls");
    }

    // concurrency bound under a flood of callers
    for bound in [1, 2, 3, 5] {
        let gate = Arc::new(Gate::default());
        let limited = Limited::new(gate.clone(), bound);
        let items: Vec<usize> = (0..60).collect();
        bounded_map(&items, 16, |_, &i| limited.generate(&GenerationRequest::new(format!("p{i}"))).unwrap());
        let peak = gate.peak.load(Ordering::SeqCst);
        ensure!(peak <= bound, "peak {peak} over bound {bound}");
    }

    // recorded replay over HTTP
    let entries = recorded_entries();
    let responses: BTreeMap<String, serde_json::Value> = entries
        .iter()
        .map(|e| (e["full"].as_str().unwrap().to_string(), e["response"].clone()))
        .collect();
    let server = FixtureServer::start(ServerScript {
        responses,
        failures: vec![],
        delay: Duration::from_millis(5),
    });
    let mut config = BackendConfig::http(&server.url);
    config.max_concurrency = 2;
    config.cache_path = Some(dir.path().join("http-cache.jsonl"));
    let mut by_prompt: BTreeMap<String, Vec<&serde_json::Value>> = BTreeMap::new();
    for e in &entries {
        by_prompt.entry(e["prompt"].as_str().unwrap().to_string()).or_default().push(e);
    }
    for pass in 0..2 {
        let before = server.requests.load(Ordering::SeqCst);
        let backend = config.build().map_err(|e| e.to_string())?;
        let jobs: Vec<(&String, &Vec<&serde_json::Value>)> = by_prompt.iter().collect();
        let results = bounded_map(&jobs, 8, |_, (prompt, es)| {
            let choices: Vec<String> = es.iter().map(|e| e["choice"].as_str().unwrap().to_string()).collect();
            backend.score_choices(prompt, &choices)
        });
        for ((_, es), got) in jobs.iter().zip(results) {
            let got = got.map_err(|e| e.to_string())?;
            for (e, g) in es.iter().zip(&got) {
                let want = oracle_suffix_sum(e);
                ensure!(*g == want, "{}: {g} vs recorded {want}", e["choice"]);
            }
        }
        let sent = server.requests.load(Ordering::SeqCst) - before;
        ensure!(sent == if pass == 0 { entries.len() } else { 0 }, "http pass {pass}: {sent} requests");
    }
    let peak = server.peak_in_flight.load(Ordering::SeqCst);
    ensure!(peak <= 2, "http peak concurrency {peak}");

    // direct client without cache also matches
    let direct = HttpBackend::new(BackendConfig::http(&server.url)).unwrap();
    let e = &entries[0];
    let got = direct.score_choices(e["prompt"].as_str().unwrap(), &[e["choice"].as_str().unwrap().to_string()]).unwrap();
    ensure!(got[0] == oracle_suffix_sum(e), "uncached replay");
    Ok(format!("cache 40 -> 0 calls; bound respected; {} recorded sums exact", entries.len()))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 11] = [
    Criterion { id: 1, name: "golden serializations", limit: Duration::from_secs(1), run: golden_serializations },
    Criterion { id: 2, name: "template suite", limit: Duration::from_secs(1), run: template_suite },
    Criterion { id: 3, name: "scoring correctness", limit: Duration::from_secs(5), run: scoring_correctness },
    Criterion { id: 4, name: "AUC oracle equivalence", limit: Duration::from_secs(10), run: auc_oracles },
    Criterion { id: 5, name: "shot protocol", limit: Duration::from_secs(5), run: shot_protocol },
    Criterion { id: 6, name: "ablation laws", limit: Duration::from_secs(10), run: ablation_laws },
    Criterion { id: 7, name: "claims budget safety", limit: Duration::from_secs(20), run: claims_budget },
    Criterion { id: 8, name: "end-to-end determinism", limit: Duration::from_secs(30), run: end_to_end },
    Criterion { id: 9, name: "surrogate introspection", limit: Duration::from_secs(30), run: surrogate_introspection },
    Criterion { id: 10, name: "relative risk", limit: Duration::from_secs(5), run: relative_risk_oracle },
    Criterion { id: 11, name: "backend contracts", limit: Duration::from_secs(10), run: backend_contracts },
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    let mut ran = 0;
    for c in &CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str()) || *f == c.id.to_string()) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(Ok(d)) if elapsed <= c.limit => (true, d),
            Ok(Ok(d)) => (false, format!("{d}; exceeded time limit")),
            Ok(Err(e)) => (false, e),
            Err(p) => (
                false,
                p.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        failures += usize::from(!ok);
        println!(
            "{} criterion {:>2} {:<26} {:>9.3}s / {:>2}s  {}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            detail
        );
    }
    println!("acceptance: {} passed, {failures} failed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
