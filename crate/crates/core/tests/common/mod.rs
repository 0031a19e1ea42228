//! Fixtures, independent oracles and random instance generators shared by
//! the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chrono::NaiveDate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use tabser::claims::{
    serialize_claims, ClaimsRecord, ClaimsStyle, ConceptKind, SelectedConcept, SelectionOrder,
    SelectionStrategy, VisitInput, SHORT_LIST_CONCEPTS,
};
use tabser::dataset::{load_csv, ColumnKind, ColumnSpec, Dataset, FeatureValue, Metadata};

pub const GOLDEN_DATASETS: [&str; 9] = [
    "bank", "blood", "california", "car", "creditg", "diabetes", "heart", "income", "jungle",
];

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// The one-row dataset of a golden fixture; `format` is `list` or `text`.
pub fn golden_dataset(name: &str, format: &str) -> Dataset {
    let meta = Metadata::from_path(fixture(&format!("golden/{name}/{format}.meta.json"))).unwrap();
    load_csv(fixture(&format!("golden/{name}/{format}.csv")), &meta, "label").unwrap()
}

// ---- oracles -------------------------------------------------------------

/// Pairwise count over every (positive, negative) pair.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

pub fn brute_macro_auc(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Option<f64> {
    let mut aucs = Vec::new();
    for c in 0..n_classes {
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if pos.iter().any(|&p| p) && pos.iter().any(|&p| !p) {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            aucs.push(brute_auc(&s, &pos));
        }
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Softmax through the log-sum-exp identity.
pub fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Katz interval written with `b / (a (a + b))` terms.
pub fn katz_oracle(a: u64, b: u64, c: u64, d: u64) -> (f64, f64, f64) {
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let rr = (a / (a + b)) / (c / (c + d));
    let se = (b / (a * (a + b)) + d / (c * (c + d))).sqrt();
    (rr, rr * (-1.96 * se).exp(), rr * (1.96 * se).exp())
}

pub fn oracle_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 256).div_ceil(100)
}

/// Candidate order computed from the raw visits, without the library's
/// ranking code or its precomputed frequencies.
pub fn oracle_ranking(rec: &ClaimsRecord, strategy: SelectionStrategy) -> Vec<SelectedConcept> {
    let in_scope = |k: ConceptKind| strategy.scope.includes(k);
    let mut occ: Vec<(usize, usize, SelectedConcept)> = Vec::new();
    for (vi, v) in rec.visits.iter().enumerate() {
        let mut pos = 0;
        for c in v.conditions.iter().chain(&v.procedures) {
            if !in_scope(c.kind) || occ.iter().any(|(ov, _, s)| *ov == vi && s.concept.kind == c.kind && s.concept.id == c.id) {
                continue;
            }
            occ.push((vi, pos, SelectedConcept { visit: vi, concept: c.clone() }));
            pos += 1;
        }
    }
    match strategy.order {
        SelectionOrder::Oldest => {
            occ.sort_by_key(|(vi, pos, _)| (rec.visits[*vi].date, *vi, *pos));
            occ.into_iter().map(|o| o.2).collect()
        }
        SelectionOrder::MostRecent => {
            occ.sort_by_key(|(vi, pos, _)| (std::cmp::Reverse(rec.visits[*vi].date), *vi, *pos));
            occ.into_iter().map(|o| o.2).collect()
        }
        SelectionOrder::MostFrequent | SelectionOrder::LeastFrequent => {
            let mut count: HashMap<(ConceptKind, String), i64> = HashMap::new();
            for v in &rec.visits {
                for c in v.conditions.iter().chain(&v.procedures) {
                    *count.entry((c.kind, c.id.clone())).or_default() += 1;
                }
            }
            let mut firsts: Vec<SelectedConcept> = Vec::new();
            for (_, _, s) in occ {
                if !firsts.iter().any(|f| f.concept.kind == s.concept.kind && f.concept.id == s.concept.id) {
                    firsts.push(s);
                }
            }
            let sign = if strategy.order == SelectionOrder::MostFrequent { -1 } else { 1 };
            firsts.sort_by_key(|s| {
                (
                    sign * count[&(s.concept.kind, s.concept.id.clone())],
                    rec.visits[s.visit].date,
                    s.concept.id.clone(),
                )
            });
            firsts
        }
    }
}

/// Longest ranked prefix whose serialization fits the budget.
pub fn oracle_selection(
    rec: &ClaimsRecord,
    strategy: SelectionStrategy,
    budget: usize,
    style: ClaimsStyle,
) -> Vec<SelectedConcept> {
    let ranked = oracle_ranking(rec, strategy);
    let cap = if style == ClaimsStyle::ListShort { SHORT_LIST_CONCEPTS } else { usize::MAX };
    let mut best = None;
    for len in 0..=ranked.len().min(cap) {
        let text = serialize_claims(rec, &ranked[..len], style).unwrap();
        if budget > 0 && oracle_tokens(&text) <= budget {
            best = Some(len);
        }
    }
    ranked[..best.unwrap_or(0)].to_vec()
}

// ---- generators ----------------------------------------------------------

/// Random mixed-type dataset with missing values.
pub fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let n_cols = rng.random_range(1..=8);
    let n_rows = rng.random_range(1..=40);
    let mut cols = Vec::new();
    for j in 0..n_cols {
        let name = format!("f{j}");
        cols.push(if rng.random_bool(0.5) {
            ColumnSpec::numeric(name)
        } else {
            ColumnSpec::categorical(name)
        });
    }
    let scale = 10f64.powi(rng.random_range(-2..4));
    let rows = (0..n_rows)
        .map(|_| {
            cols.iter()
                .map(|c| {
                    if rng.random_bool(0.1) {
                        return FeatureValue::Missing;
                    }
                    match c.kind {
                        ColumnKind::Numeric => {
                            let x: f64 = rng.random_range(-1.0..1.0) * scale;
                            FeatureValue::Numeric(if rng.random_bool(0.5) { x.round() } else { x })
                        }
                        ColumnKind::Categorical => {
                            FeatureValue::categorical(format!("v{}", rng.random_range(0..5)))
                        }
                    }
                })
                .collect()
        })
        .collect();
    let labels = (0..n_rows).map(|i| i % 2).collect();
    Dataset::new(cols, rows, labels, vec!["No".into(), "Yes".into()]).unwrap()
}

const CONDITIONS: [&str; 12] = [
    "hypertension", "type 2 diabetes mellitus", "chronic kidney disease", "atrial fibrillation",
    "osteoarthritis of knee", "major depressive disorder", "congestive heart failure", "asthma",
    "hyperlipidemia", "chronic cholecystitis", "aplastic anemia due to drugs", "gout",
];
const PROCEDURES: [&str; 6] = [
    "colonoscopy", "hip replacement", "cataract extraction", "coronary angiography",
    "knee arthroscopy", "hemodialysis",
];
const SPECIALTIES: [&str; 5] = ["cardiology", "dermatology", "nephrology", "internal medicine", "oncology"];

pub fn random_claims(rng: &mut ChaCha8Rng, id: usize) -> ClaimsRecord {
    let n_visits = rng.random_range(0..=8);
    let start = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
    let visits = (0..n_visits)
        .map(|_| {
            // few distinct days so that same-date visits occur
            let date = start + chrono::Days::new(rng.random_range(0..6) * 97);
            let mut conditions = Vec::new();
            for _ in 0..rng.random_range(0..5) {
                let k = rng.random_range(0..CONDITIONS.len());
                conditions.push((format!("C{k:02}"), CONDITIONS[k].to_string()));
            }
            let mut procedures = Vec::new();
            for _ in 0..rng.random_range(0..3) {
                let k = rng.random_range(0..PROCEDURES.len());
                procedures.push((format!("P{k:02}"), PROCEDURES[k].to_string()));
            }
            let complaint = conditions
                .first()
                .map(|c: &(String, String)| c.1.clone())
                .unwrap_or_else(|| CONDITIONS[rng.random_range(0..CONDITIONS.len())].to_string());
            let mut v = if rng.random_bool(0.7) {
                VisitInput::outpatient(date, SPECIALTIES[rng.random_range(0..SPECIALTIES.len())], &complaint)
            } else {
                VisitInput::inpatient(date, rng.random_range(1..20), &complaint)
            };
            v.conditions = conditions;
            v.procedures = procedures;
            v
        })
        .collect();
    let sex = if rng.random_bool(0.5) { "male" } else { "female" };
    ClaimsRecord::new(format!("p{id}"), rng.random_range(40..95), sex, "white", visits).unwrap()
}

// ---- HTTP fixture server -------------------------------------------------

/// Replays recorded completion responses, keyed by the request's prompt.
/// Counts requests and the peak number served at once.
pub struct FixtureServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub peak_in_flight: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<Value>>>,
    pub auth_headers: Arc<Mutex<Vec<Option<String>>>>,
}

pub struct ServerScript {
    pub responses: BTreeMap<String, Value>,
    /// Status codes returned, in order, before normal replies resume.
    pub failures: Vec<u16>,
    pub delay: Duration,
}

pub fn recorded_entries() -> Vec<Value> {
    serde_json::from_str(&read_fixture("http/recorded.json")).unwrap()
}

impl FixtureServer {
    pub fn start(script: ServerScript) -> FixtureServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let auth = Arc::new(Mutex::new(Vec::new()));
        let failures = Arc::new(Mutex::new(script.failures.into_iter().collect::<std::collections::VecDeque<_>>()));
        let responses = Arc::new(script.responses);
        let (r, f, p, b, a) = (requests.clone(), in_flight.clone(), peak.clone(), bodies.clone(), auth.clone());
        let delay = script.delay;
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let (r, f, p, b, a) = (r.clone(), f.clone(), p.clone(), b.clone(), a.clone());
                let (failures, responses) = (failures.clone(), responses.clone());
                thread::spawn(move || {
                    let now = f.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    serve(stream, &r, &b, &a, &failures, &responses, delay);
                    f.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        FixtureServer {
            url,
            requests,
            peak_in_flight: peak,
            bodies,
            auth_headers: auth,
        }
    }
}

fn serve(
    stream: TcpStream,
    requests: &AtomicUsize,
    bodies: &Mutex<Vec<Value>>,
    auth: &Mutex<Vec<Option<String>>>,
    failures: &Mutex<std::collections::VecDeque<u16>>,
    responses: &BTreeMap<String, Value>,
    delay: Duration,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut stream = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let mut length = 0;
        let mut authorization = None;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            let (k, v) = h.split_once(':').unwrap();
            match k.to_ascii_lowercase().as_str() {
                "content-length" => length = v.trim().parse().unwrap(),
                "authorization" => authorization = Some(v.trim().to_string()),
                _ => {}
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let body: Value = serde_json::from_slice(&body).unwrap();
        requests.fetch_add(1, Ordering::SeqCst);
        thread::sleep(delay);
        let failure = failures.lock().unwrap().pop_front();
        let (status, reply) = match failure {
            Some(code) => (code, "{}".to_string()),
            None => {
                let prompt = body["prompt"].as_str().unwrap_or_default();
                match responses.get(prompt) {
                    Some(v) => (200, v.to_string()),
                    None => (200, serde_json::json!({"choices": [{"text": ""}]}).to_string()),
                }
            }
        };
        bodies.lock().unwrap().push(body);
        auth.lock().unwrap().push(authorization);
        let reason = if status == 200 { "OK" } else { "Error" };
        let msg = format!(
            "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{reply}",
            reply.len()
        );
        if stream.write_all(msg.as_bytes()).is_err() {
            return;
        }
    }
}
