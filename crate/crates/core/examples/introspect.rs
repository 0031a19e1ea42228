//! Explaining predictions: fit a regularised logistic surrogate to a
//! classifier's outputs and rank features by weight, then compute relative
//! risks of an outcome for claims concepts.
//!
//! cargo run --example introspect

use std::collections::HashMap;

use chrono::NaiveDate;
use tabser::backend::{MockBackend, MockRule};
use tabser::claims::{ClaimsRecord, VisitInput};
use tabser::dataset::{parse_csv, Metadata};
use tabser::fewshot::classify_rows;
use tabser::introspect::{concept_relative_risks, surrogate_importance, SurrogateOptions, SurrogateTarget};
use tabser::prompt::bundled_template;
use tabser::serialize::Format;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = Metadata::from_json(include_str!("data/people.meta.json"))?;
    let ds = parse_csv(include_str!("data/people.csv"), &meta, "label")?;
    let template = bundled_template("income").ok_or("income template missing")?;
    let scorer = MockBackend::new(MockRule::linear([
        ("Masters", "Yes", 2.0),
        ("Bachelors", "Yes", 1.0),
        ("clerk", "No", 0.5),
    ]))?;
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    let scores = classify_rows(&ds, &rows, &template, &Format::List, &scorer, 4)?;
    let p_yes: Vec<f64> = scores.iter().map(|s| s.probs[1]).collect();

    let opts = SurrogateOptions {
        target: SurrogateTarget::Probability,
        ..Default::default()
    };
    let fit = surrogate_importance(&ds, &p_yes, &opts)?;
    println!("surrogate C = {}, top features:", fit.c);
    for w in fit.ranked().iter().take(5) {
        println!("  {:>2}. {:<24} {:+.3}", w.rank, w.feature, w.weight);
    }

    let day = |d| NaiveDate::from_ymd_opt(2020, 1, d).unwrap();
    let mut records = Vec::new();
    let mut outcome = HashMap::new();
    for i in 0..30u32 {
        let mut visit = VisitInput::outpatient(day(1 + i % 28), "internal medicine", "checkup");
        if i % 3 == 0 {
            visit = visit.condition("N18", "chronic kidney disease");
        }
        if i % 2 == 0 {
            visit = visit.condition("I10", "essential hypertension");
        }
        let id = format!("p{i}");
        outcome.insert(id.clone(), i % 3 == 0 && i % 4 != 0 || i % 7 == 0);
        records.push(ClaimsRecord::new(id, 60 + i % 20, "male", "white", vec![visit])?);
    }
    println!("\nrelative risk of the outcome:");
    for r in concept_relative_risks(&records, &outcome) {
        let ci = r.risk.ci.map(|(lo, hi)| format!("[{lo:.2}, {hi:.2}]")).unwrap_or_else(|| "n/a".into());
        println!("  {:<24} counts {:?}  RR {:.2}  95% CI {ci}", r.name, r.counts, r.risk.rr);
    }
    Ok(())
}
