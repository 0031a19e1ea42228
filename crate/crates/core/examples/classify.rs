//! Zero-shot classification of serialized rows: render the task template,
//! score each answer choice and normalise the scores into probabilities.
//!
//! cargo run --example classify

use tabser::backend::{MockBackend, MockRule};
use tabser::dataset::{parse_csv, Metadata};
use tabser::prompt::{bundled_template, classify};
use tabser::serialize::text_template;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = Metadata::from_json(include_str!("data/people.meta.json"))?;
    let ds = parse_csv(include_str!("data/people.csv"), &meta, "label")?;
    let template = bundled_template("income").ok_or("income template missing")?;

    // stand-in for a model: a few phrases nudge the answer one way or the other
    let scorer = MockBackend::new(MockRule::linear([
        ("Masters", "Yes", 1.5),
        ("Bachelors", "Yes", 0.8),
        ("HS-grad", "No", 0.7),
        ("hours per week is 20", "No", 1.0),
        ("hours per week is 60", "Yes", 1.0),
    ]))?;

    let prompt = template.render(&text_template(ds.columns(), ds.row(0))?);
    println!("prompt:\n{}\n", prompt.text);

    for i in 0..8 {
        let rendered = template.render(&text_template(ds.columns(), ds.row(i))?);
        let scores = classify(&rendered, &scorer)?;
        println!(
            "row {i}: p(Yes) = {:.3}, predicted {:<3}  (label {})",
            scores.probs[1],
            rendered.choices[scores.predicted],
            ds.class_names()[ds.labels()[i]],
        );
    }
    Ok(())
}
