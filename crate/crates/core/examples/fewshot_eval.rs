//! The evaluation protocol: 80/20 split per seed, class-balanced shot sets
//! for each k, AUC on the held-out rows, mean and standard deviation over
//! seeds. Shot sets are exported for an external fine-tuning step; the
//! scorer here is fixed, so every k reports the same AUC.
//!
//! cargo run --example fewshot_eval

use tabser::backend::{MockBackend, MockRule};
use tabser::dataset::{parse_csv, Metadata};
use tabser::fewshot::{run_experiment, ExperimentConfig};
use tabser::prompt::bundled_template;
use tabser::serialize::Format;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = Metadata::from_json(include_str!("data/people.meta.json"))?;
    let ds = parse_csv(include_str!("data/people.csv"), &meta, "label")?;
    let template = bundled_template("income").ok_or("income template missing")?;
    let scorer = MockBackend::new(MockRule::linear([
        ("Masters", "Yes", 1.5),
        ("Bachelors", "Yes", 0.8),
        ("HS-grad", "No", 0.7),
    ]))?;

    let config = ExperimentConfig {
        shots: vec![0, 4, 8],
        seeds: (0..5).collect(),
        workers: 4,
    };
    for format in [Format::List, Format::Text] {
        let out = run_experiment(&ds, &template, &format, &scorer, &config)?;
        for r in &out.reports {
            println!("{:<5} k={:<2} AUC {:.3} ± {:.3}  per seed {:.3?}", r.serializer_id, r.k, r.mean, r.sd, r.per_seed_auc);
        }
        let s = &out.shot_sets[0];
        println!("  e.g. seed {} k={} shots {:?}", s.seed, s.k, s.indices);
    }
    Ok(())
}
