//! The three generator-assisted serializations, driven by an offline mock
//! whose replies are looked up by prompt. Swap in an HTTP backend to use a
//! real model (see the `http_backend` example).
//!
//! cargo run --example llm_serialize

use tabser::backend::{GenerationRequest, MockBackend, MockRule};
use tabser::dataset::{parse_csv, Metadata};
use tabser::llm_serialize::{coverage, LlmSerializer, PAIR_INSTRUCTION, REWRITE_INSTRUCTION};
use tabser::serialize::{list_template, SerializerId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = Metadata::from_json(include_str!("data/people.meta.json"))?;
    let ds = parse_csv(include_str!("data/people.csv"), &meta, "label")?;
    let ser = LlmSerializer::default();
    let row = ds.row(0);
    let v = |j: usize| row[j].to_string();

    // canned replies keyed by the exact prompt each serializer sends
    let list = list_template(ds.columns(), row)?;
    let full_prompt = GenerationRequest::new(format!("{REWRITE_INSTRUCTION}\n\n{list}\n\n"))
        .with_guide_prefix("The person is")
        .full_prompt();
    let mock = MockBackend::new(MockRule::table([
        (format!("Age: {}", v(0)), format!("They are {} years old.", v(0))),
        (format!("Occupation: {}", v(1)), format!("They work as a {}.", v(1))),
        (format!("Work hours per week: {}", v(2)), format!("They work {} hours a week.", v(2))),
        (format!("Education: {}", v(3)), format!("Their education is {}.", v(3))),
        (
            format!("{PAIR_INSTRUCTION}Age: {}, Occupation: {}", v(0), v(1)),
            format!("A {}-year-old {}.", v(0), v(1)),
        ),
        (
            format!("{PAIR_INSTRUCTION}Work hours per week: {}, Education: {}", v(2), v(3)),
            format!("Works {} hours weekly with {} education.", v(2), v(3)),
        ),
        (
            full_prompt,
            format!(" {} years old, works as a {} for {} hours a week.", v(0), v(1), v(2)),
        ),
    ]))?;

    for id in [SerializerId::TableToText, SerializerId::TextPairs, SerializerId::TextFull] {
        let ex = ser.serialize_row(id, &ds, 0, &mock, "person")?;
        let cov = coverage(ds.columns(), row, &ex.text);
        println!("== {id} ({}/{} values present)\n{}\n", cov.covered, cov.total, ex.text);
        if !cov.absent.is_empty() {
            println!("   dropped: {}\n", cov.absent.join(", "));
        }
    }
    Ok(())
}
