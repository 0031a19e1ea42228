//! Renders one row of a small census-style table in every deterministic
//! serialization format.
//!
//! cargo run --example serialize

use tabser::dataset::{parse_csv, Metadata};
use tabser::serialize::{Format, SerializerId, DEFAULT_MAX_FEATURES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let meta = Metadata::from_json(include_str!("data/people.meta.json"))?;
    let ds = parse_csv(include_str!("data/people.csv"), &meta, "label")?;
    println!("{} rows, {} columns, classes {:?}\n", ds.n_rows(), ds.n_columns(), ds.class_names());

    for id in SerializerId::ALL.into_iter().filter(|id| !id.is_generative()) {
        let format = Format::for_dataset(id, &ds, 0, DEFAULT_MAX_FEATURES)?;
        let example = format.serialize_row(&ds, 0)?;
        println!("== {id}\n{}\n", example.text);
    }
    Ok(())
}
