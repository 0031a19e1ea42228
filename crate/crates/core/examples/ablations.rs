//! Ablation serializations: feature names shuffled across columns, values
//! remapped within their column (categories permuted, numbers binned and the
//! bins permuted), and the truncated short list.
//!
//! cargo run --example ablations -- [seed]

use tabser::dataset::{parse_csv, Metadata};
use tabser::serialize::{
    build_permutation_plan, list_permuted_names, list_permuted_values, list_short, list_template,
    PermutationMode, ValuePermutation,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let meta = Metadata::from_json(include_str!("data/people.meta.json"))?;
    let ds = parse_csv(include_str!("data/people.csv"), &meta, "label")?;
    let (cols, row) = (ds.columns(), ds.row(3));

    println!("original:\n{}\n", list_template(cols, row)?);

    let names = build_permutation_plan(&ds, PermutationMode::Names, seed);
    println!("permuted names (seed {seed}):\n{}\n", list_permuted_names(cols, row, &names)?);

    let values = build_permutation_plan(&ds, PermutationMode::Values, seed);
    println!("permuted values:\n{}\n", list_permuted_values(cols, row, &values)?);
    for (j, perm) in values.value_permutations.iter().enumerate() {
        match perm {
            ValuePermutation::Bins(b) => {
                let edges: Vec<String> = b.edges.iter().map(|e| format!("{e:.1}")).collect();
                println!("  {}: bin map {:?}, edges [{}]", cols[j].display_name, b.bin_map, edges.join(", "));
            }
            ValuePermutation::Categories(c) => println!("  {}: {:?}", cols[j].display_name, c.mapping),
            ValuePermutation::Identity => println!("  {}: unchanged", cols[j].display_name),
        }
    }

    println!("\nfirst two features only:\n{}", list_short(cols, row, 2)?);
    Ok(())
}
