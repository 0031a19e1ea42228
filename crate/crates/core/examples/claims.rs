//! Claims serialization: a patient summary followed by visits and their
//! concepts, with concepts admitted under a token budget in the order a
//! selection strategy ranks them.
//!
//! cargo run --example claims

use chrono::NaiveDate;
use tabser::claims::{
    estimate_tokens, permuted_name_map, ClaimsRecord, ClaimsSerializer, ClaimsStyle, Scope,
    SelectionOrder, SelectionStrategy, VisitInput,
};

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rec = ClaimsRecord::new(
        "p-17",
        68,
        "female",
        "white",
        vec![
            VisitInput::outpatient(date(2019, 3, 2), "cardiology", "atrial fibrillation")
                .condition("I48", "atrial fibrillation")
                .condition("I10", "essential hypertension")
                .procedure("93000", "electrocardiogram"),
            VisitInput::inpatient(date(2020, 11, 14), 4, "heart failure")
                .condition("I50", "heart failure")
                .condition("I10", "essential hypertension")
                .condition("N18", "chronic kidney disease")
                .procedure("93306", "echocardiography"),
            VisitInput::outpatient(date(2021, 6, 30), "nephrology", "chronic kidney disease")
                .condition("N18", "chronic kidney disease")
                .condition("I10", "essential hypertension"),
        ],
    )?;

    for style in [ClaimsStyle::List, ClaimsStyle::Text] {
        let text = ClaimsSerializer {
            strategy: SelectionStrategy::new(SelectionOrder::Oldest, Scope::Both),
            style,
            budget: 1024,
        }
        .serialize(&rec)?;
        println!("== {style:?}, all concepts ({} tokens)\n{text}\n", estimate_tokens(&text));
    }

    // a tight budget keeps only the highest ranked concepts
    for order in [SelectionOrder::MostFrequent, SelectionOrder::LeastFrequent, SelectionOrder::MostRecent] {
        let text = ClaimsSerializer {
            strategy: SelectionStrategy::new(order, Scope::Conditions),
            style: ClaimsStyle::List,
            budget: 60,
        }
        .serialize(&rec)?;
        println!("== {order:?}, conditions, budget 60\n{text}\n");
    }

    let map = permuted_name_map(std::slice::from_ref(&rec), 3);
    let shuffled = rec.with_concept_map(&map);
    println!("== permuted concept names\n{}", ClaimsSerializer::default().serialize(&shuffled)?);
    Ok(())
}
