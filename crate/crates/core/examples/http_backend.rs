//! Scoring and generation against an OpenAI-style completions endpoint,
//! with retries, a concurrency cap and an on-disk reply cache.
//!
//! TABSER_ENDPOINT=http://localhost:8000/v1/completions \
//! TABSER_MODEL=my-model TABSER_TOKEN_VAR=API_KEY cargo run --example http_backend
//!
//! Without `TABSER_ENDPOINT` the example prints the configuration it would
//! use and exits.

use tabser::backend::{BackendConfig, GenerationRequest};
use tabser::prompt::{bundled_template, classify};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let endpoint = std::env::var("TABSER_ENDPOINT").unwrap_or_default();
    let mut config = BackendConfig::http(endpoint.clone());
    config.model = std::env::var("TABSER_MODEL").ok();
    config.auth_token_env = std::env::var("TABSER_TOKEN_VAR").ok();
    config.max_concurrency = 2;
    config.cache_path = Some(std::env::temp_dir().join("tabser-example-cache.jsonl"));
    if endpoint.is_empty() {
        println!("set TABSER_ENDPOINT to run against a server; config:\n{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    let backend = config.build()?;

    let template = bundled_template("heart").ok_or("heart template missing")?;
    let prompt = template.render("- Age: 63\n- Sex: male\n- Chest pain type: asymptomatic\n- Max heart rate: 108");
    let scores = classify(&prompt, backend.as_ref())?;
    for (choice, p) in prompt.choices.iter().zip(&scores.probs) {
        println!("p({choice}) = {p:.3}");
    }

    let reply = backend.generate(&GenerationRequest::new("Write this information as a sentence: Age: 63"))?;
    println!("generation: {reply}");
    Ok(())
}
