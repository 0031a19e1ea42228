pub mod backend;
pub mod claims;
pub mod cli;
pub mod dataset;
pub mod fewshot;
pub mod introspect;
pub mod llm_serialize;
pub mod prompt;
pub mod rng;
pub mod serialize;
