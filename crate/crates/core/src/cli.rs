//! Command-line front end.
//!
//! Every command writes its primary output atomically and records a run
//! manifest next to it at `<out>.manifest.json`. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 backend error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{bounded_map, BackendConfig, BackendError, BackendKind, LanguageModel, MockRule};
use crate::claims::{
    default_budget, load_claims_jsonl, load_concept_map, permuted_name_map, select_concepts,
    serialize_claims, ClaimsError, ClaimsStyle, ConceptMap, Scope, SelectionOrder, SelectionStrategy,
    WordRatioEstimator, MODEL_TOKEN_LIMIT,
};
use crate::dataset::{load_csv, Dataset, Metadata};
use crate::fewshot::{run_experiment, EvalError, ExperimentConfig, Precomputed, RowSerializer};
use crate::introspect::{concept_relative_risks, surrogate_importance, SurrogateOptions, SurrogateTarget};
use crate::llm_serialize::{LlmSerializeError, LlmSerializer};
use crate::prompt::{classify, ClassifyError, TaskTemplate};
use crate::serialize::{Format, SerializedExample, SerializerId, DEFAULT_MAX_FEATURES};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

fn context(what: impl Display) -> impl FnOnce(CliError) -> CliError {
    move |e| match e {
        CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
        CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
        CliError::Backend(m) => CliError::Backend(format!("{what}: {m}")),
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(m) => CliError::Usage(format!("backend configuration: {m}")),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<ClassifyError> for CliError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::Backend(b) => b.into(),
            other => data(other),
        }
    }
}

impl From<LlmSerializeError> for CliError {
    fn from(e: LlmSerializeError) -> Self {
        match e {
            LlmSerializeError::Backend { unit, source } => {
                CliError::Backend(format!("unit {unit}: {source}"))
            }
            other => data(other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e.root() {
            EvalError::Classify {
                source: ClassifyError::Backend(_),
                ..
            } => CliError::Backend(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<ClaimsError> for CliError {
    fn from(e: ClaimsError) -> Self {
        data(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "tabser", version, about = "Turn table rows into text and classify them with a language model")]
pub struct Cli {
    /// Base seed for permutations, splits and shot sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Rows processed concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Column metadata JSON.
    #[arg(long)]
    pub meta: PathBuf,
    /// Label column; defaults to the metadata's, then to `label`.
    #[arg(long)]
    pub label_column: Option<String>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// `mock`, `mock:<rule.json>` or `http:<config.json>`.
    #[arg(long)]
    pub backend: Option<String>,
    /// JSONL reply cache; overrides the config's `cache_path`.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serialize every row of a dataset.
    Serialize {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        format: SerializerId,
        #[arg(long, default_value_t = DEFAULT_MAX_FEATURES)]
        max_features: usize,
        #[command(flatten)]
        backend: BackendArgs,
        /// Subject of the guided rewrite (`text-full`).
        #[arg(long, default_value = "person")]
        subject: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score answer choices for serialized rows.
    Classify {
        #[arg(long)]
        template: PathBuf,
        /// JSONL of `{row_index, text, ...}`.
        #[arg(long)]
        serializations: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the split / shot / AUC protocol over several seeds.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        format: SerializerId,
        #[arg(long, default_value_t = DEFAULT_MAX_FEATURES)]
        max_features: usize,
        #[arg(long, default_value = "person")]
        subject: String,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,4,8,16,32")]
        shots: Vec<usize>,
        /// Number of seeds, counted up from `--seed`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Also write one `{seed, k, indices}` file per shot set here.
        #[arg(long)]
        shots_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a logistic surrogate to predictions and rank features.
    Introspect {
        #[command(flatten)]
        data: DataArgs,
        /// JSONL of `{row_index, probs, predicted}`.
        #[arg(long)]
        preds: PathBuf,
        /// Class whose probability is explained.
        #[arg(long, default_value_t = 1)]
        positive_class: usize,
        #[arg(long, default_value = "hard-label", value_parser = parse_snake::<SurrogateTarget>)]
        target: SurrogateTarget,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative risk of an outcome for every claims concept.
    Rr {
        #[arg(long)]
        claims: PathBuf,
        /// CSV with `patient_id,label` columns.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serialize claims records under a token budget.
    Claims {
        #[arg(long)]
        claims: PathBuf,
        #[arg(long, default_value = "list", value_parser = parse_snake::<ClaimsStyle>)]
        style: ClaimsStyle,
        #[arg(long, default_value = "most-frequent", value_parser = parse_snake::<SelectionOrder>)]
        order: SelectionOrder,
        #[arg(long, default_value = "conditions", value_parser = parse_snake::<Scope>)]
        scope: Scope,
        /// Token budget; defaults to the model limit minus the template.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        template: Option<PathBuf>,
        /// TSV of `id<TAB>alternative_name`.
        #[arg(long)]
        concept_map: Option<PathBuf>,
        /// Swap concept names by one seeded permutation shared by all records.
        #[arg(long)]
        permute_names: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|_| format!("unknown value {s:?}"))
}

/// Records how an output was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// SHA-256 over the arguments and every input file's digest.
    pub config_digest: String,
    pub tool_version: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputDigest>,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

fn file_digest(path: &Path) -> Result<InputDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: &dyn Display| data(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(bytes).map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e))?;
    Ok(())
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable");
        out.push(b'\n');
    }
    out
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| data(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn load_dataset(args: &DataArgs, inputs: &mut Vec<PathBuf>) -> Result<Dataset, CliError> {
    let meta = Metadata::from_path(&args.meta).map_err(|e| data(format!("{}: {e}", args.meta.display())))?;
    let label = args
        .label_column
        .clone()
        .or_else(|| meta.label_column.clone())
        .unwrap_or_else(|| "label".to_string());
    let ds = load_csv(&args.dataset, &meta, &label).map_err(|e| data(format!("{}: {e}", args.dataset.display())))?;
    inputs.push(args.dataset.clone());
    inputs.push(args.meta.clone());
    Ok(ds)
}

fn load_template(path: &Path, inputs: &mut Vec<PathBuf>) -> Result<TaskTemplate, CliError> {
    let t = TaskTemplate::from_path(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    inputs.push(path.to_path_buf());
    Ok(t)
}

/// Resolves `mock`, `mock:<file>` and `http:<file>`. A mock file holds
/// either a bare rule or a whole backend configuration.
pub fn backend_config(spec: &str, cache: Option<&Path>) -> Result<(BackendConfig, Option<PathBuf>), CliError> {
    let read = |path: &str| {
        std::fs::read_to_string(path).map_err(|e| data(format!("{path}: {e}")))
    };
    let (mut config, file) = match spec.split_once(':') {
        None if spec == "mock" => (BackendConfig::mock(MockRule::Echo), None),
        Some(("mock", path)) => {
            let text = read(path)?;
            let config = match serde_json::from_str::<MockRule>(&text) {
                Ok(rule) => BackendConfig::mock(rule),
                Err(_) => serde_json::from_str::<BackendConfig>(&text).map_err(|e| data(format!("{path}: {e}")))?,
            };
            (config, Some(PathBuf::from(path)))
        }
        Some(("http", path)) => {
            let config: BackendConfig =
                serde_json::from_str(&read(path)?).map_err(|e| data(format!("{path}: {e}")))?;
            if config.kind != BackendKind::Http {
                return Err(CliError::Usage(format!("{path}: expected an http backend config")));
            }
            (config, Some(PathBuf::from(path)))
        }
        _ => return Err(CliError::Usage(format!("unknown backend {spec:?}; use mock, mock:<file> or http:<file>"))),
    };
    if let Some(c) = cache {
        config.cache_path = Some(c.to_path_buf());
    }
    Ok((config, file))
}

fn build_backend(args: &BackendArgs, inputs: &mut Vec<PathBuf>) -> Result<Arc<dyn LanguageModel>, CliError> {
    let spec = args.backend.as_deref().unwrap_or("mock");
    let (config, file) = backend_config(spec, args.cache.as_deref())?;
    inputs.extend(file);
    Ok(config.build()?)
}

/// Serializes every row, through the backend for generative formats.
#[allow(clippy::too_many_arguments)]
fn serialize_rows(
    ds: &Dataset,
    id: SerializerId,
    seed: u64,
    max_features: usize,
    subject: &str,
    backend: Option<&BackendArgs>,
    threads: usize,
    inputs: &mut Vec<PathBuf>,
) -> Result<Vec<SerializedExample>, CliError> {
    if !id.is_generative() {
        if backend.is_some_and(|b| b.backend.is_some()) {
            log::info!("format {id} is deterministic; the backend is not used");
        }
        let format = Format::for_dataset(id, ds, seed, max_features).map_err(data)?;
        return format.serialize_all(ds).map_err(data);
    }
    let args = backend.ok_or_else(|| CliError::Usage(format!("format {id} needs --backend")))?;
    let model = build_backend(args, inputs)?;
    let serializer = LlmSerializer::default();
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    bounded_map(&rows, threads, |_, &i| serializer.serialize_row(id, ds, i, &model, subject))
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(CliError::from).map_err(context(format!("row {i}"))))
        .collect()
}

#[derive(Debug, Deserialize)]
struct SerializationLine {
    row_index: usize,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub row_index: usize,
    pub probs: Vec<f64>,
    pub predicted: usize,
}

struct Outcome {
    bytes: Vec<u8>,
    seeds: Vec<u64>,
}

fn execute(cli: &Cli, inputs: &mut Vec<PathBuf>) -> Result<Outcome, CliError> {
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::Serialize {
            data: d,
            format,
            max_features,
            backend,
            subject,
            ..
        } => {
            let ds = load_dataset(d, inputs)?;
            let rows = serialize_rows(&ds, *format, cli.seed, *max_features, subject, Some(backend), threads, inputs)?;
            Ok(Outcome {
                bytes: jsonl(&rows),
                seeds: vec![cli.seed],
            })
        }
        Command::Classify {
            template,
            serializations,
            backend,
            ..
        } => {
            let template = load_template(template, inputs)?;
            let lines: Vec<SerializationLine> = read_jsonl(serializations)?;
            inputs.push(serializations.clone());
            let model = build_backend(backend, inputs)?;
            let preds = bounded_map(&lines, threads, |_, line| {
                classify(&template.render(&line.text), &model).map(|s| Prediction {
                    row_index: line.row_index,
                    probs: s.probs,
                    predicted: s.predicted,
                })
            })
            .into_iter()
            .zip(&lines)
            .map(|(r, l)| r.map_err(CliError::from).map_err(context(format!("row {}", l.row_index))))
            .collect::<Result<Vec<_>, _>>()?;
            Ok(Outcome {
                bytes: jsonl(&preds),
                seeds: vec![],
            })
        }
        Command::Eval {
            data: d,
            template,
            format,
            max_features,
            subject,
            backend,
            shots,
            seeds,
            shots_dir,
            ..
        } => {
            let ds = load_dataset(d, inputs)?;
            let template = load_template(template, inputs)?;
            template.check_classes(ds.n_classes()).map_err(data)?;
            let model = build_backend(backend, inputs)?;
            let config = ExperimentConfig {
                shots: shots.clone(),
                seeds: (cli.seed..cli.seed + seeds).collect(),
                workers: threads,
            };
            let serializer: Box<dyn RowSerializer> = if format.is_generative() {
                let rows = serialize_rows(&ds, *format, cli.seed, *max_features, subject, Some(backend), threads, inputs)?;
                Box::new(Precomputed {
                    id: format.to_string(),
                    texts: rows.into_iter().map(|r| r.text).collect(),
                })
            } else {
                Box::new(Format::for_dataset(*format, &ds, cli.seed, *max_features).map_err(data)?)
            };
            let output = run_experiment(&ds, &template, serializer.as_ref(), &model, &config)?;
            if let Some(dir) = shots_dir {
                std::fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
                for s in &output.shot_sets {
                    write_atomic(&dir.join(format!("shots_seed{}_k{}.json", s.seed, s.k)), &pretty(s))?;
                }
            }
            let report = json!({
                "config": {
                    "dataset": d.dataset,
                    "meta": d.meta,
                    "template": template.to_source(),
                    "format": format,
                    "max_features": max_features,
                    "backend": backend.backend.as_deref().unwrap_or("mock"),
                    "shots": config.shots,
                    "seeds": config.seeds,
                    "n_rows": ds.n_rows(),
                    "class_names": ds.class_names(),
                },
                "reports": output.reports,
                "shot_sets": output.shot_sets,
            });
            Ok(Outcome {
                bytes: pretty(&report),
                seeds: config.seeds,
            })
        }
        Command::Introspect {
            data: d,
            preds,
            positive_class,
            target,
            folds,
            ..
        } => {
            let ds = load_dataset(d, inputs)?;
            let lines: Vec<Prediction> = read_jsonl(preds)?;
            inputs.push(preds.clone());
            let mut probs = vec![None; ds.n_rows()];
            for p in &lines {
                let slot = probs
                    .get_mut(p.row_index)
                    .ok_or_else(|| data(format!("prediction for row {} outside the dataset", p.row_index)))?;
                let prob = p
                    .probs
                    .get(*positive_class)
                    .ok_or_else(|| data(format!("row {} has no class {positive_class}", p.row_index)))?;
                *slot = Some(*prob);
            }
            let probs = probs
                .into_iter()
                .enumerate()
                .map(|(i, p)| p.ok_or_else(|| data(format!("no prediction for row {i}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            let opts = SurrogateOptions {
                folds: *folds,
                fold_seed: cli.seed,
                target: *target,
                ..SurrogateOptions::default()
            };
            let res = surrogate_importance(&ds, &probs, &opts).map_err(data)?;
            let out = json!({
                "c": res.c,
                "folds": res.folds,
                "target": target,
                "intercept": res.intercept,
                "cv_loss": res.cv_loss,
                "features": res.ranked(),
            });
            Ok(Outcome {
                bytes: pretty(&out),
                seeds: vec![cli.seed],
            })
        }
        Command::Rr { claims, labels, .. } => {
            let records = load_claims_jsonl(claims).map_err(|e| data(format!("{}: {e}", claims.display())))?;
            inputs.push(claims.clone());
            let labels_map = read_labels(labels)?;
            inputs.push(labels.clone());
            let mut risks = concept_relative_risks(&records, &labels_map);
            risks.sort_by(|a, b| b.risk.rr.total_cmp(&a.risk.rr).then_with(|| a.id.cmp(&b.id)));
            Ok(Outcome {
                bytes: pretty(&risks),
                seeds: vec![],
            })
        }
        Command::Claims {
            claims,
            style,
            order,
            scope,
            budget,
            template,
            concept_map,
            permute_names,
            ..
        } => {
            let mut records = load_claims_jsonl(claims).map_err(|e| data(format!("{}: {e}", claims.display())))?;
            inputs.push(claims.clone());
            let mut map = ConceptMap::new();
            if let Some(path) = concept_map {
                map = load_concept_map(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
                inputs.push(path.clone());
            }
            if *permute_names {
                let renamed: Vec<_> = records.iter().map(|r| r.with_concept_map(&map)).collect();
                map = permuted_name_map(&renamed, cli.seed);
                records = renamed;
            }
            let budget = match (budget, template) {
                (Some(b), _) => *b,
                (None, Some(path)) => default_budget(load_template(path, inputs)?.body()),
                (None, None) => MODEL_TOKEN_LIMIT,
            };
            let strategy = SelectionStrategy::new(*order, *scope);
            let lines = records
                .iter()
                .map(|r| {
                    let r = r.with_concept_map(&map);
                    let selected = select_concepts(&r, strategy, budget, *style, &WordRatioEstimator)?;
                    Ok(json!({
                        "patient_id": r.patient_id,
                        "style": style,
                        "strategy": strategy,
                        "budget": budget,
                        "n_concepts": selected.len(),
                        "text": serialize_claims(&r, &selected, *style)?,
                    }))
                })
                .collect::<Result<Vec<Value>, ClaimsError>>()?;
            Ok(Outcome {
                bytes: jsonl(&lines),
                seeds: if *permute_names { vec![cli.seed] } else { vec![] },
            })
        }
    }
}

fn read_labels(path: &Path) -> Result<HashMap<String, bool>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let header = reader.headers().map_err(data)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data(format!("{}: missing column {name}", path.display())))
    };
    let (id_col, label_col) = (col("patient_id")?, col("label")?);
    let mut out = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(data)?;
        let label = match rec.get(label_col).unwrap_or("").trim().to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" => true,
            "0" | "false" | "no" => false,
            other => return Err(data(format!("{} row {}: label {other:?} is not binary", path.display(), i + 2))),
        };
        out.insert(rec.get(id_col).unwrap_or("").to_string(), label);
    }
    Ok(out)
}

fn out_path(cmd: &Command) -> &Path {
    match cmd {
        Command::Serialize { out, .. }
        | Command::Classify { out, .. }
        | Command::Eval { out, .. }
        | Command::Introspect { out, .. }
        | Command::Rr { out, .. }
        | Command::Claims { out, .. } => out,
    }
}

/// Manifest location for an output file.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn run_cli(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let mut inputs = Vec::new();
    let outcome = execute(cli, &mut inputs)?;
    let out = out_path(&cli.command);
    write_atomic(out, &outcome.bytes)?;
    let inputs = inputs.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>, _>>()?;
    let digest_doc = json!({ "args": argv.get(1..).unwrap_or_default(), "inputs": inputs });
    let manifest = RunManifest {
        command_line: argv.to_vec(),
        config_digest: hex::encode(Sha256::digest(digest_doc.to_string().as_bytes())),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: outcome.seeds,
        inputs,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    write_atomic(&manifest_path(out), &pretty(&manifest))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).try_init();
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run_cli(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> ! {
    std::process::exit(run(std::env::args_os()))
}
