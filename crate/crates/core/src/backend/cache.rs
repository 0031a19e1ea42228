use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{prompt_hash, BackendError, GenerationRequest, Generator, Scorer};

/// One line of the JSONL cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub prompt_sha256: String,
    pub params: Value,
    pub reply: Value,
}

struct CacheState {
    entries: HashMap<(String, String), Value>,
    file: File,
}

/// Persists every reply of the wrapped backend in an append-only JSONL file
/// and answers repeated requests from it.
pub struct CachedBackend<B> {
    inner: B,
    path: PathBuf,
    state: Mutex<CacheState>,
}

fn key(prompt: &str, params: &Value) -> (String, String) {
    (prompt_hash(prompt), params.to_string())
}

impl<B> CachedBackend<B> {
    pub fn open(inner: B, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(&line).map_err(|err| {
                    BackendError::Cache(format!("{} line {}: {err}", path.display(), n + 1))
                })?;
                entries.insert((e.prompt_sha256, e.params.to_string()), e.reply);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        Ok(CachedBackend {
            inner,
            path,
            state: Mutex::new(CacheState { entries, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, CacheState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn lookup(&self, prompt: &str, params: &Value) -> Option<Value> {
        self.lock().entries.get(&key(prompt, params)).cloned()
    }

    fn store(&self, prompt: &str, params: Value, reply: Value) -> Result<(), BackendError> {
        let entry = CacheEntry {
            prompt_sha256: prompt_hash(prompt),
            params,
            reply,
        };
        let mut line = serde_json::to_string(&entry).map_err(|e| BackendError::Cache(e.to_string()))?;
        line.push('\n');
        let mut state = self.lock();
        state
            .file
            .write_all(line.as_bytes())
            .and_then(|_| state.file.flush())
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        state
            .entries
            .insert((entry.prompt_sha256, entry.params.to_string()), entry.reply);
        Ok(())
    }
}

impl<B: Generator> Generator for CachedBackend<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let prompt = request.full_prompt();
        let params = json!({
            "op": "generate",
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if let Some(Value::String(s)) = self.lookup(&prompt, &params) {
            return Ok(s);
        }
        let reply = self.inner.generate(request)?;
        self.store(&prompt, params, Value::String(reply.clone()))?;
        Ok(reply)
    }
}

impl<B: Scorer> Scorer for CachedBackend<B> {
    fn score_choices(&self, prompt: &str, choices: &[String]) -> Result<Vec<f64>, BackendError> {
        let params = json!({ "op": "score", "choices": choices });
        if let Some(v) = self.lookup(prompt, &params) {
            if let Ok(scores) = serde_json::from_value::<Vec<f64>>(v) {
                if scores.len() == choices.len() {
                    return Ok(scores);
                }
            }
        }
        let scores = self.inner.score_choices(prompt, choices)?;
        // JSON has no encoding for non-finite numbers; those replies are not cached.
        if scores.iter().all(|s| s.is_finite()) {
            self.store(prompt, params, json!(scores))?;
        }
        Ok(scores)
    }
}
