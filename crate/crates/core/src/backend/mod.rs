//! Language-model backends: free-text generation for the LLM-assisted
//! serializers and answer-choice scoring for classification.
//!
//! Two traits split the capabilities so test doubles only implement what
//! they exercise:
//!
//! * [`Generator`] turns a [`GenerationRequest`] into text.
//! * [`Scorer`] returns one log-probability (or unnormalized log-score) per
//!   answer choice, conditioned on a prompt.
//!
//! [`MockBackend`] is deterministic and offline; [`HttpBackend`] talks to a
//! completion endpoint. [`CachedBackend`] and [`Limited`] wrap either one.

mod cache;
mod http;
mod limit;
mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, CachedBackend};
pub use http::HttpBackend;
pub use limit::{bounded_map, ConcurrencyLimiter, Limited};
pub use mock::{MockBackend, MockRule};

pub const DEFAULT_MAX_TOKENS: u32 = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {0}")]
    HttpStatus(u16),
    #[error("rate limited by endpoint")]
    RateLimited,
    #[error("response carries no token log-probabilities")]
    MissingLogprobs,
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl BackendError {
    /// Timeouts, 429 and 5xx responses are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::RateLimited => true,
            BackendError::HttpStatus(code) => *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    /// Text the completion must continue from; appended to the prompt and
    /// prefixed to the returned generation by callers that use it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guide_prefix: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            guide_prefix: None,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
        }
    }

    pub fn with_guide_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.guide_prefix = Some(prefix.into());
        self
    }

    pub fn with_params(mut self, params: &GenerationParams) -> Self {
        self.max_tokens = params.max_tokens;
        self.temperature = params.temperature;
        self
    }

    /// The exact text handed to the model.
    pub fn full_prompt(&self) -> String {
        match &self.guide_prefix {
            Some(g) => format!("{}{}", self.prompt, g),
            None => self.prompt.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens < 1 {
            return Err(BackendError::Config("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Config("temperature must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Decoding settings shared by every unit of an LLM-assisted serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
        }
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

pub trait Scorer: Send + Sync {
    /// Log-probability of generating each choice after `prompt`, in choice
    /// order.
    fn score_choices(&self, prompt: &str, choices: &[String]) -> Result<Vec<f64>, BackendError>;
}

/// Both capabilities behind one object.
pub trait LanguageModel: Generator + Scorer {}

impl<T: Generator + Scorer + ?Sized> LanguageModel for T {}

macro_rules! forward_impls {
    ($($ptr:ty),*) => {$(
        impl<T: Generator + ?Sized> Generator for $ptr {
            fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
                (**self).generate(request)
            }
        }
        impl<T: Scorer + ?Sized> Scorer for $ptr {
            fn score_choices(&self, prompt: &str, choices: &[String]) -> Result<Vec<f64>, BackendError> {
                (**self).score_choices(prompt, choices)
            }
        }
    )*};
}

forward_impls!(&T, Box<T>, Arc<T>);

/// Lowercase hex SHA-256 of the prompt text.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Text scored for a choice: the prompt followed by the choice, separated by
/// a single space unless the prompt already ends in whitespace.
pub fn scoring_text(prompt: &str, choice: &str) -> String {
    if prompt.is_empty() || prompt.ends_with(char::is_whitespace) {
        format!("{prompt}{choice}")
    } else {
        format!("{prompt} {choice}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    /// Model name forwarded in the request body when set.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_secs: f64,
    #[serde(default)]
    pub cache_path: Option<std::path::PathBuf>,
    /// Rule for the mock kind.
    #[serde(default)]
    pub mock: Option<MockRule>,
}

fn default_concurrency() -> usize {
    4
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> f64 {
    1.0
}

impl BackendConfig {
    pub fn mock(rule: MockRule) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            auth_token_env: None,
            model: None,
            max_concurrency: default_concurrency(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_secs: default_backoff(),
            cache_path: None,
            mock: Some(rule),
        }
    }

    pub fn http(endpoint: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            mock: None,
            ..Self::mock(MockRule::Echo)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.kind == BackendKind::Http && self.endpoint.is_none() {
            return Err(BackendError::Config("http backend requires an endpoint".into()));
        }
        if self.max_concurrency < 1 {
            return Err(BackendError::Config("max_concurrency must be at least 1".into()));
        }
        let positive = |x: f64| x.partial_cmp(&0.0) == Some(std::cmp::Ordering::Greater);
        if !positive(self.timeout_secs) || !(positive(self.backoff_secs) || self.backoff_secs == 0.0) {
            return Err(BackendError::Config("timeout and backoff must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Builds the configured backend, wrapped in the on-disk cache when
    /// `cache_path` is set and in a concurrency limiter.
    pub fn build(&self) -> Result<Arc<dyn LanguageModel>, BackendError> {
        self.validate()?;
        let inner: Arc<dyn LanguageModel> = match self.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(self.mock.clone().unwrap_or(MockRule::Echo))?),
            BackendKind::Http => Arc::new(HttpBackend::new(self.clone())?),
        };
        let inner: Arc<dyn LanguageModel> = match &self.cache_path {
            Some(path) => Arc::new(CachedBackend::open(inner, path)?),
            None => inner,
        };
        Ok(Arc::new(Limited::new(inner, self.max_concurrency)))
    }
}
