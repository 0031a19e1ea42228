//! Client for completion endpoints that follow the widely implemented
//! `{prompt, max_tokens, temperature, logprobs, echo}` request shape.
//!
//! Scoring sends `prompt + choice` with `echo: true` and `max_tokens: 0`,
//! then sums the log-probabilities of the echoed tokens that reach past the
//! end of the prompt. Token positions come from `text_offset` when the
//! response carries it, otherwise from accumulating token strings backwards
//! from the end.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{
    scoring_text, BackendConfig, BackendError, ConcurrencyLimiter, GenerationRequest, Generator,
    Scorer,
};

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<bool>,
    echo: bool,
}

#[derive(Debug, Deserialize)]
pub(crate) struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<TokenLogprobs>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Option<Vec<usize>>,
}

pub struct HttpBackend {
    config: BackendConfig,
    endpoint: String,
    agent: Agent,
    limiter: ConcurrencyLimiter,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("http backend requires an endpoint".into()))?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            limiter: ConcurrencyLimiter::new(config.max_concurrency),
            config,
            endpoint,
            agent,
        })
    }

    fn token(&self) -> Option<String> {
        self.config
            .auth_token_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
    }

    fn post_once(&self, body: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
        let _permit = self.limiter.acquire();
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = self.token() {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            429 => return Err(BackendError::RateLimited),
            code => return Err(BackendError::HttpStatus(code)),
        }
        let text = resp.body_mut().read_to_string().map_err(map_transport)?;
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
    }

    /// Sends the request, retrying transient failures with exponential
    /// backoff.
    fn post(&self, body: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Err(e) if e.is_transient() && attempt < self.config.retries => {
                    let delay = self.config.backoff_secs * f64::from(1u32 << attempt.min(16));
                    log::warn!("transient backend error ({e}); retrying in {delay}s");
                    std::thread::sleep(Duration::from_secs_f64(delay));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn map_transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::StatusCode(429) => BackendError::RateLimited,
        ureq::Error::StatusCode(code) => BackendError::HttpStatus(code),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

impl Generator for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let prompt = request.full_prompt();
        let resp = self.post(&CompletionRequest {
            model: self.config.model.as_deref(),
            prompt: &prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            logprobs: None,
            echo: false,
        })?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::Malformed("no choices in response".into()))
    }
}

impl Scorer for HttpBackend {
    fn score_choices(&self, prompt: &str, choices: &[String]) -> Result<Vec<f64>, BackendError> {
        choices
            .iter()
            .map(|choice| {
                let full = scoring_text(prompt, choice);
                let resp = self.post(&CompletionRequest {
                    model: self.config.model.as_deref(),
                    prompt: &full,
                    max_tokens: 0,
                    temperature: 0.0,
                    logprobs: Some(true),
                    echo: true,
                })?;
                suffix_logprob(&resp, prompt.len(), full.len())
            })
            .collect()
    }
}

/// Sums the log-probabilities of the tokens covering `full[prompt_len..]`.
pub(crate) fn suffix_logprob(
    resp: &CompletionResponse,
    prompt_len: usize,
    full_len: usize,
) -> Result<f64, BackendError> {
    let lp = resp
        .choices
        .first()
        .and_then(|c| c.logprobs.as_ref())
        .ok_or(BackendError::MissingLogprobs)?;
    if lp.token_logprobs.is_empty() || lp.token_logprobs.len() != lp.tokens.len() {
        return Err(BackendError::MissingLogprobs);
    }
    let first = match &lp.text_offset {
        Some(offsets) => {
            if offsets.len() != lp.tokens.len() {
                return Err(BackendError::Malformed("text_offset length mismatch".into()));
            }
            // a token straddling the boundary (the prompt's trailing space
            // merged into the choice) belongs to the choice
            offsets
                .iter()
                .zip(&lp.tokens)
                .position(|(&o, t)| o + t.len() > prompt_len)
                .ok_or_else(|| BackendError::Malformed("choice tokens not found".into()))?
        }
        None => {
            let wanted = full_len - prompt_len;
            let mut covered = 0;
            let mut i = lp.tokens.len();
            while covered < wanted && i > 0 {
                i -= 1;
                covered += lp.tokens[i].len();
            }
            if covered < wanted {
                return Err(BackendError::Malformed("choice tokens not found".into()));
            }
            i
        }
    };
    lp.token_logprobs[first..]
        .iter()
        .try_fold(0.0, |acc, t| t.map(|x| acc + x).ok_or(BackendError::MissingLogprobs))
}
