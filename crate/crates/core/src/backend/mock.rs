use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, BackendError, GenerationRequest, Generator, Scorer};

/// Behaviour of a [`MockBackend`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockRule {
    /// Generation returns the prompt unchanged.
    Echo,
    /// Generation looks up the reply by the prompt's SHA-256 hex digest;
    /// unknown prompts produce an empty reply.
    Table { entries: BTreeMap<String, String> },
    /// Choice scoring: `bias[choice]` plus, for every weight key found as a
    /// substring of the prompt, `weights[key][choice]`.
    LinearScorer {
        #[serde(default)]
        bias: BTreeMap<String, f64>,
        #[serde(default)]
        weights: BTreeMap<String, BTreeMap<String, f64>>,
    },
}

impl MockRule {
    pub fn table<P, R>(pairs: impl IntoIterator<Item = (P, R)>) -> Self
    where
        P: AsRef<str>,
        R: Into<String>,
    {
        MockRule::Table {
            entries: pairs
                .into_iter()
                .map(|(p, r)| (prompt_hash(p.as_ref()), r.into()))
                .collect(),
        }
    }

    /// A linear scorer without bias terms.
    pub fn linear<K, C>(weights: impl IntoIterator<Item = (K, C, f64)>) -> Self
    where
        K: Into<String>,
        C: Into<String>,
    {
        let mut map: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (key, choice, w) in weights {
            *map.entry(key.into()).or_default().entry(choice.into()).or_default() += w;
        }
        MockRule::LinearScorer {
            bias: BTreeMap::new(),
            weights: map,
        }
    }
}

/// Deterministic, offline backend. Stateless apart from its rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MockBackend {
    rule: MockRule,
}

impl MockBackend {
    pub fn new(rule: MockRule) -> Result<Self, BackendError> {
        if let MockRule::LinearScorer { bias, weights } = &rule {
            let finite = bias.values().chain(weights.values().flat_map(|m| m.values()));
            if finite.into_iter().any(|w| !w.is_finite()) {
                return Err(BackendError::Config("linear scorer weights must be finite".into()));
            }
        }
        Ok(MockBackend { rule })
    }

    pub fn echo() -> Self {
        MockBackend { rule: MockRule::Echo }
    }

    pub fn rule(&self) -> &MockRule {
        &self.rule
    }
}

impl Generator for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        match &self.rule {
            MockRule::Echo => Ok(request.full_prompt()),
            MockRule::Table { entries } => Ok(entries
                .get(&prompt_hash(&request.full_prompt()))
                .cloned()
                .unwrap_or_default()),
            MockRule::LinearScorer { .. } => Err(BackendError::Unsupported("generation")),
        }
    }
}

impl Scorer for MockBackend {
    fn score_choices(&self, prompt: &str, choices: &[String]) -> Result<Vec<f64>, BackendError> {
        let MockRule::LinearScorer { bias, weights } = &self.rule else {
            return Err(BackendError::Unsupported("choice scoring"));
        };
        let active: Vec<&BTreeMap<String, f64>> = weights
            .iter()
            .filter(|(key, _)| prompt.contains(key.as_str()))
            .map(|(_, w)| w)
            .collect();
        Ok(choices
            .iter()
            .map(|c| {
                let base = bias.get(c).copied().unwrap_or(0.0);
                active
                    .iter()
                    .fold(base, |acc, w| acc + w.get(c).copied().unwrap_or(0.0))
            })
            .collect())
    }
}
