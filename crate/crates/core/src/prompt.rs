//! Task templates and the verbalizer.
//!
//! A template file has two single-quoted keys, in the style used by
//! PromptSource:
//!
//! ```text
//! answer_choices: 'No ||| Yes'
//! jinja: '{{serialization}}
//!
//! Does this person earn more than 50000 dollars per year? Yes or no?
//! Answer:
//! |||
//! {{ answer_choices[label] }}'
//! ```
//!
//! Only the subset these templates need is understood: one
//! `{{serialization}}` placeholder, choices separated by `|||`, and an
//! optional trailing `||| {{ answer_choices[label] }}` training target, which
//! is dropped from the inference body. A doubled quote (`''`) inside a value
//! stands for one quote.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Scorer};

pub const PLACEHOLDER: &str = "{{serialization}}";
pub const CHOICE_SEPARATOR: &str = "|||";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template body has no {PLACEHOLDER} placeholder")]
    MissingPlaceholder,
    #[error("template body has more than one {PLACEHOLDER} placeholder")]
    RepeatedPlaceholder,
    #[error("template declares no answer choices, or an empty one")]
    EmptyChoices,
    #[error("duplicate answer choice {0:?}")]
    DuplicateChoices(String),
    #[error("template syntax: {0}")]
    Syntax(String),
    #[error("template has {choices} answer choices but the dataset has {classes} classes")]
    ClassCountMismatch { choices: usize, classes: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("choice scores are not finite: {0:?}")]
    NonFiniteScore(Vec<f64>),
    #[error("backend returned {got} scores for {expected} choices")]
    ScoreCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTemplate {
    choices_source: String,
    jinja: String,
    body: String,
    answer_choices: Vec<String>,
}

impl TaskTemplate {
    pub fn parse(source: &str) -> Result<Self, PromptError> {
        let choices_source = quoted_value(source, "answer_choices")?;
        let jinja = quoted_value(source, "jinja")?;
        Self::from_parts(choices_source, jinja)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Syntax(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Builds a template from the raw `answer_choices` and `jinja` values.
    pub fn from_parts(choices_source: impl Into<String>, jinja: impl Into<String>) -> Result<Self, PromptError> {
        let choices_source = choices_source.into();
        let jinja = jinja.into();
        let answer_choices: Vec<String> = choices_source
            .split(CHOICE_SEPARATOR)
            .map(|c| c.trim().to_string())
            .collect();
        if answer_choices.iter().any(String::is_empty) {
            return Err(PromptError::EmptyChoices);
        }
        for (i, c) in answer_choices.iter().enumerate() {
            if answer_choices[..i].contains(c) {
                return Err(PromptError::DuplicateChoices(c.clone()));
            }
        }
        let body = match jinja.rfind(CHOICE_SEPARATOR) {
            Some(idx) => jinja[..idx].trim_end_matches(['\n', '\r']).to_string(),
            None => jinja.clone(),
        };
        match body.matches(PLACEHOLDER).count() {
            0 => return Err(PromptError::MissingPlaceholder),
            1 => {}
            _ => return Err(PromptError::RepeatedPlaceholder),
        }
        Ok(TaskTemplate {
            choices_source,
            jinja,
            body,
            answer_choices,
        })
    }

    /// Inference body: everything before the training-target clause.
    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn answer_choices(&self) -> &[String] {
        &self.answer_choices
    }

    pub fn check_classes(&self, n_classes: usize) -> Result<(), PromptError> {
        if self.answer_choices.len() == n_classes {
            Ok(())
        } else {
            Err(PromptError::ClassCountMismatch {
                choices: self.answer_choices.len(),
                classes: n_classes,
            })
        }
    }

    /// Substitutes the serialization into the body in a single pass.
    pub fn render(&self, serialization: &str) -> RenderedPrompt {
        // the placeholder occurs exactly once (checked on construction)
        let text = self.body.replacen(PLACEHOLDER, serialization, 1);
        RenderedPrompt {
            text,
            choices: self.answer_choices.clone(),
        }
    }

    /// Re-emits the template file.
    pub fn to_source(&self) -> String {
        format!(
            "answer_choices: '{}'\njinja: '{}'\n",
            self.choices_source.replace('\'', "''"),
            self.jinja.replace('\'', "''")
        )
    }
}

impl std::str::FromStr for TaskTemplate {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskTemplate::parse(s)
    }
}

/// Task templates shipped with the crate, by short name.
pub const BUNDLED_TEMPLATES: [(&str, &str); 12] = [
    ("bank", include_str!("../templates/bank.txt")),
    ("blood", include_str!("../templates/blood.txt")),
    ("california", include_str!("../templates/california.txt")),
    ("car", include_str!("../templates/car.txt")),
    ("creditg", include_str!("../templates/creditg.txt")),
    ("diabetes", include_str!("../templates/diabetes.txt")),
    ("heart", include_str!("../templates/heart.txt")),
    ("income", include_str!("../templates/income.txt")),
    ("jungle", include_str!("../templates/jungle.txt")),
    ("eol", include_str!("../templates/eol.txt")),
    ("surgery", include_str!("../templates/surgery.txt")),
    ("loh", include_str!("../templates/loh.txt")),
];

/// Parses the bundled template called `name`.
pub fn bundled_template(name: &str) -> Option<TaskTemplate> {
    BUNDLED_TEMPLATES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| TaskTemplate::parse(src).expect("bundled templates parse"))
}

/// Finds `key:` at the start of a line (outside other quoted values) and
/// returns its single-quoted value.
fn quoted_value(source: &str, key: &str) -> Result<String, PromptError> {
    let bytes = source.as_bytes();
    let mut i = 0;
    let mut at_line_start = true;
    while i < bytes.len() {
        if at_line_start && source[i..].starts_with(key) && source[i + key.len()..].starts_with(':') {
            let rest = source[i + key.len() + 1..].trim_start_matches([' ', '\t']);
            let Some(rest) = rest.strip_prefix('\'') else {
                return Err(PromptError::Syntax(format!("{key} value must be single-quoted")));
            };
            return read_quoted(rest).map(|(v, _)| v).ok_or_else(|| {
                PromptError::Syntax(format!("unterminated quoted value for {key}"))
            });
        }
        match bytes[i] {
            b'\'' => {
                // skip over some other key's quoted value
                let (_, used) = read_quoted(&source[i + 1..])
                    .ok_or_else(|| PromptError::Syntax("unterminated quoted value".into()))?;
                i += 1 + used;
                at_line_start = false;
            }
            b'\n' => {
                i += 1;
                at_line_start = true;
            }
            _ => {
                i += 1;
                at_line_start = false;
            }
        }
    }
    Err(PromptError::Syntax(format!("missing {key}")))
}

/// Reads up to the closing quote; returns the unescaped value and the number
/// of bytes consumed including the closing quote.
fn read_quoted(s: &str) -> Option<(String, usize)> {
    let mut out = String::new();
    let mut chars = s.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '\'' {
            if matches!(chars.peek(), Some((_, '\''))) {
                chars.next();
                out.push('\'');
            } else {
                return Some((out, i + 1));
            }
        } else {
            out.push(c);
        }
    }
    None
}

/// Full model input plus the verbalized answer choices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub choices: Vec<String>,
}

/// Per-class probabilities normalized over the answer choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub logprobs: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted: usize,
}

impl ClassScores {
    /// `p_i = exp(l_i) / sum_j exp(l_j)`, computed after subtracting the
    /// maximum. The predicted class is the first index of the largest score.
    pub fn from_logprobs(logprobs: Vec<f64>) -> Result<Self, ClassifyError> {
        if logprobs.is_empty() || logprobs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(ClassifyError::NonFiniteScore(logprobs));
        }
        let (predicted, max) = logprobs
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
        if max == f64::NEG_INFINITY {
            return Err(ClassifyError::NonFiniteScore(logprobs));
        }
        let exps: Vec<f64> = logprobs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs = exps.into_iter().map(|e| e / total).collect();
        Ok(ClassScores {
            logprobs,
            probs,
            predicted,
        })
    }
}

/// Scores each answer choice with the backend and normalizes across choices.
pub fn classify(prompt: &RenderedPrompt, scorer: &dyn Scorer) -> Result<ClassScores, ClassifyError> {
    let logprobs = scorer.score_choices(&prompt.text, &prompt.choices)?;
    if logprobs.len() != prompt.choices.len() {
        return Err(ClassifyError::ScoreCount {
            expected: prompt.choices.len(),
            got: logprobs.len(),
        });
    }
    ClassScores::from_logprobs(logprobs)
}
