//! Serialization of longitudinal claims records under a token budget.
//!
//! A record is a patient summary (age, sex, race) followed by dated visits.
//! Only visits holding at least one selected concept are written out, so
//! the amount of text is driven entirely by concept selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;

/// Token limit of the scoring model the budget defaults are derived from.
pub const MODEL_TOKEN_LIMIT: usize = 1024;
/// Words that roughly fill [`MODEL_TOKEN_LIMIT`] tokens.
pub const WORDS_PER_LIMIT: usize = 400;
/// Concept cap of the short list style.
pub const SHORT_LIST_CONCEPTS: usize = 10;

#[derive(Debug, Error)]
pub enum ClaimsError {
    #[error("sex {0:?} has no man/woman wording")]
    UnknownSex(String),
    #[error("invalid record {patient}: {message}")]
    InvalidRecord { patient: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKind {
    Condition,
    Procedure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub kind: ConceptKind,
    /// Occurrences of this concept across the patient's visits.
    pub frequency: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisitKind {
    Outpatient,
    Inpatient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub date: NaiveDate,
    pub kind: VisitKind,
    pub specialty: Option<String>,
    pub stay_days: Option<u32>,
    pub primary_complaint: String,
    pub conditions: Vec<Concept>,
    pub procedures: Vec<Concept>,
}

impl Visit {
    fn concepts(&self, scope: Scope) -> impl Iterator<Item = &Concept> {
        let conds = scope.includes(ConceptKind::Condition);
        let procs = scope.includes(ConceptKind::Procedure);
        self.conditions
            .iter()
            .filter(move |_| conds)
            .chain(self.procedures.iter().filter(move |_| procs))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimsRecord {
    pub patient_id: String,
    pub age: u32,
    pub sex: String,
    pub race: String,
    /// Ascending by date.
    pub visits: Vec<Visit>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawConcept {
    id: String,
    name: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawVisit {
    date: NaiveDate,
    kind: VisitKind,
    #[serde(default)]
    specialty: Option<String>,
    #[serde(default)]
    stay_days: Option<u32>,
    primary_complaint: String,
    #[serde(default)]
    conditions: Vec<RawConcept>,
    #[serde(default)]
    procedures: Vec<RawConcept>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    patient_id: String,
    age: u32,
    sex: String,
    race: String,
    #[serde(default)]
    visits: Vec<RawVisit>,
}

/// Visit as supplied by the caller, before frequencies are computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitInput {
    pub date: NaiveDate,
    pub kind: VisitKind,
    pub specialty: Option<String>,
    pub stay_days: Option<u32>,
    pub primary_complaint: String,
    /// `(id, name)` pairs.
    pub conditions: Vec<(String, String)>,
    pub procedures: Vec<(String, String)>,
}

impl VisitInput {
    pub fn outpatient(date: NaiveDate, specialty: &str, complaint: &str) -> Self {
        VisitInput {
            date,
            kind: VisitKind::Outpatient,
            specialty: Some(specialty.to_string()),
            stay_days: None,
            primary_complaint: complaint.to_string(),
            conditions: Vec::new(),
            procedures: Vec::new(),
        }
    }

    pub fn inpatient(date: NaiveDate, stay_days: u32, complaint: &str) -> Self {
        VisitInput {
            date,
            kind: VisitKind::Inpatient,
            specialty: None,
            stay_days: Some(stay_days),
            primary_complaint: complaint.to_string(),
            conditions: Vec::new(),
            procedures: Vec::new(),
        }
    }

    pub fn condition(mut self, id: &str, name: &str) -> Self {
        self.conditions.push((id.to_string(), name.to_string()));
        self
    }

    pub fn procedure(mut self, id: &str, name: &str) -> Self {
        self.procedures.push((id.to_string(), name.to_string()));
        self
    }
}

impl ClaimsRecord {
    /// Validates visits, sorts them by date (stable) and counts concept
    /// frequencies over the whole record.
    pub fn new(
        patient_id: impl Into<String>,
        age: u32,
        sex: impl Into<String>,
        race: impl Into<String>,
        visits: Vec<VisitInput>,
    ) -> Result<Self, ClaimsError> {
        let patient_id = patient_id.into();
        let invalid = |message: String| ClaimsError::InvalidRecord {
            patient: patient_id.clone(),
            message,
        };
        let mut visits = visits;
        visits.sort_by_key(|v| v.date);
        let mut counts: HashMap<(ConceptKind, &str), u32> = HashMap::new();
        for (i, v) in visits.iter().enumerate() {
            match v.kind {
                VisitKind::Outpatient if v.specialty.is_none() => {
                    return Err(invalid(format!("outpatient visit {i} has no specialty")))
                }
                VisitKind::Inpatient if !v.stay_days.is_some_and(|d| d >= 1) => {
                    return Err(invalid(format!("inpatient visit {i} needs stay_days >= 1")))
                }
                _ => {}
            }
            for (id, _) in &v.conditions {
                *counts.entry((ConceptKind::Condition, id)).or_default() += 1;
            }
            for (id, _) in &v.procedures {
                *counts.entry((ConceptKind::Procedure, id)).or_default() += 1;
            }
        }
        let concept = |kind: ConceptKind, (id, name): &(String, String)| Concept {
            id: id.clone(),
            name: name.clone(),
            kind,
            frequency: counts[&(kind, id.as_str())],
        };
        let built = visits
            .iter()
            .map(|v| Visit {
                date: v.date,
                kind: v.kind,
                specialty: v.specialty.clone(),
                stay_days: v.stay_days,
                primary_complaint: v.primary_complaint.clone(),
                conditions: v.conditions.iter().map(|c| concept(ConceptKind::Condition, c)).collect(),
                procedures: v.procedures.iter().map(|c| concept(ConceptKind::Procedure, c)).collect(),
            })
            .collect();
        Ok(ClaimsRecord {
            age,
            sex: sex.into(),
            race: race.into(),
            visits: built,
            patient_id,
        })
    }

    pub fn from_json(line: &str) -> Result<Self, ClaimsError> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| ClaimsError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        let visits = raw
            .visits
            .into_iter()
            .map(|v| VisitInput {
                date: v.date,
                kind: v.kind,
                specialty: v.specialty,
                stay_days: v.stay_days,
                primary_complaint: v.primary_complaint,
                conditions: v.conditions.into_iter().map(|c| (c.id, c.name)).collect(),
                procedures: v.procedures.into_iter().map(|c| (c.id, c.name)).collect(),
            })
            .collect();
        ClaimsRecord::new(raw.patient_id, raw.age, raw.sex, raw.race, visits)
    }

    /// Inverse of [`ClaimsRecord::from_json`].
    pub fn to_json(&self) -> String {
        let raw_concepts = |cs: &[Concept]| {
            cs.iter()
                .map(|c| RawConcept {
                    id: c.id.clone(),
                    name: c.name.clone(),
                })
                .collect()
        };
        let raw = RawRecord {
            patient_id: self.patient_id.clone(),
            age: self.age,
            sex: self.sex.clone(),
            race: self.race.clone(),
            visits: self
                .visits
                .iter()
                .map(|v| RawVisit {
                    date: v.date,
                    kind: v.kind,
                    specialty: v.specialty.clone(),
                    stay_days: v.stay_days,
                    primary_complaint: v.primary_complaint.clone(),
                    conditions: raw_concepts(&v.conditions),
                    procedures: raw_concepts(&v.procedures),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("record serializes")
    }

    /// Returns a copy with concept names replaced through `map`.
    pub fn with_concept_map(&self, map: &ConceptMap) -> ClaimsRecord {
        let mut out = self.clone();
        for v in &mut out.visits {
            v.conditions = apply_concept_map(&v.conditions, map);
            v.procedures = apply_concept_map(&v.procedures, map);
        }
        out
    }
}

/// Reads one record per non-blank line.
pub fn load_claims_jsonl(path: impl AsRef<Path>) -> Result<Vec<ClaimsRecord>, ClaimsError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(ClaimsRecord::from_json(&line).map_err(|e| match e {
            ClaimsError::Parse { message, .. } => ClaimsError::Parse { line: i + 1, message },
            other => other,
        })?);
    }
    Ok(out)
}

/// Concept id to alternative name.
pub type ConceptMap = BTreeMap<String, String>;

/// Replaces names that have a mapping; others pass through unchanged.
pub fn apply_concept_map(concepts: &[Concept], map: &ConceptMap) -> Vec<Concept> {
    concepts
        .iter()
        .map(|c| match map.get(&c.id) {
            Some(name) => Concept {
                name: name.clone(),
                ..c.clone()
            },
            None => c.clone(),
        })
        .collect()
}

/// Parses a two-column TSV of `id<TAB>alternative_name`. Blank lines, `#`
/// comments, an `id` header and rows whose name is `-` or empty are skipped.
pub fn parse_concept_map(text: &str) -> Result<ConceptMap, ClaimsError> {
    let mut map = ConceptMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, name)) = line.split_once('\t') else {
            return Err(ClaimsError::Parse {
                line: i + 1,
                message: "expected two tab-separated columns".into(),
            });
        };
        if i == 0 && id == "id" {
            continue;
        }
        let name = name.trim();
        if name.is_empty() || name == "-" {
            continue;
        }
        map.insert(id.trim().to_string(), name.to_string());
    }
    Ok(map)
}

pub fn load_concept_map(path: impl AsRef<Path>) -> Result<ConceptMap, ClaimsError> {
    parse_concept_map(&std::fs::read_to_string(path)?)
}

/// A bijection over the concept names seen in `records`, shared by every
/// record. Returned as a map usable with [`apply_concept_map`]; concepts
/// sharing a name keep sharing one.
pub fn permuted_name_map(records: &[ClaimsRecord], seed: u64) -> ConceptMap {
    let mut by_name: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        for v in &r.visits {
            for c in v.conditions.iter().chain(&v.procedures) {
                by_name.entry(&c.name).or_default().insert(&c.id);
            }
        }
    }
    let names: Vec<&str> = by_name.keys().copied().collect();
    let mut order: Vec<usize> = (0..names.len()).collect();
    if names.len() >= 2 {
        let mut rng = seeded(seed);
        loop {
            order.shuffle(&mut rng);
            if order.iter().enumerate().any(|(i, &j)| i != j) {
                break;
            }
        }
    }
    let mut map = ConceptMap::new();
    for (i, name) in names.iter().enumerate() {
        for id in &by_name[name] {
            map.insert(id.to_string(), names[order[i]].to_string());
        }
    }
    map
}

/// Estimates the model token count of a text.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(words * 1024 / 400)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WordRatioEstimator;

impl TokenEstimator for WordRatioEstimator {
    fn estimate(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

impl<F: Fn(&str) -> usize + Send + Sync> TokenEstimator for F {
    fn estimate(&self, text: &str) -> usize {
        self(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * MODEL_TOKEN_LIMIT).div_ceil(WORDS_PER_LIMIT)
}

/// Budget left for the record once the task template's own text is charged.
pub fn default_budget(template_body: &str) -> usize {
    MODEL_TOKEN_LIMIT.saturating_sub(estimate_tokens(
        &template_body.replace(crate::prompt::PLACEHOLDER, ""),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionOrder {
    LeastFrequent,
    MostFrequent,
    Oldest,
    MostRecent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Conditions,
    Procedures,
    Both,
}

impl Scope {
    pub fn includes(self, kind: ConceptKind) -> bool {
        matches!(
            (self, kind),
            (Scope::Both, _)
                | (Scope::Conditions, ConceptKind::Condition)
                | (Scope::Procedures, ConceptKind::Procedure)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub order: SelectionOrder,
    pub scope: Scope,
}

impl SelectionStrategy {
    pub fn new(order: SelectionOrder, scope: Scope) -> Self {
        SelectionStrategy { order, scope }
    }

    /// The twelve order/scope combinations.
    pub fn all() -> Vec<SelectionStrategy> {
        use SelectionOrder::*;
        let mut out = Vec::new();
        for order in [LeastFrequent, MostFrequent, Oldest, MostRecent] {
            for scope in [Scope::Conditions, Scope::Procedures, Scope::Both] {
                out.push(SelectionStrategy { order, scope });
            }
        }
        out
    }
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        SelectionStrategy::new(SelectionOrder::MostFrequent, Scope::Conditions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimsStyle {
    List,
    Text,
    ListShort,
}

/// A concept attached to the visit it is reported under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedConcept {
    pub visit: usize,
    pub concept: Concept,
}

/// All candidate concepts of `rec` in `strategy` order.
///
/// Date orders rank every (visit, concept) occurrence; a concept repeated
/// in one visit counts once. Frequency orders rank distinct concepts, break
/// ties by earlier first occurrence and then by id, and attach each concept
/// to its earliest visit.
pub fn rank_concepts(rec: &ClaimsRecord, strategy: SelectionStrategy) -> Vec<SelectedConcept> {
    let mut occurrences = Vec::new();
    for (vi, v) in rec.visits.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for c in v.concepts(strategy.scope) {
            if seen.insert((c.kind, c.id.as_str())) {
                occurrences.push(SelectedConcept {
                    visit: vi,
                    concept: c.clone(),
                });
            }
        }
    }
    match strategy.order {
        SelectionOrder::Oldest => occurrences,
        SelectionOrder::MostRecent => {
            // stable: keeps within-visit order
            occurrences.sort_by(|a, b| rec.visits[b.visit].date.cmp(&rec.visits[a.visit].date));
            occurrences
        }
        SelectionOrder::MostFrequent | SelectionOrder::LeastFrequent => {
            let mut seen = BTreeSet::new();
            let mut distinct: Vec<SelectedConcept> = occurrences
                .into_iter()
                .filter(|s| seen.insert((s.concept.kind, s.concept.id.clone())))
                .collect();
            let most = strategy.order == SelectionOrder::MostFrequent;
            distinct.sort_by(|a, b| {
                let by_freq = if most {
                    b.concept.frequency.cmp(&a.concept.frequency)
                } else {
                    a.concept.frequency.cmp(&b.concept.frequency)
                };
                by_freq
                    .then(rec.visits[a.visit].date.cmp(&rec.visits[b.visit].date))
                    .then_with(|| a.concept.id.cmp(&b.concept.id))
            });
            distinct
        }
    }
}

/// Admits ranked concepts one at a time while the serialized record stays
/// within `budget` estimated tokens. A concept from a visit not yet shown
/// is charged together with that visit's header. The short list style also
/// stops after [`SHORT_LIST_CONCEPTS`].
pub fn select_concepts(
    rec: &ClaimsRecord,
    strategy: SelectionStrategy,
    budget: usize,
    style: ClaimsStyle,
    estimator: &dyn TokenEstimator,
) -> Result<Vec<SelectedConcept>, ClaimsError> {
    let ranked = rank_concepts(rec, strategy);
    let cap = match style {
        ClaimsStyle::ListShort => SHORT_LIST_CONCEPTS,
        _ => usize::MAX,
    };
    let mut admitted: Vec<SelectedConcept> = Vec::new();
    if budget == 0 || estimator.estimate(&serialize_claims(rec, &[], style)?) > budget {
        return Ok(admitted);
    }
    for candidate in ranked {
        if admitted.len() >= cap {
            break;
        }
        admitted.push(candidate);
        if estimator.estimate(&serialize_claims(rec, &admitted, style)?) > budget {
            admitted.pop();
            break;
        }
    }
    Ok(admitted)
}

fn sex_words(sex: &str) -> Result<(&'static str, &'static str), ClaimsError> {
    match sex.trim().to_ascii_lowercase().as_str() {
        "male" => Ok(("man", "He")),
        "female" => Ok(("woman", "She")),
        _ => Err(ClaimsError::UnknownSex(sex.to_string())),
    }
}

/// `May 30, 2014`.
pub fn format_date(date: NaiveDate) -> String {
    date.format("%B %-d, %Y").to_string()
}

fn join_names(names: &[&str]) -> String {
    match names {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Renders the summary sentence and every visit that holds a selected
/// concept, in date order. Within a visit, conditions precede procedures
/// and both keep the record's order.
pub fn serialize_claims(
    rec: &ClaimsRecord,
    selected: &[SelectedConcept],
    style: ClaimsStyle,
) -> Result<String, ClaimsError> {
    let (noun, pronoun) = sex_words(&rec.sex)?;
    let selected = match style {
        ClaimsStyle::ListShort => &selected[..selected.len().min(SHORT_LIST_CONCEPTS)],
        _ => selected,
    };
    let mut per_visit: BTreeMap<usize, BTreeSet<(ConceptKind, &str)>> = BTreeMap::new();
    for s in selected {
        per_visit
            .entry(s.visit)
            .or_default()
            .insert((s.concept.kind, s.concept.id.as_str()));
    }

    let mut blocks = vec![format!(
        "Summary: The patient is a {} year old {} {}.",
        rec.age, rec.race, noun
    )];
    for (&vi, ids) in &per_visit {
        let v = &rec.visits[vi];
        // names come from the selection so remapped names are honoured
        let name_of = |kind: ConceptKind, id: &str| {
            selected
                .iter()
                .find(|s| s.visit == vi && s.concept.kind == kind && s.concept.id == id)
                .map(|s| s.concept.name.as_str())
        };
        let pick = |cs: &[Concept], kind: ConceptKind| -> Vec<&str> {
            let mut seen = BTreeSet::new();
            cs.iter()
                .filter(|c| ids.contains(&(kind, c.id.as_str())) && seen.insert(c.id.as_str()))
                .filter_map(|c| name_of(kind, &c.id))
                .collect()
        };
        let conditions = pick(&v.conditions, ConceptKind::Condition);
        let procedures = pick(&v.procedures, ConceptKind::Procedure);
        let date = format_date(v.date);
        let encounter = match v.kind {
            VisitKind::Outpatient => format!(
                "saw a doctor for {}",
                v.specialty.as_deref().unwrap_or_default()
            ),
            VisitKind::Inpatient => {
                let days = v.stay_days.unwrap_or(1);
                format!("visited the hospital for {days} {}", if days == 1 { "day" } else { "days" })
            }
        };
        let block = match style {
            ClaimsStyle::List | ClaimsStyle::ListShort => {
                let mut lines = vec![format!("{date}: {encounter}")];
                for (header, names) in [("Conditions:", &conditions), ("Procedures:", &procedures)] {
                    if !names.is_empty() {
                        lines.push(header.to_string());
                        lines.extend(names.iter().map(|n| format!("- {n}")));
                    }
                }
                lines.join("\n")
            }
            ClaimsStyle::Text => {
                let mut s = format!(
                    "On {date} the patient {encounter} with a primary complaint of {}.",
                    v.primary_complaint
                );
                let others: Vec<&str> = conditions
                    .iter()
                    .chain(&procedures)
                    .copied()
                    .filter(|n| *n != v.primary_complaint)
                    .collect();
                if !others.is_empty() {
                    s.push_str(&format!(" {pronoun} was also treated for {}.", join_names(&others)));
                }
                s
            }
        };
        blocks.push(block);
    }
    Ok(blocks.join("\n\n"))
}

/// Selection plus rendering in one call.
#[derive(Debug, Clone, Copy)]
pub struct ClaimsSerializer {
    pub strategy: SelectionStrategy,
    pub style: ClaimsStyle,
    pub budget: usize,
}

impl Default for ClaimsSerializer {
    fn default() -> Self {
        ClaimsSerializer {
            strategy: SelectionStrategy::default(),
            style: ClaimsStyle::List,
            budget: MODEL_TOKEN_LIMIT,
        }
    }
}

impl ClaimsSerializer {
    pub fn serialize(&self, rec: &ClaimsRecord) -> Result<String, ClaimsError> {
        self.serialize_with(rec, &WordRatioEstimator)
    }

    pub fn serialize_with(&self, rec: &ClaimsRecord, estimator: &dyn TokenEstimator) -> Result<String, ClaimsError> {
        let selected = select_concepts(rec, self.strategy, self.budget, self.style, estimator)?;
        serialize_claims(rec, &selected, self.style)
    }
}
