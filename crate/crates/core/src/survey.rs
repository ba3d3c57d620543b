//! Survey instruments: intake (demographics, 15-item big-five personality,
//! familiarity with assistants), the trust checkpoints after questions 6, 12
//! and 18, and the final usefulness/frustration/trust/emotion survey.
//!
//! Instruments are data ([`InstrumentDefinition`]) so the field list, ranges
//! and the personality item-to-trait keying can be changed without touching
//! code. [`default_instruments`] returns the shipped set.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 5-level Likert answer, stored as an integer in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Likert(u8);

impl Likert {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(value: i64) -> Result<Self, LikertRangeError> {
        if (i64::from(Self::MIN)..=i64::from(Self::MAX)).contains(&value) {
            Ok(Likert(value as u8))
        } else {
            Err(LikertRangeError(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Reverse keying: `v -> 6 - v`.
    pub fn reversed(self) -> Likert {
        Likert(Self::MAX + Self::MIN - self.0)
    }
}

impl TryFrom<i64> for Likert {
    type Error = LikertRangeError;
    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Likert::new(value)
    }
}

impl From<Likert> for u8 {
    fn from(l: Likert) -> u8 {
        l.0
    }
}

impl fmt::Display for Likert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("likert value {0} outside 1..=5")]
pub struct LikertRangeError(pub i64);

/// The twelve emotions rated in the final survey, in presentation order.
pub const EMOTIONS: [&str; 12] = [
    "active",
    "afflicted",
    "attentive",
    "tired",
    "decided",
    "disgusted",
    "distracted",
    "enthusiastic",
    "inspired",
    "uneasy",
    "nervous",
    "fearful",
];

/// Positions after which the trust checkpoint survey is shown.
pub const CHECKPOINTS: [usize; 3] = [6, 12, 18];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    Demographic,
    Personality,
    Familiarity,
    Evaluation,
    Final,
}

impl InstrumentKind {
    pub const ALL: [InstrumentKind; 5] = [
        InstrumentKind::Demographic,
        InstrumentKind::Personality,
        InstrumentKind::Familiarity,
        InstrumentKind::Evaluation,
        InstrumentKind::Final,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InstrumentKind::Demographic => "demographic",
            InstrumentKind::Personality => "personality",
            InstrumentKind::Familiarity => "familiarity",
            InstrumentKind::Evaluation => "evaluation",
            InstrumentKind::Final => "final",
        }
    }
}

impl fmt::Display for InstrumentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InstrumentKind {
    type Err = SurveyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InstrumentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SurveyError::UnknownInstrument(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldKind {
    Likert,
    Integer { min: i64, max: i64 },
    Text,
    Choice { options: Vec<String> },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
    #[serde(default = "yes")]
    pub required: bool,
}

impl FieldDef {
    fn new(name: &str, kind: FieldKind) -> Self {
        FieldDef { name: name.to_owned(), kind, required: true }
    }

    fn optional(mut self) -> Self {
        self.required = false;
        self
    }
}

/// Item-to-trait keying for the personality inventory. Item numbers are
/// 1-based positions among the instrument's Likert fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitDef {
    pub name: String,
    pub items: Vec<usize>,
    #[serde(default)]
    pub reversed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentDefinition {
    pub kind: InstrumentKind,
    pub fields: Vec<FieldDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traits: Vec<TraitDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Int(i64),
    Text(String),
}

pub type Answers = BTreeMap<String, AnswerValue>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurveyError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{0}` out of range")]
    OutOfRange(String),
    #[error("field `{0}` has the wrong type")]
    WrongType(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("unknown instrument `{0}`")]
    UnknownInstrument(String),
    #[error("invalid instrument definition: {0}")]
    InvalidDefinition(String),
}

impl SurveyError {
    /// Name of the offending field, when the error concerns one.
    pub fn field(&self) -> Option<&str> {
        match self {
            SurveyError::MissingField(f)
            | SurveyError::OutOfRange(f)
            | SurveyError::WrongType(f)
            | SurveyError::UnknownField(f) => Some(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitScore {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalityResponse {
    pub items: Vec<Likert>,
    pub trait_scores: Vec<TraitScore>,
}

/// A completed checkpoint survey. The anchor reminder is only shown once the
/// star rating is in, which `shown_after_rating` records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationSurveyResponse {
    pub checkpoint: usize,
    pub trust_stars: Likert,
    pub explanation: String,
    pub shown_after_rating: bool,
}

impl EvaluationSurveyResponse {
    pub fn new(checkpoint: usize, trust_stars: Likert, explanation: &str) -> Result<Self, SurveyError> {
        if !CHECKPOINTS.contains(&checkpoint) {
            return Err(SurveyError::OutOfRange("checkpoint".into()));
        }
        if explanation.trim().is_empty() {
            return Err(SurveyError::MissingField("explanation".into()));
        }
        Ok(EvaluationSurveyResponse {
            checkpoint,
            trust_stars,
            explanation: explanation.to_owned(),
            shown_after_rating: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalSurveyResponse {
    pub usefulness: Likert,
    pub frustration: Likert,
    pub trust: Likert,
    pub emotions: BTreeMap<String, Likert>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidatedResponse {
    Demographic { answers: Answers },
    Personality(PersonalityResponse),
    Familiarity { answers: Answers },
    Evaluation { trust_stars: Likert, explanation: String },
    Final(FinalSurveyResponse),
}

impl ValidatedResponse {
    pub fn kind(&self) -> InstrumentKind {
        match self {
            ValidatedResponse::Demographic { .. } => InstrumentKind::Demographic,
            ValidatedResponse::Personality(_) => InstrumentKind::Personality,
            ValidatedResponse::Familiarity { .. } => InstrumentKind::Familiarity,
            ValidatedResponse::Evaluation { .. } => InstrumentKind::Evaluation,
            ValidatedResponse::Final(_) => InstrumentKind::Final,
        }
    }
}

impl InstrumentDefinition {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    fn likert_items(&self) -> impl Iterator<Item = &FieldDef> {
        self.fields.iter().filter(|f| f.kind == FieldKind::Likert)
    }

    /// Structural checks that make [`validate_survey`] total for this
    /// definition.
    pub fn check(&self) -> Result<(), SurveyError> {
        let bad = |m: String| Err(SurveyError::InvalidDefinition(m));
        let mut seen = BTreeSet::new();
        for f in &self.fields {
            if !seen.insert(f.name.as_str()) {
                return bad(alloc::format!("duplicate field `{}`", f.name));
            }
            match &f.kind {
                FieldKind::Integer { min, max } if min > max => {
                    return bad(alloc::format!("field `{}` has min > max", f.name));
                }
                FieldKind::Choice { options } if options.is_empty() => {
                    return bad(alloc::format!("choice field `{}` has no options", f.name));
                }
                _ => {}
            }
        }
        let require_likert = |name: &str| -> Result<(), SurveyError> {
            match self.field(name) {
                Some(f) if f.kind == FieldKind::Likert && f.required => Ok(()),
                _ => Err(SurveyError::InvalidDefinition(alloc::format!(
                    "{} instrument needs required likert field `{name}`",
                    self.kind
                ))),
            }
        };
        match self.kind {
            InstrumentKind::Personality => {
                let n = self.likert_items().count();
                if n != 15 || self.fields.len() != 15 {
                    return bad(alloc::format!("personality instrument needs 15 likert items, has {n}"));
                }
                if self.traits.len() != 5 {
                    return bad("personality instrument needs 5 traits".into());
                }
                let mut covered = BTreeSet::new();
                for t in &self.traits {
                    if t.items.len() != 3 {
                        return bad(alloc::format!("trait `{}` needs exactly 3 items", t.name));
                    }
                    for &i in &t.items {
                        if !(1..=15).contains(&i) || !covered.insert(i) {
                            return bad(alloc::format!("trait `{}` item {i} invalid or reused", t.name));
                        }
                    }
                    if t.reversed.iter().any(|r| !t.items.contains(r)) {
                        return bad(alloc::format!("trait `{}` reverses an item it does not own", t.name));
                    }
                }
            }
            InstrumentKind::Evaluation => {
                require_likert("trust_stars")?;
                match self.field("explanation") {
                    Some(f) if f.kind == FieldKind::Text && f.required => {}
                    _ => return bad("evaluation instrument needs required text field `explanation`".into()),
                }
            }
            InstrumentKind::Final => {
                for name in ["usefulness", "frustration", "trust"].into_iter().chain(EMOTIONS) {
                    require_likert(name)?;
                }
                if self.fields.len() != 15 {
                    return bad("final instrument has fields beyond the 3 ratings and 12 emotions".into());
                }
            }
            InstrumentKind::Demographic | InstrumentKind::Familiarity => {}
        }
        Ok(())
    }
}

fn check_field(def: &FieldDef, value: &AnswerValue) -> Result<(), SurveyError> {
    let name = || def.name.clone();
    match (&def.kind, value) {
        (FieldKind::Likert, AnswerValue::Int(v)) => {
            Likert::new(*v).map(|_| ()).map_err(|_| SurveyError::OutOfRange(name()))
        }
        (FieldKind::Integer { min, max }, AnswerValue::Int(v)) => {
            if (*min..=*max).contains(v) {
                Ok(())
            } else {
                Err(SurveyError::OutOfRange(name()))
            }
        }
        (FieldKind::Text, AnswerValue::Text(t)) => {
            if def.required && t.trim().is_empty() {
                Err(SurveyError::MissingField(name()))
            } else {
                Ok(())
            }
        }
        (FieldKind::Choice { options }, AnswerValue::Text(t)) => {
            if options.iter().any(|o| o == t) {
                Ok(())
            } else {
                Err(SurveyError::OutOfRange(name()))
            }
        }
        _ => Err(SurveyError::WrongType(name())),
    }
}

fn likert_of(answers: &Answers, name: &str) -> Likert {
    match answers.get(name) {
        Some(AnswerValue::Int(v)) => Likert::new(*v).expect("validated likert"),
        _ => unreachable!("validated likert field `{name}`"),
    }
}

/// Validates a full submission against an instrument. Partial submissions,
/// unknown fields and out-of-range values are rejected.
pub fn validate_survey(def: &InstrumentDefinition, answers: &Answers) -> Result<ValidatedResponse, SurveyError> {
    def.check()?;
    if let Some(unknown) = answers.keys().find(|k| def.field(k).is_none()) {
        return Err(SurveyError::UnknownField(unknown.clone()));
    }
    for f in &def.fields {
        match answers.get(&f.name) {
            Some(v) => check_field(f, v)?,
            None if f.required => return Err(SurveyError::MissingField(f.name.clone())),
            None => {}
        }
    }
    Ok(match def.kind {
        InstrumentKind::Demographic => ValidatedResponse::Demographic { answers: answers.clone() },
        InstrumentKind::Familiarity => ValidatedResponse::Familiarity { answers: answers.clone() },
        InstrumentKind::Personality => {
            let items: Vec<Likert> = def.likert_items().map(|f| likert_of(answers, &f.name)).collect();
            let trait_scores = score_big_five(&items, &def.traits)?;
            ValidatedResponse::Personality(PersonalityResponse { items, trait_scores })
        }
        InstrumentKind::Evaluation => {
            let explanation = match answers.get("explanation") {
                Some(AnswerValue::Text(t)) => t.clone(),
                _ => unreachable!("validated explanation"),
            };
            ValidatedResponse::Evaluation { trust_stars: likert_of(answers, "trust_stars"), explanation }
        }
        InstrumentKind::Final => ValidatedResponse::Final(FinalSurveyResponse {
            usefulness: likert_of(answers, "usefulness"),
            frustration: likert_of(answers, "frustration"),
            trust: likert_of(answers, "trust"),
            emotions: EMOTIONS.iter().map(|e| ((*e).to_owned(), likert_of(answers, e))).collect(),
        }),
    })
}

/// Trait scores for a 15-item inventory: each trait is the mean of its
/// items after mapping reverse-keyed items `v -> 6 - v`.
pub fn score_big_five(items: &[Likert], traits: &[TraitDef]) -> Result<Vec<TraitScore>, SurveyError> {
    if items.len() != 15 {
        return Err(SurveyError::InvalidDefinition(alloc::format!("expected 15 items, got {}", items.len())));
    }
    traits
        .iter()
        .map(|t| {
            if t.items.is_empty() {
                return Err(SurveyError::InvalidDefinition(alloc::format!("trait `{}` has no items", t.name)));
            }
            let mut sum = 0.0;
            for &i in &t.items {
                let v = *items
                    .get(i.wrapping_sub(1))
                    .ok_or_else(|| SurveyError::InvalidDefinition(alloc::format!("item {i} out of range")))?;
                let v = if t.reversed.contains(&i) { v.reversed() } else { v };
                sum += f64::from(v.get());
            }
            Ok(TraitScore { name: t.name.clone(), score: sum / t.items.len() as f64 })
        })
        .collect()
}

/// Counts survey kinds stored for one completed session and checks the
/// expected set: one of each intake instrument, evaluations at 6/12/18 and
/// one final survey.
pub fn check_session_survey_set(
    entries: impl IntoIterator<Item = (InstrumentKind, Option<usize>)>,
) -> Result<(), String> {
    let mut counts: BTreeMap<InstrumentKind, usize> = BTreeMap::new();
    let mut checkpoints = Vec::new();
    for (kind, cp) in entries {
        *counts.entry(kind).or_default() += 1;
        if kind == InstrumentKind::Evaluation {
            checkpoints.push(cp.unwrap_or(0));
        }
    }
    checkpoints.sort_unstable();
    for kind in [InstrumentKind::Demographic, InstrumentKind::Personality, InstrumentKind::Familiarity, InstrumentKind::Final] {
        let n = counts.get(&kind).copied().unwrap_or(0);
        if n != 1 {
            return Err(alloc::format!("expected 1 {kind} survey, found {n}"));
        }
    }
    if checkpoints != CHECKPOINTS {
        return Err(alloc::format!("evaluation checkpoints {checkpoints:?}, expected {CHECKPOINTS:?}"));
    }
    Ok(())
}

fn choice(name: &str, options: &[&str]) -> FieldDef {
    FieldDef::new(name, FieldKind::Choice { options: options.iter().map(|s| s.to_string()).collect() })
}

/// Default big-five keying: item `k` belongs to trait `(k - 1) % 5`, three
/// items per trait, the last item of each trait reverse keyed.
pub fn default_big_five_traits() -> Vec<TraitDef> {
    ["openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism"]
        .iter()
        .enumerate()
        .map(|(t, name)| TraitDef {
            name: (*name).to_owned(),
            items: vec![t + 1, t + 6, t + 11],
            reversed: vec![t + 11],
        })
        .collect()
}

/// The shipped instrument set. Familiarity items are illustrative.
pub fn default_instruments() -> Vec<InstrumentDefinition> {
    let likert = |n: &str| FieldDef::new(n, FieldKind::Likert);
    vec![
        InstrumentDefinition {
            kind: InstrumentKind::Demographic,
            fields: vec![
                choice("gender", &["female", "male", "other", "no_reply"]),
                FieldDef::new("age", FieldKind::Integer { min: 16, max: 100 }),
                FieldDef::new("birthplace", FieldKind::Text),
                FieldDef::new("first_language", FieldKind::Text),
                FieldDef::new("second_language", FieldKind::Text).optional(),
            ],
            traits: vec![],
        },
        InstrumentDefinition {
            kind: InstrumentKind::Personality,
            fields: (1..=15).map(|i| likert(&alloc::format!("item_{i}"))).collect(),
            traits: default_big_five_traits(),
        },
        InstrumentDefinition {
            kind: InstrumentKind::Familiarity,
            fields: vec![
                likert("assistant_use_frequency"),
                likert("assistant_trust"),
                likert("digital_systems_trust"),
                choice("owns_smart_speaker", &["yes", "no"]),
            ],
            traits: vec![],
        },
        InstrumentDefinition {
            kind: InstrumentKind::Evaluation,
            fields: vec![likert("trust_stars"), FieldDef::new("explanation", FieldKind::Text)],
            traits: vec![],
        },
        InstrumentDefinition {
            kind: InstrumentKind::Final,
            fields: ["usefulness", "frustration", "trust"]
                .into_iter()
                .chain(EMOTIONS)
                .map(likert)
                .collect(),
            traits: vec![],
        },
    ]
}
