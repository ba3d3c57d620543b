//! The experimental protocol as a deterministic, seedable state machine.
//!
//! A series is 18 factual questions (6 easy, 12 difficult). Before the
//! first question the subject is told the assistant's average rating (the
//! anchor: 4.9 stars in the high-score condition, 1.4 in the low-score one).
//! Each question goes through the dialogue with the assistant and then a
//! form with three fields (the assistant's answer as heard, confidence in it
//! on a 1-5 scale, the subject's own answer). A trust checkpoint survey
//! follows questions 6, 12 and 18, and a final survey closes the series.
//!
//! In the low-score condition six of the twelve difficult questions are
//! answered with the scripted wrong answer authored in the bank. Easy
//! questions are never answered wrong.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::AnswerText;
use crate::seeded_rng;
use crate::survey::{Likert, CHECKPOINTS};

pub const SERIES_LEN: usize = 18;
pub const EASY_PER_SERIES: usize = 6;
pub const DIFFICULT_PER_SERIES: usize = 12;
pub const WRONG_PER_LOW_SERIES: usize = 6;
pub const DEFAULT_HIGH_ANCHOR: f64 = 4.9;
pub const DEFAULT_LOW_ANCHOR: f64 = 1.4;
/// Longest allowed run of consecutive difficult questions in a plan.
pub const MAX_DIFFICULT_RUN: usize = 3;
/// Number of leading easy questions in every plan.
pub const LEADING_EASY: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    HighScore,
    LowScore,
}

impl ConditionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditionKind::HighScore => "high_score",
            ConditionKind::LowScore => "low_score",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "high_score" | "high" => Some(ConditionKind::HighScore),
            "low_score" | "low" => Some(ConditionKind::LowScore),
            _ => None,
        }
    }

    /// Regression coding: 1 for high-score, 0 for low-score.
    pub fn indicator(self) -> f64 {
        match self {
            ConditionKind::HighScore => 1.0,
            ConditionKind::LowScore => 0.0,
        }
    }

    pub fn other(self) -> Self {
        match self {
            ConditionKind::HighScore => ConditionKind::LowScore,
            ConditionKind::LowScore => ConditionKind::HighScore,
        }
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Condition order for a subject completing both series, counterbalanced by
/// enrollment parity: odd enrollment numbers start in the high-score arm.
pub fn series_conditions(enrollment_order: u32) -> [ConditionKind; 2] {
    if enrollment_order % 2 == 1 {
        [ConditionKind::HighScore, ConditionKind::LowScore]
    } else {
        [ConditionKind::LowScore, ConditionKind::HighScore]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub kind: ConditionKind,
    pub anchor_stars: f64,
}

impl Condition {
    pub fn new(kind: ConditionKind, anchor_stars: f64) -> Result<Self, ProtocolError> {
        if !(1.0..=5.0).contains(&anchor_stars) {
            return Err(ProtocolError::InvalidAnchor(anchor_stars));
        }
        Ok(Condition { kind, anchor_stars })
    }

    pub fn high_score() -> Self {
        Condition { kind: ConditionKind::HighScore, anchor_stars: DEFAULT_HIGH_ANCHOR }
    }

    pub fn low_score() -> Self {
        Condition { kind: ConditionKind::LowScore, anchor_stars: DEFAULT_LOW_ANCHOR }
    }

    pub fn of(kind: ConditionKind) -> Self {
        match kind {
            ConditionKind::HighScore => Self::high_score(),
            ConditionKind::LowScore => Self::low_score(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Difficult,
}

/// Per-unit answer texts for questions whose dialogue asks for a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitAnswer {
    pub correct: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrong: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub prompt_text: String,
    pub difficulty: Difficulty,
    pub correct_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted_wrong_answer: Option<String>,
    pub domain_id: String,
    #[serde(default)]
    pub multi_turn: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub unit_answers: BTreeMap<String, UnitAnswer>,
    /// Optional disjoint-set tag, e.g. one set per series for subjects
    /// completing two series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<String>,
}

impl Question {
    pub fn validate(&self) -> Result<(), QuestionError> {
        let blank = |s: &str| s.trim().is_empty();
        if blank(&self.id) {
            return Err(QuestionError::Empty("id"));
        }
        if blank(&self.prompt_text) {
            return Err(QuestionError::Empty("prompt_text"));
        }
        if blank(&self.correct_answer) {
            return Err(QuestionError::Empty("correct_answer"));
        }
        if blank(&self.domain_id) {
            return Err(QuestionError::Empty("domain_id"));
        }
        let has_wrong = self.scripted_wrong_answer.as_deref().is_some_and(|w| !blank(w));
        match self.difficulty {
            Difficulty::Difficult if !has_wrong => return Err(QuestionError::DifficultWithoutWrongAnswer),
            Difficulty::Easy if self.scripted_wrong_answer.is_some() => {
                return Err(QuestionError::EasyWithWrongAnswer)
            }
            _ => {}
        }
        for (unit, ua) in &self.unit_answers {
            if blank(&ua.correct) {
                return Err(QuestionError::UnitAnswer(unit.clone(), "empty correct text"));
            }
            match (self.difficulty, &ua.wrong) {
                (Difficulty::Difficult, None) => {
                    return Err(QuestionError::UnitAnswer(unit.clone(), "difficult question lacks a wrong variant"))
                }
                (Difficulty::Easy, Some(_)) => {
                    return Err(QuestionError::UnitAnswer(unit.clone(), "easy question has a wrong variant"))
                }
                _ => {}
            }
        }
        if self.multi_turn && self.unit_answers.is_empty() {
            return Err(QuestionError::MultiTurnWithoutUnits);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestionError {
    #[error("field `{0}` must not be empty")]
    Empty(&'static str),
    #[error("difficult question needs a non-empty scripted_wrong_answer")]
    DifficultWithoutWrongAnswer,
    #[error("easy question must not have a scripted_wrong_answer")]
    EasyWithWrongAnswer,
    #[error("unit answer `{0}`: {1}")]
    UnitAnswer(String, &'static str),
    #[error("multi-turn question needs unit_answers")]
    MultiTurnWithoutUnits,
    #[error("duplicate question id")]
    DuplicateId,
    #[error("dialogue domain `{0}` not found")]
    UnknownDomain(String),
    #[error("multi-turn question references domain `{0}` without a clarification state")]
    DomainWithoutClarification(String),
}

/// A validation problem tied to the question's position in its source list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankIssue {
    pub index: usize,
    pub id: String,
    pub error: QuestionError,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionBank {
    questions: Vec<Question>,
}

impl QuestionBank {
    /// Validates every question and id uniqueness; returns all issues found.
    pub fn new(questions: Vec<Question>) -> Result<Self, Vec<BankIssue>> {
        let mut issues = Vec::new();
        let mut ids = BTreeSet::new();
        for (index, q) in questions.iter().enumerate() {
            if let Err(error) = q.validate() {
                issues.push(BankIssue { index, id: q.id.clone(), error });
            }
            if !ids.insert(q.id.as_str()) {
                issues.push(BankIssue { index, id: q.id.clone(), error: QuestionError::DuplicateId });
            }
        }
        if issues.is_empty() {
            Ok(QuestionBank { questions })
        } else {
            Err(issues)
        }
    }

    /// Cross-checks domain references. `clarifies(domain_id)` returns
    /// `None` for an unknown domain, otherwise whether the domain has a
    /// clarification state.
    pub fn check_domains(&self, clarifies: impl Fn(&str) -> Option<bool>) -> Vec<BankIssue> {
        self.questions
            .iter()
            .enumerate()
            .filter_map(|(index, q)| {
                let error = match clarifies(&q.domain_id) {
                    None => QuestionError::UnknownDomain(q.domain_id.clone()),
                    Some(false) if q.multi_turn => QuestionError::DomainWithoutClarification(q.domain_id.clone()),
                    _ => return None,
                };
                Some(BankIssue { index, id: q.id.clone(), error })
            })
            .collect()
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn count(&self, difficulty: Difficulty) -> usize {
        self.questions.iter().filter(|q| q.difficulty == difficulty).count()
    }

    /// Questions tagged with `set`.
    pub fn subset(&self, set: &str) -> QuestionBank {
        QuestionBank { questions: self.questions.iter().filter(|q| q.set.as_deref() == Some(set)).cloned().collect() }
    }

    /// Distinct set tags in first-appearance order.
    pub fn sets(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in self.questions.iter().filter_map(|q| q.set.as_ref()) {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPlan {
    pub condition: Condition,
    pub ordered_questions: Vec<String>,
    pub wrong_answer_ids: BTreeSet<String>,
    pub checkpoint_positions: BTreeSet<usize>,
    pub seed: u64,
}

impl SeriesPlan {
    /// 1-based position of a question in the series.
    pub fn position_of(&self, question_id: &str) -> Option<usize> {
        self.ordered_questions.iter().position(|q| q == question_id).map(|p| p + 1)
    }

    pub fn question_at(&self, position: usize) -> Option<&str> {
        position.checked_sub(1).and_then(|i| self.ordered_questions.get(i)).map(String::as_str)
    }

    /// Checks every plan invariant against the bank the plan was drawn from.
    pub fn check(&self, bank: &QuestionBank) -> Result<(), String> {
        if self.ordered_questions.len() != SERIES_LEN {
            return Err(alloc::format!("plan has {} questions", self.ordered_questions.len()));
        }
        let mut diffs = Vec::with_capacity(SERIES_LEN);
        for id in &self.ordered_questions {
            let q = bank.get(id).ok_or_else(|| alloc::format!("unknown question {id}"))?;
            diffs.push(q.difficulty);
        }
        let easy = diffs.iter().filter(|d| **d == Difficulty::Easy).count();
        if easy != EASY_PER_SERIES {
            return Err(alloc::format!("{easy} easy questions"));
        }
        let unique: BTreeSet<_> = self.ordered_questions.iter().collect();
        if unique.len() != SERIES_LEN {
            return Err("repeated question in plan".into());
        }
        let expected_wrong = match self.condition.kind {
            ConditionKind::LowScore => WRONG_PER_LOW_SERIES,
            ConditionKind::HighScore => 0,
        };
        if self.wrong_answer_ids.len() != expected_wrong {
            return Err(alloc::format!("{} wrong answers", self.wrong_answer_ids.len()));
        }
        for id in &self.wrong_answer_ids {
            match bank.get(id) {
                Some(q) if q.difficulty == Difficulty::Difficult && self.position_of(id).is_some() => {}
                _ => return Err(alloc::format!("wrong answer on {id} is not a planned difficult question")),
            }
        }
        if self.checkpoint_positions.iter().copied().ne(CHECKPOINTS) {
            return Err("checkpoints differ from 6/12/18".into());
        }
        Ok(())
    }
}

fn difficulty_patterns() -> Vec<[Difficulty; SERIES_LEN]> {
    use Difficulty::*;
    let free = SERIES_LEN - LEADING_EASY;
    let remaining_easy = EASY_PER_SERIES - LEADING_EASY;
    let mut out = Vec::new();
    // every subset of `free` positions of size `remaining_easy`
    for mask in 0u32..(1 << free) {
        if mask.count_ones() as usize != remaining_easy {
            continue;
        }
        let mut p = [Difficult; SERIES_LEN];
        p[..LEADING_EASY].fill(Easy);
        for (i, slot) in p[LEADING_EASY..].iter_mut().enumerate() {
            if mask & (1 << i) != 0 {
                *slot = Easy;
            }
        }
        let mut run = 0;
        let mut ok = true;
        for d in p {
            run = if d == Difficult { run + 1 } else { 0 };
            ok &= run <= MAX_DIFFICULT_RUN;
        }
        ok &= p.chunks(SERIES_LEN / 3).all(|third| third.contains(&Difficult));
        if ok {
            out.push(p);
        }
    }
    out
}

/// Draws an 18-question plan from `bank` for `condition`.
///
/// Ordering: the first two questions are easy, no more than three difficult
/// questions are consecutive and each third of the series holds at least one
/// difficult question; the plan is uniform among orderings meeting those
/// rules. In the low-score condition six difficult questions, at least one
/// per third, get their scripted wrong answer. Deterministic in `seed`.
pub fn compile_series_plan(bank: &QuestionBank, condition: Condition, seed: u64) -> Result<SeriesPlan, ProtocolError> {
    let easy_pool: Vec<&Question> = bank.questions.iter().filter(|q| q.difficulty == Difficulty::Easy).collect();
    let hard_pool: Vec<&Question> = bank.questions.iter().filter(|q| q.difficulty == Difficulty::Difficult).collect();
    if easy_pool.len() < EASY_PER_SERIES || hard_pool.len() < DIFFICULT_PER_SERIES {
        return Err(ProtocolError::InsufficientBank { easy: easy_pool.len(), difficult: hard_pool.len() });
    }
    let mut rng = seeded_rng(seed);
    let mut easy = easy_pool;
    easy.shuffle(&mut rng);
    easy.truncate(EASY_PER_SERIES);
    let mut hard = hard_pool;
    hard.shuffle(&mut rng);
    hard.truncate(DIFFICULT_PER_SERIES);

    let patterns = difficulty_patterns();
    let pattern = patterns[rng.random_range(0..patterns.len())];
    let (mut ei, mut hi) = (easy.into_iter(), hard.into_iter());
    let ordered_questions: Vec<String> = pattern
        .iter()
        .map(|d| match d {
            Difficulty::Easy => ei.next(),
            Difficulty::Difficult => hi.next(),
        })
        .map(|q| q.expect("pattern counts match pools").id.clone())
        .collect();

    let mut wrong_answer_ids = BTreeSet::new();
    if condition.kind == ConditionKind::LowScore {
        let hard_positions: Vec<usize> =
            (0..SERIES_LEN).filter(|&i| pattern[i] == Difficulty::Difficult).collect();
        loop {
            let picked: Vec<usize> =
                hard_positions.choose_multiple(&mut rng, WRONG_PER_LOW_SERIES).copied().collect();
            let covers_thirds = (0..3).all(|t| picked.iter().any(|p| p / (SERIES_LEN / 3) == t));
            if covers_thirds {
                wrong_answer_ids = picked.into_iter().map(|p| ordered_questions[p].clone()).collect();
                break;
            }
        }
    }

    Ok(SeriesPlan {
        condition,
        ordered_questions,
        wrong_answer_ids,
        checkpoint_positions: CHECKPOINTS.into_iter().collect(),
        seed,
    })
}

/// The assistant's answer for a question under a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedAnswer {
    pub answer: AnswerText,
    pub was_scripted_wrong: bool,
}

/// Picks the scripted wrong answer iff the question is in the plan's wrong
/// set, otherwise the correct one. Easy questions always get the correct
/// answer.
pub fn select_va_answer(question: &Question, plan: &SeriesPlan) -> Result<SelectedAnswer, ProtocolError> {
    if plan.position_of(&question.id).is_none() {
        return Err(ProtocolError::UnknownQuestion(question.id.clone()));
    }
    let wrong = question.difficulty == Difficulty::Difficult && plan.wrong_answer_ids.contains(&question.id);
    let text = match (&question.scripted_wrong_answer, wrong) {
        (Some(w), true) => w.clone(),
        _ => question.correct_answer.clone(),
    };
    let unit_variants = question
        .unit_answers
        .iter()
        .map(|(unit, ua)| {
            let t = match (&ua.wrong, wrong) {
                (Some(w), true) => w.clone(),
                _ => ua.correct.clone(),
            };
            (unit.clone(), t)
        })
        .collect();
    Ok(SelectedAnswer { answer: AnswerText { text, unit_variants }, was_scripted_wrong: wrong })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    IntakeSurveys,
    BiasIntro,
    QuestionDialogue,
    QuestionForm,
    CheckpointSurvey,
    FinalSurvey,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::IntakeSurveys => "intake_surveys",
            Phase::BiasIntro => "bias_intro",
            Phase::QuestionDialogue => "question_dialogue",
            Phase::QuestionForm => "question_form",
            Phase::CheckpointSurvey => "checkpoint_survey",
            Phase::FinalSurvey => "final_survey",
            Phase::Done => "done",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The three fields of the per-question form. Missing or blank fields keep
/// the form from completing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionForm {
    #[serde(default)]
    pub va_transcription: Option<String>,
    #[serde(default)]
    pub confidence: Option<i64>,
    #[serde(default)]
    pub own_answer: Option<String>,
}

/// A completed form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormAnswers {
    pub va_transcription: String,
    pub confidence: Likert,
    pub own_answer: String,
}

impl QuestionForm {
    pub fn complete(&self) -> Result<FormAnswers, ProtocolError> {
        fn text(v: &Option<String>, name: &'static str) -> Result<String, ProtocolError> {
            match v {
                Some(s) if !s.trim().is_empty() => Ok(s.clone()),
                _ => Err(ProtocolError::MissingField(name)),
            }
        }
        let va_transcription = text(&self.va_transcription, "va_transcription")?;
        let confidence = self.confidence.ok_or(ProtocolError::MissingField("confidence"))?;
        let confidence = Likert::new(confidence).map_err(|_| ProtocolError::OutOfRange("confidence"))?;
        let own_answer = text(&self.own_answer, "own_answer")?;
        Ok(FormAnswers { va_transcription, confidence, own_answer })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    IntakeCompleted,
    Acknowledged,
    /// A subject utterance was handled without delivering the answer.
    UtteranceHandled,
    /// The assistant spoke the answer for the current question.
    AnswerDelivered,
    /// The subject moved on to the form without getting an answer.
    DialogueSkipped,
    FormSubmitted { form: QuestionForm },
    CheckpointRated { stars: i64 },
    CheckpointExplained { explanation: String },
    FinalSubmitted,
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SessionEvent::IntakeCompleted => "intake_completed",
            SessionEvent::Acknowledged => "acknowledged",
            SessionEvent::UtteranceHandled => "utterance_handled",
            SessionEvent::AnswerDelivered => "answer_delivered",
            SessionEvent::DialogueSkipped => "dialogue_skipped",
            SessionEvent::FormSubmitted { .. } => "form_submitted",
            SessionEvent::CheckpointRated { .. } => "checkpoint_rated",
            SessionEvent::CheckpointExplained { .. } => "checkpoint_explained",
            SessionEvent::FinalSubmitted => "final_submitted",
        }
    }
}

/// Instructions for the caller produced by a transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "directive", rename_all = "snake_case")]
pub enum Directive {
    PlayBiasMessage { anchor_stars: f64 },
    PresentQuestion { position: usize, question_id: String },
    VaAnswer { question_id: String, scripted_wrong: bool },
    OpenQuestionForm,
    RecordForm { question_id: String, answers: FormAnswers },
    OpenCheckpointSurvey { checkpoint: usize },
    ShowAnchorReminder { anchor_stars: f64 },
    RecordCheckpoint { checkpoint: usize, stars: Likert, explanation: String },
    OpenFinalSurvey,
    SeriesComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub subject_id: String,
    pub plan: SeriesPlan,
    pub phase: Phase,
    /// 1-based position of the current question; 0 before the first.
    pub question_index: usize,
    pub rng_seed: u64,
    /// Star rating given at the open checkpoint, awaiting the explanation.
    #[serde(default)]
    pub checkpoint_rating: Option<Likert>,
}

impl SessionState {
    pub fn new(session_id: &str, subject_id: &str, plan: SeriesPlan) -> Self {
        let rng_seed = plan.seed;
        SessionState {
            session_id: session_id.to_owned(),
            subject_id: subject_id.to_owned(),
            plan,
            phase: Phase::IntakeSurveys,
            question_index: 0,
            rng_seed,
            checkpoint_rating: None,
        }
    }

    pub fn current_question(&self) -> Option<&str> {
        match self.phase {
            Phase::QuestionDialogue | Phase::QuestionForm | Phase::CheckpointSurvey => {
                self.plan.question_at(self.question_index)
            }
            _ => None,
        }
    }

    fn present(&mut self, position: usize) -> Directive {
        self.question_index = position;
        self.phase = Phase::QuestionDialogue;
        Directive::PresentQuestion {
            position,
            question_id: self.plan.question_at(position).expect("position within plan").to_owned(),
        }
    }

    fn after_question(&mut self) -> Directive {
        if self.question_index == SERIES_LEN {
            self.phase = Phase::FinalSurvey;
            Directive::OpenFinalSurvey
        } else {
            self.present(self.question_index + 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("event `{event}` is illegal in phase `{phase}`")]
    IllegalEvent { phase: Phase, event: &'static str },
    #[error("question bank has {easy} easy and {difficult} difficult questions; need 6 and 12")]
    InsufficientBank { easy: usize, difficult: usize },
    #[error("question `{0}` is not part of the plan")]
    UnknownQuestion(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` out of range")]
    OutOfRange(&'static str),
    #[error("anchor {0} outside [1, 5]")]
    InvalidAnchor(f64),
}

/// Applies one event. Pure: the same `(state, event)` always yields the same
/// successor and directives.
pub fn advance(state: &SessionState, event: SessionEvent) -> Result<(SessionState, Vec<Directive>), ProtocolError> {
    use Phase::*;
    let illegal = ProtocolError::IllegalEvent { phase: state.phase, event: event.name() };
    let mut next = state.clone();
    let directives = match (state.phase, event) {
        (IntakeSurveys, SessionEvent::IntakeCompleted) => {
            next.phase = BiasIntro;
            vec![Directive::PlayBiasMessage { anchor_stars: state.plan.condition.anchor_stars }]
        }
        (BiasIntro, SessionEvent::Acknowledged) => vec![next.present(1)],
        (QuestionDialogue | QuestionForm, SessionEvent::UtteranceHandled) => vec![],
        (QuestionDialogue, SessionEvent::AnswerDelivered) => {
            let question_id = state.plan.question_at(state.question_index).expect("current question").to_owned();
            let scripted_wrong = state.plan.wrong_answer_ids.contains(&question_id);
            next.phase = QuestionForm;
            vec![Directive::VaAnswer { question_id, scripted_wrong }, Directive::OpenQuestionForm]
        }
        (QuestionDialogue, SessionEvent::DialogueSkipped) => {
            next.phase = QuestionForm;
            vec![Directive::OpenQuestionForm]
        }
        (QuestionForm, SessionEvent::FormSubmitted { form }) => {
            let answers = form.complete()?;
            let question_id = state.plan.question_at(state.question_index).expect("current question").to_owned();
            let record = Directive::RecordForm { question_id, answers };
            if state.plan.checkpoint_positions.contains(&state.question_index) {
                next.phase = CheckpointSurvey;
                next.checkpoint_rating = None;
                vec![record, Directive::OpenCheckpointSurvey { checkpoint: state.question_index }]
            } else {
                vec![record, next.after_question()]
            }
        }
        (CheckpointSurvey, SessionEvent::CheckpointRated { stars }) if state.checkpoint_rating.is_none() => {
            let stars = Likert::new(stars).map_err(|_| ProtocolError::OutOfRange("trust_stars"))?;
            next.checkpoint_rating = Some(stars);
            vec![Directive::ShowAnchorReminder { anchor_stars: state.plan.condition.anchor_stars }]
        }
        (CheckpointSurvey, SessionEvent::CheckpointExplained { explanation }) => {
            let Some(stars) = state.checkpoint_rating else { return Err(illegal) };
            if explanation.trim().is_empty() {
                return Err(ProtocolError::MissingField("explanation"));
            }
            next.checkpoint_rating = None;
            let record = Directive::RecordCheckpoint { checkpoint: state.question_index, stars, explanation };
            vec![record, next.after_question()]
        }
        (FinalSurvey, SessionEvent::FinalSubmitted) => {
            next.phase = Done;
            vec![Directive::SeriesComplete]
        }
        _ => return Err(illegal),
    };
    Ok((next, directives))
}

/// One question's full trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub question_id: String,
    pub turns: Vec<Turn>,
    pub va_answer_given: String,
    pub was_scripted_wrong: bool,
    pub subject_transcription: String,
    pub confidence: Likert,
    pub subject_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Subject,
    Va,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
    pub text: String,
    pub timestamp_ms: u64,
}

impl InteractionRecord {
    pub fn check(&self, plan: &SeriesPlan) -> Result<(), String> {
        if plan.position_of(&self.question_id).is_none() {
            return Err(alloc::format!("question {} not in plan", self.question_id));
        }
        if self.was_scripted_wrong != plan.wrong_answer_ids.contains(&self.question_id) {
            return Err("was_scripted_wrong disagrees with the plan".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_bank() -> QuestionBank {
        let mut qs = Vec::new();
        for i in 0..6 {
            qs.push(Question {
                id: alloc::format!("e{i}"),
                prompt_text: "¿Cuántos días tiene una semana?".into(),
                difficulty: Difficulty::Easy,
                correct_answer: "7".into(),
                scripted_wrong_answer: None,
                domain_id: "d".into(),
                multi_turn: false,
                unit_answers: BTreeMap::new(),
                set: None,
            });
        }
        for i in 0..12 {
            qs.push(Question {
                id: alloc::format!("h{i}"),
                prompt_text: "¿Cuál es la distancia entre Barcelona y Madrid?".into(),
                difficulty: Difficulty::Difficult,
                correct_answer: "504 km".into(),
                scripted_wrong_answer: Some("1000 km".into()),
                domain_id: "d".into(),
                multi_turn: false,
                unit_answers: BTreeMap::new(),
                set: None,
            });
        }
        QuestionBank::new(qs).unwrap()
    }

    fn full_form() -> SessionEvent {
        SessionEvent::FormSubmitted {
            form: QuestionForm { va_transcription: Some("7".into()), confidence: Some(4), own_answer: Some("7".into()) },
        }
    }

    #[test]
    fn low_score_plan_has_six_difficult_wrong_answers() {
        let bank = toy_bank();
        let plan = compile_series_plan(&bank, Condition::low_score(), 7).unwrap();
        plan.check(&bank).unwrap();
        assert_eq!(plan.wrong_answer_ids.len(), 6);
        assert!(plan.wrong_answer_ids.iter().all(|id| id.starts_with('h')));
        assert_eq!(plan, compile_series_plan(&bank, Condition::low_score(), 7).unwrap());
    }

    #[test]
    fn high_score_plan_has_no_wrong_answers() {
        let bank = toy_bank();
        for seed in 0..20 {
            let plan = compile_series_plan(&bank, Condition::high_score(), seed).unwrap();
            assert!(plan.wrong_answer_ids.is_empty());
            plan.check(&bank).unwrap();
        }
    }

    #[test]
    fn plan_ordering_rules() {
        let bank = toy_bank();
        for seed in 0..200 {
            let plan = compile_series_plan(&bank, Condition::low_score(), seed).unwrap();
            let d: Vec<bool> = plan.ordered_questions.iter().map(|q| q.starts_with('h')).collect();
            assert!(!d[0] && !d[1]);
            assert!(d.windows(4).all(|w| !w.iter().all(|x| *x)));
            for third in 0..3 {
                assert!(plan.wrong_answer_ids.iter().any(|w| (plan.position_of(w).unwrap() - 1) / 6 == third));
            }
        }
    }

    #[test]
    fn insufficient_bank() {
        let bank = QuestionBank::new(toy_bank().questions()[1..].to_vec()).unwrap();
        assert_eq!(
            compile_series_plan(&bank, Condition::high_score(), 1),
            Err(ProtocolError::InsufficientBank { easy: 5, difficult: 12 })
        );
    }

    #[test]
    fn question_invariants() {
        let mut q = toy_bank().questions()[6].clone();
        q.scripted_wrong_answer = Some(" ".into());
        assert_eq!(q.validate(), Err(QuestionError::DifficultWithoutWrongAnswer));
        let mut e = toy_bank().questions()[0].clone();
        e.scripted_wrong_answer = Some("8".into());
        assert_eq!(e.validate(), Err(QuestionError::EasyWithWrongAnswer));
        let issues = QuestionBank::new(vec![e.clone(), e]).unwrap_err();
        assert_eq!(issues.len(), 3);
        assert_eq!(issues[2].error, QuestionError::DuplicateId);
    }

    #[test]
    fn select_answer_follows_plan() {
        let bank = toy_bank();
        let plan = compile_series_plan(&bank, Condition::low_score(), 7).unwrap();
        for q in bank.questions() {
            let sel = select_va_answer(q, &plan).unwrap();
            if plan.wrong_answer_ids.contains(&q.id) {
                assert_eq!((sel.answer.text.as_str(), sel.was_scripted_wrong), ("1000 km", true));
            } else if q.difficulty == Difficulty::Difficult {
                assert_eq!((sel.answer.text.as_str(), sel.was_scripted_wrong), ("504 km", false));
            } else {
                assert_eq!((sel.answer.text.as_str(), sel.was_scripted_wrong), ("7", false));
            }
        }
        let mut stranger = bank.questions()[0].clone();
        stranger.id = "zz".into();
        assert_eq!(select_va_answer(&stranger, &plan), Err(ProtocolError::UnknownQuestion("zz".into())));
    }

    #[test]
    fn bias_intro_presents_first_question() {
        let bank = toy_bank();
        let plan = compile_series_plan(&bank, Condition::high_score(), 3).unwrap();
        let first = plan.ordered_questions[0].clone();
        let s = SessionState::new("s1", "p1", plan);
        let (s, d) = advance(&s, SessionEvent::IntakeCompleted).unwrap();
        assert_eq!(d, vec![Directive::PlayBiasMessage { anchor_stars: 4.9 }]);
        let (s, d) = advance(&s, SessionEvent::Acknowledged).unwrap();
        assert_eq!(s.phase, Phase::QuestionDialogue);
        assert_eq!(d, vec![Directive::PresentQuestion { position: 1, question_id: first }]);
    }

    #[test]
    fn checkpoint_only_at_six() {
        let bank = toy_bank();
        let plan = compile_series_plan(&bank, Condition::low_score(), 3).unwrap();
        let mut s = SessionState::new("s1", "p1", plan);
        s.phase = Phase::QuestionForm;
        s.question_index = 6;
        let (n, d) = advance(&s, full_form()).unwrap();
        assert_eq!(n.phase, Phase::CheckpointSurvey);
        assert!(matches!(d[1], Directive::OpenCheckpointSurvey { checkpoint: 6 }));
        s.question_index = 7;
        let (n, _) = advance(&s, full_form()).unwrap();
        assert_eq!((n.phase, n.question_index), (Phase::QuestionDialogue, 8));
    }

    #[test]
    fn form_needs_all_three_fields() {
        let bank = toy_bank();
        let plan = compile_series_plan(&bank, Condition::low_score(), 3).unwrap();
        let mut s = SessionState::new("s1", "p1", plan);
        s.phase = Phase::QuestionForm;
        s.question_index = 2;
        let missing = SessionEvent::FormSubmitted {
            form: QuestionForm { va_transcription: Some("x".into()), confidence: None, own_answer: Some("y".into()) },
        };
        assert_eq!(advance(&s, missing), Err(ProtocolError::MissingField("confidence")));
        let bad = SessionEvent::FormSubmitted {
            form: QuestionForm { va_transcription: Some("x".into()), confidence: Some(6), own_answer: Some("y".into()) },
        };
        assert_eq!(advance(&s, bad), Err(ProtocolError::OutOfRange("confidence")));
        let blank = SessionEvent::FormSubmitted {
            form: QuestionForm { va_transcription: Some("".into()), confidence: Some(3), own_answer: Some("y".into()) },
        };
        assert_eq!(advance(&s, blank), Err(ProtocolError::MissingField("va_transcription")));
    }

    #[test]
    fn illegal_events_are_reported_with_phase() {
        let bank = toy_bank();
        let plan = compile_series_plan(&bank, Condition::low_score(), 3).unwrap();
        let s = SessionState::new("s1", "p1", plan);
        assert_eq!(
            advance(&s, full_form()),
            Err(ProtocolError::IllegalEvent { phase: Phase::IntakeSurveys, event: "form_submitted" })
        );
    }

    #[test]
    fn explanation_requires_rating_first() {
        let bank = toy_bank();
        let plan = compile_series_plan(&bank, Condition::low_score(), 3).unwrap();
        let mut s = SessionState::new("s1", "p1", plan);
        s.phase = Phase::CheckpointSurvey;
        s.question_index = 6;
        let explain = SessionEvent::CheckpointExplained { explanation: "porque sí".into() };
        assert!(matches!(advance(&s, explain.clone()), Err(ProtocolError::IllegalEvent { .. })));
        let (s, d) = advance(&s, SessionEvent::CheckpointRated { stars: 2 }).unwrap();
        assert_eq!(d, vec![Directive::ShowAnchorReminder { anchor_stars: 1.4 }]);
        assert!(matches!(advance(&s, SessionEvent::CheckpointRated { stars: 3 }), Err(ProtocolError::IllegalEvent { .. })));
        assert_eq!(
            advance(&s, SessionEvent::CheckpointExplained { explanation: " ".into() }),
            Err(ProtocolError::MissingField("explanation"))
        );
        let (s, _) = advance(&s, explain).unwrap();
        assert_eq!((s.phase, s.question_index), (Phase::QuestionDialogue, 7));
    }

    #[test]
    fn full_series_directive_counts() {
        let bank = toy_bank();
        for (cond, expected_wrong) in [(Condition::low_score(), 6), (Condition::high_score(), 0)] {
            let plan = compile_series_plan(&bank, cond, 11).unwrap();
            let mut s = SessionState::new("s", "p", plan);
            let mut all = Vec::new();
            let mut push = |s: &SessionState, e| {
                let (n, d) = advance(s, e).unwrap();
                all.extend(d);
                n
            };
            s = push(&s, SessionEvent::IntakeCompleted);
            s = push(&s, SessionEvent::Acknowledged);
            while s.phase != Phase::Done {
                s = match s.phase {
                    Phase::QuestionDialogue => {
                        let n = push(&s, SessionEvent::UtteranceHandled);
                        push(&n, SessionEvent::AnswerDelivered)
                    }
                    Phase::QuestionForm => push(&s, full_form()),
                    Phase::CheckpointSurvey => {
                        let n = push(&s, SessionEvent::CheckpointRated { stars: 3 });
                        push(&n, SessionEvent::CheckpointExplained { explanation: "ok".into() })
                    }
                    Phase::FinalSurvey => push(&s, SessionEvent::FinalSubmitted),
                    p => panic!("unexpected {p}"),
                };
            }
            let wrong: Vec<_> = all
                .iter()
                .filter_map(|d| match d {
                    Directive::VaAnswer { question_id, scripted_wrong: true } => Some(question_id),
                    _ => None,
                })
                .collect();
            assert_eq!(wrong.len(), expected_wrong);
            assert!(wrong.iter().all(|q| q.starts_with('h')));
            let cps = all.iter().filter(|d| matches!(d, Directive::OpenCheckpointSurvey { .. })).count();
            let fin = all.iter().filter(|d| matches!(d, Directive::OpenFinalSurvey)).count();
            assert_eq!((cps, fin), (3, 1));
        }
    }

    #[test]
    fn counterbalancing_alternates() {
        assert_eq!(series_conditions(1)[0], ConditionKind::HighScore);
        assert_eq!(series_conditions(2)[0], ConditionKind::LowScore);
        assert_eq!(series_conditions(2)[1], ConditionKind::HighScore);
    }
}
