//! Scripted assistant: one dialogue domain per question.
//!
//! Subject utterances (ASR text) are normalized into tokens and matched
//! against deterministic token patterns. A pattern is a whitespace-separated
//! list of elements:
//!
//! * `word` – a literal token
//! * `(a|b|c)` – one of several tokens
//! * `[word]` – an optional token
//! * `*` or `*{min,max}` – a bounded run of arbitrary tokens (default 0..=10)
//!
//! Patterns must cover the whole utterance, so containment is written with
//! leading and trailing wildcards. Matching is a dynamic program over
//! (element, token) pairs and never backtracks.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WILDCARD_MIN: usize = 0;
pub const DEFAULT_WILDCARD_MAX: usize = 10;
/// Upper bound a pattern may request for a single wildcard.
pub const MAX_WILDCARD: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedUtterance {
    pub tokens: Vec<String>,
}

impl NormalizedUtterance {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Lowercases and folds vowel diacritics; `ñ` is kept as its own letter.
/// Returns `None` for characters that are not letters or digits.
fn fold_char(c: char) -> Option<char> {
    let folded = match c {
        'á' | 'à' | 'â' | 'ä' | 'ã' => 'a',
        'é' | 'è' | 'ê' | 'ë' => 'e',
        'í' | 'ì' | 'î' | 'ï' => 'i',
        'ó' | 'ò' | 'ô' | 'ö' | 'õ' => 'o',
        'ú' | 'ù' | 'û' | 'ü' => 'u',
        'ç' => 'c',
        other => other,
    };
    folded.is_alphanumeric().then_some(folded)
}

/// Lowercase, fold diacritics (except `ñ`), turn every non-alphanumeric
/// character into a token boundary.
pub fn normalize_text(raw: &str) -> NormalizedUtterance {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for c in raw.chars().flat_map(char::to_lowercase) {
        match fold_char(c) {
            Some(f) => cur.push(f),
            None if !cur.is_empty() => tokens.push(core::mem::take(&mut cur)),
            None => {}
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    NormalizedUtterance { tokens }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Element {
    Literal(String),
    Alternation(Vec<String>),
    Optional(String),
    Wildcard { min: usize, max: usize },
}

impl Element {
    fn accepts(&self, token: &str) -> bool {
        match self {
            Element::Literal(t) | Element::Optional(t) => t == token,
            Element::Alternation(ts) => ts.iter().any(|t| t == token),
            Element::Wildcard { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub elements: Vec<Element>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("syntax error at column {column}: expected {expected}")]
    Syntax { column: usize, expected: &'static str },
    #[error("pattern has no literal or alternation")]
    PureWildcard,
}

struct Cursor<'a> {
    chars: core::iter::Peekable<core::str::CharIndices<'a>>,
    column: usize,
}

impl Cursor<'_> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|(_, c)| *c)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next().map(|(_, c)| c);
        if c.is_some() {
            self.column += 1;
        }
        c
    }

    /// Column (1-based) of the next character.
    fn col(&self) -> usize {
        self.column + 1
    }

    fn err(&self, expected: &'static str) -> PatternError {
        PatternError::Syntax { column: self.col(), expected }
    }

    fn word(&mut self) -> Result<String, PatternError> {
        let mut w = String::new();
        while let Some(c) = self.peek() {
            let mut lower = c.to_lowercase();
            let Some(f) = lower.next().and_then(fold_char) else { break };
            w.push(f);
            self.bump();
        }
        if w.is_empty() {
            Err(self.err("token"))
        } else {
            Ok(w)
        }
    }

    fn number(&mut self) -> Result<usize, PatternError> {
        let mut n: usize = 0;
        let mut any = false;
        while let Some(d) = self.peek().and_then(|c| c.to_digit(10)) {
            n = n.saturating_mul(10).saturating_add(d as usize);
            any = true;
            self.bump();
        }
        if any {
            Ok(n)
        } else {
            Err(self.err("number"))
        }
    }

    fn expect(&mut self, c: char, what: &'static str) -> Result<(), PatternError> {
        if self.peek() == Some(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(what))
        }
    }
}

/// Parses the pattern DSL. Errors carry 1-based character columns.
pub fn parse_pattern(source: &str) -> Result<Pattern, PatternError> {
    let mut cur = Cursor { chars: source.char_indices().peekable(), column: 0 };
    let mut elements = Vec::new();
    loop {
        while cur.peek().is_some_and(char::is_whitespace) {
            cur.bump();
        }
        let Some(c) = cur.peek() else { break };
        let element = match c {
            '*' => {
                cur.bump();
                if cur.peek() == Some('{') {
                    cur.bump();
                    let start = cur.col();
                    let min = cur.number()?;
                    cur.expect(',', "','")?;
                    let max = cur.number()?;
                    cur.expect('}', "'}'")?;
                    if min > max || max > MAX_WILDCARD {
                        return Err(PatternError::Syntax { column: start, expected: "bounds min <= max <= 32" });
                    }
                    Element::Wildcard { min, max }
                } else {
                    Element::Wildcard { min: DEFAULT_WILDCARD_MIN, max: DEFAULT_WILDCARD_MAX }
                }
            }
            '(' => {
                cur.bump();
                let mut alts = vec![cur.word()?];
                while cur.peek() == Some('|') {
                    cur.bump();
                    alts.push(cur.word()?);
                }
                cur.expect(')', "'|' or ')'")?;
                Element::Alternation(alts)
            }
            '[' => {
                cur.bump();
                let w = cur.word()?;
                cur.expect(']', "']'")?;
                Element::Optional(w)
            }
            _ => match cur.word() {
                Ok(w) => Element::Literal(w),
                Err(_) => return Err(cur.err("literal, '(', '[' or '*'")),
            },
        };
        elements.push(element);
        match cur.peek() {
            None => break,
            Some(c) if c.is_whitespace() => {}
            Some(_) => return Err(cur.err("whitespace")),
        }
    }
    if !elements.iter().any(|e| matches!(e, Element::Literal(_) | Element::Alternation(_))) {
        return Err(PatternError::PureWildcard);
    }
    Ok(Pattern { elements })
}

impl Pattern {
    /// Literal tokens plus alternations.
    pub fn specificity(&self) -> usize {
        self.elements.iter().filter(|e| matches!(e, Element::Literal(_) | Element::Alternation(_))).count()
    }

    /// Whole-utterance match.
    pub fn matches(&self, tokens: &[String]) -> bool {
        let n = tokens.len();
        // reach[j]: the first i elements can consume exactly j tokens
        let mut reach = vec![false; n + 1];
        reach[0] = true;
        for e in &self.elements {
            let mut next = vec![false; n + 1];
            for j in (0..=n).filter(|&j| reach[j]) {
                match e {
                    Element::Wildcard { min, max } => {
                        for k in *min..=(*max).min(n - j) {
                            next[j + k] = true;
                        }
                    }
                    Element::Optional(_) => {
                        next[j] = true;
                        if j < n && e.accepts(&tokens[j]) {
                            next[j + 1] = true;
                        }
                    }
                    Element::Literal(_) | Element::Alternation(_) => {
                        if j < n && e.accepts(&tokens[j]) {
                            next[j + 1] = true;
                        }
                    }
                }
            }
            reach = next;
        }
        reach[n]
    }
}

/// Intent kinds without payload; used to key templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    AskAnswer,
    ProvideUnit,
    Repeat,
    Affirm,
    Deny,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum IntentLabel {
    AskAnswer,
    ProvideUnit(String),
    Repeat,
    Affirm,
    Deny,
    Other,
}

impl IntentLabel {
    pub fn kind(&self) -> IntentKind {
        match self {
            IntentLabel::AskAnswer => IntentKind::AskAnswer,
            IntentLabel::ProvideUnit(_) => IntentKind::ProvideUnit,
            IntentLabel::Repeat => IntentKind::Repeat,
            IntentLabel::Affirm => IntentKind::Affirm,
            IntentLabel::Deny => IntentKind::Deny,
            IntentLabel::Other => IntentKind::Other,
        }
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntentLabel::AskAnswer => f.write_str("ask_answer"),
            IntentLabel::ProvideUnit(u) => write!(f, "provide_unit({u})"),
            IntentLabel::Repeat => f.write_str("repeat"),
            IntentLabel::Affirm => f.write_str("affirm"),
            IntentLabel::Deny => f.write_str("deny"),
            IntentLabel::Other => f.write_str("other"),
        }
    }
}

impl FromStr for IntentLabel {
    type Err = DialogueError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ask_answer" => IntentLabel::AskAnswer,
            "repeat" => IntentLabel::Repeat,
            "affirm" => IntentLabel::Affirm,
            "deny" => IntentLabel::Deny,
            "other" => IntentLabel::Other,
            _ => {
                let unit = s
                    .strip_prefix("provide_unit(")
                    .and_then(|r| r.strip_suffix(')'))
                    .filter(|u| !u.is_empty() && u.chars().all(|c| fold_char(c) == Some(c)))
                    .ok_or_else(|| DialogueError::UnknownIntent(s.to_owned()))?;
                IntentLabel::ProvideUnit(unit.to_owned())
            }
        })
    }
}

impl TryFrom<String> for IntentLabel {
    type Error = DialogueError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<IntentLabel> for String {
    fn from(i: IntentLabel) -> String {
        i.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub source: String,
    pub pattern: Pattern,
    pub intent: IntentLabel,
    pub specificity: usize,
}

impl Rule {
    pub fn new(source: &str, intent: IntentLabel) -> Result<Self, PatternError> {
        let pattern = parse_pattern(source)?;
        let specificity = pattern.specificity();
        Ok(Rule { source: source.to_owned(), pattern, intent, specificity })
    }
}

/// Intent of the matching rule with the greatest specificity; ties go to
/// the rule declared first.
pub fn match_rules<'r>(utterance: &NormalizedUtterance, rules: &'r [Rule]) -> Option<&'r IntentLabel> {
    let mut best: Option<&Rule> = None;
    for rule in rules.iter().filter(|r| r.pattern.matches(&utterance.tokens)) {
        if best.is_none_or(|b| rule.specificity > b.specificity) {
            best = Some(rule);
        }
    }
    best.map(|r| &r.intent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKey {
    Initial,
    AwaitClarification,
    Answered,
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateKey::Initial => "initial",
            StateKey::AwaitClarification => "await_clarification",
            StateKey::Answered => "answered",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueState {
    Initial,
    AwaitClarification(String),
    Answered,
}

impl DialogueState {
    pub fn key(&self) -> StateKey {
        match self {
            DialogueState::Initial => StateKey::Initial,
            DialogueState::AwaitClarification(_) => StateKey::AwaitClarification,
            DialogueState::Answered => StateKey::Answered,
        }
    }
}

/// The answer the assistant gives for the current question, with per-unit
/// variants for questions that ask which unit to use.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerText {
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub unit_variants: BTreeMap<String, String>,
}

impl AnswerText {
    pub fn plain(text: &str) -> Self {
        AnswerText { text: text.to_owned(), unit_variants: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDefinition {
    pub pattern: String,
    pub intent: IntentLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDefinition {
    #[serde(default)]
    pub rules: Vec<RuleDefinition>,
    #[serde(default)]
    pub templates: BTreeMap<IntentKind, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

/// Serialized form of a domain, one document per question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDefinition {
    pub domain_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clarification_slot: Option<String>,
    pub fallback_text: String,
    pub states: BTreeMap<StateKey, StateDefinition>,
    /// Utterances that should lead the domain to the answer; used by tests
    /// and the bank linter.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub happy_path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DialogueError {
    #[error("unknown intent `{0}`")]
    UnknownIntent(String),
    #[error("state `{state}` rule {rule}: {error}")]
    Pattern { state: StateKey, rule: usize, error: PatternError },
    #[error("no template for intent `{intent:?}` in state `{state}`")]
    MissingTemplate { state: StateKey, intent: IntentKind },
    #[error("domain `{domain}`: {message}")]
    InvalidDomain { domain: String, message: String },
    #[error("state `{0}` is not part of this domain")]
    UnknownState(StateKey),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueDomain {
    pub domain_id: String,
    pub clarification_slot: Option<String>,
    rules: BTreeMap<StateKey, Vec<Rule>>,
    templates: BTreeMap<(StateKey, IntentKind), String>,
    fallbacks: BTreeMap<StateKey, String>,
    pub happy_path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub response: String,
    pub next_state: DialogueState,
    /// True when this step spoke the question's answer for the first time.
    pub delivered_answer: bool,
}

fn render(template: &str, answer: &str, unit: Option<&str>) -> String {
    let out = template.replace("{answer}", answer);
    match unit {
        Some(u) => out.replace("{unit}", u),
        None => out,
    }
}

impl DialogueDomain {
    /// Compiles and validates a definition: patterns parse, every rule's
    /// intent has a template in its state (the repeat intent re-emits the
    /// last response instead), clarification states exist exactly when a
    /// slot is declared, and the answer is reachable.
    pub fn compile(def: &DomainDefinition) -> Result<Self, DialogueError> {
        let invalid = |message: &str| DialogueError::InvalidDomain {
            domain: def.domain_id.clone(),
            message: message.to_owned(),
        };
        if def.domain_id.trim().is_empty() {
            return Err(invalid("empty domain_id"));
        }
        if def.fallback_text.trim().is_empty() {
            return Err(invalid("empty fallback_text"));
        }
        for required in [StateKey::Initial, StateKey::Answered] {
            if !def.states.contains_key(&required) {
                return Err(invalid(&alloc::format!("missing state `{required}`")));
            }
        }
        let has_clarify_state = def.states.contains_key(&StateKey::AwaitClarification);
        if def.clarification_slot.is_some() != has_clarify_state {
            return Err(invalid("await_clarification state and clarification_slot must come together"));
        }
        let mut rules = BTreeMap::new();
        let mut templates = BTreeMap::new();
        let mut fallbacks = BTreeMap::new();
        for (&state, sd) in &def.states {
            let mut compiled = Vec::with_capacity(sd.rules.len());
            for (i, rd) in sd.rules.iter().enumerate() {
                let rule = Rule::new(&rd.pattern, rd.intent.clone())
                    .map_err(|error| DialogueError::Pattern { state, rule: i, error })?;
                let kind = rule.intent.kind();
                if kind != IntentKind::Repeat && !sd.templates.contains_key(&kind) {
                    return Err(DialogueError::MissingTemplate { state, intent: kind });
                }
                compiled.push(rule);
            }
            for (&kind, text) in &sd.templates {
                templates.insert((state, kind), text.clone());
            }
            rules.insert(state, compiled);
            fallbacks.insert(state, sd.fallback.clone().unwrap_or_else(|| def.fallback_text.clone()));
        }
        let has_rule = |state: StateKey, kind: IntentKind| {
            rules.get(&state).is_some_and(|rs: &Vec<Rule>| rs.iter().any(|r| r.intent.kind() == kind))
        };
        if !has_rule(StateKey::Initial, IntentKind::AskAnswer) {
            return Err(invalid("initial state has no ask_answer rule"));
        }
        if def.clarification_slot.is_some() && !has_rule(StateKey::AwaitClarification, IntentKind::ProvideUnit) {
            return Err(invalid("await_clarification state has no provide_unit rule"));
        }
        Ok(DialogueDomain {
            domain_id: def.domain_id.clone(),
            clarification_slot: def.clarification_slot.clone(),
            rules,
            templates,
            fallbacks,
            happy_path: def.happy_path.clone(),
        })
    }

    pub fn has_clarification(&self) -> bool {
        self.clarification_slot.is_some()
    }

    pub fn rules(&self, state: StateKey) -> &[Rule] {
        self.rules.get(&state).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn fallback(&self, state: StateKey) -> &str {
        &self.fallbacks[&state]
    }

    pub fn template(&self, state: StateKey, kind: IntentKind) -> Option<&str> {
        self.templates.get(&(state, kind)).map(String::as_str)
    }

    pub fn classify(&self, state: &DialogueState, utterance: &NormalizedUtterance) -> Option<IntentLabel> {
        match_rules(utterance, self.rules(state.key())).cloned()
    }

    /// Replays the happy path and reports the number of turns needed to
    /// reach the answer, if it is reached within `max_turns`.
    pub fn happy_path_turns(&self, answer: &AnswerText, max_turns: usize) -> Option<usize> {
        let mut session = DialogueSession::default();
        for (i, utt) in self.happy_path.iter().take(max_turns).enumerate() {
            session.respond(self, utt, answer).ok()?;
            if session.state == DialogueState::Answered {
                return Some(i + 1);
            }
        }
        None
    }
}

/// One dialogue step. `intent = None` means no rule matched.
pub fn step(
    domain: &DialogueDomain,
    state: &DialogueState,
    intent: Option<&IntentLabel>,
    answer: &AnswerText,
    last_response: Option<&str>,
) -> Result<StepOutcome, DialogueError> {
    let key = state.key();
    if !domain.fallbacks.contains_key(&key) {
        return Err(DialogueError::UnknownState(key));
    }
    let stay = |response: String| StepOutcome { response, next_state: state.clone(), delivered_answer: false };
    let fallback = || stay(domain.fallback(key).to_owned());
    let template = |kind: IntentKind| {
        domain.template(key, kind).ok_or(DialogueError::MissingTemplate { state: key, intent: kind })
    };
    let Some(intent) = intent else { return Ok(fallback()) };
    Ok(match (intent, state) {
        (IntentLabel::Repeat, _) => match last_response {
            Some(last) => stay(last.to_owned()),
            None => fallback(),
        },
        (IntentLabel::AskAnswer, DialogueState::Initial) => match &domain.clarification_slot {
            Some(slot) => StepOutcome {
                response: render(template(IntentKind::AskAnswer)?, &answer.text, None),
                next_state: DialogueState::AwaitClarification(slot.clone()),
                delivered_answer: false,
            },
            None => StepOutcome {
                response: render(template(IntentKind::AskAnswer)?, &answer.text, None),
                next_state: DialogueState::Answered,
                delivered_answer: true,
            },
        },
        (IntentLabel::ProvideUnit(unit), DialogueState::AwaitClarification(_)) => {
            let text = answer.unit_variants.get(unit).unwrap_or(&answer.text);
            StepOutcome {
                response: render(template(IntentKind::ProvideUnit)?, text, Some(unit)),
                next_state: DialogueState::Answered,
                delivered_answer: true,
            }
        }
        (other, _) => match domain.template(key, other.kind()) {
            Some(t) => {
                let (text, unit) = match other {
                    IntentLabel::ProvideUnit(u) => (answer.unit_variants.get(u).unwrap_or(&answer.text), Some(u.as_str())),
                    _ => (&answer.text, None),
                };
                stay(render(t, text, unit))
            }
            None => fallback(),
        },
    })
}

/// Per-question dialogue progress: current state and the last response for
/// repeat requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub state: DialogueState,
    pub last_response: Option<String>,
}

impl Default for DialogueSession {
    fn default() -> Self {
        DialogueSession { state: DialogueState::Initial, last_response: None }
    }
}

impl DialogueSession {
    pub fn respond(&mut self, domain: &DialogueDomain, raw: &str, answer: &AnswerText) -> Result<StepOutcome, DialogueError> {
        let utterance = normalize_text(raw);
        let intent = domain.classify(&self.state, &utterance);
        let outcome = step(domain, &self.state, intent.as_ref(), answer, self.last_response.as_deref())?;
        self.state = outcome.next_state.clone();
        self.last_response = Some(outcome.response.clone());
        Ok(outcome)
    }
}
