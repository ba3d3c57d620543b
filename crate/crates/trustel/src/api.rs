//! Request and response bodies of the HTTP API. Responses sent to subjects
//! and raters carry no ground truth: which answers were scripted wrong, the
//! plan's wrong-answer set and which stimulus is the low-score one stay
//! server-side.

use serde::{Deserialize, Serialize};
use trustel_core::annotation::Choice;
use trustel_core::survey::Answers;

use crate::store::Setting;

pub const API_PREFIX: &str = "/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSubject {
    #[serde(default = "default_setting")]
    pub setting: Setting,
    pub demographic: Answers,
    pub personality: Answers,
    pub familiarity: Answers,
}

fn default_setting() -> Setting {
    Setting::InLab
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCreated {
    pub subject_id: String,
    pub enrollment_order: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub token: String,
    pub series_index: u32,
    pub phase: String,
    pub anchor_stars: f64,
    pub bias_message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: String,
    pub prompt_text: String,
}

/// What the interface should show now.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentView {
    pub session_id: String,
    pub phase: String,
    /// 1-based position of the current question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub total_questions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<QuestionView>,
    /// Whether the assistant already gave its answer to this question.
    pub answer_given: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<usize>,
    /// The next input expected from the subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub awaiting: Option<String>,
    /// Shown only after the checkpoint star rating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_reminder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReply {
    pub clip_id: String,
    pub asr_failed: bool,
    /// False once the question's failure budget is spent; the subject
    /// should end the dialogue.
    pub retry_allowed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_text: Option<String>,
    /// Base64 WAV of the spoken reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_audio_wav: Option<String>,
    pub answer_given: bool,
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub trust_stars: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAccepted {
    pub checkpoint: usize,
    pub anchor_reminder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSubmission {
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub pair_id: String,
    pub a_url: String,
    pub b_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskList {
    pub rater_id: String,
    pub tasks: Vec<AnnotationTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSubmission {
    pub pair_id: Option<String>,
    pub rater_id: Option<String>,
    pub choice: Option<Choice>,
    pub confidence: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAccepted {
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsBuilt {
    pub created: usize,
    pub total: usize,
    pub skipped: Vec<SkippedSubject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSubject {
    pub subject_id: String,
    pub reason: String,
}

/// Key names that must never appear in a subject- or rater-facing body.
pub const HIDDEN_FIELDS: [&str; 3] = ["was_scripted_wrong", "wrong_answer_ids", "a_is_low_score"];

/// Every hidden field name found anywhere in a JSON value (keys or string
/// values).
pub fn hidden_fields_in(value: &serde_json::Value) -> Vec<String> {
    let mut found = Vec::new();
    let mut stack = vec![value];
    while let Some(v) = stack.pop() {
        match v {
            serde_json::Value::Object(map) => {
                for (k, child) in map {
                    if HIDDEN_FIELDS.contains(&k.as_str()) {
                        found.push(k.clone());
                    }
                    stack.push(child);
                }
            }
            serde_json::Value::Array(items) => stack.extend(items),
            serde_json::Value::String(s) => {
                found.extend(HIDDEN_FIELDS.iter().filter(|h| s.contains(*h)).map(|h| h.to_string()));
            }
            _ => {}
        }
    }
    found
}
