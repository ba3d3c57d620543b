//! Simulated subjects and raters driving the HTTP API in-process.
//!
//! Each subject has a persona, a baseline trust level, a baseline answer
//! confidence and a speaking rate. Subjects only see what the API shows
//! them: they infer the condition from the announced score and judge an
//! answer wrong by comparing it with what they know to be correct. Uploaded
//! audio is noise whose length matches a synthetic word alignment at the
//! subject's rate; the transcript is registered with the mock transcriber
//! unless a transcription failure is drawn.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower::ServiceExt;
use trustel_core::analysis::{count_syllables_es, Alignment, Segment};
use trustel_core::annotation::Choice;
use trustel_core::audio::{decode_wav, encode_wav, AudioClip};
use trustel_core::dialogue::normalize_text;
use trustel_core::protocol::{ConditionKind, Difficulty, Phase, Question};
use trustel_core::seeded_rng;
use trustel_core::survey::EMOTIONS;

use crate::api::*;
use crate::bank::Bank;
use crate::config::{derive_seed, AdapterChoice, Config, SimClock};
use crate::data::{build_state, DataDir, DataError};
use crate::service::{router, AppState};
use crate::speech::MockAsr;
use crate::store::Setting;

/// 2026-01-01T00:00:00Z; simulated runs start here.
pub const SIM_EPOCH_MS: u64 = 1_767_225_600_000;
/// Samples hashed to recognise which uploaded clip opens a stimulus.
const HEAD_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persona {
    /// Asks the question and fills in the form.
    Compliant,
    /// Asks for a repetition after answers it believes wrong.
    Skeptical,
    /// Sometimes opens with something off-topic before asking.
    Hesitant,
}

const PERSONAS: [Persona; 3] = [Persona::Compliant, Persona::Skeptical, Persona::Hesitant];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    /// In-lab subjects completing both series.
    pub two_series_subjects: usize,
    /// Remote subjects completing one series.
    pub one_series_subjects: usize,
    /// Confidence points subtracted on answers the subject believes wrong.
    pub confidence_drop: f64,
    /// Mean trust-star gap between the high- and low-score series.
    pub trust_drop: f64,
    pub trust_noise_sd: f64,
    pub base_syllable_rate: f64,
    pub subject_rate_sd: f64,
    pub rate_jitter_sd: f64,
    /// Syllables per second added in the high-score series of the first
    /// `shifted_subjects` two-series subjects.
    pub rate_shift_high: f64,
    pub shifted_subjects: usize,
    pub asr_failure_rate: f64,
    /// Short noise bursts instead of alignment-length audio; no alignments
    /// are written.
    pub compact_audio: bool,
    pub sample_rate: u32,
    pub raters: usize,
    /// Probability that a rater picks the low-score sequence.
    pub rater_accuracy: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            two_series_subjects: 10,
            one_series_subjects: 0,
            confidence_drop: 1.0,
            trust_drop: 1.5,
            trust_noise_sd: 0.4,
            base_syllable_rate: 4.5,
            subject_rate_sd: 0.4,
            rate_jitter_sd: 0.3,
            rate_shift_high: 0.0,
            shifted_subjects: 0,
            asr_failure_rate: 0.02,
            compact_audio: false,
            sample_rate: 8_000,
            raters: 0,
            rater_accuracy: 0.6,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{method} {uri} returned {status}: {body}")]
    Api { method: String, uri: String, status: u16, body: String },
    #[error("{uri}: {message}")]
    Decode { uri: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTrace {
    pub position: usize,
    pub question_id: String,
    pub difficulty: Difficulty,
    /// Whether the answer heard differed from the correct one; `None` when
    /// no answer was delivered.
    pub heard_wrong: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTrace {
    pub subject_id: String,
    pub session_id: String,
    pub persona: Persona,
    /// As inferred from the announced score.
    pub condition: ConditionKind,
    pub questions: Vec<QuestionTrace>,
    /// Positions after which a checkpoint survey was presented.
    pub checkpoints: Vec<usize>,
    pub final_survey: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub series: Vec<SeriesTrace>,
    pub requests: usize,
    pub utterances: usize,
    pub asr_failures: usize,
    pub skipped_dialogues: usize,
    pub pairs_created: usize,
    pub annotation_responses: usize,
    /// `uri: field` for every hidden field seen in a response body.
    pub leaks: Vec<String>,
}

struct Client {
    router: Router,
    admin: Option<String>,
    requests: usize,
    leaks: Vec<String>,
}

impl Client {
    async fn send(
        &mut self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Option<(&'static str, Vec<u8>)>,
    ) -> Result<(StatusCode, Vec<u8>), SimError> {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some((ct, bytes)) => req.header(header::CONTENT_TYPE, ct).body(Body::from(bytes)),
            None => req.body(Body::empty()),
        }
        .map_err(|e| SimError::Invalid(e.to_string()))?;
        let resp = self.router.clone().oneshot(req).await.map_err(|e| SimError::Invalid(e.to_string()))?;
        self.requests += 1;
        let status = resp.status();
        let is_json = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("application/json"));
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
            .await
            .map_err(|e| SimError::Decode { uri: uri.into(), message: e.to_string() })?
            .to_vec();
        if is_json {
            if let Ok(v) = serde_json::from_slice::<serde_json::Value>(&bytes) {
                self.leaks.extend(hidden_fields_in(&v).into_iter().map(|f| format!("{uri}: {f}")));
            }
        }
        Ok((status, bytes))
    }

    async fn call<T: DeserializeOwned>(
        &mut self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Option<(&'static str, Vec<u8>)>,
    ) -> Result<T, SimError> {
        let (status, bytes) = self.send(method.clone(), uri, token, body).await?;
        if !status.is_success() {
            return Err(SimError::Api {
                method: method.to_string(),
                uri: uri.into(),
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| SimError::Decode { uri: uri.into(), message: e.to_string() })
    }

    async fn post_json<T: DeserializeOwned>(&mut self, uri: &str, token: Option<&str>, body: &serde_json::Value) -> Result<T, SimError> {
        let bytes = serde_json::to_vec(body).expect("json");
        self.call(Method::POST, uri, token, Some(("application/json", bytes))).await
    }
}

#[derive(Debug, Clone)]
struct Subject {
    persona: Persona,
    trust: f64,
    confidence: f64,
    rate: f64,
    shifted: bool,
    setting: Setting,
    series: usize,
}

struct Sim {
    client: Client,
    bank: Arc<Bank>,
    asr: Arc<MockAsr>,
    cfg: SimConfig,
    alignments: Option<PathBuf>,
    /// Hash of a clip's first samples to the condition it was recorded in.
    clip_conditions: HashMap<u64, ConditionKind>,
    report: SimReport,
}

fn head_hash(samples: &[i16]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    samples[..samples.len().min(HEAD_SAMPLES)].hash(&mut h);
    h.finish()
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd.max(0.0)).map(|n| n.sample(rng)).unwrap_or(mean)
}

fn likert(x: f64) -> i64 {
    (x.round() as i64).clamp(1, 5)
}

fn contains_tokens(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Whether `reply` states one of the question's correct answers.
pub fn states_correct_answer(q: &Question, reply: &str) -> bool {
    let heard = normalize_text(reply).tokens;
    std::iter::once(&q.correct_answer)
        .chain(q.unit_answers.values().map(|u| &u.correct))
        .any(|c| contains_tokens(&heard, &normalize_text(c).tokens))
}

/// Words of an utterance as they would be labelled in an alignment.
fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// A word alignment of `text` spoken at `rate` syllables per second, with
/// per-word timing jitter and occasional pauses.
pub fn synth_alignment(text: &str, rate: f64, rng: &mut ChaCha8Rng) -> Option<Alignment> {
    let ws = words(text);
    if ws.is_empty() {
        return None;
    }
    let round = |x: f64| (x * 1000.0).round() / 1000.0;
    let mut t = round(rng.random_range(0.1..0.3));
    let mut segs = vec![Segment::pause(0.0, t)];
    for (i, w) in ws.iter().enumerate() {
        if i > 0 && rng.random_bool(0.15) {
            let end = round(t + rng.random_range(0.1..0.4));
            segs.push(Segment::pause(t, end));
            t = end;
        }
        let dur = count_syllables_es(w) as f64 / rate * rng.random_range(0.85..1.15);
        let end = round(t + dur.max(0.05));
        segs.push(Segment::word(w, t, end));
        t = end;
    }
    let end = round(t + rng.random_range(0.1..0.3));
    segs.push(Segment::pause(t, end));
    Alignment::new(segs).ok()
}

fn noise(seconds: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> AudioClip {
    let n = ((seconds * sample_rate as f64).round() as usize).max(HEAD_SAMPLES);
    AudioClip::new((0..n).map(|_| rng.random_range(-1500..=1500)).collect(), sample_rate)
}

const OPENERS: [&str; 3] = ["Hola, ¿me escuchás?", "Eh, buenas", "Bueno, a ver"];
const PREFIXES: [&str; 3] = ["Che,", "Decime,", "Una pregunta,"];
const REPEAT: &str = "¿Podés repetirlo?";

impl Sim {
    async fn speak(
        &mut self,
        session: &SessionCreated,
        subject: &Subject,
        condition: ConditionKind,
        text: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<UtteranceReply, SimError> {
        let mut rate = subject.rate + normal(rng, 0.0, self.cfg.rate_jitter_sd);
        if subject.shifted && condition == ConditionKind::HighScore {
            rate += self.cfg.rate_shift_high;
        }
        let rate = rate.max(1.0);
        let alignment = synth_alignment(text, rate, rng).ok_or_else(|| SimError::Invalid(format!("nothing to say in `{text}`")))?;
        let clip = if self.cfg.compact_audio {
            noise(0.05, self.cfg.sample_rate, rng)
        } else {
            let end = alignment.segments().last().map(|s| s.end_s).unwrap_or(0.0);
            noise(end, self.cfg.sample_rate, rng)
        };
        let fail = rng.random_bool(self.cfg.asr_failure_rate);
        if !fail {
            self.asr.register(&clip, text);
        }
        self.clip_conditions.insert(head_hash(&clip.samples), condition);
        let uri = format!("{API_PREFIX}/sessions/{}/utterance", session.session_id);
        let reply: UtteranceReply =
            self.client.call(Method::POST, &uri, Some(&session.token), Some(("audio/wav", encode_wav(&clip)))).await?;
        self.report.utterances += 1;
        if reply.asr_failed {
            self.report.asr_failures += 1;
        }
        if let (false, Some(dir)) = (self.cfg.compact_audio, &self.alignments) {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{}.tsv", reply.clip_id)), alignment.to_tsv())?;
        }
        Ok(reply)
    }

    /// Speaks until transcribed; `None` once the retry budget is spent.
    async fn say(
        &mut self,
        session: &SessionCreated,
        subject: &Subject,
        condition: ConditionKind,
        text: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<UtteranceReply>, SimError> {
        loop {
            let r = self.speak(session, subject, condition, text, rng).await?;
            if !r.asr_failed {
                return Ok(Some(r));
            }
            if !r.retry_allowed {
                return Ok(None);
            }
        }
    }

    async fn run_question(
        &mut self,
        session: &SessionCreated,
        subject: &Subject,
        condition: ConditionKind,
        view: &CurrentView,
        rng: &mut ChaCha8Rng,
    ) -> Result<(QuestionTrace, CurrentView), SimError> {
        let qv = view.question.as_ref().ok_or_else(|| SimError::Invalid("question phase without a question".into()))?;
        let bank = self.bank.clone();
        let q = bank.question(&qv.id).ok_or_else(|| SimError::Invalid(format!("unknown question {}", qv.id)))?;
        let domain = bank.domain(&q.domain_id).ok_or_else(|| SimError::Invalid(format!("unknown domain {}", q.domain_id)))?;

        let mut script: Vec<String> = Vec::new();
        if subject.persona == Persona::Hesitant && rng.random_bool(0.5) {
            script.push(OPENERS.choose(rng).expect("openers").to_string());
        }
        for (i, u) in domain.happy_path.iter().enumerate() {
            if i == 0 && rng.random_bool(0.3) {
                script.push(format!("{} {}", PREFIXES.choose(rng).expect("prefixes"), u));
            } else {
                script.push(u.clone());
            }
        }
        let mut heard: Option<String> = None;
        let mut gave_up = false;
        for u in &script {
            match self.say(session, subject, condition, u, rng).await? {
                Some(r) => {
                    if r.answer_given && heard.is_none() {
                        heard = r.reply_text;
                        break;
                    }
                }
                None => {
                    gave_up = true;
                    break;
                }
            }
        }
        let heard_wrong = heard.as_deref().map(|h| !states_correct_answer(q, h));
        let base = format!("{API_PREFIX}/sessions/{}", session.session_id);
        if heard.is_none() {
            if !gave_up {
                tracing::warn!(question = q.id, "happy path did not reach the answer");
            }
            self.report.skipped_dialogues += 1;
            let _: CurrentView = self.client.call(Method::POST, &format!("{base}/end-dialogue"), Some(&session.token), None).await?;
        } else if heard_wrong == Some(true) && subject.persona == Persona::Skeptical && rng.random_bool(0.7) {
            self.say(session, subject, condition, REPEAT, rng).await?;
        }

        let doubt = if heard_wrong == Some(true) { self.cfg.confidence_drop } else { 0.0 };
        let confidence = likert(normal(rng, subject.confidence, 0.5) - doubt);
        let own_answer = match (q.difficulty, heard_wrong, &heard) {
            (Difficulty::Easy, _, _) => q.correct_answer.clone(),
            (_, Some(true), _) if subject.persona == Persona::Skeptical => "No sé".into(),
            (_, _, Some(h)) => h.clone(),
            _ => "No sé".into(),
        };
        let form = serde_json::json!({
            "va_transcription": heard.clone().unwrap_or_else(|| "No respondió".into()),
            "confidence": confidence,
            "own_answer": own_answer,
        });
        let next: CurrentView = self.client.post_json(&format!("{base}/question-form"), Some(&session.token), &form).await?;
        let trace = QuestionTrace {
            position: view.position.unwrap_or(0),
            question_id: q.id.clone(),
            difficulty: q.difficulty,
            heard_wrong,
        };
        Ok((trace, next))
    }

    async fn run_series(
        &mut self,
        subject_id: &str,
        subject: &Subject,
        rng: &mut ChaCha8Rng,
    ) -> Result<SeriesTrace, SimError> {
        let session: SessionCreated = self
            .client
            .call(Method::POST, &format!("{API_PREFIX}/subjects/{subject_id}/sessions"), None, None)
            .await?;
        let condition = if session.anchor_stars < 3.0 { ConditionKind::LowScore } else { ConditionKind::HighScore };
        let base = format!("{API_PREFIX}/sessions/{}", session.session_id);
        let token = Some(session.token.as_str());
        let mut trace = SeriesTrace {
            subject_id: subject_id.into(),
            session_id: session.session_id.clone(),
            persona: subject.persona,
            condition,
            questions: Vec::new(),
            checkpoints: Vec::new(),
            final_survey: false,
        };
        let mut view: CurrentView = self.client.call(Method::POST, &format!("{base}/acknowledge"), token, None).await?;
        let shift = self.cfg.trust_drop / 2.0;
        let trust_mean = match condition {
            ConditionKind::LowScore => subject.trust - shift,
            ConditionKind::HighScore => subject.trust + shift,
        };
        loop {
            let phase = view.phase.as_str();
            if phase == Phase::QuestionDialogue.as_str() {
                let (q, next) = self.run_question(&session, subject, condition, &view, rng).await?;
                trace.questions.push(q);
                view = next;
            } else if phase == Phase::CheckpointSurvey.as_str() {
                trace.checkpoints.push(view.checkpoint.unwrap_or(0));
                let stars = likert(normal(rng, trust_mean, self.cfg.trust_noise_sd));
                let _: RatingAccepted =
                    self.client.post_json(&format!("{base}/surveys/evaluation-rating"), token, &serde_json::json!({ "trust_stars": stars })).await?;
                let why = if stars >= 3 { "Respondió bien casi todo" } else { "Se equivocó en varias respuestas" };
                view = self
                    .client
                    .post_json(&format!("{base}/surveys/evaluation-explanation"), token, &serde_json::json!({ "explanation": why }))
                    .await?;
            } else if phase == Phase::FinalSurvey.as_str() {
                trace.final_survey = true;
                let mut answers = serde_json::Map::new();
                for f in ["usefulness", "frustration", "trust"].into_iter().chain(EMOTIONS) {
                    answers.insert(f.into(), rng.random_range(1..=5).into());
                }
                answers.insert("trust".into(), likert(normal(rng, trust_mean, self.cfg.trust_noise_sd)).into());
                view = self.client.post_json(&format!("{base}/surveys/final"), token, &answers.into()).await?;
            } else if phase == Phase::Done.as_str() {
                break;
            } else {
                return Err(SimError::Invalid(format!("unexpected phase {phase}")));
            }
        }
        Ok(trace)
    }

    fn intake(&self, subject: &Subject, rng: &mut ChaCha8Rng) -> serde_json::Value {
        let items: serde_json::Map<String, serde_json::Value> =
            (1..=15).map(|i| (format!("item_{i}"), rng.random_range(1..=5).into())).collect();
        serde_json::json!({
            "setting": subject.setting,
            "demographic": {
                "gender": *["female", "male", "other", "no_reply"].choose(rng).expect("options"),
                "age": rng.random_range(18..=65),
                "birthplace": *["Buenos Aires", "Córdoba", "Rosario", "Montevideo"].choose(rng).expect("options"),
                "first_language": "español",
            },
            "personality": items,
            "familiarity": {
                "assistant_use_frequency": rng.random_range(1..=5),
                "assistant_trust": rng.random_range(1..=5),
                "digital_systems_trust": rng.random_range(1..=5),
                "owns_smart_speaker": *["yes", "no"].choose(rng).expect("options"),
            },
        })
    }

    async fn run_raters(&mut self, rng_seed: u64) -> Result<(), SimError> {
        let built: PairsBuilt = self.client.call(Method::POST, &format!("{API_PREFIX}/admin/annotation/pairs"), self.client.admin.clone().as_deref(), None).await?;
        self.report.pairs_created = built.created;
        let mut a_is_low: HashMap<String, bool> = HashMap::new();
        for r in 0..self.cfg.raters {
            let rater = format!("R{:02}", r + 1);
            let mut rng = seeded_rng(derive_seed(rng_seed, &format!("rater/{rater}")));
            let list: TaskList = self.client.call(Method::GET, &format!("{API_PREFIX}/annotation/tasks?rater={rater}"), None, None).await?;
            for task in list.tasks {
                let low = match a_is_low.get(&task.pair_id) {
                    Some(v) => *v,
                    None => {
                        let (status, bytes) = self.client.send(Method::GET, &task.a_url, None, None).await?;
                        if !status.is_success() {
                            return Err(SimError::Api { method: "GET".into(), uri: task.a_url, status: status.as_u16(), body: String::new() });
                        }
                        let clip = decode_wav(&bytes).map_err(|e| SimError::Decode { uri: task.a_url.clone(), message: e.to_string() })?;
                        let cond = self.clip_conditions.get(&head_hash(&clip.samples)).copied().ok_or_else(|| {
                            SimError::Invalid(format!("stimulus {} does not start with a known clip", task.pair_id))
                        })?;
                        let v = cond == ConditionKind::LowScore;
                        a_is_low.insert(task.pair_id.clone(), v);
                        v
                    }
                };
                let picks_low = rng.random_bool(self.cfg.rater_accuracy);
                let choice = if picks_low == low { Choice::A } else { Choice::B };
                let body = serde_json::json!({
                    "pair_id": task.pair_id,
                    "rater_id": rater,
                    "choice": choice,
                    "confidence": rng.random_range(2..=5),
                });
                let _: ResponseAccepted = self.client.post_json(&format!("{API_PREFIX}/annotation/responses"), None, &body).await?;
                self.report.annotation_responses += 1;
            }
        }
        Ok(())
    }
}

/// Runs the cohort against `app`. Transcripts are registered with `asr`,
/// which must be the transcriber the service uses.
pub async fn run(app: Arc<AppState>, asr: Arc<MockAsr>, cfg: &SimConfig) -> Result<SimReport, SimError> {
    let mut sim = Sim {
        client: Client { router: router(app.clone()), admin: app.config.admin_token.clone(), requests: 0, leaks: Vec::new() },
        bank: app.bank.clone(),
        asr,
        cfg: cfg.clone(),
        alignments: app.alignments_dir.clone(),
        clip_conditions: HashMap::new(),
        report: SimReport::default(),
    };
    let total = cfg.two_series_subjects + cfg.one_series_subjects;
    for i in 0..total {
        let mut rng = seeded_rng(derive_seed(cfg.seed, &format!("subject/{i}")));
        let two = i < cfg.two_series_subjects;
        let subject = Subject {
            persona: PERSONAS[i % PERSONAS.len()],
            trust: normal(&mut rng, 3.0, 0.5),
            confidence: normal(&mut rng, 3.8, 0.5),
            rate: normal(&mut rng, cfg.base_syllable_rate, cfg.subject_rate_sd).max(2.0),
            shifted: two && i < cfg.shifted_subjects,
            setting: if two { Setting::InLab } else { Setting::Remote },
            series: if two { 2 } else { 1 },
        };
        let intake = sim.intake(&subject, &mut rng);
        let created: SubjectCreated = sim.client.post_json(&format!("{API_PREFIX}/subjects"), None, &intake).await?;
        for _ in 0..subject.series {
            let trace = sim.run_series(&created.subject_id, &subject, &mut rng).await?;
            sim.report.series.push(trace);
        }
    }
    if cfg.raters > 0 {
        sim.run_raters(cfg.seed).await?;
    }
    sim.report.requests = sim.client.requests;
    sim.report.leaks = std::mem::take(&mut sim.client.leaks);
    Ok(sim.report)
}

/// Runs a cohort into a data directory with mock adapters and a simulated
/// clock, then saves the transcriber registry.
pub fn simulate_into(data: &DataDir, mut config: Config, cfg: &SimConfig) -> Result<SimReport, SimError> {
    config.asr = AdapterChoice::Mock;
    config.tts = AdapterChoice::Mock;
    config.seed = cfg.seed;
    let clock = Arc::new(SimClock::new(SIM_EPOCH_MS, 1000));
    let (app, mock) = build_state(data, config, clock)?;
    let mock = mock.expect("mock transcriber");
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let report = rt.block_on(run(app, mock.clone(), cfg))?;
    mock.save()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use trustel_core::analysis::syllable_rate_from_labels;

    #[test]
    fn alignment_rate_tracks_target() {
        let mut rng = seeded_rng(3);
        let text = "¿Cuál es la temperatura de fusión del aluminio en grados centígrados?";
        let rates: Vec<f64> = (0..200)
            .map(|_| syllable_rate_from_labels(&synth_alignment(text, 5.0, &mut rng).unwrap()).unwrap())
            .collect();
        let m = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!((m - 5.0).abs() < 0.15, "{m}");
    }

    #[test]
    fn correct_answer_detection() {
        let bank = Bank::shipped();
        let q = bank.question("a_distancia_barcelona").unwrap();
        assert!(states_correct_answer(q, "La distancia es de 504 kilómetros."));
        assert!(!states_correct_answer(q, "La distancia es de 1000 kilómetros."));
    }
}
