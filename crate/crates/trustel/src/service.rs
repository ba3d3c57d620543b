//! The HTTP API (axum), versioned under `/v1`.
//!
//! Session endpoints require `Authorization: Bearer <token>` with the token
//! returned when the session was created. Events for one session are applied
//! one at a time; a second utterance upload while one is being processed is
//! rejected with 409.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use trustel_core::annotation::{
    build_stimulus_pair, AnnotationError, AnnotationResponse, Choice, Recording, SeriesRecordings,
};
use trustel_core::audio::{decode_wav, encode_wav, merge_with_tone, AudioClip};
use trustel_core::protocol::{
    advance, compile_series_plan, select_va_answer, series_conditions, Condition, ConditionKind, Directive,
    InteractionRecord, Phase, ProtocolError, QuestionForm, SessionEvent, SessionState, Speaker, Turn, SERIES_LEN,
};
use trustel_core::seeded_rng;
use trustel_core::survey::{
    validate_survey, AnswerValue, Answers, EvaluationSurveyResponse, InstrumentKind, Likert, SurveyError,
};

use crate::api::*;
use crate::bank::Bank;
use crate::config::{derive_seed, Clock, Config};
use crate::export::{export_corpus, summarize_corpus, ExportError, ExportFilter};
use crate::speech::{fingerprint, SpeechError, Synthesizer, Transcriber};
use crate::store::{
    ClipRecord, ExclusionReason, QuestionProgress, SessionRecord, Setting, Store, StoreError, StoredInteraction,
    SubjectRecord, SurveyRecord, Transition,
};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), field: None }
    }

    fn missing(field: &str) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "missing_field",
            message: format!("missing field `{field}`"),
            field: Some(field.to_owned()),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = ErrorBody { error: ErrorDetail { code: self.code.into(), message: self.message, field: self.field } };
        (self.status, Json(body)).into_response()
    }
}

impl From<ProtocolError> for ApiError {
    fn from(e: ProtocolError) -> Self {
        match &e {
            ProtocolError::IllegalEvent { .. } => ApiError::new(StatusCode::CONFLICT, "illegal_transition", e.to_string()),
            ProtocolError::MissingField(f) => ApiError::missing(f),
            ProtocolError::OutOfRange(f) => ApiError {
                status: StatusCode::BAD_REQUEST,
                code: "out_of_range",
                message: e.to_string(),
                field: Some((*f).to_owned()),
            },
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<SurveyError> for ApiError {
    fn from(e: SurveyError) -> Self {
        let code = match e {
            SurveyError::MissingField(_) => "missing_field",
            SurveyError::OutOfRange(_) => "out_of_range",
            SurveyError::WrongType(_) => "wrong_type",
            SurveyError::UnknownField(_) => "unknown_field",
            _ => "invalid_survey",
        };
        ApiError { status: StatusCode::BAD_REQUEST, code, message: e.to_string(), field: e.field().map(str::to_owned) }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownSession(_) | StoreError::UnknownSubject(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            StoreError::SessionClosed(_) => ApiError::new(StatusCode::CONFLICT, "session_closed", e.to_string()),
            StoreError::Duplicate { .. } => ApiError::new(StatusCode::CONFLICT, "duplicate", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<SpeechError> for ApiError {
    fn from(e: SpeechError) -> Self {
        match e {
            SpeechError::AdapterUnavailable(_) => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "adapter_unavailable", e.to_string())
            }
            SpeechError::EmptyClip => ApiError::new(StatusCode::BAD_REQUEST, "empty_audio", e.to_string()),
            _ => ApiError::new(StatusCode::BAD_GATEWAY, "adapter_error", e.to_string()),
        }
    }
}

impl From<ExportError> for ApiError {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Store(s) => s.into(),
            ExportError::NotEmpty(_) => ApiError::new(StatusCode::CONFLICT, "not_empty", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))
}

/// Shared service state.
pub struct AppState {
    pub store: Arc<dyn Store>,
    pub bank: Arc<Bank>,
    pub asr: Arc<dyn Transcriber>,
    pub tts: Arc<dyn Synthesizer>,
    pub config: Config,
    pub clock: Arc<dyn Clock>,
    /// Where `{clip_id}.tsv` alignments live, for exports.
    pub alignments_dir: Option<PathBuf>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    enroll: tokio::sync::Mutex<()>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("config", &self.config).finish_non_exhaustive()
    }
}

impl AppState {
    pub fn new(
        store: Arc<dyn Store>,
        bank: Arc<Bank>,
        asr: Arc<dyn Transcriber>,
        tts: Arc<dyn Synthesizer>,
        config: Config,
        clock: Arc<dyn Clock>,
        alignments_dir: Option<PathBuf>,
    ) -> Self {
        AppState {
            store,
            bank,
            asr,
            tts,
            config,
            clock,
            alignments_dir,
            locks: Mutex::new(HashMap::new()),
            enroll: tokio::sync::Mutex::new(()),
        }
    }

    fn session_lock(&self, session_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks.lock().unwrap().entry(session_id.to_owned()).or_default().clone()
    }

    fn authorize(&self, headers: &HeaderMap, session_id: &str) -> ApiResult<SessionRecord> {
        let unauthorized = || ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid session token");
        let presented = bearer(headers).ok_or_else(unauthorized)?;
        let (token, expiry) = self.store.session_token(session_id)?.ok_or_else(unauthorized)?;
        if token.is_empty() || token != presented {
            return Err(unauthorized());
        }
        if self.clock.now_ms() >= expiry {
            return Err(ApiError::new(StatusCode::UNAUTHORIZED, "token_expired", "session token expired"));
        }
        self.store.session(session_id)?.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", "unknown session"))
    }

    fn check_admin(&self, headers: &HeaderMap) -> ApiResult<()> {
        match &self.config.admin_token {
            Some(t) if bearer(headers) != Some(t.as_str()) => {
                Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "admin token required"))
            }
            _ => Ok(()),
        }
    }

    fn anchor(&self, kind: ConditionKind) -> ApiResult<Condition> {
        let stars = match kind {
            ConditionKind::HighScore => self.config.high_anchor,
            ConditionKind::LowScore => self.config.low_anchor,
        };
        Ok(Condition::new(kind, stars)?)
    }

    fn view(&self, rec: &SessionRecord) -> CurrentView {
        let s = &rec.state;
        let in_question = matches!(s.phase, Phase::QuestionDialogue | Phase::QuestionForm);
        let question = if in_question {
            s.current_question().and_then(|id| self.bank.question(id)).map(|q| QuestionView {
                id: q.id.clone(),
                prompt_text: q.prompt_text.clone(),
            })
        } else {
            None
        };
        let awaiting = match s.phase {
            Phase::IntakeSurveys => Some("intake"),
            Phase::BiasIntro => Some("acknowledge"),
            Phase::QuestionDialogue => Some("utterance"),
            Phase::QuestionForm => Some("question_form"),
            Phase::CheckpointSurvey if s.checkpoint_rating.is_none() => Some("trust_stars"),
            Phase::CheckpointSurvey => Some("explanation"),
            Phase::FinalSurvey => Some("final_survey"),
            Phase::Done => None,
        };
        let checkpoint = (s.phase == Phase::CheckpointSurvey).then_some(s.question_index);
        CurrentView {
            session_id: rec.session_id.clone(),
            phase: s.phase.as_str().into(),
            position: (in_question || checkpoint.is_some()).then_some(s.question_index),
            total_questions: SERIES_LEN,
            question,
            answer_given: rec.progress.va_answer_given.is_some(),
            checkpoint,
            awaiting: awaiting.map(String::from),
            anchor_reminder: (checkpoint.is_some() && s.checkpoint_rating.is_some())
                .then(|| self.config.reminder_text(s.plan.condition.anchor_stars)),
        }
    }

    /// Applies a plain event (no interaction or survey row) and commits it.
    fn apply(&self, mut rec: SessionRecord, event: SessionEvent) -> ApiResult<(SessionRecord, Vec<Directive>)> {
        let (next, directives) = advance(&rec.state, event.clone())?;
        rec.state = next;
        self.store.commit(&Transition { session: rec.clone(), event, interaction: None, survey: None })?;
        Ok((rec, directives))
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/subjects", post(create_subject))
        .route("/subjects/{id}/sessions", post(create_session))
        .route("/sessions/{id}/current", get(current))
        .route("/sessions/{id}/acknowledge", post(acknowledge))
        .route("/sessions/{id}/utterance", post(utterance))
        .route("/sessions/{id}/end-dialogue", post(end_dialogue))
        .route("/sessions/{id}/question-form", post(question_form))
        .route("/sessions/{id}/surveys/{kind}", post(submit_survey))
        .route("/annotation/tasks", get(annotation_tasks))
        .route("/annotation/pairs/{id}/{side}", get(pair_audio))
        .route("/annotation/responses", post(annotation_response))
        .route("/admin/summary", get(admin_summary))
        .route("/admin/export", get(admin_export))
        .route("/admin/annotation/pairs", post(admin_build_pairs));
    Router::new().nest(API_PREFIX, v1).with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn validate_intake(bank: &Bank, kind: InstrumentKind, answers: &Answers) -> ApiResult<serde_json::Value> {
    let def = bank.instrument(kind).ok_or_else(|| ApiError::internal(format!("no {kind} instrument")))?;
    let v = validate_survey(def, answers).map_err(|e| {
        let mut err = ApiError::from(e);
        err.message = format!("{kind}: {}", err.message);
        err
    })?;
    serde_json::to_value(v).map_err(|e| ApiError::internal(e.to_string()))
}

async fn create_subject(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<SubjectCreated>)> {
    let req: CreateSubject = parse_body(&body)?;
    let validated = [
        (InstrumentKind::Demographic, validate_intake(&app.bank, InstrumentKind::Demographic, &req.demographic)?),
        (InstrumentKind::Personality, validate_intake(&app.bank, InstrumentKind::Personality, &req.personality)?),
        (InstrumentKind::Familiarity, validate_intake(&app.bank, InstrumentKind::Familiarity, &req.familiarity)?),
    ];
    let _guard = app.enroll.lock().await;
    let order = app.store.next_enrollment()?;
    let subject_id = format!("S{order:04}");
    let now = app.clock.now_ms();
    app.store.insert_subject(&SubjectRecord {
        subject_id: subject_id.clone(),
        setting: req.setting,
        enrollment_order: order,
        demographics: req.demographic,
        created_ms: now,
    })?;
    for (kind, response) in validated {
        app.store.append_survey(&SurveyRecord {
            subject_id: subject_id.clone(),
            session_id: None,
            kind,
            checkpoint: None,
            response,
            created_ms: now,
        })?;
    }
    tracing::info!(subject_id, order, "subject enrolled");
    Ok((StatusCode::CREATED, Json(SubjectCreated { subject_id, enrollment_order: order })))
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    condition: Option<String>,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    Path(subject_id): Path<String>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let _guard = app.enroll.lock().await;
    let subject = app
        .store
        .subject(&subject_id)?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown subject {subject_id}")))?;
    let existing: Vec<SessionRecord> = app.store.sessions()?.into_iter().filter(|s| s.subject_id == subject_id).collect();
    if existing.iter().any(|s| s.state.phase != Phase::Done) {
        return Err(ApiError::new(StatusCode::CONFLICT, "series_in_progress", "finish the current series first"));
    }
    if existing.len() >= 2 {
        return Err(ApiError::new(StatusCode::CONFLICT, "series_limit", "subject already completed two series"));
    }
    let series_index = existing.len() as u32 + 1;
    let kind = match q.condition.as_deref() {
        Some(c) => ConditionKind::parse(c).ok_or_else(|| {
            ApiError { field: Some("condition".into()), ..ApiError::new(StatusCode::BAD_REQUEST, "out_of_range", format!("unknown condition `{c}`")) }
        })?,
        None => series_conditions(subject.enrollment_order)[series_index as usize - 1],
    };
    let condition = app.anchor(kind)?;
    let (question_set, bank) = app.bank.series_bank(series_index as usize - 1);
    let session_id = format!("{subject_id}-{series_index}");
    let plan = compile_series_plan(&bank, condition, derive_seed(app.config.seed, &format!("plan/{session_id}")))?;
    let now = app.clock.now_ms();
    let mut record = SessionRecord {
        session_id: session_id.clone(),
        subject_id: subject_id.clone(),
        series_index,
        condition: kind,
        question_set,
        state: SessionState::new(&session_id, &subject_id, plan),
        progress: QuestionProgress::default(),
        created_ms: now,
    };
    let token: String = {
        let mut rng = rand::rng();
        (0..32).map(|_| format!("{:x}", rng.random_range(0..16u8))).collect()
    };
    app.store.insert_session(&record, &token, now + app.config.token_ttl_ms)?;
    let (next, _) = advance(&record.state, SessionEvent::IntakeCompleted)?;
    record.state = next;
    app.store.commit(&Transition {
        session: record.clone(),
        event: SessionEvent::IntakeCompleted,
        interaction: None,
        survey: None,
    })?;
    tracing::info!(session_id, subject_id, series_index, "session created");
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id,
            token,
            series_index,
            phase: record.state.phase.as_str().into(),
            anchor_stars: condition.anchor_stars,
            bias_message: app.config.bias_text(condition.anchor_stars),
        }),
    ))
}

async fn current(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Json<CurrentView>> {
    let rec = app.authorize(&headers, &id)?;
    Ok(Json(app.view(&rec)))
}

async fn acknowledge(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Json<CurrentView>> {
    app.authorize(&headers, &id)?;
    let lock = app.session_lock(&id);
    let _g = lock.lock().await;
    let rec = app.authorize(&headers, &id)?;
    let (rec, _) = app.apply(rec, SessionEvent::Acknowledged)?;
    Ok(Json(app.view(&rec)))
}

async fn end_dialogue(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Json<CurrentView>> {
    app.authorize(&headers, &id)?;
    let lock = app.session_lock(&id);
    let _g = lock.lock().await;
    let rec = app.authorize(&headers, &id)?;
    let (rec, _) = app.apply(rec, SessionEvent::DialogueSkipped)?;
    Ok(Json(app.view(&rec)))
}

async fn utterance(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<UtteranceReply>> {
    app.authorize(&headers, &id)?;
    let lock = app.session_lock(&id);
    let Ok(_g) = lock.try_lock() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "session_busy", "an utterance is already being processed"));
    };
    let mut rec = app.authorize(&headers, &id)?;
    // phase check before touching the audio
    advance(&rec.state, SessionEvent::UtteranceHandled)?;
    let clip = decode_wav(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_audio", e.to_string()))?;
    if clip.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_audio", "audio has no samples"));
    }
    let question_id = rec.state.current_question().expect("question phase").to_owned();
    let position = rec.state.question_index;
    let turn_index = rec.progress.uploads + 1;
    let clip_id = format!("{id}-q{position:02}-t{turn_index:02}");
    let now = app.clock.now_ms();
    let mut clip_rec = ClipRecord {
        clip_id: clip_id.clone(),
        subject_id: rec.subject_id.clone(),
        session_id: id.clone(),
        condition: rec.condition,
        question_id: question_id.clone(),
        position,
        turn_index,
        fingerprint: fingerprint(&clip),
        sample_rate: clip.sample_rate,
        n_samples: clip.samples.len() as u64,
        duration_s: clip.duration_s(),
        transcript: None,
        excluded: false,
        exclusion_reason: None,
        timestamp_ms: now,
    };
    rec.progress.uploads = turn_index;

    let asr = app.asr.clone();
    let for_asr = clip.clone();
    let transcription = tokio::task::spawn_blocking(move || asr.transcribe(&for_asr))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let exclude = |app: &AppState, mut c: ClipRecord, rec: &SessionRecord, reason| -> ApiResult<()> {
        c.excluded = true;
        c.exclusion_reason = Some(reason);
        app.store.append_clip(&c, &clip)?;
        app.store.save_progress(rec)?;
        Ok(())
    };
    let result = match transcription {
        Ok(r) => r,
        Err(e @ SpeechError::AdapterUnavailable(_)) => {
            tracing::warn!(session_id = id, clip_id, "asr unavailable");
            exclude(&app, clip_rec, &rec, ExclusionReason::TransferError)?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    if result.failed {
        rec.progress.asr_failures += 1;
        let retry_allowed = rec.progress.asr_failures < app.config.max_asr_attempts;
        tracing::info!(session_id = id, clip_id, retry_allowed, "transcription failed");
        exclude(&app, clip_rec, &rec, ExclusionReason::AsrFailure)?;
        return Ok(Json(UtteranceReply {
            clip_id,
            asr_failed: true,
            retry_allowed,
            transcript: None,
            reply_text: None,
            reply_audio_wav: None,
            answer_given: rec.progress.va_answer_given.is_some(),
            phase: rec.state.phase.as_str().into(),
        }));
    }
    clip_rec.transcript = Some(result.text.clone());

    let question = app.bank.question(&question_id).ok_or_else(|| ApiError::internal("question missing from bank"))?;
    let domain = app.bank.domain(&question.domain_id).ok_or_else(|| ApiError::internal("domain missing from bank"))?;
    let selected = select_va_answer(question, &rec.state.plan)?;
    let mut progress = rec.progress.clone();
    let outcome = progress
        .dialogue
        .respond(domain, &result.text, &selected.answer)
        .map_err(|e| ApiError::internal(e.to_string()))?;

    let tts = app.tts.clone();
    let voice = app.config.voice.clone();
    let text = outcome.response.clone();
    let spoken = tokio::task::spawn_blocking(move || tts.synthesize(&text, &voice))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let reply_audio: AudioClip = match spoken {
        Ok(a) => a,
        Err(e) => {
            tracing::warn!(session_id = id, clip_id, error = %e, "synthesis failed");
            exclude(&app, clip_rec, &rec, ExclusionReason::TransferError)?;
            return Err(e.into());
        }
    };

    let reply_ms = app.clock.now_ms();
    progress.turns.push(Turn { speaker: Speaker::Subject, audio_ref: Some(clip_id.clone()), text: result.text.clone(), timestamp_ms: now });
    progress.turns.push(Turn { speaker: Speaker::Va, audio_ref: None, text: outcome.response.clone(), timestamp_ms: reply_ms });
    let event = if outcome.delivered_answer && rec.state.phase == Phase::QuestionDialogue {
        progress.va_answer_given = Some(outcome.response.clone());
        SessionEvent::AnswerDelivered
    } else {
        SessionEvent::UtteranceHandled
    };
    let (next, _) = advance(&rec.state, event.clone())?;
    rec.state = next;
    rec.progress = progress;
    app.store.append_clip(&clip_rec, &clip)?;
    app.store.commit(&Transition { session: rec.clone(), event, interaction: None, survey: None })?;
    Ok(Json(UtteranceReply {
        clip_id,
        asr_failed: false,
        retry_allowed: true,
        transcript: Some(result.text),
        reply_text: Some(outcome.response),
        reply_audio_wav: Some(base64::engine::general_purpose::STANDARD.encode(encode_wav(&reply_audio))),
        answer_given: rec.progress.va_answer_given.is_some(),
        phase: rec.state.phase.as_str().into(),
    }))
}

async fn question_form(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<CurrentView>> {
    app.authorize(&headers, &id)?;
    let lock = app.session_lock(&id);
    let _g = lock.lock().await;
    let mut rec = app.authorize(&headers, &id)?;
    let form: QuestionForm = parse_body(&body)?;
    let position = rec.state.question_index;
    let (next, directives) = advance(&rec.state, SessionEvent::FormSubmitted { form: form.clone() })?;
    let Some(Directive::RecordForm { question_id, answers }) = directives.into_iter().next() else {
        return Err(ApiError::internal("form accepted without a record directive"));
    };
    let record = InteractionRecord {
        was_scripted_wrong: rec.state.plan.wrong_answer_ids.contains(&question_id),
        question_id,
        turns: std::mem::take(&mut rec.progress.turns),
        va_answer_given: rec.progress.va_answer_given.take().unwrap_or_default(),
        subject_transcription: answers.va_transcription,
        confidence: answers.confidence,
        subject_answer: answers.own_answer,
    };
    record.check(&rec.state.plan).map_err(ApiError::internal)?;
    let interaction = StoredInteraction {
        session_id: id.clone(),
        subject_id: rec.subject_id.clone(),
        position,
        record,
        created_ms: app.clock.now_ms(),
    };
    rec.state = next;
    rec.progress = QuestionProgress::default();
    app.store.commit(&Transition {
        session: rec.clone(),
        event: SessionEvent::FormSubmitted { form },
        interaction: Some(interaction),
        survey: None,
    })?;
    Ok(Json(app.view(&rec)))
}

async fn submit_survey(
    State(app): State<Arc<AppState>>,
    Path((id, kind)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    app.authorize(&headers, &id)?;
    let lock = app.session_lock(&id);
    let _g = lock.lock().await;
    let mut rec = app.authorize(&headers, &id)?;
    let instrument = |k: InstrumentKind| app.bank.instrument(k).ok_or_else(|| ApiError::internal(format!("no {k} instrument")));
    match kind.as_str() {
        "evaluation-rating" => {
            let req: RatingSubmission = parse_body(&body)?;
            // an illegal phase is reported before a missing value
            advance(&rec.state, SessionEvent::CheckpointRated { stars: 3 })?;
            let stars = req.trust_stars.ok_or_else(|| ApiError::missing("trust_stars"))?;
            let checkpoint = rec.state.question_index;
            let anchor = rec.state.plan.condition.anchor_stars;
            app.apply(rec, SessionEvent::CheckpointRated { stars })?;
            Ok(Json(RatingAccepted { checkpoint, anchor_reminder: app.config.reminder_text(anchor) }).into_response())
        }
        "evaluation-explanation" => {
            let req: ExplanationSubmission = parse_body(&body)?;
            let explanation = req.explanation.unwrap_or_default();
            let checkpoint = rec.state.question_index;
            let stars = rec.state.checkpoint_rating;
            let event = SessionEvent::CheckpointExplained { explanation: explanation.clone() };
            let (next, _) = advance(&rec.state, event.clone())?;
            let stars: Likert = stars.ok_or_else(|| ApiError::internal("rating missing after accepted explanation"))?;
            let answers: Answers = BTreeMap::from([
                ("trust_stars".to_owned(), AnswerValue::Int(i64::from(stars.get()))),
                ("explanation".to_owned(), AnswerValue::Text(explanation.clone())),
            ]);
            validate_survey(instrument(InstrumentKind::Evaluation)?, &answers)?;
            let response = EvaluationSurveyResponse::new(checkpoint, stars, &explanation)?;
            rec.state = next;
            let survey = SurveyRecord {
                subject_id: rec.subject_id.clone(),
                session_id: Some(id.clone()),
                kind: InstrumentKind::Evaluation,
                checkpoint: Some(checkpoint),
                response: serde_json::to_value(response).map_err(|e| ApiError::internal(e.to_string()))?,
                created_ms: app.clock.now_ms(),
            };
            app.store.commit(&Transition { session: rec.clone(), event, interaction: None, survey: Some(survey) })?;
            Ok(Json(app.view(&rec)).into_response())
        }
        "final" => {
            let answers: Answers = parse_body(&body)?;
            let (next, _) = advance(&rec.state, SessionEvent::FinalSubmitted)?;
            let validated = validate_survey(instrument(InstrumentKind::Final)?, &answers)?;
            rec.state = next;
            let survey = SurveyRecord {
                subject_id: rec.subject_id.clone(),
                session_id: Some(id.clone()),
                kind: InstrumentKind::Final,
                checkpoint: None,
                response: serde_json::to_value(validated).map_err(|e| ApiError::internal(e.to_string()))?,
                created_ms: app.clock.now_ms(),
            };
            app.store.commit(&Transition {
                session: rec.clone(),
                event: SessionEvent::FinalSubmitted,
                interaction: None,
                survey: Some(survey),
            })?;
            tracing::info!(session_id = id, "series complete");
            Ok(Json(app.view(&rec)).into_response())
        }
        other => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_survey", format!("unknown survey kind `{other}`"))),
    }
}

#[derive(Debug, Deserialize)]
struct TasksQuery {
    rater: Option<String>,
}

async fn annotation_tasks(State(app): State<Arc<AppState>>, Query(q): Query<TasksQuery>) -> ApiResult<Json<TaskList>> {
    let rater = q.rater.filter(|r| !r.trim().is_empty()).ok_or_else(|| ApiError::missing("rater"))?;
    let answered: Vec<String> =
        app.store.responses()?.into_iter().filter(|r| r.rater_id == rater).map(|r| r.pair_id).collect();
    let mut tasks: Vec<AnnotationTask> = app
        .store
        .pairs()?
        .into_iter()
        .filter(|p| !answered.contains(&p.pair_id))
        .map(|p| AnnotationTask {
            a_url: format!("{API_PREFIX}/annotation/pairs/{}/a.wav", p.pair_id),
            b_url: format!("{API_PREFIX}/annotation/pairs/{}/b.wav", p.pair_id),
            pair_id: p.pair_id,
        })
        .collect();
    tasks.shuffle(&mut seeded_rng(derive_seed(app.config.seed, &format!("tasks/{rater}"))));
    Ok(Json(TaskList { rater_id: rater, tasks }))
}

async fn pair_audio(State(app): State<Arc<AppState>>, Path((id, side)): Path<(String, String)>) -> ApiResult<Response> {
    let pair = app
        .store
        .pairs()?
        .into_iter()
        .find(|p| p.pair_id == id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown pair {id}")))?;
    let seq = match side.as_str() {
        "a.wav" => &pair.seq_a,
        "b.wav" => &pair.seq_b,
        _ => return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", "side must be a.wav or b.wav")),
    };
    let mut clips = Vec::with_capacity(seq.len());
    for c in seq {
        clips.push(app.store.clip_audio(&c.clip_id)?.ok_or_else(|| ApiError::internal(format!("audio {} missing", c.clip_id)))?);
    }
    let merged = merge_with_tone(&clips, &app.config.tone).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], encode_wav(&merged)).into_response())
}

async fn annotation_response(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<ResponseAccepted>)> {
    let req: ResponseSubmission = parse_body(&body)?;
    let nonempty = |v: Option<String>, f: &str| v.filter(|s| !s.trim().is_empty()).ok_or_else(|| ApiError::missing(f));
    let pair_id = nonempty(req.pair_id, "pair_id")?;
    let rater_id = nonempty(req.rater_id, "rater_id")?;
    let choice: Choice = req.choice.ok_or_else(|| ApiError::missing("choice"))?;
    let confidence = req.confidence.ok_or_else(|| ApiError::missing("confidence"))?;
    let confidence = Likert::new(confidence).map_err(|_| ApiError {
        field: Some("confidence".into()),
        ..ApiError::new(StatusCode::BAD_REQUEST, "out_of_range", "confidence must be 1..5")
    })?;
    let pairs = app.store.pairs()?;
    if !pairs.iter().any(|p| p.pair_id == pair_id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown pair {pair_id}")));
    }
    app.store.append_response(&AnnotationResponse { pair_id, rater_id: rater_id.clone(), choice, confidence })?;
    let answered = app.store.responses()?.iter().filter(|r| r.rater_id == rater_id).count();
    Ok((StatusCode::CREATED, Json(ResponseAccepted { remaining: pairs.len().saturating_sub(answered) })))
}

async fn admin_summary(State(app): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Response> {
    app.check_admin(&headers)?;
    let store = app.store.clone();
    let summary = tokio::task::spawn_blocking(move || summarize_corpus(store.as_ref()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(summary).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    out: Option<String>,
    #[serde(default)]
    include_excluded: bool,
}

async fn admin_export(State(app): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    app.check_admin(&headers)?;
    let out = PathBuf::from(q.out.filter(|o| !o.is_empty()).ok_or_else(|| ApiError::missing("out"))?);
    let store = app.store.clone();
    let alignments = app.alignments_dir.clone();
    let filter = ExportFilter { include_excluded: q.include_excluded };
    let manifest = tokio::task::spawn_blocking(move || export_corpus(store.as_ref(), alignments.as_deref(), filter, &out))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(manifest).into_response())
}

#[derive(Debug, Deserialize)]
struct PairsQuery {
    #[serde(default)]
    include_remote: bool,
}

/// Builds one stimulus pair per eligible subject: two completed series, one
/// per condition.
pub fn build_pairs(app: &AppState, include_remote: bool) -> ApiResult<PairsBuilt> {
    let sessions = app.store.sessions()?;
    let clips = app.store.clips()?;
    let mut created = 0;
    let mut skipped = Vec::new();
    for subject in app.store.subjects()? {
        if subject.setting == Setting::Remote && !include_remote {
            continue;
        }
        let done: Vec<&SessionRecord> =
            sessions.iter().filter(|s| s.subject_id == subject.subject_id && s.state.phase == Phase::Done).collect();
        let find = |k: ConditionKind| done.iter().find(|s| s.condition == k).copied();
        let (Some(low), Some(high)) = (find(ConditionKind::LowScore), find(ConditionKind::HighScore)) else {
            skipped.push(SkippedSubject {
                subject_id: subject.subject_id.clone(),
                reason: "needs a completed series in each condition".into(),
            });
            continue;
        };
        let recordings = |s: &SessionRecord| SeriesRecordings {
            session_id: s.session_id.clone(),
            subject_id: s.subject_id.clone(),
            condition: s.condition,
            complete: s.state.phase == Phase::Done,
            recordings: clips
                .iter()
                .filter(|c| c.session_id == s.session_id && !c.excluded)
                .map(|c| Recording {
                    position: c.position,
                    question_id: c.question_id.clone(),
                    clip_id: c.clip_id.clone(),
                    timestamp_ms: c.timestamp_ms,
                })
                .collect(),
        };
        let seed = derive_seed(app.config.seed, &format!("pair/{}", subject.subject_id));
        match build_stimulus_pair(&recordings(low), &recordings(high), seed) {
            Ok(pair) => {
                if app.store.insert_pair(&pair)? {
                    created += 1;
                }
            }
            Err(e @ (AnnotationError::IncompleteSession { .. } | AnnotationError::SessionIncomplete { .. })) => {
                skipped.push(SkippedSubject { subject_id: subject.subject_id.clone(), reason: e.to_string() })
            }
            Err(e) => return Err(ApiError::internal(e.to_string())),
        }
    }
    Ok(PairsBuilt { created, total: app.store.pairs()?.len(), skipped })
}

async fn admin_build_pairs(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(q): Query<PairsQuery>,
) -> ApiResult<Json<PairsBuilt>> {
    app.check_admin(&headers)?;
    Ok(Json(build_pairs(&app, q.include_remote)?))
}
