//! Persistence: subjects, sessions, clips, interactions, surveys and
//! annotation data. [`SqliteStore`] keeps rows in one SQLite file and audio
//! as WAV files next to it.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rusqlite::{params, Connection, OptionalExtension};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trustel_core::annotation::{AnnotationResponse, StimulusPair};
use trustel_core::audio::{decode_wav, encode_wav, AudioClip};
use trustel_core::dialogue::DialogueSession;
use trustel_core::protocol::{ConditionKind, InteractionRecord, Phase, SessionEvent, SessionState, Turn};
use trustel_core::survey::{Answers, InstrumentKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    InLab,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub setting: Setting,
    pub enrollment_order: u32,
    pub demographics: Answers,
    pub created_ms: u64,
}

/// Service-side progress within the current question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionProgress {
    pub dialogue: DialogueSession,
    pub turns: Vec<Turn>,
    /// Next subject turn number (1-based count of uploads so far).
    pub uploads: u32,
    pub asr_failures: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub va_answer_given: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub subject_id: String,
    /// 1 or 2: which of the subject's series this is.
    pub series_index: u32,
    pub condition: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_set: Option<String>,
    pub state: SessionState,
    pub progress: QuestionProgress,
    pub created_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    AsrFailure,
    TransferError,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub subject_id: String,
    pub session_id: String,
    pub condition: ConditionKind,
    pub question_id: String,
    /// 1-based position of the question in the series.
    pub position: usize,
    pub turn_index: u32,
    pub fingerprint: String,
    pub sample_rate: u32,
    pub n_samples: u64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<ExclusionReason>,
    pub timestamp_ms: u64,
}

impl ClipRecord {
    pub fn check(&self) -> Result<(), StoreError> {
        if self.excluded != self.exclusion_reason.is_some() {
            return Err(StoreError::Invalid(format!("clip {}: excluded flag and reason disagree", self.clip_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredInteraction {
    pub session_id: String,
    pub subject_id: String,
    pub position: usize,
    pub record: InteractionRecord,
    pub created_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub subject_id: String,
    /// Absent for the intake instruments, which belong to the subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub kind: InstrumentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<usize>,
    pub response: serde_json::Value,
    pub created_ms: u64,
}

/// Everything one accepted session event writes, committed atomically.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub session: SessionRecord,
    pub event: SessionEvent,
    pub interaction: Option<StoredInteraction>,
    pub survey: Option<SurveyRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("session {0} is finished")]
    SessionClosed(String),
    #[error("duplicate {what}: {key}")]
    Duplicate { what: &'static str, key: String },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("storage failure: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
    #[error("storage failure: {0}")]
    Json(#[from] serde_json::Error),
}

pub type StoreResult<T> = Result<T, StoreError>;

/// Storage interface used by the service, export and analyses.
pub trait Store: Send + Sync {
    fn insert_subject(&self, subject: &SubjectRecord) -> StoreResult<()>;
    fn subject(&self, subject_id: &str) -> StoreResult<Option<SubjectRecord>>;
    fn subjects(&self) -> StoreResult<Vec<SubjectRecord>>;
    /// One more than the largest enrollment order so far.
    fn next_enrollment(&self) -> StoreResult<u32>;

    fn insert_session(&self, session: &SessionRecord, token: &str, expiry_ms: u64) -> StoreResult<()>;
    fn session(&self, session_id: &str) -> StoreResult<Option<SessionRecord>>;
    fn sessions(&self) -> StoreResult<Vec<SessionRecord>>;
    fn session_token(&self, session_id: &str) -> StoreResult<Option<(String, u64)>>;
    /// Saves progress that is not a protocol event (dialogue turns).
    fn save_progress(&self, session: &SessionRecord) -> StoreResult<()>;
    fn commit(&self, transition: &Transition) -> StoreResult<()>;
    fn events(&self, session_id: &str) -> StoreResult<Vec<SessionEvent>>;

    fn append_clip(&self, clip: &ClipRecord, audio: &AudioClip) -> StoreResult<()>;
    fn clips(&self) -> StoreResult<Vec<ClipRecord>>;
    fn clip_audio(&self, clip_id: &str) -> StoreResult<Option<AudioClip>>;

    fn append_interaction(&self, interaction: &StoredInteraction) -> StoreResult<()>;
    fn interactions(&self) -> StoreResult<Vec<StoredInteraction>>;

    fn append_survey(&self, survey: &SurveyRecord) -> StoreResult<()>;
    fn surveys(&self) -> StoreResult<Vec<SurveyRecord>>;

    /// Returns false when a pair with that id already exists.
    fn insert_pair(&self, pair: &StimulusPair) -> StoreResult<bool>;
    fn pairs(&self) -> StoreResult<Vec<StimulusPair>>;
    fn append_response(&self, response: &AnnotationResponse) -> StoreResult<()>;
    fn responses(&self) -> StoreResult<Vec<AnnotationResponse>>;

    /// Bulk-loads a snapshot into an empty store, bypassing lifecycle checks.
    /// Restored sessions get no usable token.
    fn restore(&self, snapshot: &Snapshot, audio: &mut dyn FnMut(&ClipRecord) -> io::Result<AudioClip>) -> StoreResult<()>;
}

/// A session with its accepted event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionExport {
    #[serde(flatten)]
    pub record: SessionRecord,
    pub events: Vec<SessionEvent>,
}

/// Every row of a store, in export order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub subjects: Vec<SubjectRecord>,
    pub sessions: Vec<SessionExport>,
    pub clips: Vec<ClipRecord>,
    pub interactions: Vec<StoredInteraction>,
    pub surveys: Vec<SurveyRecord>,
    pub pairs: Vec<StimulusPair>,
    pub responses: Vec<AnnotationResponse>,
}

impl Snapshot {
    pub fn of(store: &dyn Store) -> StoreResult<Snapshot> {
        let sessions = store
            .sessions()?
            .into_iter()
            .map(|record| Ok(SessionExport { events: store.events(&record.session_id)?, record }))
            .collect::<StoreResult<Vec<_>>>()?;
        Ok(Snapshot {
            subjects: store.subjects()?,
            sessions,
            clips: store.clips()?,
            interactions: store.interactions()?,
            surveys: store.surveys()?,
            pairs: store.pairs()?,
            responses: store.responses()?,
        })
    }
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS subjects (
    subject_id TEXT PRIMARY KEY,
    enrollment_order INTEGER NOT NULL UNIQUE,
    body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    subject_id TEXT NOT NULL REFERENCES subjects(subject_id),
    phase TEXT NOT NULL,
    token TEXT NOT NULL,
    token_expiry_ms INTEGER NOT NULL,
    body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS session_events (
    session_id TEXT NOT NULL REFERENCES sessions(session_id),
    seq INTEGER NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (session_id, seq)
);
CREATE TABLE IF NOT EXISTS clips (
    clip_id TEXT PRIMARY KEY,
    session_id TEXT NOT NULL REFERENCES sessions(session_id),
    question_id TEXT NOT NULL,
    turn_index INTEGER NOT NULL,
    body TEXT NOT NULL,
    UNIQUE (session_id, question_id, turn_index)
);
CREATE TABLE IF NOT EXISTS interactions (
    session_id TEXT NOT NULL REFERENCES sessions(session_id),
    question_id TEXT NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (session_id, question_id)
);
CREATE TABLE IF NOT EXISTS surveys (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    subject_id TEXT NOT NULL REFERENCES subjects(subject_id),
    session_id TEXT,
    kind TEXT NOT NULL,
    checkpoint INTEGER,
    body TEXT NOT NULL
);
CREATE UNIQUE INDEX IF NOT EXISTS surveys_once
    ON surveys (subject_id, IFNULL(session_id, ''), kind, IFNULL(checkpoint, 0));
CREATE TABLE IF NOT EXISTS annotation_pairs (
    pair_id TEXT PRIMARY KEY,
    body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS annotation_responses (
    pair_id TEXT NOT NULL REFERENCES annotation_pairs(pair_id),
    rater_id TEXT NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (pair_id, rater_id)
);
";

/// SQLite-backed store rooted at a directory: `store.sqlite` plus
/// `audio/{clip_id}.wav`.
#[derive(Debug)]
pub struct SqliteStore {
    conn: Mutex<Connection>,
    audio_dir: PathBuf,
}

fn to_json<T: Serialize>(v: &T) -> StoreResult<String> {
    Ok(serde_json::to_string(v)?)
}

fn from_json<T: DeserializeOwned>(s: &str) -> StoreResult<T> {
    Ok(serde_json::from_str(s)?)
}

fn is_constraint(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::ConstraintViolation)
}

fn duplicate(what: &'static str, key: impl Into<String>) -> impl FnOnce(rusqlite::Error) -> StoreError {
    let key = key.into();
    move |e| if is_constraint(&e) { StoreError::Duplicate { what, key } } else { StoreError::Sqlite(e) }
}

impl SqliteStore {
    pub fn open(dir: &Path) -> StoreResult<Self> {
        fs::create_dir_all(dir.join("audio"))?;
        let conn = Connection::open(dir.join("store.sqlite"))?;
        conn.execute_batch("PRAGMA journal_mode = WAL; PRAGMA synchronous = NORMAL; PRAGMA foreign_keys = ON;")?;
        conn.execute_batch(SCHEMA)?;
        Ok(SqliteStore { conn: Mutex::new(conn), audio_dir: dir.join("audio") })
    }

    pub fn audio_path(&self, clip_id: &str) -> PathBuf {
        self.audio_dir.join(format!("{clip_id}.wav"))
    }

    fn bodies<T: DeserializeOwned>(&self, sql: &str) -> StoreResult<Vec<T>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(sql)?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for row in rows {
            out.push(from_json(&row?)?);
        }
        Ok(out)
    }

    fn session_phase(conn: &Connection, session_id: &str) -> StoreResult<String> {
        conn.query_row("SELECT phase FROM sessions WHERE session_id = ?1", [session_id], |r| r.get(0))
            .optional()?
            .ok_or_else(|| StoreError::UnknownSession(session_id.to_owned()))
    }

    fn insert_interaction(conn: &Connection, i: &StoredInteraction) -> StoreResult<()> {
        if Self::session_phase(conn, &i.session_id)? == Phase::Done.as_str() {
            return Err(StoreError::SessionClosed(i.session_id.clone()));
        }
        conn.execute(
            "INSERT INTO interactions (session_id, question_id, body) VALUES (?1, ?2, ?3)",
            params![i.session_id, i.record.question_id, to_json(i)?],
        )
        .map_err(duplicate("interaction", format!("{}/{}", i.session_id, i.record.question_id)))?;
        Ok(())
    }

    fn insert_survey(conn: &Connection, s: &SurveyRecord) -> StoreResult<()> {
        conn.execute(
            "INSERT INTO surveys (subject_id, session_id, kind, checkpoint, body) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![s.subject_id, s.session_id, s.kind.as_str(), s.checkpoint.map(|c| c as i64), to_json(s)?],
        )
        .map_err(duplicate("survey", format!("{}/{}", s.subject_id, s.kind)))?;
        Ok(())
    }
}

impl Store for SqliteStore {
    fn insert_subject(&self, s: &SubjectRecord) -> StoreResult<()> {
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO subjects (subject_id, enrollment_order, body) VALUES (?1, ?2, ?3)",
            params![s.subject_id, s.enrollment_order, to_json(s)?],
        )
        .map_err(duplicate("subject", s.subject_id.clone()))?;
        Ok(())
    }

    fn subject(&self, subject_id: &str) -> StoreResult<Option<SubjectRecord>> {
        let conn = self.conn.lock().unwrap();
        let body: Option<String> = conn
            .query_row("SELECT body FROM subjects WHERE subject_id = ?1", [subject_id], |r| r.get(0))
            .optional()?;
        body.map(|b| from_json(&b)).transpose()
    }

    fn subjects(&self) -> StoreResult<Vec<SubjectRecord>> {
        self.bodies("SELECT body FROM subjects ORDER BY enrollment_order")
    }

    fn next_enrollment(&self) -> StoreResult<u32> {
        let conn = self.conn.lock().unwrap();
        let max: Option<u32> = conn.query_row("SELECT MAX(enrollment_order) FROM subjects", [], |r| r.get(0))?;
        Ok(max.unwrap_or(0) + 1)
    }

    fn insert_session(&self, s: &SessionRecord, token: &str, expiry_ms: u64) -> StoreResult<()> {
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO sessions (session_id, subject_id, phase, token, token_expiry_ms, body) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![s.session_id, s.subject_id, s.state.phase.as_str(), token, expiry_ms as i64, to_json(s)?],
        )
        .map_err(|e| {
            if is_constraint(&e) {
                StoreError::Duplicate { what: "session", key: s.session_id.clone() }
            } else {
                StoreError::Sqlite(e)
            }
        })?;
        Ok(())
    }

    fn session(&self, session_id: &str) -> StoreResult<Option<SessionRecord>> {
        let conn = self.conn.lock().unwrap();
        let body: Option<String> = conn
            .query_row("SELECT body FROM sessions WHERE session_id = ?1", [session_id], |r| r.get(0))
            .optional()?;
        body.map(|b| from_json(&b)).transpose()
    }

    fn sessions(&self) -> StoreResult<Vec<SessionRecord>> {
        self.bodies("SELECT body FROM sessions ORDER BY session_id")
    }

    fn session_token(&self, session_id: &str) -> StoreResult<Option<(String, u64)>> {
        let conn = self.conn.lock().unwrap();
        Ok(conn
            .query_row("SELECT token, token_expiry_ms FROM sessions WHERE session_id = ?1", [session_id], |r| {
                Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as u64))
            })
            .optional()?)
    }

    fn save_progress(&self, s: &SessionRecord) -> StoreResult<()> {
        let conn = self.conn.lock().unwrap();
        let n = conn.execute(
            "UPDATE sessions SET phase = ?2, body = ?3 WHERE session_id = ?1",
            params![s.session_id, s.state.phase.as_str(), to_json(s)?],
        )?;
        if n == 0 {
            return Err(StoreError::UnknownSession(s.session_id.clone()));
        }
        Ok(())
    }

    fn commit(&self, t: &Transition) -> StoreResult<()> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction()?;
        if let Some(i) = &t.interaction {
            Self::insert_interaction(&tx, i)?;
        }
        if let Some(s) = &t.survey {
            Self::insert_survey(&tx, s)?;
        }
        let s = &t.session;
        let seq: i64 = tx.query_row(
            "SELECT COUNT(*) FROM session_events WHERE session_id = ?1",
            [&s.session_id],
            |r| r.get(0),
        )?;
        tx.execute(
            "INSERT INTO session_events (session_id, seq, body) VALUES (?1, ?2, ?3)",
            params![s.session_id, seq, to_json(&t.event)?],
        )?;
        let n = tx.execute(
            "UPDATE sessions SET phase = ?2, body = ?3 WHERE session_id = ?1",
            params![s.session_id, s.state.phase.as_str(), to_json(s)?],
        )?;
        if n == 0 {
            return Err(StoreError::UnknownSession(s.session_id.clone()));
        }
        tx.commit()?;
        Ok(())
    }

    fn events(&self, session_id: &str) -> StoreResult<Vec<SessionEvent>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare("SELECT body FROM session_events WHERE session_id = ?1 ORDER BY seq")?;
        let rows = stmt.query_map([session_id], |r| r.get::<_, String>(0))?;
        let mut out = Vec::new();
        for row in rows {
            out.push(from_json(&row?)?);
        }
        Ok(out)
    }

    fn append_clip(&self, c: &ClipRecord, audio: &AudioClip) -> StoreResult<()> {
        c.check()?;
        let conn = self.conn.lock().unwrap();
        if Self::session_phase(&conn, &c.session_id)? == Phase::Done.as_str() {
            return Err(StoreError::SessionClosed(c.session_id.clone()));
        }
        // audio first so a committed row always has its file
        let path = self.audio_path(&c.clip_id);
        let tmp = path.with_extension("wav.tmp");
        fs::write(&tmp, encode_wav(audio))?;
        let inserted = conn.execute(
            "INSERT INTO clips (clip_id, session_id, question_id, turn_index, body) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![c.clip_id, c.session_id, c.question_id, c.turn_index, to_json(c)?],
        );
        match inserted {
            Ok(_) => {
                fs::rename(&tmp, &path)?;
                Ok(())
            }
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                Err(duplicate("clip", format!("{}/{}/{}", c.session_id, c.question_id, c.turn_index))(e))
            }
        }
    }

    fn clips(&self) -> StoreResult<Vec<ClipRecord>> {
        self.bodies("SELECT body FROM clips ORDER BY clip_id")
    }

    fn clip_audio(&self, clip_id: &str) -> StoreResult<Option<AudioClip>> {
        let path = self.audio_path(clip_id);
        match fs::read(&path) {
            Ok(bytes) => decode_wav(&bytes).map(Some).map_err(|e| StoreError::Invalid(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn append_interaction(&self, i: &StoredInteraction) -> StoreResult<()> {
        Self::insert_interaction(&self.conn.lock().unwrap(), i)
    }

    fn interactions(&self) -> StoreResult<Vec<StoredInteraction>> {
        self.bodies("SELECT body FROM interactions ORDER BY session_id, json_extract(body, '$.position')")
    }

    fn append_survey(&self, s: &SurveyRecord) -> StoreResult<()> {
        Self::insert_survey(&self.conn.lock().unwrap(), s)
    }

    fn surveys(&self) -> StoreResult<Vec<SurveyRecord>> {
        self.bodies("SELECT body FROM surveys ORDER BY subject_id, IFNULL(session_id, ''), id")
    }

    fn insert_pair(&self, p: &StimulusPair) -> StoreResult<bool> {
        let conn = self.conn.lock().unwrap();
        let n = conn.execute(
            "INSERT OR IGNORE INTO annotation_pairs (pair_id, body) VALUES (?1, ?2)",
            params![p.pair_id, to_json(p)?],
        )?;
        Ok(n == 1)
    }

    fn pairs(&self) -> StoreResult<Vec<StimulusPair>> {
        self.bodies("SELECT body FROM annotation_pairs ORDER BY pair_id")
    }

    fn append_response(&self, r: &AnnotationResponse) -> StoreResult<()> {
        let conn = self.conn.lock().unwrap();
        conn.execute(
            "INSERT INTO annotation_responses (pair_id, rater_id, body) VALUES (?1, ?2, ?3)",
            params![r.pair_id, r.rater_id, to_json(r)?],
        )
        .map_err(|e| {
            if is_constraint(&e) {
                let known: bool = conn
                    .query_row("SELECT 1 FROM annotation_pairs WHERE pair_id = ?1", [&r.pair_id], |_| Ok(true))
                    .optional()
                    .ok()
                    .flatten()
                    .unwrap_or(false);
                if known {
                    StoreError::Duplicate { what: "annotation response", key: format!("{}/{}", r.pair_id, r.rater_id) }
                } else {
                    StoreError::Invalid(format!("unknown pair {}", r.pair_id))
                }
            } else {
                StoreError::Sqlite(e)
            }
        })?;
        Ok(())
    }

    fn responses(&self) -> StoreResult<Vec<AnnotationResponse>> {
        self.bodies("SELECT body FROM annotation_responses ORDER BY pair_id, rater_id")
    }

    fn restore(&self, snap: &Snapshot, audio: &mut dyn FnMut(&ClipRecord) -> io::Result<AudioClip>) -> StoreResult<()> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction()?;
        let empty: i64 = tx.query_row("SELECT COUNT(*) FROM subjects", [], |r| r.get(0))?;
        if empty != 0 {
            return Err(StoreError::Invalid("restore needs an empty store".into()));
        }
        for s in &snap.subjects {
            tx.execute(
                "INSERT INTO subjects (subject_id, enrollment_order, body) VALUES (?1, ?2, ?3)",
                params![s.subject_id, s.enrollment_order, to_json(s)?],
            )
            .map_err(duplicate("subject", s.subject_id.clone()))?;
        }
        for se in &snap.sessions {
            let s = &se.record;
            tx.execute(
                "INSERT INTO sessions (session_id, subject_id, phase, token, token_expiry_ms, body) VALUES (?1, ?2, ?3, '', 0, ?4)",
                params![s.session_id, s.subject_id, s.state.phase.as_str(), to_json(s)?],
            )
            .map_err(duplicate("session", s.session_id.clone()))?;
            for (seq, e) in se.events.iter().enumerate() {
                tx.execute(
                    "INSERT INTO session_events (session_id, seq, body) VALUES (?1, ?2, ?3)",
                    params![s.session_id, seq as i64, to_json(e)?],
                )?;
            }
        }
        for c in &snap.clips {
            c.check()?;
            tx.execute(
                "INSERT INTO clips (clip_id, session_id, question_id, turn_index, body) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![c.clip_id, c.session_id, c.question_id, c.turn_index, to_json(c)?],
            )
            .map_err(duplicate("clip", c.clip_id.clone()))?;
            fs::write(self.audio_path(&c.clip_id), encode_wav(&audio(c)?))?;
        }
        for i in &snap.interactions {
            tx.execute(
                "INSERT INTO interactions (session_id, question_id, body) VALUES (?1, ?2, ?3)",
                params![i.session_id, i.record.question_id, to_json(i)?],
            )
            .map_err(duplicate("interaction", format!("{}/{}", i.session_id, i.record.question_id)))?;
        }
        for s in &snap.surveys {
            Self::insert_survey(&tx, s)?;
        }
        for p in &snap.pairs {
            tx.execute("INSERT INTO annotation_pairs (pair_id, body) VALUES (?1, ?2)", params![p.pair_id, to_json(p)?])
                .map_err(duplicate("pair", p.pair_id.clone()))?;
        }
        for r in &snap.responses {
            tx.execute(
                "INSERT INTO annotation_responses (pair_id, rater_id, body) VALUES (?1, ?2, ?3)",
                params![r.pair_id, r.rater_id, to_json(r)?],
            )
            .map_err(duplicate("annotation response", format!("{}/{}", r.pair_id, r.rater_id)))?;
        }
        tx.commit()?;
        Ok(())
    }
}
