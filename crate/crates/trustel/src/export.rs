//! Corpus export bundles, re-import, and descriptive corpus statistics.
//!
//! Bundle layout:
//!
//! ```text
//! manifest.json
//! subjects.jsonl  sessions.jsonl  interactions.jsonl
//! metadata.jsonl                       one line per clip
//! corpus/{subject}/{session}/{question}/{turn}.wav
//! surveys/{session}.json               session surveys plus the subject's intake
//! alignments/{clip}.tsv                when alignments are available
//! annotation/pairs.jsonl  annotation/responses.jsonl
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trustel_core::analysis::{mean, sample_sd};
use trustel_core::audio::{decode_wav, encode_wav};
use trustel_core::protocol::{ConditionKind, Phase};
use trustel_core::survey::AnswerValue;

use crate::store::{
    ClipRecord, SessionExport, Snapshot, Store, StoreError, SubjectRecord, SurveyRecord,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("output directory {0} is not empty")]
    NotEmpty(PathBuf),
    #[error("unsupported bundle schema version {0}")]
    SchemaVersion(u32),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_owned(), source }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    /// List excluded clips (flagged) instead of leaving them out.
    pub include_excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub schema_version: u32,
    pub filter: ExportFilter,
    pub n_subjects: usize,
    pub n_sessions: usize,
    pub n_clips: usize,
    pub n_excluded_listed: usize,
    pub n_interactions: usize,
    pub n_surveys: usize,
    pub n_pairs: usize,
    pub n_responses: usize,
    pub n_alignments: usize,
    pub notes: BTreeMap<String, String>,
}

/// One line of `metadata.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub schema_version: u32,
    #[serde(flatten)]
    pub clip: ClipRecord,
    pub wav_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionSurveys {
    subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    session_id: Option<String>,
    intake: Vec<SurveyRecord>,
    session: Vec<SurveyRecord>,
}

pub fn wav_rel_path(c: &ClipRecord) -> String {
    format!("corpus/{}/{}/{}/{}.wav", c.subject_id, c.session_id, c.question_id, c.turn_index)
}

pub fn alignment_rel_path(clip_id: &str) -> String {
    format!("alignments/{clip_id}.tsv")
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExportError> {
    let mut out = io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| ExportError::Io { path: path.to_owned(), source: e.into() })?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExportError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| ExportError::Format {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| ExportError::Io { path: path.to_owned(), source: e.into() })?;
    body.push('\n');
    fs::write(path, body).map_err(io_err(path))
}

fn prepare_out(out: &Path) -> Result<(), ExportError> {
    if out.exists() {
        if fs::read_dir(out).map_err(io_err(out))?.next().is_some() {
            return Err(ExportError::NotEmpty(out.to_owned()));
        }
    } else {
        fs::create_dir_all(out).map_err(io_err(out))?;
    }
    for sub in ["corpus", "surveys", "alignments", "annotation"] {
        let p = out.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Writes an export bundle. `alignments_dir` holds `{clip_id}.tsv` files to
/// copy alongside the audio.
pub fn export_corpus(
    store: &dyn Store,
    alignments_dir: Option<&Path>,
    filter: ExportFilter,
    out: &Path,
) -> Result<ExportManifest, ExportError> {
    prepare_out(out)?;
    let snap = Snapshot::of(store)?;

    let mut entries = Vec::new();
    let mut n_alignments = 0;
    for c in snap.clips.iter().filter(|c| filter.include_excluded || !c.excluded) {
        let audio = store
            .clip_audio(&c.clip_id)?
            .ok_or_else(|| StoreError::Invalid(format!("audio for clip {} missing", c.clip_id)))?;
        let rel = wav_rel_path(c);
        let path = out.join(&rel);
        fs::create_dir_all(path.parent().expect("nested path")).map_err(io_err(&path))?;
        fs::write(&path, encode_wav(&audio)).map_err(io_err(&path))?;
        let mut alignment_path = None;
        if let Some(dir) = alignments_dir {
            let src = dir.join(format!("{}.tsv", c.clip_id));
            if src.exists() {
                let rel = alignment_rel_path(&c.clip_id);
                fs::copy(&src, out.join(&rel)).map_err(io_err(&src))?;
                alignment_path = Some(rel);
                n_alignments += 1;
            }
        }
        entries.push(CorpusEntry { schema_version: SCHEMA_VERSION, clip: c.clone(), wav_path: rel, alignment_path });
    }

    write_jsonl(&out.join("subjects.jsonl"), &snap.subjects)?;
    write_jsonl(&out.join("sessions.jsonl"), &snap.sessions)?;
    write_jsonl(&out.join("interactions.jsonl"), &snap.interactions)?;
    write_jsonl(&out.join("metadata.jsonl"), &entries)?;
    write_jsonl(&out.join("annotation/pairs.jsonl"), &snap.pairs)?;
    write_jsonl(&out.join("annotation/responses.jsonl"), &snap.responses)?;

    let mut intake: BTreeMap<&str, Vec<SurveyRecord>> = BTreeMap::new();
    let mut per_session: BTreeMap<&str, Vec<SurveyRecord>> = BTreeMap::new();
    for s in &snap.surveys {
        match &s.session_id {
            None => intake.entry(&s.subject_id).or_default().push(s.clone()),
            Some(id) => per_session.entry(id).or_default().push(s.clone()),
        }
    }
    let mut with_sessions = BTreeSet::new();
    for se in &snap.sessions {
        let r = &se.record;
        with_sessions.insert(r.subject_id.as_str());
        let doc = SessionSurveys {
            subject_id: r.subject_id.clone(),
            session_id: Some(r.session_id.clone()),
            intake: intake.get(r.subject_id.as_str()).cloned().unwrap_or_default(),
            session: per_session.remove(r.session_id.as_str()).unwrap_or_default(),
        };
        write_json(&out.join(format!("surveys/{}.json", r.session_id)), &doc)?;
    }
    for (subject, rows) in &intake {
        if !with_sessions.contains(subject) {
            let doc = SessionSurveys { subject_id: subject.to_string(), session_id: None, intake: rows.clone(), session: vec![] };
            write_json(&out.join(format!("surveys/{subject}.json")), &doc)?;
        }
    }

    let mut notes = BTreeMap::new();
    notes.insert("stimulus_clip_order".into(), "series order".into());
    notes.insert("syllable_rate_normalization".into(), "per_subject".into());
    notes.insert("va_audio".into(), "not stored; regenerate from interaction texts".into());
    let manifest = ExportManifest {
        schema_version: SCHEMA_VERSION,
        filter,
        n_subjects: snap.subjects.len(),
        n_sessions: snap.sessions.len(),
        n_clips: entries.len(),
        n_excluded_listed: entries.iter().filter(|e| e.clip.excluded).count(),
        n_interactions: snap.interactions.len(),
        n_surveys: snap.surveys.len(),
        n_pairs: snap.pairs.len(),
        n_responses: snap.responses.len(),
        n_alignments,
        notes,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A bundle read back into memory (audio stays on disk).
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: ExportManifest,
    pub snapshot: Snapshot,
    pub entries: Vec<CorpusEntry>,
}

impl Bundle {
    pub fn read(dir: &Path) -> Result<Bundle, ExportError> {
        let mpath = dir.join("manifest.json");
        let manifest: ExportManifest = serde_json::from_str(&fs::read_to_string(&mpath).map_err(io_err(&mpath))?)
            .map_err(|e| ExportError::Format { path: mpath.clone(), line: e.line(), message: e.to_string() })?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(ExportError::SchemaVersion(manifest.schema_version));
        }
        let entries: Vec<CorpusEntry> = read_jsonl(&dir.join("metadata.jsonl"))?;
        let sessions: Vec<SessionExport> = read_jsonl(&dir.join("sessions.jsonl"))?;

        let mut surveys = Vec::new();
        let mut seen_intake = BTreeSet::new();
        let mut files: Vec<PathBuf> = fs::read_dir(dir.join("surveys"))
            .map_err(io_err(&dir.join("surveys")))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut session_rows = Vec::new();
        for f in files {
            let doc: SessionSurveys = serde_json::from_str(&fs::read_to_string(&f).map_err(io_err(&f))?)
                .map_err(|e| ExportError::Format { path: f.clone(), line: e.line(), message: e.to_string() })?;
            for s in doc.intake {
                if seen_intake.insert((s.subject_id.clone(), s.kind)) {
                    surveys.push(s);
                }
            }
            session_rows.extend(doc.session);
        }
        surveys.extend(session_rows);
        surveys.sort_by(|a, b| {
            (&a.subject_id, a.session_id.as_deref().unwrap_or("")).cmp(&(&b.subject_id, b.session_id.as_deref().unwrap_or("")))
        });

        let snapshot = Snapshot {
            subjects: read_jsonl(&dir.join("subjects.jsonl"))?,
            sessions,
            clips: entries.iter().map(|e| e.clip.clone()).collect(),
            interactions: read_jsonl(&dir.join("interactions.jsonl"))?,
            surveys,
            pairs: read_jsonl(&dir.join("annotation/pairs.jsonl"))?,
            responses: read_jsonl(&dir.join("annotation/responses.jsonl"))?,
        };
        Ok(Bundle { dir: dir.to_owned(), manifest, snapshot, entries })
    }

    pub fn alignment_text(&self, entry: &CorpusEntry) -> Result<Option<String>, ExportError> {
        match &entry.alignment_path {
            None => Ok(None),
            Some(rel) => {
                let p = self.dir.join(rel);
                fs::read_to_string(&p).map(Some).map_err(io_err(&p))
            }
        }
    }
}

/// Loads a bundle into an empty store; alignments are copied to
/// `alignments_out` when given.
pub fn import_bundle(dir: &Path, store: &dyn Store, alignments_out: Option<&Path>) -> Result<Bundle, ExportError> {
    let bundle = Bundle::read(dir)?;
    let paths: BTreeMap<&str, &CorpusEntry> = bundle.entries.iter().map(|e| (e.clip.clip_id.as_str(), e)).collect();
    store.restore(&bundle.snapshot, &mut |c: &ClipRecord| {
        let p = dir.join(&paths[c.clip_id.as_str()].wav_path);
        decode_wav(&fs::read(&p)?).map_err(io::Error::other)
    })?;
    if let Some(out) = alignments_out {
        fs::create_dir_all(out).map_err(io_err(out))?;
        for e in &bundle.entries {
            if let Some(rel) = &e.alignment_path {
                let dst = out.join(format!("{}.tsv", e.clip.clip_id));
                fs::copy(dir.join(rel), &dst).map_err(io_err(&dst))?;
            }
        }
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n_subjects: usize,
    pub mean_audios: f64,
    pub sd_audios: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicsRollup {
    pub settings: BTreeMap<String, usize>,
    pub genders: BTreeMap<String, usize>,
    pub mean_age: Option<f64>,
    pub sd_age: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    /// Non-excluded clips.
    pub n_audios: usize,
    pub n_excluded: usize,
    pub excluded_by_reason: BTreeMap<String, usize>,
    pub mean_duration_s: Option<f64>,
    /// Sample (n - 1) standard deviation.
    pub sd_duration_s: Option<f64>,
    /// Per-subject audio counts grouped by completed series count
    /// (`one_series`, `two_series`, ...).
    pub audios_per_subject: BTreeMap<String, GroupStats>,
    /// Completed series per condition.
    pub series_per_condition: BTreeMap<String, usize>,
    pub demographics: DemographicsRollup,
}

fn series_group(n: usize) -> String {
    match n {
        0 => "no_series".into(),
        1 => "one_series".into(),
        2 => "two_series".into(),
        n => format!("{n}_series"),
    }
}

/// Order-independent aggregation of a store's contents.
pub fn summarize(subjects: &[SubjectRecord], sessions: &[SessionExport], clips: &[ClipRecord]) -> CorpusSummary {
    let kept: Vec<&ClipRecord> = clips.iter().filter(|c| !c.excluded).collect();
    let mut durations: Vec<f64> = kept.iter().map(|c| c.duration_s).collect();
    durations.sort_by(f64::total_cmp);

    let mut excluded_by_reason = BTreeMap::new();
    for c in clips.iter().filter(|c| c.excluded) {
        let reason = c.exclusion_reason.map(|r| serde_json::to_value(r).unwrap().as_str().unwrap().to_owned());
        *excluded_by_reason.entry(reason.unwrap_or_else(|| "other".into())).or_insert(0) += 1;
    }

    let mut completed: BTreeMap<&str, usize> = subjects.iter().map(|s| (s.subject_id.as_str(), 0)).collect();
    let mut series_per_condition: BTreeMap<String, usize> =
        [ConditionKind::HighScore, ConditionKind::LowScore].iter().map(|c| (c.as_str().to_owned(), 0)).collect();
    for se in sessions.iter().filter(|s| s.record.state.phase == Phase::Done) {
        *completed.entry(&se.record.subject_id).or_insert(0) += 1;
        *series_per_condition.entry(se.record.condition.as_str().to_owned()).or_insert(0) += 1;
    }
    let mut audios: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &kept {
        *audios.entry(&c.subject_id).or_insert(0) += 1;
    }
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (subject, n) in &completed {
        groups.entry(series_group(*n)).or_default().push(audios.get(subject).copied().unwrap_or(0) as f64);
    }
    let audios_per_subject = groups
        .into_iter()
        .map(|(g, counts)| {
            let stats = GroupStats { n_subjects: counts.len(), mean_audios: mean(&counts).unwrap_or(0.0), sd_audios: sample_sd(&counts) };
            (g, stats)
        })
        .collect();

    let mut settings = BTreeMap::new();
    let mut genders = BTreeMap::new();
    let mut ages = Vec::new();
    for s in subjects {
        let setting = serde_json::to_value(s.setting).unwrap().as_str().unwrap().to_owned();
        *settings.entry(setting).or_insert(0) += 1;
        if let Some(AnswerValue::Text(g)) = s.demographics.get("gender") {
            *genders.entry(g.clone()).or_insert(0) += 1;
        }
        if let Some(AnswerValue::Int(a)) = s.demographics.get("age") {
            ages.push(*a as f64);
        }
    }
    ages.sort_by(f64::total_cmp);

    CorpusSummary {
        n_audios: kept.len(),
        n_excluded: clips.len() - kept.len(),
        excluded_by_reason,
        mean_duration_s: mean(&durations),
        sd_duration_s: sample_sd(&durations),
        audios_per_subject,
        series_per_condition,
        demographics: DemographicsRollup { settings, genders, mean_age: mean(&ages), sd_age: sample_sd(&ages) },
    }
}

pub fn summarize_corpus(store: &dyn Store) -> Result<CorpusSummary, StoreError> {
    let snap = Snapshot::of(store)?;
    Ok(summarize(&snap.subjects, &snap.sessions, &snap.clips))
}
