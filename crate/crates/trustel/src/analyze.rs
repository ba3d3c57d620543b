//! Offline analyses over an exported corpus bundle.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trustel_core::analysis::{
    emit_condition_histograms, emit_subject_differences, fit_mixed_model, ks_two_sample_with, mean, subject_differences,
    syllable_rate_from_labels, z_normalize_per_subject, Alignment, AnalysisError, KsMethod, KsResult, MixedModelFit,
    ObservationSet, PlotTable,
};
use trustel_core::annotation::{agreement, AgreementResult, AnnotationError, PermutationScheme, RatingMatrix, CHOSE_LOW};
use trustel_core::protocol::ConditionKind;
use trustel_core::survey::InstrumentKind;

use crate::export::{Bundle, ExportError};

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Data(String),
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), AnalyzeError> {
    let io = |source| AnalyzeError::Io { path: out.join(name).display().to_string(), source };
    fs::create_dir_all(out).map_err(io)?;
    fs::write(out.join(name), contents).map_err(|source| AnalyzeError::Io { path: out.join(name).display().to_string(), source })
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<(), AnalyzeError> {
    write(out, name, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn session_conditions(bundle: &Bundle) -> BTreeMap<&str, ConditionKind> {
    bundle.snapshot.sessions.iter().map(|s| (s.record.session_id.as_str(), s.record.condition)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub measure: String,
    /// Per-subject z-scores pooled over both conditions.
    pub normalization: String,
    pub n_obs: usize,
    pub n_subjects: usize,
    pub degenerate_subjects: Vec<String>,
    /// Fit on the normalized values; `beta1` is high minus low.
    pub fit: MixedModelFit,
    /// Fit on the raw values, for reference.
    pub fit_raw: MixedModelFit,
    pub subjects_with_both: usize,
    pub subjects_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    pub trust: MeasureReport,
    pub confidence: MeasureReport,
}

/// Checkpoint trust stars by condition.
pub fn trust_observations(bundle: &Bundle) -> Result<ObservationSet, AnalyzeError> {
    let conditions = session_conditions(bundle);
    let mut obs = ObservationSet::default();
    for s in &bundle.snapshot.surveys {
        if s.kind != InstrumentKind::Evaluation {
            continue;
        }
        let session = s.session_id.as_deref().ok_or_else(|| AnalyzeError::Data("evaluation survey without a session".into()))?;
        let condition = *conditions.get(session).ok_or_else(|| AnalyzeError::Data(format!("unknown session {session}")))?;
        let stars = s
            .response
            .get("trust_stars")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| AnalyzeError::Data(format!("evaluation survey in {session} has no trust_stars")))?;
        obs.push(&s.subject_id, condition, stars);
    }
    Ok(obs)
}

/// Per-question answer confidence by condition.
pub fn confidence_observations(bundle: &Bundle) -> Result<ObservationSet, AnalyzeError> {
    let conditions = session_conditions(bundle);
    let mut obs = ObservationSet::default();
    for i in &bundle.snapshot.interactions {
        let condition =
            *conditions.get(i.session_id.as_str()).ok_or_else(|| AnalyzeError::Data(format!("unknown session {}", i.session_id)))?;
        obs.push(&i.subject_id, condition, f64::from(i.record.confidence.get()));
    }
    Ok(obs)
}

fn measure(name: &str, obs: &ObservationSet, out: &Path) -> Result<MeasureReport, AnalyzeError> {
    let norm = z_normalize_per_subject(obs);
    let fit = fit_mixed_model(&norm.observations)?;
    let fit_raw = fit_mixed_model(obs)?;
    write(out, &format!("{name}_histograms.csv"), &emit_condition_histograms(obs).to_csv())?;
    write(out, &format!("{name}_differences.csv"), &emit_subject_differences(&norm.observations).to_csv())?;
    let diffs = subject_differences(&norm.observations);
    Ok(MeasureReport {
        measure: name.into(),
        normalization: "per_subject_z".into(),
        n_obs: obs.len(),
        n_subjects: fit.n_subjects,
        degenerate_subjects: norm.degenerate_subjects,
        fit,
        fit_raw,
        subjects_with_both: diffs.len(),
        subjects_positive: diffs.iter().filter(|d| d.difference > 0.0).count(),
    })
}

/// Mixed-model test of the condition effect on trust stars and on answer
/// confidence. Writes `effectiveness.json` and histogram and per-subject
/// difference tables for both measures.
pub fn effectiveness(bundle: &Bundle, out: &Path) -> Result<EffectivenessReport, AnalyzeError> {
    let report = EffectivenessReport {
        trust: measure("trust", &trust_observations(bundle)?, out)?,
        confidence: measure("confidence", &confidence_observations(bundle)?, out)?,
    };
    write_json(out, "effectiveness.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRateTest {
    pub subject_id: String,
    pub n_low: usize,
    pub n_high: usize,
    pub mean_low: f64,
    pub mean_high: f64,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SylrateReport {
    /// Rates are z-scored within each subject before pooling; per-subject
    /// tests are unaffected by this.
    pub normalization: String,
    pub n_clips: usize,
    pub clips_without_alignment: usize,
    pub subjects: Vec<SubjectRateTest>,
    /// Pooled normalized rates, low against high.
    pub pooled: Option<KsResult>,
}

/// `(subject_id, clip_id, condition, syllables per second)`.
pub type ClipRate = (String, String, ConditionKind, f64);

/// Syllable rate of every non-excluded clip with an alignment, and the count
/// of clips without one.
pub fn syllable_rates(bundle: &Bundle) -> Result<(Vec<ClipRate>, usize), AnalyzeError> {
    let mut rows = Vec::new();
    let mut missing = 0;
    for e in bundle.entries.iter().filter(|e| !e.clip.excluded) {
        let Some(text) = bundle.alignment_text(e)? else {
            missing += 1;
            continue;
        };
        let alignment = Alignment::parse_tsv(&text)
            .map_err(|err| AnalyzeError::Data(format!("alignment of {}: {err}", e.clip.clip_id)))?;
        let rate = syllable_rate_from_labels(&alignment)?;
        rows.push((e.clip.subject_id.clone(), e.clip.clip_id.clone(), e.clip.condition, rate));
    }
    Ok((rows, missing))
}

/// Per-subject two-sample KS of syllable rates, low- against high-score
/// series. Writes `sylrate_subjects.csv`, `sylrate_normalized.csv` and
/// `sylrate.json`.
pub fn sylrate(bundle: &Bundle, out: &Path, method: KsMethod) -> Result<SylrateReport, AnalyzeError> {
    let (rows, missing) = syllable_rates(bundle)?;
    let mut obs = ObservationSet::default();
    for (subject, _, cond, rate) in &rows {
        obs.push(subject, *cond, *rate);
    }
    let norm = z_normalize_per_subject(&obs);

    let mut per_subject: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (subject, _, cond, rate) in &rows {
        let e = per_subject.entry(subject.as_str()).or_default();
        match cond {
            ConditionKind::LowScore => e.0.push(*rate),
            ConditionKind::HighScore => e.1.push(*rate),
        }
    }
    let mut subjects = Vec::new();
    let mut table = PlotTable::new(&["subject_id", "n_low", "n_high", "mean_low", "mean_high", "d_statistic", "p_value"]);
    for (subject, (low, high)) in per_subject {
        if low.is_empty() || high.is_empty() {
            continue;
        }
        let ks = ks_two_sample_with(&low, &high, method)?;
        let t = SubjectRateTest {
            subject_id: subject.into(),
            n_low: low.len(),
            n_high: high.len(),
            mean_low: mean(&low).unwrap_or(f64::NAN),
            mean_high: mean(&high).unwrap_or(f64::NAN),
            ks,
        };
        table.push(vec![
            t.subject_id.clone(),
            t.n_low.to_string(),
            t.n_high.to_string(),
            format!("{}", t.mean_low),
            format!("{}", t.mean_high),
            format!("{}", ks.d_statistic),
            format!("{}", ks.p_value),
        ]);
        subjects.push(t);
    }
    write(out, "sylrate_subjects.csv", &table.to_csv())?;

    let mut normalized = PlotTable::new(&["subject_id", "clip_id", "condition", "rate", "z"]);
    for ((subject, clip, cond, rate), z) in rows.iter().zip(&norm.observations.rows) {
        normalized.push(vec![subject.clone(), clip.clone(), cond.as_str().into(), format!("{rate}"), format!("{}", z.value)]);
    }
    write(out, "sylrate_normalized.csv", &normalized.to_csv())?;

    let pick = |c: ConditionKind| norm.observations.rows.iter().filter(|r| r.condition == c).map(|r| r.value).collect::<Vec<_>>();
    let (low, high) = (pick(ConditionKind::LowScore), pick(ConditionKind::HighScore));
    let pooled = if low.is_empty() || high.is_empty() { None } else { Some(ks_two_sample_with(&low, &high, method)?) };
    let report = SylrateReport {
        normalization: "per_subject_z".into(),
        n_clips: rows.len(),
        clips_without_alignment: missing,
        subjects,
        pooled,
    };
    write_json(out, "sylrate.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    #[serde(flatten)]
    pub result: AgreementResult,
    pub permutations: usize,
    pub seed: u64,
    pub scheme: PermutationScheme,
    /// Share of all ratings that picked the low-score sequence.
    pub share_low: f64,
}

/// Fleiss' kappa over the rater responses with a permutation p-value.
/// Writes `agreement.json`, `agreement.csv` (per pair) and
/// `agreement_summary.txt`.
pub fn agreement_analysis(
    bundle: &Bundle,
    out: &Path,
    permutations: usize,
    seed: u64,
    scheme: PermutationScheme,
) -> Result<AgreementReport, AnalyzeError> {
    let matrix = RatingMatrix::from_responses(&bundle.snapshot.pairs, &bundle.snapshot.responses)?;
    let result = agreement(&matrix, permutations, seed, scheme)?;
    let mut table = PlotTable::new(&["pair_id", "chose_low", "chose_high"]);
    for (item, counts) in matrix.items.iter().zip(matrix.counts()) {
        table.push(vec![item.clone(), counts[0].to_string(), counts[1].to_string()]);
    }
    write(out, "agreement.csv", &table.to_csv())?;
    let total: usize = matrix.ratings.iter().map(Vec::len).sum();
    let low = matrix.ratings.iter().flatten().filter(|&&c| c == CHOSE_LOW).count();
    let report = AgreementReport {
        result,
        permutations,
        seed,
        scheme,
        share_low: if total == 0 { 0.0 } else { low as f64 / total as f64 },
    };
    write(
        out,
        "agreement_summary.txt",
        &format!(
            "items\t{}\nraters\t{}\nkappa\t{}\np_value\t{}\npermutations\t{}\nshare_low\t{}\n",
            result.n_items, result.n_raters, result.kappa, result.p_value, permutations, report.share_low
        ),
    )?;
    write_json(out, "agreement.json", &report)?;
    Ok(report)
}
