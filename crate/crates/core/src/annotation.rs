//! Perceptual annotation: stimulus pairs built from the last six questions of
//! a subject's two series, forced-choice responses, and Fleiss' kappa with a
//! permutation test.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{merge_with_tone, AudioClip, AudioError, ToneSpec};
use crate::protocol::{ConditionKind, SERIES_LEN};
use crate::seeded_rng;
use crate::survey::Likert;

/// Series positions (1-based) whose recordings make up a stimulus sequence.
pub const STIMULUS_POSITIONS: core::ops::RangeInclusive<usize> = (SERIES_LEN - 5)..=SERIES_LEN;
pub const MIN_PERMUTATIONS: usize = 100;

/// One subject utterance recorded during a series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recording {
    /// 1-based position of the question in the series.
    pub position: usize,
    pub question_id: String,
    pub clip_id: String,
    pub timestamp_ms: u64,
}

/// The recordings of one completed series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesRecordings {
    pub session_id: String,
    pub subject_id: String,
    pub condition: ConditionKind,
    pub complete: bool,
    pub recordings: Vec<Recording>,
}

impl SeriesRecordings {
    /// First recording (by timestamp) of each stimulus position, in series
    /// order, or the positions that have none.
    fn first_recordings(&self) -> Result<Vec<&Recording>, Vec<usize>> {
        let mut first: BTreeMap<usize, &Recording> = BTreeMap::new();
        for r in &self.recordings {
            if !STIMULUS_POSITIONS.contains(&r.position) {
                continue;
            }
            first
                .entry(r.position)
                .and_modify(|cur| {
                    if r.timestamp_ms < cur.timestamp_ms {
                        *cur = r;
                    }
                })
                .or_insert(r);
        }
        let missing: Vec<usize> = STIMULUS_POSITIONS.filter(|p| !first.contains_key(p)).collect();
        if missing.is_empty() {
            Ok(first.into_values().collect())
        } else {
            Err(missing)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRef {
    pub session_id: String,
    pub question_id: String,
    pub position: usize,
    pub clip_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusPair {
    pub pair_id: String,
    pub subject_id: String,
    pub seq_a: Vec<ClipRef>,
    pub seq_b: Vec<ClipRef>,
    /// Ground truth, never shown to raters.
    pub a_is_low_score: bool,
    pub presentation_seed: u64,
}

impl StimulusPair {
    pub fn low_sequence(&self) -> &[ClipRef] {
        if self.a_is_low_score {
            &self.seq_a
        } else {
            &self.seq_b
        }
    }

    pub fn high_sequence(&self) -> &[ClipRef] {
        if self.a_is_low_score {
            &self.seq_b
        } else {
            &self.seq_a
        }
    }

    /// Merges both sequences with tone separators. `fetch` resolves a clip id
    /// to its audio.
    pub fn render(
        &self,
        mut fetch: impl FnMut(&str) -> Option<AudioClip>,
        tone: &ToneSpec,
    ) -> Result<(AudioClip, AudioClip), AnnotationError> {
        let mut merge = |seq: &[ClipRef]| -> Result<AudioClip, AnnotationError> {
            let clips = seq
                .iter()
                .map(|c| fetch(&c.clip_id).ok_or_else(|| AnnotationError::MissingAudio(c.clip_id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(merge_with_tone(&clips, tone)?)
        };
        Ok((merge(&self.seq_a)?, merge(&self.seq_b)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("session {session_id} is not complete")]
    SessionIncomplete { session_id: String },
    #[error("session {session_id} has no recording for positions {missing:?}")]
    IncompleteSession { session_id: String, missing: Vec<usize> },
    #[error("sessions belong to different subjects")]
    SubjectMismatch,
    #[error("expected one low-score and one high-score session")]
    ConditionMismatch,
    #[error("audio for clip {0} not found")]
    MissingAudio(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("items have different numbers of raters")]
    UnbalancedRaters,
    #[error("at least two raters and one item are required")]
    TooFewRaters,
    #[error("all ratings fall in one category; kappa is undefined")]
    DegenerateAgreement,
    #[error("permutation count must be at least {MIN_PERMUTATIONS}")]
    TooFewPermutations,
    #[error("rater {rater_id} answered pair {pair_id} twice")]
    DuplicateResponse { pair_id: String, rater_id: String },
    #[error("response refers to unknown pair {0}")]
    UnknownPair(String),
}

/// Pairs the first recordings of the final six questions of a subject's
/// low-score and high-score series. Which one is played as A follows from
/// `presentation_seed`.
pub fn build_stimulus_pair(
    session_low: &SeriesRecordings,
    session_high: &SeriesRecordings,
    presentation_seed: u64,
) -> Result<StimulusPair, AnnotationError> {
    if session_low.subject_id != session_high.subject_id {
        return Err(AnnotationError::SubjectMismatch);
    }
    if session_low.condition != ConditionKind::LowScore || session_high.condition != ConditionKind::HighScore {
        return Err(AnnotationError::ConditionMismatch);
    }
    let sequence = |s: &SeriesRecordings| -> Result<Vec<ClipRef>, AnnotationError> {
        if !s.complete {
            return Err(AnnotationError::SessionIncomplete { session_id: s.session_id.clone() });
        }
        let recs = s
            .first_recordings()
            .map_err(|missing| AnnotationError::IncompleteSession { session_id: s.session_id.clone(), missing })?;
        Ok(recs
            .into_iter()
            .map(|r| ClipRef {
                session_id: s.session_id.clone(),
                question_id: r.question_id.clone(),
                position: r.position,
                clip_id: r.clip_id.clone(),
            })
            .collect())
    };
    let low = sequence(session_low)?;
    let high = sequence(session_high)?;
    let a_is_low_score = seeded_rng(presentation_seed).random::<bool>();
    let (seq_a, seq_b) = if a_is_low_score { (low, high) } else { (high, low) };
    Ok(StimulusPair {
        pair_id: format!("pair-{}", session_low.subject_id),
        subject_id: session_low.subject_id.clone(),
        seq_a,
        seq_b,
        a_is_low_score,
        presentation_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub pair_id: String,
    pub rater_id: String,
    /// The sequence the rater judged to be addressed to the less
    /// trustworthy assistant.
    pub choice: Choice,
    pub confidence: Likert,
}

/// Category 0: the rater picked the low-score sequence; 1: the high-score one.
pub const CHOSE_LOW: u8 = 0;
pub const CHOSE_HIGH: u8 = 1;

/// Rater-by-item categories, fully crossed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub items: Vec<String>,
    pub raters: Vec<String>,
    /// `ratings[rater][item]`, each in `0..n_categories`.
    pub ratings: Vec<Vec<u8>>,
    pub n_categories: usize,
}

impl RatingMatrix {
    /// Maps choices to ground-truth categories. Every rater must answer every
    /// pair exactly once.
    pub fn from_responses(pairs: &[StimulusPair], responses: &[AnnotationResponse]) -> Result<Self, AnnotationError> {
        let truth: BTreeMap<&str, bool> = pairs.iter().map(|p| (p.pair_id.as_str(), p.a_is_low_score)).collect();
        let mut by_rater: BTreeMap<&str, BTreeMap<&str, u8>> = BTreeMap::new();
        for r in responses {
            let a_low = *truth.get(r.pair_id.as_str()).ok_or_else(|| AnnotationError::UnknownPair(r.pair_id.clone()))?;
            let chose_low = (r.choice == Choice::A) == a_low;
            let cat = if chose_low { CHOSE_LOW } else { CHOSE_HIGH };
            if by_rater.entry(&r.rater_id).or_default().insert(&r.pair_id, cat).is_some() {
                return Err(AnnotationError::DuplicateResponse { pair_id: r.pair_id.clone(), rater_id: r.rater_id.clone() });
            }
        }
        let items: Vec<String> = {
            let rated: BTreeSet<&str> = by_rater.values().flat_map(|m| m.keys().copied()).collect();
            pairs.iter().map(|p| p.pair_id.as_str()).filter(|id| rated.contains(id)).map(String::from).collect()
        };
        let mut ratings = Vec::with_capacity(by_rater.len());
        for answers in by_rater.values() {
            if answers.len() != items.len() {
                return Err(AnnotationError::UnbalancedRaters);
            }
            ratings.push(items.iter().map(|i| answers[i.as_str()]).collect());
        }
        let m = RatingMatrix {
            items,
            raters: by_rater.keys().map(|r| String::from(*r)).collect(),
            ratings,
            n_categories: 2,
        };
        if m.raters.len() < 2 || m.items.is_empty() {
            return Err(AnnotationError::TooFewRaters);
        }
        Ok(m)
    }

    /// Item-by-category counts.
    pub fn counts(&self) -> Vec<Vec<usize>> {
        let mut counts = alloc::vec![alloc::vec![0usize; self.n_categories]; self.items.len()];
        for row in &self.ratings {
            for (i, &c) in row.iter().enumerate() {
                counts[i][c as usize] += 1;
            }
        }
        counts
    }
}

/// Fleiss' kappa from an item-by-category count matrix.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64, AnnotationError> {
    let first = counts.first().ok_or(AnnotationError::TooFewRaters)?;
    let n: usize = first.iter().sum();
    if n < 2 {
        return Err(AnnotationError::TooFewRaters);
    }
    let k = first.len();
    if counts.iter().any(|row| row.len() != k || row.iter().sum::<usize>() != n) {
        return Err(AnnotationError::UnbalancedRaters);
    }
    let items = counts.len() as f64;
    let nf = n as f64;
    let mut p_bar = 0.0;
    let mut totals = alloc::vec![0usize; k];
    for row in counts {
        let sq: usize = row.iter().map(|c| c * c).sum();
        p_bar += (sq - n) as f64 / (nf * (nf - 1.0));
        for (t, c) in totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    p_bar /= items;
    let p_e: f64 = totals
        .iter()
        .map(|&t| {
            let p = t as f64 / (items * nf);
            p * p
        })
        .sum();
    if totals.iter().filter(|&&t| t > 0).count() <= 1 {
        return Err(AnnotationError::DegenerateAgreement);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationScheme {
    /// Shuffle each rater's categories across items, keeping every rater's
    /// marginal counts.
    #[default]
    WithinRater,
    /// Flip every single rating with probability 1/2 (raters guessing).
    FlipEachRating,
}

fn permuted_kappa(matrix: &RatingMatrix, ratings: &[Vec<u8>]) -> Option<f64> {
    let m = RatingMatrix { ratings: ratings.to_vec(), ..matrix.clone() };
    fleiss_kappa(&m.counts()).ok()
}

/// `(1 + #{kappa_perm >= kappa_obs}) / (1 + n_permutations)`.
pub fn permutation_test_kappa(
    matrix: &RatingMatrix,
    n_permutations: usize,
    seed: u64,
    scheme: PermutationScheme,
) -> Result<f64, AnnotationError> {
    if n_permutations < MIN_PERMUTATIONS {
        return Err(AnnotationError::TooFewPermutations);
    }
    let observed = fleiss_kappa(&matrix.counts())?;
    let mut rng = seeded_rng(seed);
    let mut work = matrix.ratings.clone();
    let mut hits = 0usize;
    for _ in 0..n_permutations {
        match scheme {
            PermutationScheme::WithinRater => {
                for row in work.iter_mut() {
                    row.shuffle(&mut rng);
                }
            }
            PermutationScheme::FlipEachRating => {
                for (row, orig) in work.iter_mut().zip(&matrix.ratings) {
                    for (w, &o) in row.iter_mut().zip(orig) {
                        *w = if rng.random::<bool>() { 1 - o } else { o };
                    }
                }
            }
        }
        // degenerate permutations carry no agreement beyond chance
        if permuted_kappa(matrix, &work).is_some_and(|k| k >= observed - 1e-12) {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_permutations) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub kappa: f64,
    pub p_value: f64,
    pub n_items: usize,
    pub n_raters: usize,
    pub n_categories: usize,
}

pub fn agreement(
    matrix: &RatingMatrix,
    n_permutations: usize,
    seed: u64,
    scheme: PermutationScheme,
) -> Result<AgreementResult, AnnotationError> {
    Ok(AgreementResult {
        kappa: fleiss_kappa(&matrix.counts())?,
        p_value: permutation_test_kappa(matrix, n_permutations, seed, scheme)?,
        n_items: matrix.items.len(),
        n_raters: matrix.raters.len(),
        n_categories: matrix.n_categories,
    })
}
