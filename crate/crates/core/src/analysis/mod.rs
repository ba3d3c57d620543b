//! Statistics over collected sessions: per-subject normalization, the
//! random-intercept mixed model for the condition effect, the two-sample
//! Kolmogorov-Smirnov test, orthographic Spanish syllable counting,
//! syllable rate without pauses, and plot tables.

mod alignment;
mod ks;
mod mixed;
mod normalize;
mod plots;
mod syllables;

pub use alignment::{Alignment, AlignmentError, Segment, SegmentLabel, PAUSE_LABEL};
pub use ks::{kolmogorov_q, ks_statistic, ks_two_sample, ks_two_sample_with, KsMethod, KsResult};
pub use mixed::{fit_mixed_model, log_likelihood, profiled_log_likelihood, MixedModelFit, LOG_LAMBDA_RANGE, MAX_ITERATIONS};
pub use normalize::{z_normalize_per_subject, Normalized, Observation, ObservationSet};
pub use plots::{
    condition_means, emit_condition_histograms, emit_subject_differences, subject_differences, PlotTable, SubjectDifference, HIST_MAX, HIST_MIN,
    HIST_WIDTH,
};
pub use syllables::{count_syllables_es, syllable_rate, syllable_rate_from_labels, try_count_syllables_es};

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
    #[error("optimizer did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("empty sample")]
    EmptySample,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("word `{0}` has no vowel")]
    NoVowel(String),
    #[error("alignment has no speech segments")]
    NoSpeech,
    #[error("{tokens} transcript tokens for {segments} speech segments")]
    TokenMismatch { tokens: usize, segments: usize },
    #[error("permutation count must be at least 100")]
    TooFewPermutations,
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample (n - 1) standard deviation; `None` below two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some(libm::sqrt(ss / (xs.len() - 1) as f64))
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        libm::erfc(libm::sqrt(x / 2.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sd_example() {
        assert_eq!(mean(&[3.0, 5.0, 7.0]), Some(5.0));
        assert_eq!(sample_sd(&[3.0, 5.0, 7.0]), Some(2.0));
        assert_eq!(sample_sd(&[3.0]), None);
    }

    #[test]
    fn chi2_reference_points() {
        // P(X > 3.841459) = 0.05 for one degree of freedom
        assert!((chi2_1_sf(3.841_458_820_694_124) - 0.05).abs() < 1e-9);
        assert_eq!(chi2_1_sf(0.0), 1.0);
        assert_eq!(chi2_1_sf(-1e-9), 1.0);
    }
}
