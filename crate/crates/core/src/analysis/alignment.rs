use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label marking a pause row in alignment files.
pub const PAUSE_LABEL: &str = "<P>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLabel {
    Pause,
    Word(String),
}

impl SegmentLabel {
    pub fn parse(s: &str) -> Self {
        if s == PAUSE_LABEL {
            SegmentLabel::Pause
        } else {
            SegmentLabel::Word(s.into())
        }
    }

    pub fn is_pause(&self) -> bool {
        matches!(self, SegmentLabel::Pause)
    }

    pub fn as_str(&self) -> &str {
        match self {
            SegmentLabel::Pause => PAUSE_LABEL,
            SegmentLabel::Word(w) => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: SegmentLabel,
    pub start_s: f64,
    pub end_s: f64,
    /// Hand-corrected syllable count overriding the orthographic count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syllables: Option<u32>,
}

impl Segment {
    pub fn word(label: &str, start_s: f64, end_s: f64) -> Self {
        Segment { label: SegmentLabel::Word(label.into()), start_s, end_s, syllables: None }
    }

    pub fn pause(start_s: f64, end_s: f64) -> Self {
        Segment { label: SegmentLabel::Pause, start_s, end_s, syllables: None }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignmentError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("segment {index}: end {end} is not after start {start}")]
    EmptySegment { index: usize, start: f64, end: f64 },
    #[error("segment {index} starts at {start} before previous end {previous_end}")]
    Overlap { index: usize, start: f64, previous_end: f64 },
    #[error("segment {index} has a non-finite time")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    segments: Vec<Segment>,
}

impl Alignment {
    /// Validates ordering: every segment has `end > start` and starts no
    /// earlier than the previous one ends.
    pub fn new(segments: Vec<Segment>) -> Result<Self, AlignmentError> {
        let mut previous_end = f64::NEG_INFINITY;
        for (index, s) in segments.iter().enumerate() {
            if !s.start_s.is_finite() || !s.end_s.is_finite() {
                return Err(AlignmentError::NonFinite { index });
            }
            if s.end_s <= s.start_s {
                return Err(AlignmentError::EmptySegment { index, start: s.start_s, end: s.end_s });
            }
            if s.start_s < previous_end {
                return Err(AlignmentError::Overlap { index, start: s.start_s, previous_end });
            }
            previous_end = s.end_s;
        }
        Ok(Alignment { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn speech_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| !s.label.is_pause())
    }

    pub fn speech_duration(&self) -> f64 {
        self.speech_segments().map(Segment::duration).sum()
    }

    /// Word labels of the non-pause segments, in order.
    pub fn words(&self) -> Vec<&str> {
        self.speech_segments().map(|s| s.label.as_str()).collect()
    }

    /// Parses `label<TAB>start<TAB>end[<TAB>syllables]` rows. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse_tsv(text: &str) -> Result<Self, AlignmentError> {
        let mut segments = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let row = raw.trim_end_matches('\r');
            if row.trim().is_empty() || row.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = row.split('\t').collect();
            if !(3..=4).contains(&cols.len()) {
                return Err(AlignmentError::Parse { line, message: format!("expected 3 or 4 columns, found {}", cols.len()) });
            }
            let time = |c: &str, what: &str| {
                c.trim().parse::<f64>().map_err(|_| AlignmentError::Parse { line, message: format!("invalid {what} `{c}`") })
            };
            let syllables = match cols.get(3).map(|c| c.trim()) {
                None | Some("") => None,
                Some(c) => Some(c.parse::<u32>().map_err(|_| AlignmentError::Parse {
                    line,
                    message: format!("invalid syllable count `{c}`"),
                })?),
            };
            let label = cols[0].trim();
            if label.is_empty() {
                return Err(AlignmentError::Parse { line, message: "empty label".into() });
            }
            segments.push(Segment {
                label: SegmentLabel::parse(label),
                start_s: time(cols[1], "start")?,
                end_s: time(cols[2], "end")?,
                syllables,
            });
        }
        Alignment::new(segments)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            let _ = write!(out, "{}\t{}\t{}", s.label.as_str(), s.start_s, s.end_s);
            if let Some(n) = s.syllables {
                let _ = write!(out, "\t{n}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let text = "hola\t0.1\t0.4\n<P>\t0.4\t0.9\nqué\t0.9\t1.2\t1\n";
        let a = Alignment::parse_tsv(text).unwrap();
        assert_eq!(a.segments().len(), 3);
        assert!(a.segments()[1].label.is_pause());
        assert_eq!(a.segments()[2].syllables, Some(1));
        assert_eq!(a.words(), ["hola", "qué"]);
        assert_eq!(a.to_tsv(), text);
        assert_eq!(Alignment::parse_tsv(&a.to_tsv()).unwrap(), a);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(Alignment::parse_tsv("a\t0\n"), Err(AlignmentError::Parse { line: 1, .. })));
        assert!(matches!(Alignment::parse_tsv("\na\t0\tx\n"), Err(AlignmentError::Parse { line: 2, .. })));
        assert!(matches!(Alignment::parse_tsv("a\t0.5\t0.5\n"), Err(AlignmentError::EmptySegment { index: 0, .. })));
        assert!(matches!(
            Alignment::parse_tsv("a\t0\t1\nb\t0.9\t2\n"),
            Err(AlignmentError::Overlap { index: 1, .. })
        ));
        assert!(matches!(Alignment::parse_tsv("a\t0\tinf\n"), Err(AlignmentError::NonFinite { index: 0 })));
    }
}
