//! Mono PCM16 audio clips, a minimal RIFF/WAVE codec and tone-separated
//! concatenation of clips into listening stimuli.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
/// Seconds of placeholder speech per character of text for the mock voice.
pub const MOCK_SECONDS_PER_CHAR: f64 = 0.06;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Self {
        AudioClip { samples, sample_rate }
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        AudioClip { samples: alloc::vec![0; seconds_to_samples(seconds, sample_rate)], sample_rate }
    }

    pub fn channels(&self) -> u16 {
        1
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Little-endian PCM bytes, the payload of the `data` chunk.
    pub fn pcm_bytes(&self) -> Vec<u8> {
        self.samples.iter().flat_map(|s| s.to_le_bytes()).collect()
    }
}

pub fn seconds_to_samples(seconds: f64, sample_rate: u32) -> usize {
    libm::round(seconds * f64::from(sample_rate)).max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WavError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(&'static str),
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes RIFF/WAVE, PCM 16-bit mono. Unknown chunks are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::CorruptHeader("missing RIFF/WAVE signature"));
    }
    let mut at = 12;
    let mut fmt: Option<(u32, u16)> = None;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body = at + 8;
        let end = body.checked_add(size).filter(|e| *e <= bytes.len());
        match id {
            b"fmt " => {
                let end = end.ok_or(WavError::CorruptHeader("fmt chunk truncated"))?;
                if size < 16 {
                    return Err(WavError::CorruptHeader("fmt chunk too short"));
                }
                let format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let block_align = u16_at(bytes, body + 12);
                let bits = u16_at(bytes, body + 14);
                if format != 1 {
                    return Err(WavError::UnsupportedFormat(alloc::format!("format tag {format:#06x}, only PCM")));
                }
                if channels != 1 {
                    return Err(WavError::UnsupportedFormat(alloc::format!("{channels} channels, only mono")));
                }
                if bits != 16 {
                    return Err(WavError::UnsupportedFormat(alloc::format!("{bits}-bit samples, only 16-bit")));
                }
                if rate == 0 || block_align != 2 {
                    return Err(WavError::CorruptHeader("inconsistent fmt fields"));
                }
                fmt = Some((rate, bits));
                at = end;
            }
            b"data" => {
                let (rate, _) = fmt.ok_or(WavError::CorruptHeader("data chunk before fmt chunk"))?;
                let end = end.ok_or(WavError::CorruptHeader("data chunk truncated"))?;
                if size % 2 != 0 {
                    return Err(WavError::CorruptHeader("odd data length for 16-bit samples"));
                }
                let samples = bytes[body..end].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
                return Ok(AudioClip { samples, sample_rate: rate });
            }
            _ => {
                let end = end.ok_or(WavError::CorruptHeader("chunk truncated"))?;
                at = end + (size & 1);
            }
        }
    }
    Err(WavError::CorruptHeader("no data chunk"))
}

/// Canonical 44-byte-header PCM16 mono WAV.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Separator placed between clips of a listening stimulus: a gap of
/// silence, a sine tone, another gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    pub frequency_hz: f64,
    pub tone_duration_s: f64,
    pub gap_duration_s: f64,
    /// Fraction of full scale, at most 0.5.
    pub amplitude: f64,
}

impl Default for ToneSpec {
    fn default() -> Self {
        ToneSpec { frequency_hz: 1000.0, tone_duration_s: 0.5, gap_duration_s: 0.25, amplitude: 0.2 }
    }
}

impl ToneSpec {
    pub fn validate(&self) -> Result<(), AudioError> {
        let positive = [self.frequency_hz, self.tone_duration_s, self.gap_duration_s, self.amplitude]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if positive && self.amplitude <= 0.5 {
            Ok(())
        } else {
            Err(AudioError::InvalidTone)
        }
    }

    /// Samples of one separator (gap, tone, gap).
    pub fn separator(&self, sample_rate: u32) -> Vec<i16> {
        let gap = seconds_to_samples(self.gap_duration_s, sample_rate);
        let mut out = alloc::vec![0i16; gap];
        out.extend(sine(self.frequency_hz, self.tone_duration_s, self.amplitude, sample_rate));
        out.extend(core::iter::repeat_n(0i16, gap));
        out
    }
}

/// A sine burst with 5 ms linear fade-in/out.
pub fn sine(frequency_hz: f64, seconds: f64, amplitude: f64, sample_rate: u32) -> Vec<i16> {
    let n = seconds_to_samples(seconds, sample_rate);
    let fade = (sample_rate as usize / 200).min(n / 2).max(1);
    let sr = f64::from(sample_rate);
    (0..n)
        .map(|i| {
            let edge = i.min(n - 1 - i);
            let env = if edge < fade { edge as f64 / fade as f64 } else { 1.0 };
            let v = amplitude * env * libm::sin(2.0 * core::f64::consts::PI * frequency_hz * i as f64 / sr);
            libm::round(v * f64::from(i16::MAX)) as i16
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AudioError {
    #[error("no clips to merge")]
    Empty,
    #[error("clips have different sample rates")]
    MixedSampleRates,
    #[error("tone parameters must be positive with amplitude <= 0.5")]
    InvalidTone,
    #[error("text to synthesize is empty")]
    EmptyText,
}

/// Concatenates clips with a tone separator between consecutive clips.
/// Clip samples are copied unmodified; a single clip comes back unchanged.
pub fn merge_with_tone(clips: &[AudioClip], tone: &ToneSpec) -> Result<AudioClip, AudioError> {
    tone.validate()?;
    let first = clips.first().ok_or(AudioError::Empty)?;
    let rate = first.sample_rate;
    if clips.iter().any(|c| c.sample_rate != rate) {
        return Err(AudioError::MixedSampleRates);
    }
    let separator = tone.separator(rate);
    // separator k ends at round(k * exact length), so rounding does not
    // accumulate; only the trailing gap absorbs the difference
    let exact = (tone.tone_duration_s + 2.0 * tone.gap_duration_s) * f64::from(rate);
    let boundary = |k: usize| libm::round(k as f64 * exact).max(0.0) as usize;
    let total = clips.iter().map(|c| c.samples.len()).sum::<usize>() + boundary(clips.len() - 1);
    let mut samples = Vec::with_capacity(total);
    for (i, c) in clips.iter().enumerate() {
        if i > 0 {
            let len = boundary(i) - boundary(i - 1);
            samples.extend_from_slice(&separator[..len.min(separator.len())]);
            samples.resize(samples.len() + len.saturating_sub(separator.len()), 0);
        }
        samples.extend_from_slice(&c.samples);
    }
    Ok(AudioClip { samples, sample_rate: rate })
}

/// Deterministic stand-in for synthesized speech: a tone burst lasting
/// 0.06 s per character of `text`, pitched by `pitch_hz`.
pub fn placeholder_speech(text: &str, pitch_hz: f64, sample_rate: u32) -> Result<AudioClip, AudioError> {
    let chars = text.chars().count();
    if chars == 0 {
        return Err(AudioError::EmptyText);
    }
    let seconds = MOCK_SECONDS_PER_CHAR * chars as f64;
    Ok(AudioClip { samples: sine(pitch_hz, seconds, 0.3, sample_rate), sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_second_of_silence() {
        let clip = AudioClip::silence(1.0, 16_000);
        let back = decode_wav(&encode_wav(&clip)).unwrap();
        assert_eq!(back.samples.len(), 16_000);
        assert!(back.samples.iter().all(|s| *s == 0));
        assert_eq!(back.duration_s(), 1.0);
    }

    #[test]
    fn stereo_and_float_are_rejected() {
        let mut bytes = encode_wav(&AudioClip::silence(0.1, 16_000));
        bytes[22] = 2;
        assert!(matches!(decode_wav(&bytes), Err(WavError::UnsupportedFormat(_))));
        let mut bytes = encode_wav(&AudioClip::silence(0.1, 16_000));
        bytes[20] = 3;
        assert!(matches!(decode_wav(&bytes), Err(WavError::UnsupportedFormat(_))));
    }

    #[test]
    fn corrupt_headers() {
        assert!(matches!(decode_wav(b"RIFX"), Err(WavError::CorruptHeader(_))));
        let bytes = encode_wav(&AudioClip::new(alloc::vec![1, 2, 3], 16_000));
        assert!(matches!(decode_wav(&bytes[..bytes.len() - 1]), Err(WavError::CorruptHeader(_))));
        assert!(matches!(decode_wav(&bytes[..36]), Err(WavError::CorruptHeader("no data chunk"))));
    }

    #[test]
    fn extra_chunks_are_skipped() {
        let clip = AudioClip::new(alloc::vec![5, -5, 7], 8_000);
        let canon = encode_wav(&clip);
        let mut with_list = canon[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&canon[36..]);
        assert_eq!(decode_wav(&with_list).unwrap(), clip);
    }

    #[test]
    fn merge_duration_example() {
        let clips: Vec<AudioClip> = (0..6).map(|_| AudioClip::silence(4.7, 16_000)).collect();
        let merged = merge_with_tone(&clips, &ToneSpec::default()).unwrap();
        assert!((merged.duration_s() - 33.2).abs() <= 1.0 / 16_000.0);
    }

    #[test]
    fn merge_single_and_mixed() {
        let c = AudioClip::new(alloc::vec![1, 2, 3], 16_000);
        assert_eq!(merge_with_tone(core::slice::from_ref(&c), &ToneSpec::default()).unwrap(), c);
        let d = AudioClip::new(alloc::vec![1], 44_100);
        assert_eq!(merge_with_tone(&[c, d], &ToneSpec::default()), Err(AudioError::MixedSampleRates));
        assert_eq!(merge_with_tone(&[], &ToneSpec::default()), Err(AudioError::Empty));
        let loud = ToneSpec { amplitude: 0.6, ..ToneSpec::default() };
        assert_eq!(merge_with_tone(&[AudioClip::silence(0.1, 16_000)], &loud), Err(AudioError::InvalidTone));
    }

    #[test]
    fn placeholder_speech_length() {
        let clip = placeholder_speech("hola", 220.0, 16_000).unwrap();
        assert_eq!(clip.samples.len(), 3840);
        assert!((clip.duration_s() - 0.24).abs() < 1e-12);
        assert_eq!(clip, placeholder_speech("hola", 220.0, 16_000).unwrap());
        assert_eq!(placeholder_speech("", 220.0, 16_000), Err(AudioError::EmptyText));
    }

    proptest! {
        #[test]
        fn wav_round_trip(samples in proptest::collection::vec(any::<i16>(), 0..2000), rate in 4000u32..96_000) {
            let clip = AudioClip::new(samples, rate);
            let bytes = encode_wav(&clip);
            let back = decode_wav(&bytes).unwrap();
            prop_assert_eq!(&back, &clip);
            prop_assert_eq!(encode_wav(&back), bytes);
        }

        #[test]
        fn merged_clips_appear_unmodified(lens in proptest::collection::vec(1usize..500, 1..5)) {
            let clips: Vec<AudioClip> = lens.iter().enumerate()
                .map(|(k, n)| AudioClip::new((0..*n).map(|i| (i as i16).wrapping_mul(k as i16 + 3)).collect(), 8000))
                .collect();
            let tone = ToneSpec::default();
            let merged = merge_with_tone(&clips, &tone).unwrap();
            let sep = tone.separator(8000).len();
            let mut at = 0;
            for c in &clips {
                prop_assert_eq!(&merged.samples[at..at + c.samples.len()], &c.samples[..]);
                at += c.samples.len() + sep;
            }
        }
    }
}
