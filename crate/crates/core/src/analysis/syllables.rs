//! Orthographic syllable counting for Spanish words.
//!
//! Each maximal run of vowel letters contributes one nucleus, plus one more
//! for every adjacent pair of "strong" vowels inside the run. The strong set
//! is a, e, o and the accented weak vowels í, ú (an accent on i/u marks a
//! hiatus, so it never forms a diphthong). `u` in que/qui/gue/gui is silent,
//! and `y` is a vowel only when no vowel follows it (hoy, muy, y).

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::AnalysisError;
use super::alignment::Alignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Strong,
    Weak,
    Consonant,
}

fn base_vowel(c: char) -> Option<(char, bool)> {
    Some(match c {
        'a' | 'e' | 'o' | 'i' | 'u' => (c, false),
        'á' | 'à' => ('a', true),
        'é' | 'è' => ('e', true),
        'ó' | 'ò' => ('o', true),
        'í' | 'ì' | 'ï' => ('i', true),
        'ú' | 'ù' => ('u', true),
        'ü' => ('u', false),
        _ => return None,
    })
}

fn is_vowel_letter(c: char) -> bool {
    base_vowel(c).is_some()
}

fn classify(chars: &[char]) -> Vec<Class> {
    let mut out = Vec::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| chars[p]);
        let next = chars.get(i + 1).copied();
        let class = match base_vowel(c) {
            Some(('a' | 'e' | 'o', _)) => Class::Strong,
            Some((_, true)) => Class::Strong,
            Some(_) => {
                let front_next = matches!(next, Some('e' | 'i' | 'é' | 'í'));
                if c == 'u' && matches!(prev, Some('q' | 'g')) && front_next {
                    Class::Consonant
                } else {
                    Class::Weak
                }
            }
            None if c == 'y' => {
                let vowel_next = next.is_some_and(is_vowel_letter);
                let vowel_prev = prev.is_some_and(is_vowel_letter);
                if !vowel_next && (vowel_prev || i == 0) {
                    Class::Weak
                } else {
                    Class::Consonant
                }
            }
            None => Class::Consonant,
        };
        out.push(class);
    }
    out
}

fn normalize_word(word: &str) -> Vec<char> {
    word.chars().flat_map(char::to_lowercase).filter(|c| c.is_alphabetic()).collect()
}

/// Syllable count, or `NoVowel` when the word has no vowel letter.
pub fn try_count_syllables_es(word: &str) -> Result<usize, AnalysisError> {
    let chars = normalize_word(word);
    let classes = classify(&chars);
    let mut count = 0;
    let mut prev = Class::Consonant;
    for &c in &classes {
        match (prev, c) {
            (_, Class::Consonant) => {}
            (Class::Consonant, _) => count += 1,
            (Class::Strong, Class::Strong) => count += 1,
            _ => {}
        }
        prev = c;
    }
    if count == 0 {
        return Err(AnalysisError::NoVowel(word.to_string()));
    }
    Ok(count)
}

/// Syllable count with vowel-less tokens counted as one syllable.
pub fn count_syllables_es(word: &str) -> usize {
    try_count_syllables_es(word).unwrap_or(1)
}

/// Syllables per second of speech: the syllables of `tokens` (one per
/// non-pause segment, overridden by a segment's own count when present)
/// divided by the summed duration of the non-pause segments.
pub fn syllable_rate(alignment: &Alignment, tokens: &[&str]) -> Result<f64, AnalysisError> {
    let speech: Vec<_> = alignment.speech_segments().collect();
    if speech.is_empty() {
        return Err(AnalysisError::NoSpeech);
    }
    if speech.len() != tokens.len() {
        return Err(AnalysisError::TokenMismatch { tokens: tokens.len(), segments: speech.len() });
    }
    let syllables: usize = speech
        .iter()
        .zip(tokens)
        .map(|(s, t)| s.syllables.map(|n| n as usize).unwrap_or_else(|| count_syllables_es(t)))
        .sum();
    let duration: f64 = speech.iter().map(|s| s.duration()).sum();
    Ok(syllables as f64 / duration)
}

/// [`syllable_rate`] using the alignment's own word labels as the transcript.
pub fn syllable_rate_from_labels(alignment: &Alignment) -> Result<f64, AnalysisError> {
    let words: Vec<String> = alignment.words().into_iter().map(String::from).collect();
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    syllable_rate(alignment, &refs)
}
