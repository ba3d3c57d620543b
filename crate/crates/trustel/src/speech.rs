//! ASR and TTS adapters: the contracts, deterministic offline mocks and thin
//! HTTP clients.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trustel_core::audio::{decode_wav, encode_wav, placeholder_speech, AudioClip, DEFAULT_SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionResult {
    pub text: String,
    pub confidence: f64,
    pub failed: bool,
}

impl TranscriptionResult {
    pub fn failed() -> Self {
        TranscriptionResult { text: String::new(), confidence: 0.0, failed: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceConfig {
    pub name: String,
    /// Pitch of the mock synthesizer's placeholder tone.
    pub pitch_hz: f64,
    pub sample_rate: u32,
}

impl Default for VoiceConfig {
    fn default() -> Self {
        VoiceConfig { name: "es-ES-female".into(), pitch_hz: 220.0, sample_rate: DEFAULT_SAMPLE_RATE }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpeechError {
    #[error("speech service unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("empty audio clip")]
    EmptyClip,
    #[error("text to synthesize is empty")]
    EmptyText,
    #[error("speech service returned an invalid response: {0}")]
    BadResponse(String),
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, clip: &AudioClip) -> Result<TranscriptionResult, SpeechError>;
}

pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, text: &str, voice: &VoiceConfig) -> Result<AudioClip, SpeechError>;
}

/// Hex SHA-256 of the clip's PCM bytes and sample rate.
pub fn fingerprint(clip: &AudioClip) -> String {
    let mut h = Sha256::new();
    h.update(clip.sample_rate.to_le_bytes());
    h.update(clip.pcm_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Mock recognizer backed by a sidecar registry of audio fingerprint to
/// transcript. Unregistered clips fail.
#[derive(Debug, Default)]
pub struct MockAsr {
    registry: RwLock<BTreeMap<String, String>>,
    path: Option<PathBuf>,
}

impl MockAsr {
    pub fn new() -> Self {
        MockAsr::default()
    }

    /// Uses (and creates if missing) a JSON registry file.
    pub fn with_registry(path: &Path) -> io::Result<Self> {
        let registry = if path.exists() {
            serde_json::from_str(&fs::read_to_string(path)?).map_err(io::Error::other)?
        } else {
            BTreeMap::new()
        };
        Ok(MockAsr { registry: RwLock::new(registry), path: Some(path.to_owned()) })
    }

    pub fn register(&self, clip: &AudioClip, transcript: &str) {
        self.register_fingerprint(&fingerprint(clip), transcript);
    }

    pub fn register_fingerprint(&self, fp: &str, transcript: &str) {
        self.registry.write().unwrap().insert(fp.to_owned(), transcript.to_owned());
    }

    pub fn len(&self) -> usize {
        self.registry.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the registry back to its file, if it has one.
    pub fn save(&self) -> io::Result<()> {
        if let Some(path) = &self.path {
            let body = serde_json::to_string_pretty(&*self.registry.read().unwrap()).map_err(io::Error::other)?;
            fs::write(path, body)?;
        }
        Ok(())
    }
}

impl Transcriber for MockAsr {
    fn transcribe(&self, clip: &AudioClip) -> Result<TranscriptionResult, SpeechError> {
        if clip.is_empty() {
            return Err(SpeechError::EmptyClip);
        }
        Ok(match self.registry.read().unwrap().get(&fingerprint(clip)) {
            Some(text) => TranscriptionResult { text: text.clone(), confidence: 1.0, failed: false },
            None => TranscriptionResult::failed(),
        })
    }
}

/// Mock synthesizer: a tone burst of 0.06 s per character.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockTts;

impl Synthesizer for MockTts {
    fn synthesize(&self, text: &str, voice: &VoiceConfig) -> Result<AudioClip, SpeechError> {
        placeholder_speech(text, voice.pitch_hz, voice.sample_rate).map_err(|_| SpeechError::EmptyText)
    }
}

/// Connection settings for the HTTP adapters. The token is read from the
/// named environment variable at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpAdapterConfig {
    pub base_url: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_token_env() -> String {
    "TRUSTEL_SPEECH_TOKEN".into()
}

fn default_timeout_ms() -> u64 {
    10_000
}

#[derive(Debug)]
struct HttpClient {
    agent: ureq::Agent,
    base_url: String,
    token: Option<String>,
}

impl HttpClient {
    fn new(cfg: &HttpAdapterConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient {
            agent,
            base_url: cfg.base_url.trim_end_matches('/').to_owned(),
            token: std::env::var(&cfg.token_env).ok(),
        }
    }

    fn post(&self, path: &str, content_type: &str, body: &[u8]) -> Result<Vec<u8>, SpeechError> {
        let mut req = self.agent.post(format!("{}{path}", self.base_url)).header("Content-Type", content_type);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| SpeechError::AdapterUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(SpeechError::AdapterUnavailable(format!("status {status}")));
        }
        if status >= 400 {
            return Err(SpeechError::BadResponse(format!("status {status}")));
        }
        resp.body_mut().read_to_vec().map_err(|e| SpeechError::AdapterUnavailable(e.to_string()))
    }
}

/// POSTs the WAV to `{base_url}/transcribe`; expects
/// `{"text": ..., "confidence": ...}`, an empty text meaning failure.
#[derive(Debug)]
pub struct HttpAsr(HttpClient);

impl HttpAsr {
    pub fn new(cfg: &HttpAdapterConfig) -> Self {
        HttpAsr(HttpClient::new(cfg))
    }
}

#[derive(Deserialize)]
struct AsrReply {
    text: String,
    #[serde(default)]
    confidence: Option<f64>,
}

impl Transcriber for HttpAsr {
    fn transcribe(&self, clip: &AudioClip) -> Result<TranscriptionResult, SpeechError> {
        if clip.is_empty() {
            return Err(SpeechError::EmptyClip);
        }
        let body = self.0.post("/transcribe", "audio/wav", &encode_wav(clip))?;
        let reply: AsrReply = serde_json::from_slice(&body).map_err(|e| SpeechError::BadResponse(e.to_string()))?;
        if reply.text.trim().is_empty() {
            return Ok(TranscriptionResult::failed());
        }
        Ok(TranscriptionResult {
            text: reply.text,
            confidence: reply.confidence.unwrap_or(1.0).clamp(0.0, 1.0),
            failed: false,
        })
    }
}

/// POSTs `{"text": ..., "voice": ...}` to `{base_url}/synthesize`; expects a
/// mono PCM16 WAV back.
#[derive(Debug)]
pub struct HttpTts(HttpClient);

impl HttpTts {
    pub fn new(cfg: &HttpAdapterConfig) -> Self {
        HttpTts(HttpClient::new(cfg))
    }
}

impl Synthesizer for HttpTts {
    fn synthesize(&self, text: &str, voice: &VoiceConfig) -> Result<AudioClip, SpeechError> {
        if text.is_empty() {
            return Err(SpeechError::EmptyText);
        }
        let req = serde_json::json!({ "text": text, "voice": voice.name, "sample_rate": voice.sample_rate });
        let body = self.0.post("/synthesize", "application/json", req.to_string().as_bytes())?;
        decode_wav(&body).map_err(|e| SpeechError::BadResponse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_asr_lookup() {
        let asr = MockAsr::new();
        let clip = AudioClip::new(vec![1, 2, 3], 16_000);
        assert!(asr.transcribe(&clip).unwrap().failed);
        asr.register(&clip, "que hora es");
        let r = asr.transcribe(&clip).unwrap();
        assert_eq!((r.text.as_str(), r.confidence, r.failed), ("que hora es", 1.0, false));
        let other = AudioClip::new(vec![1, 2, 3], 8_000);
        assert!(asr.transcribe(&other).unwrap().failed);
        assert!(matches!(asr.transcribe(&AudioClip::new(vec![], 16_000)), Err(SpeechError::EmptyClip)));
    }

    #[test]
    fn registry_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("asr.json");
        let clip = AudioClip::new(vec![5; 10], 16_000);
        let asr = MockAsr::with_registry(&path).unwrap();
        asr.register(&clip, "hola");
        asr.save().unwrap();
        let again = MockAsr::with_registry(&path).unwrap();
        assert_eq!(again.transcribe(&clip).unwrap().text, "hola");
    }

    #[test]
    fn mock_tts_is_length_proportional_and_deterministic() {
        let v = VoiceConfig::default();
        let a = MockTts.synthesize("hola", &v).unwrap();
        assert!((a.duration_s() - 0.24).abs() <= 1.0 / 16_000.0);
        assert_eq!(a, MockTts.synthesize("hola", &v).unwrap());
        assert!(matches!(MockTts.synthesize("", &v), Err(SpeechError::EmptyText)));
    }
}
