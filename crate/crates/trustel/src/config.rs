use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trustel_core::audio::ToneSpec;
use trustel_core::protocol::{DEFAULT_HIGH_ANCHOR, DEFAULT_LOW_ANCHOR};

use crate::speech::{HttpAdapterConfig, VoiceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterChoice {
    Mock,
    Http(HttpAdapterConfig),
}

/// Service configuration, read from a JSON file and overridden by
/// `TRUSTEL_*` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Seeds series plans and stimulus presentation order.
    pub seed: u64,
    pub bind: String,
    pub high_anchor: f64,
    pub low_anchor: f64,
    pub token_ttl_ms: u64,
    pub admin_token: Option<String>,
    /// Uploads per question whose transcription may fail before the
    /// subject is told to move on.
    pub max_asr_attempts: u32,
    /// `{stars}` is replaced by the anchor score.
    pub bias_message: String,
    pub reminder_message: String,
    pub voice: VoiceConfig,
    pub tone: ToneSpec,
    pub asr: AdapterChoice,
    pub tts: AdapterChoice,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            bind: "127.0.0.1:8080".into(),
            high_anchor: DEFAULT_HIGH_ANCHOR,
            low_anchor: DEFAULT_LOW_ANCHOR,
            token_ttl_ms: 24 * 3600 * 1000,
            admin_token: None,
            max_asr_attempts: 2,
            bias_message: "Vas a interactuar con un asistente virtual que recibió un puntaje promedio de {stars} sobre 5 estrellas."
                .into(),
            reminder_message: "Recordá que este asistente recibió un promedio de {stars} estrellas.".into(),
            voice: VoiceConfig::default(),
            tone: ToneSpec::default(),
            asr: AdapterChoice::Mock,
            tts: AdapterChoice::Mock,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: &'static str, message: String },
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let err = |message: String| ConfigError::Read { path: p.display().to_string(), message };
                let text = fs::read_to_string(p).map_err(|e| err(e.to_string()))?;
                serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
            }
            None => Config::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("TRUSTEL_BIND") {
            self.bind = v;
        }
        if let Some(v) = get("TRUSTEL_SEED") {
            self.seed = v.parse().map_err(|_| ConfigError::Env { name: "TRUSTEL_SEED", message: "not an integer".into() })?;
        }
        if let Some(v) = get("TRUSTEL_ADMIN_TOKEN") {
            self.admin_token = Some(v);
        }
        if let Some(v) = get("TRUSTEL_ASR_URL") {
            self.asr = AdapterChoice::Http(HttpAdapterConfig { base_url: v, ..http_defaults() });
        }
        if let Some(v) = get("TRUSTEL_TTS_URL") {
            self.tts = AdapterChoice::Http(HttpAdapterConfig { base_url: v, ..http_defaults() });
        }
        Ok(())
    }

    pub fn bias_text(&self, stars: f64) -> String {
        self.bias_message.replace("{stars}", &format_stars(stars))
    }

    pub fn reminder_text(&self, stars: f64) -> String {
        self.reminder_message.replace("{stars}", &format_stars(stars))
    }
}

fn http_defaults() -> HttpAdapterConfig {
    serde_json::from_value(serde_json::json!({ "base_url": "" })).expect("defaults")
}

pub fn format_stars(stars: f64) -> String {
    format!("{stars:.1}")
}

/// Derives a sub-seed from a seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }
}

/// Deterministic clock advancing by a fixed step on every reading.
#[derive(Debug)]
pub struct SimClock {
    now: AtomicU64,
    step_ms: u64,
}

impl SimClock {
    pub fn new(start_ms: u64, step_ms: u64) -> Self {
        SimClock { now: AtomicU64::new(start_ms), step_ms }
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        self.now.fetch_add(self.step_ms, Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides() {
        let mut c = Config::default();
        c.apply_env(|k| match k {
            "TRUSTEL_SEED" => Some("42".into()),
            "TRUSTEL_ASR_URL" => Some("http://asr.local".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.seed, 42);
        match &c.asr {
            AdapterChoice::Http(h) => assert_eq!((h.base_url.as_str(), h.token_env.as_str()), ("http://asr.local", "TRUSTEL_SPEECH_TOKEN")),
            other => panic!("{other:?}"),
        }
        assert!(c.apply_env(|k| (k == "TRUSTEL_SEED").then(|| "x".into())).is_err());
    }

    #[test]
    fn messages_show_one_decimal() {
        let c = Config::default();
        assert!(c.bias_text(4.9).contains("4.9 sobre 5"));
        assert!(c.reminder_text(1.4).contains("1.4 estrellas"));
    }

    #[test]
    fn partial_config_file_keeps_defaults() {
        let c: Config = serde_json::from_str(r#"{"seed": 9, "asr": {"kind": "mock"}}"#).unwrap();
        assert_eq!((c.seed, c.max_asr_attempts, c.low_anchor), (9, 2, 1.4));
    }
}
