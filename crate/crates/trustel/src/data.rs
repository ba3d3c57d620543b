//! Layout of a data directory and wiring of the service state from it.
//!
//! ```text
//! data/
//!   store.sqlite        sessions, clips metadata, surveys, annotation
//!   audio/              one WAV per uploaded clip
//!   alignments/         optional `{clip_id}.tsv` word alignments
//!   asr_registry.json   mock transcriber registry
//!   bank/               optional question bank overriding the shipped one
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::bank::{Bank, BankError};
use crate::config::{AdapterChoice, Clock, Config};
use crate::service::AppState;
use crate::speech::{HttpAsr, HttpTts, MockAsr, MockTts, Synthesizer, Transcriber};
use crate::store::{SqliteStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub fn new(root: &Path) -> Self {
        DataDir { root: root.to_owned() }
    }

    pub fn alignments(&self) -> PathBuf {
        self.root.join("alignments")
    }

    pub fn asr_registry(&self) -> PathBuf {
        self.root.join("asr_registry.json")
    }

    pub fn bank_dir(&self) -> PathBuf {
        self.root.join("bank")
    }

    pub fn open_store(&self) -> Result<SqliteStore, DataError> {
        Ok(SqliteStore::open(&self.root)?)
    }

    /// The bank under `bank/` when present, otherwise the shipped one.
    pub fn bank(&self) -> Result<Bank, DataError> {
        let dir = self.bank_dir();
        if dir.join("questions.json").is_file() {
            Ok(Bank::load_dir(&dir)?)
        } else {
            Ok(Bank::shipped())
        }
    }

    pub fn mock_asr(&self) -> Result<MockAsr, DataError> {
        let path = self.asr_registry();
        MockAsr::with_registry(&path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
    }
}

/// Service state over a data directory. The mock transcriber, when the
/// configuration selects it, is returned too so callers can register
/// transcripts and persist the registry.
pub fn build_state(
    data: &DataDir,
    config: Config,
    clock: Arc<dyn Clock>,
) -> Result<(Arc<AppState>, Option<Arc<MockAsr>>), DataError> {
    let store = Arc::new(data.open_store()?);
    let bank = Arc::new(data.bank()?);
    let (asr, mock): (Arc<dyn Transcriber>, Option<Arc<MockAsr>>) = match &config.asr {
        AdapterChoice::Mock => {
            let m = Arc::new(data.mock_asr()?);
            (m.clone(), Some(m))
        }
        AdapterChoice::Http(h) => (Arc::new(HttpAsr::new(h)), None),
    };
    let tts: Arc<dyn Synthesizer> = match &config.tts {
        AdapterChoice::Mock => Arc::new(MockTts),
        AdapterChoice::Http(h) => Arc::new(HttpTts::new(h)),
    };
    let alignments = Some(data.alignments());
    Ok((Arc::new(AppState::new(store, bank, asr, tts, config, clock, alignments)), mock))
}
