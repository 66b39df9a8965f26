//! File-backed persistence: one JSON document per storyline, job and
//! session, each replaced atomically.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use narrativeplay::memory::MemoryBank;
use narrativeplay::progression::{SessionState, StorySession};
use narrativeplay::storyline::Storyline;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::jobs::IngestionJob;

pub const ENVELOPE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} is corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path} has schema version {found}; this build reads version {expected} and needs a migration")]
    MigrationRequired { path: PathBuf, found: u64, expected: u32 },
}

/// The persisted form of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEnvelope {
    pub schema_version: u32,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub session: StorySession,
    pub memory: MemoryBank,
}

impl SessionEnvelope {
    pub fn new(state: SessionState, now_ms: u64) -> Self {
        Self {
            schema_version: ENVELOPE_SCHEMA_VERSION,
            created_at_ms: now_ms,
            updated_at_ms: now_ms,
            session: state.session,
            memory: state.memory,
        }
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            session: self.session.clone(),
            memory: self.memory.clone(),
        }
    }

    /// Replaces the state and bumps the update time.
    pub fn update(&mut self, state: SessionState, now_ms: u64) {
        self.session = state.session;
        self.memory = state.memory;
        self.updated_at_ms = now_ms.max(self.created_at_ms);
    }

    /// Pretty JSON with a trailing newline; the exact bytes stored on disk.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("envelope serializes");
        out.push(b'\n');
        out
    }

    /// Parses an envelope, checking the schema version before the shape.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self, StoreError> {
        let corrupt = |message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            message,
        };
        let value: Value = serde_json::from_slice(bytes).map_err(|e| corrupt(format!("not JSON: {e}")))?;
        let version = value
            .get("schema_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| corrupt("no schema_version".into()))?;
        if version != u64::from(ENVELOPE_SCHEMA_VERSION) {
            return Err(StoreError::MigrationRequired {
                path: path.to_path_buf(),
                found: version,
                expected: ENVELOPE_SCHEMA_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))
    }
}

/// Writes through a temporary sibling and renames it into place, so a
/// crash leaves either the old document or the new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let tmp = path.with_extension("json.tmp");
    let mut file = fs::File::create(&tmp).map_err(io_err)?;
    file.write_all(bytes).map_err(io_err)?;
    file.sync_all().map_err(io_err)?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err)
}

#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["narratives", "jobs", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir, source })?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn storyline_path(&self, narrative_id: &str) -> PathBuf {
        self.root.join("narratives").join(format!("{narrative_id}.json"))
    }

    pub fn job_path(&self, narrative_id: &str) -> PathBuf {
        self.root.join("jobs").join(format!("{narrative_id}.json"))
    }

    pub fn session_path(&self, session_id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{session_id}.json"))
    }

    pub fn save_storyline(&self, storyline: &Storyline) -> Result<(), StoreError> {
        let mut text = storyline.to_json();
        text.push('\n');
        write_atomic(&self.storyline_path(&storyline.narrative_id), text.as_bytes())
    }

    pub fn load_storyline(&self, narrative_id: &str) -> Result<Option<Storyline>, StoreError> {
        let path = self.storyline_path(narrative_id);
        let Some(text) = read_optional(&path)? else { return Ok(None) };
        let text = String::from_utf8(text).map_err(|e| StoreError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Storyline::from_json(&text).map(Some).map_err(|e| StoreError::Corrupt {
            path,
            message: e.to_string(),
        })
    }

    /// Removes a storyline document if one exists.
    pub fn discard_storyline(&self, narrative_id: &str) -> Result<(), StoreError> {
        let path = self.storyline_path(narrative_id);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(StoreError::Io { path, source: e }),
            _ => Ok(()),
        }
    }

    pub fn save_job(&self, job: &IngestionJob) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(job).expect("job serializes");
        write_atomic(&self.job_path(&job.narrative_id), &bytes)
    }

    /// Every stored job, in narrative id order.
    pub fn load_jobs(&self) -> Result<Vec<IngestionJob>, StoreError> {
        let dir = self.root.join("jobs");
        let entries = fs::read_dir(&dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|path| {
                let bytes = fs::read(&path).map_err(|source| StoreError::Io { path: path.clone(), source })?;
                serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                    path,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn session_exists(&self, session_id: &str) -> bool {
        self.session_path(session_id).exists()
    }

    pub fn save_envelope(&self, envelope: &SessionEnvelope) -> Result<(), StoreError> {
        write_atomic(&self.session_path(&envelope.session.id), &envelope.to_bytes())
    }

    pub fn load_envelope(&self, session_id: &str) -> Result<Option<SessionEnvelope>, StoreError> {
        let path = self.session_path(session_id);
        match read_optional(&path)? {
            Some(bytes) => SessionEnvelope::from_bytes(&path, &bytes).map(Some),
            None => Ok(None),
        }
    }
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, StoreError> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(StoreError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}
