//! Service configuration: runtime knobs plus the provider file, which
//! holds a `[provider]` table and an optional `[media]` table (TOML, or
//! JSON when the file ends in `.json`).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use narrativeplay::extraction::ExtractionConfig;
use narrativeplay::media::{HttpMediaProvider, MediaProvider, MediaStore, StubMediaProvider, VoiceCatalog, DEFAULT_STYLE};
use narrativeplay::progression::EngineConfig;
use narrativeplay::provider::{FixtureSet, Gateway, ProviderConfig, ProviderKind, CREDENTIALS_ENV};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_BODY_BYTES: usize = 1 << 20;
pub const DEFAULT_WORKERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub media_dir: PathBuf,
    /// Largest accepted narrative body, in bytes.
    pub max_body_bytes: usize,
    /// Ingestion jobs that may run at once.
    pub workers: usize,
    pub style: String,
    /// Synthesize portraits and scenes at the end of ingestion.
    pub prefetch_media: bool,
    pub engine: EngineConfig,
    pub extraction: ExtractionConfig,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, media_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            media_dir: media_dir.into(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            workers: DEFAULT_WORKERS,
            style: DEFAULT_STYLE.to_string(),
            prefetch_media: true,
            engine: EngineConfig::default(),
            extraction: ExtractionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediaBackend {
    Stub,
    Http {
        endpoint: String,
        #[serde(default = "default_image_model")]
        image_model: String,
        #[serde(default = "default_speech_model")]
        speech_model: String,
        #[serde(default = "default_credentials_env")]
        credentials_env: String,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

fn default_image_model() -> String {
    "dall-e-3".into()
}

fn default_speech_model() -> String {
    "tts-1".into()
}

fn default_credentials_env() -> String {
    CREDENTIALS_ENV.into()
}

fn default_style() -> String {
    DEFAULT_STYLE.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaSettings {
    #[serde(flatten)]
    pub backend: MediaBackend,
    #[serde(default = "default_style")]
    pub style: String,
    /// Voice tag to provider voice id; the stub catalog when absent.
    #[serde(default)]
    pub voices: Option<VoiceCatalog>,
}

impl Default for MediaSettings {
    fn default() -> Self {
        Self {
            backend: MediaBackend::Stub,
            style: default_style(),
            voices: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderFile {
    pub provider: ProviderConfig,
    #[serde(default)]
    pub media: MediaSettings,
    /// Directory that relative fixture paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ProviderFile {
    /// Mock chat and embeddings, stub media, no fixtures.
    pub fn mock(seed: u64) -> Self {
        Self {
            provider: ProviderConfig::mock(seed),
            media: MediaSettings::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut file: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        file.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(file)
    }

    /// Fixture files named in the mock settings, merged in order.
    pub fn fixtures(&self) -> anyhow::Result<FixtureSet> {
        let mut set = FixtureSet::new();
        if self.provider.kind == ProviderKind::Mock {
            for name in &self.provider.mock.fixtures {
                let path = self.base_dir.join(name);
                set.merge(FixtureSet::load(&path)?);
            }
        }
        Ok(set)
    }

    pub fn gateway(&self) -> anyhow::Result<Gateway> {
        Ok(Gateway::from_config(&self.provider, self.fixtures()?)?)
    }

    pub fn media_provider(&self) -> anyhow::Result<Arc<dyn MediaProvider>> {
        Ok(match &self.media.backend {
            MediaBackend::Stub => Arc::new(StubMediaProvider),
            MediaBackend::Http {
                endpoint,
                image_model,
                speech_model,
                credentials_env,
                timeout_secs,
            } => {
                if endpoint.trim().is_empty() {
                    bail!("media endpoint is empty");
                }
                let key = std::env::var(credentials_env)
                    .with_context(|| format!("environment variable {credentials_env} is not set"))?;
                let timeout = Duration::from_secs(timeout_secs.unwrap_or(120));
                Arc::new(HttpMediaProvider::new(endpoint, &key, image_model, speech_model, timeout))
            }
        })
    }

    pub fn media_store(&self, dir: &Path) -> anyhow::Result<MediaStore> {
        Ok(MediaStore::new(dir, self.media_provider()?)?)
    }

    pub fn voices(&self) -> VoiceCatalog {
        self.media.voices.clone().unwrap_or_else(VoiceCatalog::stub)
    }
}
