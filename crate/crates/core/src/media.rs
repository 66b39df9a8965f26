//! Portraits, scene backgrounds and speech behind a provider trait, with a
//! content-addressed on-disk cache.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::hashing::{digest, hex_digest};
use crate::provider::{http_agent, join_url, post_json_bytes};
use crate::storyline::{AgeBand, CharacterProfile, EnvironmentDescription, Gender};

pub const DEFAULT_STYLE: &str = "storybook illustration";
pub const STUB_IMAGE_SIZE: u32 = 64;
pub const STUB_SAMPLE_RATE: u32 = 8000;
pub const STUB_SAMPLES_PER_CHAR: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Portrait,
    Scene,
    Speech,
}

impl AssetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Portrait => "portrait",
            Self::Scene => "scene",
            Self::Speech => "speech",
        }
    }

    pub fn media_type(self) -> MediaType {
        match self {
            Self::Portrait | Self::Scene => MediaType::Image,
            Self::Speech => MediaType::Audio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaType {
    Image,
    Audio,
}

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("character {0} has no appearance to draw from")]
    MissingAppearance(String),
    #[error("environment {0:?} has no description")]
    EmptyEnvironment(String),
    #[error("speech text is empty")]
    EmptySpeech,
    #[error("voice catalog is empty")]
    EmptyCatalog,
    #[error("media provider failed: {0}")]
    Provider(String),
    #[error("could not encode media: {0}")]
    Encode(String),
    #[error("media store I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// What to synthesize. `params` carries provider-relevant settings such as
/// the voice id, and takes part in the asset id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRequest {
    pub kind: AssetKind,
    pub prompt: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl MediaRequest {
    pub fn new(kind: AssetKind, prompt: impl Into<String>) -> Self {
        Self {
            kind,
            prompt: prompt.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn portrait(c: &CharacterProfile, style: &str) -> Result<Self, MediaError> {
        Ok(Self::new(AssetKind::Portrait, build_portrait_prompt(c, style)?))
    }

    pub fn scene(env: &EnvironmentDescription, style: &str) -> Result<Self, MediaError> {
        Ok(Self::new(AssetKind::Scene, build_scene_prompt(env, style)?))
    }

    pub fn speech(text: &str, voice: &VoiceSelection) -> Result<Self, MediaError> {
        if text.trim().is_empty() {
            return Err(MediaError::EmptySpeech);
        }
        Ok(Self::new(AssetKind::Speech, text.trim()).with_param("voice", voice.provider_voice_id.clone()))
    }

    /// Content hash of kind, prompt, provider and params.
    pub fn asset_id(&self, provider: &str) -> String {
        let params = serde_json::to_string(&self.params).expect("string map serializes");
        hex_digest(&[self.kind.as_str(), provider, &self.prompt, &params])
    }
}

pub fn build_portrait_prompt(c: &CharacterProfile, style: &str) -> Result<String, MediaError> {
    if c.appearance.trim().is_empty() {
        return Err(MediaError::MissingAppearance(c.name.clone()));
    }
    Ok(format!(
        "portrait of {}, {}, {}, {}, {}",
        c.name,
        c.appearance.trim(),
        c.age_band.as_str(),
        c.gender.as_str(),
        style
    ))
}

pub fn build_scene_prompt(env: &EnvironmentDescription, style: &str) -> Result<String, MediaError> {
    if env.description.trim().is_empty() {
        return Err(MediaError::EmptyEnvironment(env.location_name.clone()));
    }
    let keywords: Vec<&str> = env.keywords.iter().map(|k| k.trim()).filter(|k| !k.is_empty()).collect();
    let mut parts = Vec::new();
    if !keywords.is_empty() {
        parts.push(keywords.join(", "));
    }
    parts.push(env.description.trim().to_string());
    parts.push("no people".to_string());
    parts.push(style.to_string());
    Ok(parts.join(", "))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaAsset {
    pub id: String,
    pub kind: AssetKind,
    pub media_type: MediaType,
    pub content_type: String,
    pub storage_path: PathBuf,
    pub source_prompt: String,
    pub provider: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaBytes {
    pub bytes: Vec<u8>,
    pub content_type: String,
}

pub trait MediaProvider: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn synthesize(&self, request: &MediaRequest) -> Result<MediaBytes, MediaError>;
}

/// Offline provider: a solid-colour PNG picked from the prompt hash, or
/// silent 16-bit mono WAV whose length grows with the text.
#[derive(Debug, Clone, Default)]
pub struct StubMediaProvider;

impl StubMediaProvider {
    pub fn image(prompt: &str) -> Result<Vec<u8>, MediaError> {
        let h = digest(&[prompt.as_bytes()]);
        let rgb = [h[0], h[1], h[2]];
        let pixels: Vec<u8> = rgb.iter().copied().cycle().take((STUB_IMAGE_SIZE * STUB_IMAGE_SIZE * 3) as usize).collect();
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, STUB_IMAGE_SIZE, STUB_IMAGE_SIZE);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().map_err(|e| MediaError::Encode(e.to_string()))?;
            writer.write_image_data(&pixels).map_err(|e| MediaError::Encode(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn speech(text: &str) -> Result<Vec<u8>, MediaError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: STUB_SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut writer = hound::WavWriter::new(&mut cursor, spec).map_err(|e| MediaError::Encode(e.to_string()))?;
            for _ in 0..text.chars().count() * STUB_SAMPLES_PER_CHAR {
                writer.write_sample(0i16).map_err(|e| MediaError::Encode(e.to_string()))?;
            }
            writer.finalize().map_err(|e| MediaError::Encode(e.to_string()))?;
        }
        Ok(cursor.into_inner())
    }
}

impl MediaProvider for StubMediaProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn synthesize(&self, request: &MediaRequest) -> Result<MediaBytes, MediaError> {
        Ok(match request.kind.media_type() {
            MediaType::Image => MediaBytes {
                bytes: Self::image(&request.prompt)?,
                content_type: "image/png".into(),
            },
            MediaType::Audio => MediaBytes {
                bytes: Self::speech(&request.prompt)?,
                content_type: "audio/wav".into(),
            },
        })
    }
}

/// OpenAI-compatible image generation and text-to-speech endpoints.
#[derive(Debug)]
pub struct HttpMediaProvider {
    agent: ureq::Agent,
    endpoint: String,
    key: String,
    image_model: String,
    speech_model: String,
    image_size: String,
}

impl HttpMediaProvider {
    pub fn new(endpoint: &str, key: &str, image_model: &str, speech_model: &str, timeout: Duration) -> Self {
        Self {
            agent: http_agent(timeout),
            endpoint: endpoint.to_string(),
            key: key.to_string(),
            image_model: image_model.to_string(),
            speech_model: speech_model.to_string(),
            image_size: "512x512".into(),
        }
    }
}

impl MediaProvider for HttpMediaProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn synthesize(&self, request: &MediaRequest) -> Result<MediaBytes, MediaError> {
        let fail = |e: crate::provider::ProviderError| MediaError::Provider(e.to_string());
        match request.kind.media_type() {
            MediaType::Image => {
                let body = json!({
                    "model": self.image_model,
                    "prompt": request.prompt,
                    "size": self.image_size,
                    "response_format": "b64_json",
                });
                let url = join_url(&self.endpoint, "images/generations");
                let (bytes, _) = post_json_bytes(&self.agent, &url, &self.key, &body).map_err(fail)?;
                let value: Value = serde_json::from_slice(&bytes).map_err(|e| MediaError::Provider(e.to_string()))?;
                let b64 = value
                    .pointer("/data/0/b64_json")
                    .and_then(Value::as_str)
                    .ok_or_else(|| MediaError::Provider("image response has no data[0].b64_json".into()))?;
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| MediaError::Provider(e.to_string()))?;
                Ok(MediaBytes {
                    bytes,
                    content_type: "image/png".into(),
                })
            }
            MediaType::Audio => {
                let voice = request.params.get("voice").cloned().unwrap_or_else(|| "alloy".into());
                let body = json!({
                    "model": self.speech_model,
                    "input": request.prompt,
                    "voice": voice,
                    "response_format": "wav",
                });
                let url = join_url(&self.endpoint, "audio/speech");
                let (bytes, content_type) = post_json_bytes(&self.agent, &url, &self.key, &body).map_err(fail)?;
                Ok(MediaBytes {
                    bytes,
                    content_type: content_type.unwrap_or_else(|| "audio/wav".into()),
                })
            }
        }
    }
}

fn extension(content_type: &str) -> &'static str {
    match content_type.split(';').next().unwrap_or("").trim() {
        "image/png" => "png",
        "image/jpeg" => "jpg",
        "image/webp" => "webp",
        "audio/wav" | "audio/x-wav" | "audio/wave" => "wav",
        "audio/mpeg" => "mp3",
        "audio/ogg" => "ogg",
        _ => "bin",
    }
}

type Slot = Arc<Mutex<Option<MediaAsset>>>;

/// Content-addressed asset cache. Concurrent requests for one asset wait
/// on a per-asset slot so the provider is called once. Failures are not
/// cached.
#[derive(Debug)]
pub struct MediaStore {
    dir: PathBuf,
    provider: Arc<dyn MediaProvider>,
    slots: Mutex<HashMap<String, Slot>>,
    registered: Mutex<HashMap<String, MediaRequest>>,
    invocations: AtomicUsize,
}

impl MediaStore {
    pub fn new(dir: impl Into<PathBuf>, provider: Arc<dyn MediaProvider>) -> Result<Self, MediaError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            provider,
            slots: Mutex::new(HashMap::new()),
            registered: Mutex::new(HashMap::new()),
            invocations: AtomicUsize::new(0),
        })
    }

    pub fn stub(dir: impl Into<PathBuf>) -> Result<Self, MediaError> {
        Self::new(dir, Arc::new(StubMediaProvider))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Provider calls made by this store so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn asset_id(&self, request: &MediaRequest) -> String {
        request.asset_id(self.provider.name())
    }

    /// Remembers a request so the asset can be synthesized later by id,
    /// without synthesizing it now.
    pub fn register(&self, request: &MediaRequest) -> String {
        let id = self.asset_id(request);
        self.registered
            .lock()
            .expect("registry lock")
            .entry(id.clone())
            .or_insert_with(|| request.clone());
        id
    }

    fn sidecar(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn load_from_disk(&self, id: &str) -> Option<MediaAsset> {
        let text = fs::read_to_string(self.sidecar(id)).ok()?;
        let asset: MediaAsset = serde_json::from_str(&text).ok()?;
        asset.storage_path.exists().then_some(asset)
    }

    fn slot(&self, id: &str) -> Slot {
        self.slots
            .lock()
            .expect("slot lock")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    /// Cached asset for `id`, if it has been synthesized.
    pub fn cached(&self, id: &str) -> Option<MediaAsset> {
        let slot = self.slot(id);
        let mut guard = slot.lock().expect("asset slot");
        if guard.is_none() {
            *guard = self.load_from_disk(id);
        }
        guard.clone()
    }

    pub fn synthesize(&self, request: &MediaRequest) -> Result<MediaAsset, MediaError> {
        let id = self.register(request);
        let slot = self.slot(&id);
        let mut guard = slot.lock().expect("asset slot");
        if let Some(asset) = guard.as_ref() {
            return Ok(asset.clone());
        }
        if let Some(asset) = self.load_from_disk(&id) {
            *guard = Some(asset.clone());
            return Ok(asset);
        }
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let out = self.provider.synthesize(request)?;
        let path = self.dir.join(format!("{id}.{}", extension(&out.content_type)));
        write_atomically(&path, &out.bytes)?;
        let asset = MediaAsset {
            id: id.clone(),
            kind: request.kind,
            media_type: request.kind.media_type(),
            content_type: out.content_type,
            storage_path: path,
            source_prompt: request.prompt.clone(),
            provider: self.provider.name().to_string(),
        };
        let meta = serde_json::to_vec_pretty(&asset).expect("asset serializes");
        write_atomically(&self.sidecar(&id), &meta)?;
        *guard = Some(asset.clone());
        Ok(asset)
    }

    /// Like [`synthesize`](Self::synthesize), but a failure is logged and
    /// yields no asset.
    pub fn try_synthesize(&self, request: &MediaRequest) -> Option<MediaAsset> {
        self.synthesize(request)
            .map_err(|e| log::warn!("{} synthesis failed: {e}", request.kind.as_str()))
            .ok()
    }

    /// Asset and bytes for `id`, synthesizing a registered request on
    /// demand. `None` for ids this store has never seen.
    pub fn fetch(&self, id: &str) -> Result<Option<(MediaAsset, Vec<u8>)>, MediaError> {
        let asset = match self.cached(id) {
            Some(asset) => asset,
            None => {
                let request = self.registered.lock().expect("registry lock").get(id).cloned();
                match request {
                    Some(request) => self.synthesize(&request)?,
                    None => return Ok(None),
                }
            }
        };
        let bytes = fs::read(&asset.storage_path)?;
        Ok(Some((asset, bytes)))
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), MediaError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Catalog key for a voice, such as `female/old age`.
pub fn voice_tag(gender: Gender, age_band: AgeBand) -> String {
    format!("{}/{}", gender.as_str(), age_band.as_str())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceCatalog {
    /// Voice tag to provider voice id.
    pub voices: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl VoiceCatalog {
    /// One placeholder voice for every gender and age band.
    pub fn stub() -> Self {
        let voices = Gender::ALL
            .iter()
            .flat_map(|g| AgeBand::ALL.iter().map(move |a| (*g, *a)))
            .map(|(g, a)| (voice_tag(g, a), format!("stub-{}-{}", g.as_str(), a.as_str().replace(' ', "-"))))
            .collect();
        Self {
            voices,
            default: Some("stub-narrator".into()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.voices.is_empty() && self.default.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceSelection {
    pub character_id: String,
    pub voice_tag: String,
    pub provider_voice_id: String,
}

/// Exact (gender, age band) entry, then the same gender at middle age, then
/// the catalog default, then the first voice in tag order.
pub fn select_voice(c: &CharacterProfile, catalog: &VoiceCatalog) -> Result<VoiceSelection, MediaError> {
    if catalog.is_empty() {
        return Err(MediaError::EmptyCatalog);
    }
    let tag = voice_tag(c.gender, c.age_band);
    let voice = catalog
        .voices
        .get(&tag)
        .or_else(|| catalog.voices.get(&voice_tag(c.gender, AgeBand::MiddleAge)))
        .or(catalog.default.as_ref())
        .or_else(|| catalog.voices.values().next())
        .expect("catalog is not empty");
    Ok(VoiceSelection {
        character_id: c.id.clone(),
        voice_tag: tag,
        provider_voice_id: voice.clone(),
    })
}
