//! Chat-completion, embedding and judge access behind one gateway.
//!
//! Providers are plain synchronous traits. The gateway adds request
//! validation, rate limiting and retry on transport failures; it never
//! rewrites request or response text.

mod limiter;
mod mock;
mod remote;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::repair::repair_response;

pub use limiter::RateLimiter;
pub(crate) use remote::{http_agent, join_url, post_json_bytes};
pub use mock::{FixtureSet, MockEmbedder, MockProvider, DEFAULT_MOCK_DIMENSION};
pub use remote::{RemoteChat, RemoteEmbedder};

pub const EXTRACTION_TEMPERATURE: f32 = 0.2;
pub const ROLEPLAY_TEMPERATURE: f32 = 0.8;
pub const CREDENTIALS_ENV: &str = "NARRATIVEPLAY_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// A single failed transport attempt; retried by the gateway.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider unavailable after {attempts} attempt(s): {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("credentials rejected: {0}")]
    Auth(String),
    #[error("could not read a number from judge response: {0:?}")]
    JudgeParse(String),
    #[error("provider returned an unexpected payload: {0}")]
    Protocol(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Operation label, e.g. `extract_characters`. Used for logging and for
    /// fixture selection by the mock provider; never sent to a remote model.
    pub label: String,
    pub system_instruction: String,
    pub user_content: String,
    pub max_tokens: u32,
    pub temperature: f32,
    /// Optional fixture selector such as a chunk or character key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl ChatRequest {
    pub fn new(
        label: impl Into<String>,
        system_instruction: impl Into<String>,
        user_content: impl Into<String>,
    ) -> Self {
        Self {
            label: label.into(),
            system_instruction: system_instruction.into(),
            user_content: user_content.into(),
            max_tokens: 1024,
            temperature: EXTRACTION_TEMPERATURE,
            tag: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.user_content.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("user_content is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn cosine(&self, other: &Self) -> Result<f64, VectorError> {
        if self.dimension() != other.dimension() {
            return Err(VectorError::DimensionMismatch(self.dimension(), other.dimension()));
        }
        let (a, b) = (self.norm(), other.norm());
        if a == 0.0 || b == 0.0 {
            return Err(VectorError::ZeroNorm);
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(x, y)| x * y).sum();
        Ok((dot / (a * b)).clamp(-1.0, 1.0))
    }
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSettings {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mock_dimension")]
    pub dimension: usize,
    /// Fixture files, merged in order.
    #[serde(default)]
    pub fixtures: Vec<String>,
}

fn default_mock_dimension() -> usize {
    DEFAULT_MOCK_DIMENSION
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            dimension: DEFAULT_MOCK_DIMENSION,
            fixtures: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer credential.
    #[serde(default = "default_credentials_env")]
    pub credentials_env: String,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_embedding_model")]
    pub embedding_model: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub mock: MockSettings,
}

fn default_credentials_env() -> String {
    CREDENTIALS_ENV.to_string()
}

fn default_model() -> String {
    "gpt-3.5-turbo".to_string()
}

fn default_embedding_model() -> String {
    "text-embedding-3-small".to_string()
}

impl ProviderConfig {
    pub fn mock(seed: u64) -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            credentials_env: default_credentials_env(),
            model_name: default_model(),
            embedding_model: default_embedding_model(),
            retry: RetryPolicy::default(),
            requests_per_minute: None,
            timeout_secs: None,
            mock: MockSettings {
                seed,
                ..MockSettings::default()
            },
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: Some(endpoint.into()),
            ..Self::mock(0)
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.kind == ProviderKind::Remote {
            if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return Err(ProviderError::Config("remote provider needs an endpoint".into()));
            }
            if self.credentials_env.trim().is_empty() {
                return Err(ProviderError::Config("remote provider needs a credentials variable".into()));
            }
        }
        if self.retry.max_attempts == 0 {
            return Err(ProviderError::Config("retry.max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct Gateway {
    chat: Arc<dyn ChatProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    limiter: Option<Arc<RateLimiter>>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("chat", &self.chat.name())
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatProvider>, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            chat,
            embedder,
            limiter: None,
            retry: RetryPolicy::default(),
        }
    }

    /// Mock chat and embeddings sharing one seed, without fixtures.
    pub fn mock(seed: u64) -> Self {
        let provider = Arc::new(MockProvider::new(seed, FixtureSet::default()));
        Self::new(provider, Arc::new(MockEmbedder::new(seed, DEFAULT_MOCK_DIMENSION)))
    }

    /// Builds a gateway from configuration. `fixtures` is only used by the
    /// mock kind; the credential is read from the environment for remote.
    pub fn from_config(config: &ProviderConfig, fixtures: FixtureSet) -> Result<Self, ProviderError> {
        config.validate()?;
        let mut gateway = match config.kind {
            ProviderKind::Mock => {
                let chat = Arc::new(MockProvider::new(config.mock.seed, fixtures));
                let embed = Arc::new(MockEmbedder::new(config.mock.seed, config.mock.dimension));
                Self::new(chat, embed)
            }
            ProviderKind::Remote => {
                let key = std::env::var(&config.credentials_env).map_err(|_| {
                    ProviderError::Config(format!("environment variable {} is not set", config.credentials_env))
                })?;
                let endpoint = config.endpoint.clone().unwrap_or_default();
                let timeout = Duration::from_secs(config.timeout_secs.unwrap_or(120));
                let chat = Arc::new(RemoteChat::new(&endpoint, &key, &config.model_name, timeout));
                let embed = Arc::new(RemoteEmbedder::new(&endpoint, &key, &config.embedding_model, timeout));
                Self::new(chat, embed)
            }
        };
        gateway.retry = config.retry;
        if let Some(rpm) = config.requests_per_minute {
            gateway = gateway.with_rate_limit(rpm);
        }
        Ok(gateway)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.limiter = Some(Arc::new(RateLimiter::per_minute(requests_per_minute)));
        self
    }

    pub fn chat_provider(&self) -> &Arc<dyn ChatProvider> {
        &self.chat
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match call() {
                Err(ProviderError::Transport(msg)) => {
                    log::warn!("provider attempt {attempt}/{attempts} failed: {msg}");
                    last_error = msg;
                    if attempt < attempts && self.retry.backoff_ms > 0 {
                        let factor = 1u64 << (attempt - 1).min(6);
                        thread::sleep(Duration::from_millis(self.retry.backoff_ms * factor));
                    }
                }
                other => return other,
            }
        }
        Err(ProviderError::Unavailable { attempts, last_error })
    }

    /// Returns the provider's text verbatim.
    pub fn complete_chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        self.with_retries(|| self.chat.complete(request))
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("cannot embed empty text".into()));
        }
        let v = self.with_retries(|| self.embedder.embed(text))?;
        if v.dimension() == 0 || v.is_zero() {
            return Err(ProviderError::Protocol("embedding is empty or all zero".into()));
        }
        Ok(v)
    }

    /// Asks the judge for a number on `scale` and clamps the answer into it.
    pub fn judge_scalar(
        &self,
        label: &str,
        instruction: &str,
        content: &str,
        scale: (f64, f64),
    ) -> Result<f64, ProviderError> {
        let (lo, hi) = scale;
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(ProviderError::InvalidRequest(format!("judge scale [{lo}, {hi}] is empty")));
        }
        let request = ChatRequest::new(label, instruction, content).with_max_tokens(32);
        let raw = self.complete_chat(&request)?;
        parse_judge_number(&raw)
            .map(|v| v.clamp(lo, hi))
            .ok_or(ProviderError::JudgeParse(raw))
    }
}

fn number_in(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        Value::Array(items) => items.iter().find_map(number_in),
        Value::Object(o) => o
            .get("score")
            .and_then(number_in)
            .or_else(|| o.values().find_map(number_in)),
        _ => None,
    }
}

/// Reads one number from a judge response: a bare number, or the first
/// number (preferring a `score` key) in a repaired JSON value.
pub fn parse_judge_number(raw: &str) -> Option<f64> {
    if let Ok(v) = raw.trim().parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let report = repair_response(raw);
    report.value.as_ref().and_then(number_in).filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;

    struct Scripted(String);

    impl ChatProvider for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _: &ChatRequest) -> Result<String, ProviderError> {
            Ok(self.0.clone())
        }
    }

    struct Down(AtomicU32);

    impl ChatProvider for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn complete(&self, _: &ChatRequest) -> Result<String, ProviderError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(ProviderError::Transport("connection refused".into()))
        }
    }

    fn scripted(text: &str) -> Gateway {
        Gateway::new(
            Arc::new(Scripted(text.to_string())),
            Arc::new(MockEmbedder::new(0, DEFAULT_MOCK_DIMENSION)),
        )
    }

    #[test]
    fn judge_reads_score_object() {
        assert_eq!(scripted("{\"score\": 7}").judge_scalar("importance", "rate", "x", (1.0, 10.0)), Ok(7.0));
    }

    #[test]
    fn judge_clamps() {
        assert_eq!(scripted("12").judge_scalar("importance", "rate", "x", (1.0, 10.0)), Ok(10.0));
        assert_eq!(scripted("-3").judge_scalar("sentiment", "rate", "x", (-1.0, 1.0)), Ok(-1.0));
    }

    #[test]
    fn judge_rejects_prose() {
        assert!(matches!(
            scripted("very important").judge_scalar("importance", "rate", "x", (1.0, 10.0)),
            Err(ProviderError::JudgeParse(_))
        ));
    }

    #[test]
    fn judge_rejects_empty_scale() {
        assert!(matches!(
            scripted("1").judge_scalar("importance", "rate", "x", (2.0, 2.0)),
            Err(ProviderError::InvalidRequest(_))
        ));
    }

    #[test]
    fn empty_user_content_is_rejected() {
        let req = ChatRequest::new("x", "system", "  ");
        assert!(matches!(scripted("ok").complete_chat(&req), Err(ProviderError::InvalidRequest(_))));
    }

    #[test]
    fn response_is_returned_verbatim() {
        let req = ChatRequest::new("x", "system", "hi");
        assert_eq!(scripted("  padded \n").complete_chat(&req).unwrap(), "  padded \n");
    }

    #[test]
    fn transport_failures_retry_then_give_up() {
        let down = Arc::new(Down(AtomicU32::new(0)));
        let gw = Gateway::new(down.clone(), Arc::new(MockEmbedder::new(0, 8))).with_retry(RetryPolicy {
            max_attempts: 2,
            backoff_ms: 0,
        });
        let err = gw.complete_chat(&ChatRequest::new("x", "s", "u")).unwrap_err();
        assert!(matches!(err, ProviderError::Unavailable { attempts: 2, .. }));
        assert_eq!(down.0.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn remote_config_requires_endpoint() {
        let mut cfg = ProviderConfig::remote("https://example.invalid/v1");
        assert!(cfg.validate().is_ok());
        cfg.endpoint = None;
        assert!(matches!(cfg.validate(), Err(ProviderError::Config(_))));
    }

    #[test]
    fn cosine_of_mismatched_dimensions() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]);
        let b = EmbeddingVector::new(vec![1.0]);
        assert_eq!(a.cosine(&b), Err(VectorError::DimensionMismatch(2, 1)));
        assert_eq!(a.cosine(&EmbeddingVector::new(vec![0.0, 0.0])), Err(VectorError::ZeroNorm));
    }
}
