//! Offline providers. Every response is a pure function of the fixture set,
//! the request and the seed.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde_json::Value;

use super::{ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, ProviderError};
use crate::evaluation::Aspect;
use crate::hashing::{content_hash, seeded_hash, stable_hash};

pub const DEFAULT_MOCK_DIMENSION: usize = 64;

/// Canned responses keyed `label` or `label:selector`.
///
/// A selector matches a request when it equals the request tag, is a prefix
/// of the hex SHA-256 of the user content, or occurs in the user content.
/// Matches are tried in that order; a bare `label` key is the last resort.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureSet {
    entries: BTreeMap<String, BTreeMap<String, String>>,
    bare: BTreeMap<String, String>,
}

fn fixture_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl FixtureSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: &str, response: impl Into<String>) {
        match key.split_once(':') {
            Some((label, selector)) if !selector.is_empty() => {
                self.entries
                    .entry(label.to_string())
                    .or_default()
                    .insert(selector.to_string(), response.into());
            }
            _ => {
                self.bare.insert(key.trim_end_matches(':').to_string(), response.into());
            }
        }
    }

    pub fn with(mut self, key: &str, response: impl Into<String>) -> Self {
        self.insert(key, response);
        self
    }

    /// Reads a JSON object of `key -> response`. String responses are used
    /// verbatim, so malformed outputs can be stored as strings; any other
    /// JSON value is stored as its compact serialization.
    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ProviderError::Config(format!("fixture file is not JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(ProviderError::Config("fixture file must hold a JSON object".into()));
        };
        let mut set = Self::new();
        for (key, response) in &map {
            set.insert(key, fixture_text(response));
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Later entries override earlier ones.
    pub fn merge(&mut self, other: FixtureSet) {
        for (label, selectors) in other.entries {
            self.entries.entry(label).or_default().extend(selectors);
        }
        self.bare.extend(other.bare);
    }

    pub fn len(&self) -> usize {
        self.bare.len() + self.entries.values().map(BTreeMap::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, request: &ChatRequest) -> Option<&str> {
        if let Some(selectors) = self.entries.get(&request.label) {
            if let Some(tag) = &request.tag {
                if let Some(hit) = selectors.get(tag) {
                    return Some(hit);
                }
            }
            let hash = content_hash(&request.user_content);
            let by_hash = selectors
                .iter()
                .find(|(sel, _)| sel.len() >= 8 && sel.chars().all(|c| c.is_ascii_hexdigit()) && hash.starts_with(sel.as_str()));
            if let Some((_, hit)) = by_hash {
                return Some(hit);
            }
            let by_content = selectors
                .iter()
                .filter(|(sel, _)| request.user_content.contains(sel.as_str()))
                .max_by_key(|(sel, _)| sel.len());
            if let Some((_, hit)) = by_content {
                return Some(hit);
            }
        }
        self.bare.get(&request.label).map(String::as_str)
    }
}

const MOCK_LINES: &[&str] = &[
    "I have been thinking about that myself.",
    "That is a fair question, and I will answer it plainly.",
    "We should keep moving; there is still much to see.",
    "I remember it differently, but go on.",
    "You are kind to ask. I am well enough.",
    "Let us talk about it once this is over.",
];

/// Seeded chat provider that answers from fixtures and otherwise produces a
/// well-formed template response for the known operation labels.
#[derive(Debug)]
pub struct MockProvider {
    seed: u64,
    fixtures: FixtureSet,
    calls: Mutex<BTreeMap<String, usize>>,
}

impl MockProvider {
    pub fn new(seed: u64, fixtures: FixtureSet) -> Self {
        Self {
            seed,
            fixtures,
            calls: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn fixtures(&self) -> &FixtureSet {
        &self.fixtures
    }

    /// Number of requests seen for `label` so far.
    pub fn call_count(&self, label: &str) -> usize {
        self.calls.lock().map(|c| c.get(label).copied().unwrap_or(0)).unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.calls.lock().map(|c| c.values().sum()).unwrap_or(0)
    }

    fn fallthrough(&self, request: &ChatRequest) -> String {
        let h = seeded_hash(
            self.seed,
            &[&request.label, &request.system_instruction, &request.user_content],
        );
        match request.label.as_str() {
            "importance" => format!("{{\"score\": {}}}", 1 + h % 10),
            "sentiment" => {
                let s = [-1.0, -0.5, 0.0, 0.5, 1.0][(h % 5) as usize];
                format!("{{\"score\": {s}}}")
            }
            "respond" | "initiate" => {
                let line = MOCK_LINES[(h % MOCK_LINES.len() as u64) as usize];
                serde_json::json!({ "response": line }).to_string()
            }
            "dedupe" => "{\"same\": \"no\"}".to_string(),
            judge if judge.starts_with("judge_") => match Aspect::parse(&judge["judge_".len()..]) {
                Ok(aspect) => {
                    let labels = aspect.labels();
                    serde_json::json!({ "category": labels[(h % labels.len() as u64) as usize] }).to_string()
                }
                Err(_) => "{}".to_string(),
            },
            "extract_characters" | "extract_events" | "extract_conversation" => "[]".to_string(),
            _ => "{}".to_string(),
        }
    }
}

impl ChatProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        if let Ok(mut calls) = self.calls.lock() {
            *calls.entry(request.label.clone()).or_default() += 1;
        }
        Ok(match self.fixtures.lookup(request) {
            Some(text) => text.to_string(),
            None => self.fallthrough(request),
        })
    }
}

/// Lower-cased alphanumeric runs.
pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Seeded hash projection: each token adds 1 to one bucket, then the vector
/// is normalized to unit length.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
    dimension: usize,
}

impl MockEmbedder {
    pub fn new(seed: u64, dimension: usize) -> Self {
        Self {
            seed,
            dimension: dimension.max(1),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bucket(&self, token: &str) -> usize {
        (seeded_hash(self.seed, &["token", token]) % self.dimension as u64) as usize
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(ProviderError::InvalidRequest("cannot embed empty text".into()));
        }
        let mut values = vec![0.0f64; self.dimension];
        let toks = tokens(trimmed);
        if toks.is_empty() {
            let b = (stable_hash(&[&self.seed.to_string(), trimmed]) % self.dimension as u64) as usize;
            values[b] = 1.0;
        }
        for t in &toks {
            values[self.bucket(t)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut values {
            *v /= norm;
        }
        Ok(EmbeddingVector::new(values))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::hashing::seeded_hash;

    #[test]
    fn fixture_echo_by_tag() {
        let canned = r#"[{"name": "Charlie Bucket"}, {"name": "Grandpa Joe"}]"#;
        let set = FixtureSet::new().with("extract_characters:ccf_ch1", canned);
        let mock = MockProvider::new(3, set);
        let req = ChatRequest::new("extract_characters", "find", "text").with_tag("ccf_ch1");
        assert_eq!(mock.complete(&req).unwrap(), canned);
        assert_eq!(mock.call_count("extract_characters"), 1);
    }

    #[test]
    fn selector_priority() {
        let content = "Charlie walked home.";
        let prefix = &content_hash(content)[..10];
        let set = FixtureSet::new()
            .with("op", "bare")
            .with("op:walked", "contains")
            .with(&format!("op:{prefix}"), "hash")
            .with("op:t1", "tag");
        let mock = MockProvider::new(0, set);
        let req = ChatRequest::new("op", "s", content);
        assert_eq!(mock.complete(&req.clone().with_tag("t1")).unwrap(), "tag");
        assert_eq!(mock.complete(&req.clone().with_tag("other")).unwrap(), "hash");
        assert_eq!(mock.complete(&ChatRequest::new("op", "s", "he walked")).unwrap(), "contains");
        assert_eq!(mock.complete(&ChatRequest::new("op", "s", "nothing")).unwrap(), "bare");
    }

    #[test]
    fn json_fixture_values_are_serialized() {
        let set = FixtureSet::from_json(r#"{"a": "[{'x': 1}]", "b:k": [1, 2]}"#).unwrap();
        let mock = MockProvider::new(0, set);
        assert_eq!(mock.complete(&ChatRequest::new("a", "", "u")).unwrap(), "[{'x': 1}]");
        assert_eq!(mock.complete(&ChatRequest::new("b", "", "u").with_tag("k")).unwrap(), "[1,2]");
    }

    #[test]
    fn fallthrough_is_seeded_and_stable() {
        let a = MockProvider::new(1, FixtureSet::new());
        let b = MockProvider::new(1, FixtureSet::new());
        let req = ChatRequest::new("importance", "rate", "a memory");
        assert_eq!(a.complete(&req).unwrap(), b.complete(&req).unwrap());
        let scores: BTreeSet<String> = (0..200)
            .map(|i| a.complete(&ChatRequest::new("importance", "rate", format!("m{i}"))).unwrap())
            .collect();
        assert_eq!(scores.len(), 10);
    }

    #[test]
    fn embedding_is_unit_and_deterministic() {
        let e = MockEmbedder::new(9, DEFAULT_MOCK_DIMENSION);
        let a = e.embed("Grandpa Joe told a story").unwrap();
        assert_eq!(a, e.embed("Grandpa Joe told a story").unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!((a.cosine(&a).unwrap() - 1.0).abs() < 1e-12);
        assert!((e.embed("...").unwrap().norm() - 1.0).abs() < 1e-9);
        assert!(e.embed("  ").is_err());
    }

    #[test]
    fn disjoint_buckets_are_orthogonal() {
        let seed = 4;
        let e = MockEmbedder::new(seed, DEFAULT_MOCK_DIMENSION);
        // independent bucket computation straight from the seeded hash
        let oracle = |t: &str| (seeded_hash(seed, &["token", t]) % 64) as usize;
        let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let left = &words[0];
        let right = words
            .iter()
            .skip(1)
            .find(|w| oracle(w) != oracle(left))
            .unwrap();
        let c = e.embed(left).unwrap().cosine(&e.embed(right).unwrap()).unwrap();
        assert_eq!(c, 0.0);
    }
}
