//! Per-agent memory streams and weighted retrieval.
//!
//! A memory's weight for a query is `cos(h_m, h_x) + 0.99^(I - i) + s_m`:
//! relevance to the query, recency measured in events, and a judge-scored
//! importance normalized to [0, 1].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::estimate_tokens;
use crate::prompts;
use crate::provider::{EmbeddingVector, Gateway, ProviderError, VectorError};
use crate::storyline::Storyline;

pub const RECENCY_DECAY: f64 = 0.99;
pub const DEFAULT_TOP_K: usize = 8;
pub const DEFAULT_MEMORY_TOKEN_BUDGET: usize = 1200;
pub const DEFAULT_IMPORTANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    SeedProfile,
    ObservedEvent,
    HeardUtterance,
    UserInput,
    OwnResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: String,
    pub agent_id: String,
    pub text: String,
    pub embedding: EmbeddingVector,
    pub importance: f64,
    pub event_index: usize,
    pub kind: MemoryKind,
    /// Global insertion order within the bank.
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightComponents {
    pub relevance: f64,
    pub recency: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMemory<'a> {
    pub record: &'a MemoryRecord,
    pub weight: f64,
    pub components: WeightComponents,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("memory from event {event_index} is newer than the current event {current}")]
    FutureMemory { event_index: usize, current: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding dimension {found} does not match the store's {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("importance {0} outside [0, 1]")]
    ImportanceRange(f64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl From<VectorError> for MemoryError {
    fn from(e: VectorError) -> Self {
        match e {
            VectorError::ZeroNorm => Self::ZeroNorm,
            VectorError::DimensionMismatch(expected, found) => Self::DimensionMismatch { expected, found },
        }
    }
}

pub fn recency(current_index: usize, event_index: usize) -> f64 {
    RECENCY_DECAY.powi((current_index - event_index) as i32)
}

pub fn score_memory<'a>(
    record: &'a MemoryRecord,
    query: &EmbeddingVector,
    current_index: usize,
) -> Result<ScoredMemory<'a>, MemoryError> {
    if record.event_index > current_index {
        return Err(MemoryError::FutureMemory {
            event_index: record.event_index,
            current: current_index,
        });
    }
    let components = WeightComponents {
        relevance: record.embedding.cosine(query)?,
        recency: recency(current_index, record.event_index),
        importance: record.importance,
    };
    Ok(ScoredMemory {
        record,
        weight: components.relevance + components.recency + components.importance,
        components,
    })
}

fn by_rank(a: &ScoredMemory<'_>, b: &ScoredMemory<'_>) -> std::cmp::Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(b.record.event_index.cmp(&a.record.event_index))
        .then(a.record.seq.cmp(&b.record.seq))
}

/// Top `k` records by weight, descending. Ties go to the later event, then
/// to the earlier insertion.
pub fn rank<'a>(
    records: impl IntoIterator<Item = &'a MemoryRecord>,
    query: &EmbeddingVector,
    current_index: usize,
    k: usize,
) -> Result<Vec<ScoredMemory<'a>>, MemoryError> {
    if k == 0 {
        return Err(MemoryError::ZeroK);
    }
    let mut scored = records
        .into_iter()
        .map(|r| score_memory(r, query, current_index))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(by_rank);
    scored.truncate(k);
    Ok(scored)
}

/// Keeps retrieved memories, best first, while their combined token
/// estimate fits in `budget`.
pub fn within_budget<'s, 'a>(scored: &'s [ScoredMemory<'a>], budget: usize) -> &'s [ScoredMemory<'a>] {
    let mut used = 0;
    let mut n = 0;
    for s in scored {
        let cost = estimate_tokens(&s.record.text);
        if used + cost > budget {
            break;
        }
        used += cost;
        n += 1;
    }
    &scored[..n]
}

/// One memory per line, for prompt rendering.
pub fn format_memories(scored: &[ScoredMemory<'_>]) -> String {
    if scored.is_empty() {
        return "(nothing yet)".to_string();
    }
    scored
        .iter()
        .map(|s| format!("- {}", s.record.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    /// Embedding dimension fixed by the first record.
    pub dimension: Option<usize>,
    pub streams: BTreeMap<String, Vec<MemoryRecord>>,
    pub next_seq: u64,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_agent(&mut self, agent_id: &str) {
        self.streams.entry(agent_id.to_string()).or_default();
    }

    pub fn has_agent(&self, agent_id: &str) -> bool {
        self.streams.contains_key(agent_id)
    }

    pub fn records(&self, agent_id: &str) -> Result<&[MemoryRecord], MemoryError> {
        self.streams
            .get(agent_id)
            .map(Vec::as_slice)
            .ok_or_else(|| MemoryError::UnknownAgent(agent_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.streams.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a prepared record, assigning its id and sequence number.
    pub fn insert(
        &mut self,
        agent_id: &str,
        text: &str,
        kind: MemoryKind,
        event_index: usize,
        embedding: EmbeddingVector,
        importance: f64,
    ) -> Result<&MemoryRecord, MemoryError> {
        if !self.streams.contains_key(agent_id) {
            return Err(MemoryError::UnknownAgent(agent_id.to_string()));
        }
        if embedding.is_zero() {
            return Err(MemoryError::ZeroNorm);
        }
        if let Some(expected) = self.dimension {
            if embedding.dimension() != expected {
                return Err(MemoryError::DimensionMismatch {
                    expected,
                    found: embedding.dimension(),
                });
            }
        }
        if !(0.0..=1.0).contains(&importance) {
            return Err(MemoryError::ImportanceRange(importance));
        }
        self.dimension = Some(embedding.dimension());
        let seq = self.next_seq;
        self.next_seq += 1;
        let stream = self.streams.get_mut(agent_id).expect("checked above");
        stream.push(MemoryRecord {
            id: format!("{agent_id}/m{seq}"),
            agent_id: agent_id.to_string(),
            text: text.to_string(),
            embedding,
            importance,
            event_index,
            kind,
            seq,
        });
        Ok(stream.last().expect("just pushed"))
    }

    /// Embeds `text`, asks the judge for importance on 1..10 and stores the
    /// record. An unreadable judge answer gives importance 0.5.
    pub fn add_memory(
        &mut self,
        gateway: &Gateway,
        agent_id: &str,
        text: &str,
        kind: MemoryKind,
        event_index: usize,
    ) -> Result<&MemoryRecord, MemoryError> {
        if !self.streams.contains_key(agent_id) {
            return Err(MemoryError::UnknownAgent(agent_id.to_string()));
        }
        let embedding = gateway.embed_text(text)?;
        let importance = importance_score(gateway, text)?;
        self.insert(agent_id, text, kind, event_index, embedding, importance)
    }

    pub fn retrieve_top(
        &self,
        gateway: &Gateway,
        agent_id: &str,
        query_text: &str,
        current_index: usize,
        k: usize,
    ) -> Result<Vec<ScoredMemory<'_>>, MemoryError> {
        let records = self.records(agent_id)?;
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        let query = gateway.embed_text(query_text)?;
        rank(records, &query, current_index, k)
    }
}

pub fn importance_score(gateway: &Gateway, text: &str) -> Result<f64, ProviderError> {
    let user = prompts::fill(prompts::IMPORTANCE.label, prompts::IMPORTANCE.user, &[("memory", text)])
        .expect("importance template has one variable");
    match gateway.judge_scalar(prompts::IMPORTANCE.label, prompts::IMPORTANCE.system, &user, (1.0, 10.0)) {
        Ok(score) => Ok(score / 10.0),
        Err(ProviderError::JudgeParse(raw)) => {
            log::debug!("importance judge unreadable ({raw:?}); using default");
            Ok(DEFAULT_IMPORTANCE)
        }
        Err(e) => Err(e),
    }
}

pub fn event_memory_text(event_name: &str, description: &str) -> String {
    format!("{event_name}: {description}")
}

pub fn utterance_memory_text(speaker: &str, content: &str) -> String {
    format!("{speaker} said: \"{content}\"")
}

/// Adds the memories a participant forms from one event: what happened,
/// then each scripted line in order.
pub fn remember_event(
    bank: &mut MemoryBank,
    gateway: &Gateway,
    storyline: &Storyline,
    agent_id: &str,
    event_index: usize,
) -> Result<(), MemoryError> {
    let event = &storyline.events[event_index];
    bank.add_memory(
        gateway,
        agent_id,
        &event_memory_text(&event.name, &event.description),
        MemoryKind::ObservedEvent,
        event.index,
    )?;
    for u in &event.conversation {
        let speaker = u
            .speaker_id
            .as_deref()
            .and_then(|id| storyline.character(id))
            .map_or(u.speaker_name.as_str(), |c| c.name.as_str());
        bank.add_memory(
            gateway,
            agent_id,
            &utterance_memory_text(speaker, &u.content),
            MemoryKind::HeardUtterance,
            event.index,
        )?;
    }
    Ok(())
}

/// Initial memories for every specific character: one profile memory at
/// event 0, plus the events up to `current_index` they took part in.
pub fn seed_agent_memories(
    bank: &mut MemoryBank,
    gateway: &Gateway,
    storyline: &Storyline,
    current_index: usize,
) -> Result<(), MemoryError> {
    for c in storyline.characters.iter().filter(|c| !c.nonspecific) {
        bank.add_agent(&c.id);
        bank.add_memory(gateway, &c.id, &c.persona_text(), MemoryKind::SeedProfile, 0)?;
        for e in storyline.events.iter().take(current_index + 1) {
            if e.involves(&c.id) {
                remember_event(bank, gateway, storyline, &c.id, e.index)?;
            }
        }
    }
    Ok(())
}
