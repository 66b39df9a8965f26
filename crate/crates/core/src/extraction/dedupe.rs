use std::collections::BTreeMap;

use serde_json::Value;

use super::names::token_subset;
use super::{record_report, ExtractionError};
use crate::prompts;
use crate::provider::{EmbeddingVector, Gateway};
use crate::repair::{parse_with_fallback, FallbackPolicy, FieldKind, Schema};
use crate::storyline::{CharacterProfile, ExtractionStats, StoryEvent};

pub const DEFAULT_DEDUPE_THRESHOLD: f64 = 0.55;

/// Disjoint-set forest whose roots are always the smallest member index.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn judge_verdict(value: &Value) -> Option<bool> {
    match value.get("same")? {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_lowercase().as_str() {
            "yes" | "true" | "same" | "y" => Some(true),
            "no" | "false" | "different" | "n" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Asks the judge whether two profiles describe the same person. `None`
/// when the answer could not be read.
pub fn judge_same(
    gateway: &Gateway,
    a: &CharacterProfile,
    b: &CharacterProfile,
    stats: &mut ExtractionStats,
) -> Option<bool> {
    let request = prompts::DEDUPE
        .render(&[
            ("first", &a.name),
            ("first_summary", &a.summary),
            ("second", &b.name),
            ("second_summary", &b.summary),
        ])
        .ok()?
        .with_tag(format!("{}|{}", a.name, b.name));
    stats.provider_calls += 1;
    let raw = match gateway.complete_chat(&request) {
        Ok(raw) => raw,
        Err(e) => {
            log::warn!("dedupe judge failed for {} / {}: {e}", a.name, b.name);
            return None;
        }
    };
    let schema = Schema::object(&[("same", FieldKind::Any)]);
    let (value, report) = parse_with_fallback(&raw, &schema, &FallbackPolicy::for_schema(&schema), None);
    record_report(stats, &report);
    judge_verdict(&value)
}

fn push_unique(into: &mut Vec<String>, items: impl IntoIterator<Item = String>) {
    for item in items {
        if !into.contains(&item) {
            into.push(item);
        }
    }
}

fn absorb(canonical: &mut CharacterProfile, other: CharacterProfile, notes: &mut Vec<String>) {
    push_unique(&mut canonical.aliases, std::iter::once(other.name.clone()).chain(other.aliases));
    push_unique(&mut canonical.alias_ids, std::iter::once(other.id.clone()).chain(other.alias_ids));
    push_unique(&mut canonical.quotes, other.quotes);
    push_unique(&mut canonical.keywords, other.keywords);
    if other.summary.len() > canonical.summary.len() {
        canonical.summary = other.summary;
    }
    match (&canonical.objective, other.objective) {
        (None, Some(obj)) => canonical.objective = Some(obj),
        (Some(kept), Some(obj)) if *kept != obj => notes.push(format!(
            "objective conflict merging {} into {}: kept {kept:?}, dropped {obj:?}",
            other.name, canonical.name
        )),
        _ => {}
    }
    if canonical.appearance.is_empty() {
        canonical.appearance = other.appearance;
    }
    canonical.provisional &= other.provisional;
    canonical.first_event_index = match (canonical.first_event_index, other.first_event_index) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
}

/// Merges profiles the judge confirms as the same person. Candidate pairs
/// are those whose name embeddings reach `threshold` cosine or whose names
/// are token subsets of each other. Confirmed pairs are merged transitively;
/// the earliest-registered profile of each group is kept, and event
/// participants and speakers are rewritten to it.
pub fn dedupe_characters(
    gateway: &Gateway,
    characters: Vec<CharacterProfile>,
    events: &mut [StoryEvent],
    threshold: f64,
    stats: &mut ExtractionStats,
) -> Result<Vec<CharacterProfile>, ExtractionError> {
    let n = characters.len();
    let embeddings: Vec<EmbeddingVector> = characters
        .iter()
        .map(|c| gateway.embed_text(&c.name))
        .collect::<Result<_, _>>()?;

    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&characters[i], &characters[j]);
            let cos = embeddings[i].cosine(&embeddings[j]).unwrap_or(0.0);
            if cos < threshold && !token_subset(&a.name, &b.name) {
                continue;
            }
            match judge_same(gateway, a, b, stats) {
                Some(true) => uf.union(i, j),
                Some(false) => {}
                None => stats.judge_failures += 1,
            }
        }
    }

    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let mut kept: Vec<Option<CharacterProfile>> = Vec::with_capacity(n);
    let mut merged_away: Vec<(usize, CharacterProfile)> = Vec::new();
    for (i, c) in characters.into_iter().enumerate() {
        if roots[i] == i {
            kept.push(Some(c));
        } else {
            kept.push(None);
            merged_away.push((roots[i], c));
        }
    }
    for (root, c) in merged_away {
        let canonical_id = kept[root].as_ref().map(|k| k.id.clone()).unwrap_or_default();
        rename.insert(c.id.clone(), canonical_id);
        stats.merged_duplicates += 1;
        if let Some(canonical) = kept[root].as_mut() {
            absorb(canonical, c, &mut stats.notes);
        }
    }

    for event in events.iter_mut() {
        let mut ids: Vec<String> = Vec::with_capacity(event.participant_ids.len());
        for p in &event.participant_ids {
            let id = rename.get(p).cloned().unwrap_or_else(|| p.clone());
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        event.participant_ids = ids;
        for u in &mut event.conversation {
            if let Some(id) = &u.speaker_id {
                if let Some(new) = rename.get(id) {
                    u.speaker_id = Some(new.clone());
                }
            }
        }
    }
    Ok(kept.into_iter().flatten().collect())
}
