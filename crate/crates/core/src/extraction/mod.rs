//! Turns a narrative into a storyline: characters and their profiles,
//! events with participants and locations, scripted conversations, and
//! environment descriptions, followed by duplicate merging and specificity
//! flags.

mod dedupe;
pub mod names;

use std::cell::Cell;
use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::chunker::{chunk_narrative, Chunk, ChunkError, NarrativeText, DEFAULT_CHUNK_BUDGET};
use crate::hashing::seeded_hash;
use crate::prompts::{self, PromptError};
use crate::provider::{ChatRequest, Gateway, ProviderError};
use crate::repair::{
    default_appearance, parse_with_fallback_rounds, FallbackPolicy, FieldKind, FieldRule, RepairOutcome,
    RepairReport, Schema, DEFAULT_MAX_RECTIFY_ROUNDS,
};
use crate::storyline::{
    AgeBand, CharacterProfile, EnvironmentDescription, ExtractionStats, Gender, StoryEvent, Storyline,
    StorylineError, Utterance, STORYLINE_SCHEMA_VERSION,
};

pub use dedupe::{dedupe_characters, judge_same, UnionFind, DEFAULT_DEDUPE_THRESHOLD};
pub use names::is_nonspecific;

pub const UNKNOWN_LOCATION: &str = "Unknown";
pub const UNKNOWN_SPEAKER: &str = "Unknown";

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("extracted storyline is inconsistent: {0}")]
    Storyline(#[from] StorylineError),
    #[error("narrative produced no events")]
    NoEvents,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub chunk_budget: usize,
    pub seed: u64,
    pub dedupe_threshold: f64,
    pub max_rectify_rounds: u32,
    /// Ask the model to fix output the local repairs could not.
    pub rectify: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            chunk_budget: DEFAULT_CHUNK_BUDGET,
            seed: 0,
            dedupe_threshold: DEFAULT_DEDUPE_THRESHOLD,
            max_rectify_rounds: DEFAULT_MAX_RECTIFY_ROUNDS,
            rectify: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Chunking,
    Extracting,
    Deduping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub report: RepairReport,
}

/// Profile fields gathered by the three character prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileFragment {
    pub summary: String,
    pub keywords: Vec<String>,
    pub objective: Option<String>,
    pub appearance: String,
    pub gender: Gender,
    pub age_band: AgeBand,
    pub voice_reasked: bool,
    pub voice_defaulted: bool,
}

pub(crate) fn record_report(stats: &mut ExtractionStats, report: &RepairReport) {
    match report.outcome {
        RepairOutcome::Clean => stats.clean += 1,
        RepairOutcome::Repaired if report.rectify_rounds > 0 => stats.rectified += 1,
        RepairOutcome::Repaired => stats.repaired += 1,
        RepairOutcome::RectifyNeeded | RepairOutcome::Failed => stats.failed += 1,
    }
    for kind in &report.repairs_applied {
        *stats.repairs.entry(*kind).or_default() += 1;
    }
}

fn text(value: &Value, field: &str) -> Option<String> {
    value
        .get(field)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

fn text_list(value: &Value, field: &str) -> Vec<String> {
    value
        .get(field)
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn character_schema() -> Schema {
    Schema::list(&[("name", FieldKind::Text)])
}

fn traits_schema() -> Schema {
    Schema::object(&[
        ("summary", FieldKind::Text),
        ("keywords", FieldKind::TextList),
        ("objective", FieldKind::Text),
    ])
}

fn appearance_schema() -> Schema {
    Schema::object(&[("appearance", FieldKind::Text)])
}

fn voice_schema() -> Schema {
    Schema::object(&[("gender", FieldKind::Text), ("age", FieldKind::Text)])
}

fn event_schema() -> Schema {
    Schema::list(&[
        ("event", FieldKind::Text),
        ("character", FieldKind::TextList),
        ("location", FieldKind::Text),
        ("description", FieldKind::Text),
    ])
}

fn conversation_schema() -> Schema {
    Schema::list(&[("speaker", FieldKind::Text), ("content", FieldKind::Text)])
}

fn environment_schema() -> Schema {
    Schema::object(&[("keywords", FieldKind::TextList), ("description", FieldKind::Text)])
}

/// Stateful extractor for one narrative. Characters are registered on first
/// occurrence and never re-extracted.
pub struct Extractor<'g> {
    gateway: &'g Gateway,
    config: ExtractionConfig,
    narrative_id: String,
    stats: ExtractionStats,
    characters: Vec<CharacterProfile>,
    events: Vec<StoryEvent>,
    environments: BTreeMap<String, EnvironmentDescription>,
    location_order: Vec<String>,
}

impl<'g> Extractor<'g> {
    pub fn new(gateway: &'g Gateway, narrative_id: impl Into<String>, config: ExtractionConfig) -> Self {
        Self {
            gateway,
            config,
            narrative_id: narrative_id.into(),
            stats: ExtractionStats::default(),
            characters: Vec::new(),
            events: Vec::new(),
            environments: BTreeMap::new(),
            location_order: Vec::new(),
        }
    }

    pub fn characters(&self) -> &[CharacterProfile] {
        &self.characters
    }

    pub fn events(&self) -> &[StoryEvent] {
        &self.events
    }

    pub fn stats(&self) -> &ExtractionStats {
        &self.stats
    }

    fn chunk_tag(&self, chunk: &Chunk) -> String {
        format!("{}_ch{}", self.narrative_id, chunk.index + 1)
    }

    fn call(&mut self, request: &ChatRequest) -> Result<String, ExtractionError> {
        self.stats.provider_calls += 1;
        Ok(self.gateway.complete_chat(request)?)
    }

    fn parse(&mut self, raw: &str, schema: &Schema, policy: &FallbackPolicy) -> (Value, RepairReport) {
        let gateway = self.gateway;
        let calls = Cell::new(0usize);
        let rectify = |malformed: &str| -> Option<String> {
            let request = prompts::RECTIFY.render(&[("output", malformed)]).ok()?;
            calls.set(calls.get() + 1);
            gateway.complete_chat(&request).ok()
        };
        let rectifier: Option<&dyn crate::repair::Rectifier> = if self.config.rectify { Some(&rectify) } else { None };
        let (value, report) =
            parse_with_fallback_rounds(raw, schema, policy, rectifier, self.config.max_rectify_rounds);
        self.stats.provider_calls += calls.get();
        record_report(&mut self.stats, &report);
        (value, report)
    }

    /// Character names mentioned in a chunk. Unparseable output yields an
    /// empty list.
    pub fn extract_characters(&mut self, chunk: &Chunk) -> Result<Parsed<Vec<String>>, ExtractionError> {
        let request = prompts::CHARACTERS
            .render(&[("story", &chunk.text)])?
            .with_tag(self.chunk_tag(chunk));
        let raw = self.call(&request)?;
        let schema = character_schema();
        let (value, report) = self.parse(&raw, &schema, &FallbackPolicy::for_schema(&schema));
        let mut names: Vec<String> = Vec::new();
        for item in value.as_array().into_iter().flatten() {
            if let Some(name) = text(item, "name") {
                if !names.iter().any(|n| names::normalize(n) == names::normalize(&name)) {
                    names.push(name);
                }
            }
        }
        Ok(Parsed { value: names, report })
    }

    fn voice_attempt(&mut self, request: &ChatRequest) -> Result<(Option<Gender>, Option<AgeBand>), ExtractionError> {
        let raw = self.call(request)?;
        let schema = voice_schema();
        let (value, _) = self.parse(&raw, &schema, &FallbackPolicy::for_schema(&schema));
        Ok((
            text(&value, "gender").and_then(|g| Gender::parse(&g)),
            text(&value, "age").and_then(|a| AgeBand::parse(&a)),
        ))
    }

    /// Runs the traits, appearance and voice prompts for one character.
    pub fn extract_character_profile(&mut self, name: &str, chunk: &Chunk) -> Result<ProfileFragment, ExtractionError> {
        let seed = self.config.seed;

        let request = prompts::TRAITS
            .render(&[("character", name), ("story", &chunk.text)])?
            .with_tag(name);
        let raw = self.call(&request)?;
        let schema = traits_schema();
        let (traits, _) = self.parse(&raw, &schema, &FallbackPolicy::for_schema(&schema));
        let summary = text(&traits, "summary").unwrap_or_default();
        let keywords = text_list(&traits, "keywords");
        let objective = text(&traits, "objective");

        let description = if summary.is_empty() {
            format!("{name} is a character in the story.")
        } else {
            summary.clone()
        };

        let request = prompts::APPEARANCE
            .render(&[("character", name), ("character_description", &description)])?
            .with_tag(name);
        let raw = self.call(&request)?;
        let schema = appearance_schema();
        let policy = FallbackPolicy::for_schema(&schema)
            .with_rule("appearance", FieldRule::Generated(default_appearance))
            .with_seed(seeded_hash(seed, &["appearance", name]));
        let (appearance, _) = self.parse(&raw, &schema, &policy);
        let appearance = text(&appearance, "appearance")
            .unwrap_or_else(|| default_appearance(seeded_hash(seed, &["appearance", name])).as_str().unwrap_or_default().to_string());

        let request = prompts::VOICE
            .render(&[("character", name), ("character_description", &description)])?
            .with_tag(name);
        let (mut gender, mut age) = self.voice_attempt(&request)?;
        let mut voice_reasked = false;
        if gender.is_none() || age.is_none() {
            voice_reasked = true;
            self.stats.reasked_voice += 1;
            let (g, a) = self.voice_attempt(&request.clone().with_tag(format!("{name}/retry")))?;
            gender = gender.or(g);
            age = age.or(a);
        }
        let voice_defaulted = gender.is_none() || age.is_none();
        if voice_defaulted {
            self.stats.defaulted_voice += 1;
        }
        let gender = gender.unwrap_or(Gender::ALL[(seeded_hash(seed, &["gender", name]) % 2) as usize]);
        let age_band = age.unwrap_or(AgeBand::MiddleAge);

        Ok(ProfileFragment {
            summary,
            keywords,
            objective,
            appearance,
            gender,
            age_band,
            voice_reasked,
            voice_defaulted,
        })
    }

    fn exact_match(&self, name: &str) -> Option<String> {
        let want = names::normalize(name);
        self.characters
            .iter()
            .find(|c| c.all_names().any(|n| names::normalize(n) == want))
            .map(|c| c.id.clone())
    }

    /// Exact name or alias match, then a unique token-subset match.
    pub fn resolve_name(&self, name: &str) -> Option<String> {
        if let Some(id) = self.exact_match(name) {
            return Some(id);
        }
        let mut hits = self
            .characters
            .iter()
            .filter(|c| c.all_names().any(|n| names::token_subset(n, name)));
        match (hits.next(), hits.next()) {
            (Some(c), None) => Some(c.id.clone()),
            _ => None,
        }
    }

    fn fresh_id(&self, name: &str) -> String {
        let base = names::slug(name);
        let taken = |id: &str| self.characters.iter().any(|c| c.id == id || c.alias_ids.iter().any(|a| a == id));
        if !taken(&base) {
            return base;
        }
        (2..).map(|n| format!("{base}-{n}")).find(|id| !taken(id)).expect("unbounded suffixes")
    }

    fn register(&mut self, name: &str, provisional: bool, chunk: &Chunk) -> Result<String, ExtractionError> {
        let fragment = self.extract_character_profile(name, chunk)?;
        let id = self.fresh_id(name);
        let mut profile = CharacterProfile::bare(id.clone(), name.trim());
        profile.summary = fragment.summary;
        profile.keywords = fragment.keywords;
        profile.objective = fragment.objective;
        profile.appearance = fragment.appearance;
        profile.gender = fragment.gender;
        profile.age_band = fragment.age_band;
        profile.provisional = provisional;
        self.characters.push(profile);
        Ok(id)
    }

    /// Extracts character names from the chunk and registers the new ones.
    pub fn register_characters(&mut self, chunk: &Chunk) -> Result<Vec<String>, ExtractionError> {
        let found = self.extract_characters(chunk)?;
        let mut ids = Vec::new();
        for name in found.value {
            let id = match self.exact_match(&name) {
                Some(id) => id,
                None => self.register(&name, false, chunk)?,
            };
            ids.push(id);
        }
        Ok(ids)
    }

    /// Extracts the chunk's events, appends them with global indices, and
    /// returns the new indices. Unknown participants become provisional
    /// characters.
    pub fn extract_events(&mut self, chunk: &Chunk) -> Result<Vec<usize>, ExtractionError> {
        let request = prompts::EVENTS
            .render(&[("story", &chunk.text)])?
            .with_tag(self.chunk_tag(chunk));
        let raw = self.call(&request)?;
        let schema = event_schema();
        let (value, _) = self.parse(&raw, &schema, &FallbackPolicy::for_schema(&schema));

        let mut added = Vec::new();
        for item in value.as_array().into_iter().flatten() {
            let description = text(item, "description");
            let name = text(item, "event");
            let (name, description) = match (name, description) {
                (None, None) => continue,
                (Some(n), None) => (n.clone(), n),
                (None, Some(d)) => (d.split_whitespace().take(8).collect::<Vec<_>>().join(" "), d),
                (Some(n), Some(d)) => (n, d),
            };
            let mut participant_ids: Vec<String> = Vec::new();
            for who in text_list(item, "character") {
                let id = match self.resolve_name(&who) {
                    Some(id) => id,
                    None => self.register(&who, true, chunk)?,
                };
                if !participant_ids.contains(&id) {
                    participant_ids.push(id);
                }
            }
            let location_name = text(item, "location").unwrap_or_else(|| UNKNOWN_LOCATION.to_string());
            let index = self.events.len();
            self.events.push(StoryEvent {
                index,
                name,
                participant_ids,
                location_name: location_name.clone(),
                description,
                conversation: Vec::new(),
                chunk_index: chunk.index,
            });
            self.extract_environment(&location_name, chunk)?;
            added.push(index);
        }
        Ok(added)
    }

    fn resolve_speaker(&self, event: &StoryEvent, speaker: &str) -> Option<String> {
        let participants: Vec<&CharacterProfile> = event
            .participant_ids
            .iter()
            .filter_map(|id| self.characters.iter().find(|c| &c.id == id))
            .collect();
        let want = names::normalize(speaker);
        if let Some(c) = participants.iter().find(|c| c.all_names().any(|n| names::normalize(n) == want)) {
            return Some(c.id.clone());
        }
        let mut hits = participants
            .iter()
            .filter(|c| c.all_names().any(|n| names::token_subset(n, speaker)));
        match (hits.next(), hits.next()) {
            (Some(c), None) => Some(c.id.clone()),
            _ => None,
        }
    }

    /// Scripted conversation for an event with at least two participants.
    /// Speakers outside the participant list are flagged, not dropped.
    pub fn extract_conversation(&mut self, event_index: usize, chunk: &Chunk) -> Result<Vec<Utterance>, ExtractionError> {
        let event = self.events[event_index].clone();
        if event.participant_ids.len() < 2 {
            return Ok(Vec::new());
        }
        let request = prompts::CONVERSATION
            .render(&[("event_description", &event.description), ("story", &chunk.text)])?
            .with_tag(format!("{}_e{}", self.narrative_id, event.index));
        let raw = self.call(&request)?;
        let schema = conversation_schema();
        let (value, _) = self.parse(&raw, &schema, &FallbackPolicy::for_schema(&schema));
        let mut lines = Vec::new();
        for item in value.as_array().into_iter().flatten() {
            let Some(content) = text(item, "content") else { continue };
            let speaker_name = text(item, "speaker").unwrap_or_else(|| UNKNOWN_SPEAKER.to_string());
            let speaker_id = self.resolve_speaker(&event, &speaker_name);
            if let Some(id) = &speaker_id {
                if let Some(c) = self.characters.iter_mut().find(|c| &c.id == id) {
                    if !c.quotes.contains(&content) {
                        c.quotes.push(content.clone());
                    }
                }
            }
            lines.push(Utterance {
                unresolved_speaker: speaker_id.is_none(),
                speaker_id,
                speaker_name,
                content,
            });
        }
        self.events[event_index].conversation = lines.clone();
        Ok(lines)
    }

    /// Environment for a location, extracted once per distinct name.
    pub fn extract_environment(&mut self, location: &str, chunk: &Chunk) -> Result<EnvironmentDescription, ExtractionError> {
        if let Some(env) = self.environments.get(location) {
            return Ok(env.clone());
        }
        let request = prompts::ENVIRONMENT
            .render(&[("location", location), ("story", &chunk.text)])?
            .with_tag(location);
        let raw = self.call(&request)?;
        let schema = environment_schema();
        let (value, _) = self.parse(&raw, &schema, &FallbackPolicy::for_schema(&schema));
        let env = EnvironmentDescription {
            location_name: location.to_string(),
            keywords: text_list(&value, "keywords"),
            description: text(&value, "description").unwrap_or_else(|| location.to_string()),
        };
        self.environments.insert(location.to_string(), env.clone());
        self.location_order.push(location.to_string());
        Ok(env)
    }

    pub fn process_chunk(&mut self, chunk: &Chunk) -> Result<(), ExtractionError> {
        self.register_characters(chunk)?;
        for index in self.extract_events(chunk)? {
            self.extract_conversation(index, chunk)?;
        }
        Ok(())
    }

    /// Dedupes, flags nonspecific names and validates the result.
    pub fn finish(mut self, title: &str) -> Result<Storyline, ExtractionError> {
        let characters = std::mem::take(&mut self.characters);
        let mut characters = dedupe_characters(
            self.gateway,
            characters,
            &mut self.events,
            self.config.dedupe_threshold,
            &mut self.stats,
        )?;
        flag_nonspecific_characters(&mut characters);
        for c in &mut characters {
            c.first_event_index = self.events.iter().find(|e| e.involves(&c.id)).map(|e| e.index);
        }
        let environments = self
            .location_order
            .iter()
            .filter_map(|l| self.environments.get(l).cloned())
            .collect();
        let storyline = Storyline {
            schema_version: STORYLINE_SCHEMA_VERSION,
            narrative_id: self.narrative_id,
            title: title.to_string(),
            characters,
            events: self.events,
            environments,
            stats: self.stats,
        };
        storyline.validate()?;
        Ok(storyline)
    }
}

pub fn flag_nonspecific_characters(characters: &mut [CharacterProfile]) {
    for c in characters {
        c.nonspecific = is_nonspecific(&c.name);
    }
}

/// Full pipeline: chunk, extract per chunk in order, then dedupe and flag.
pub fn extract_storyline(
    gateway: &Gateway,
    narrative: &NarrativeText,
    config: &ExtractionConfig,
    progress: &mut dyn FnMut(Stage, f64),
) -> Result<Storyline, ExtractionError> {
    progress(Stage::Chunking, 0.0);
    let chunks = chunk_narrative(narrative, config.chunk_budget)?;
    let mut extractor = Extractor::new(gateway, narrative.id.clone(), config.clone());
    for (k, chunk) in chunks.iter().enumerate() {
        progress(Stage::Extracting, k as f64 / chunks.len() as f64);
        extractor.process_chunk(chunk)?;
    }
    if extractor.events().is_empty() {
        return Err(ExtractionError::NoEvents);
    }
    progress(Stage::Deduping, 1.0);
    extractor.finish(&narrative.title)
}
