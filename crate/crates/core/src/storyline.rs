//! The storyline artifact: characters, events and environments extracted
//! from one narrative, serialized as a versioned JSON document.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repair::RepairKind;

pub const STORYLINE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "male" | "man" | "boy" => Some(Self::Male),
            "female" | "woman" | "girl" => Some(Self::Female),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Male => "male",
            Self::Female => "female",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "child")]
    Child,
    #[serde(rename = "youth")]
    Youth,
    #[serde(rename = "middle age")]
    MiddleAge,
    #[serde(rename = "old age")]
    OldAge,
}

impl AgeBand {
    pub const ALL: [AgeBand; 4] = [AgeBand::Child, AgeBand::Youth, AgeBand::MiddleAge, AgeBand::OldAge];

    /// Accepts the closed labels, hyphen/underscore spellings, and the
    /// `yongth` misspelling that appears in the widely copied voice prompt.
    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_lowercase().replace(['-', '_'], " ");
        match norm.as_str() {
            "child" => Some(Self::Child),
            "youth" | "yongth" | "young" => Some(Self::Youth),
            "middle age" | "middle aged" => Some(Self::MiddleAge),
            "old age" | "old" => Some(Self::OldAge),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Child => "child",
            Self::Youth => "youth",
            Self::MiddleAge => "middle age",
            Self::OldAge => "old age",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for AgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub id: String,
    pub name: String,
    pub summary: String,
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    pub appearance: String,
    pub gender: Gender,
    pub age_band: AgeBand,
    pub quotes: Vec<String>,
    /// Absent for characters that never take part in an event.
    pub first_event_index: Option<usize>,
    /// Names of duplicates merged into this profile.
    #[serde(default)]
    pub aliases: Vec<String>,
    /// Ids of duplicates merged into this profile.
    #[serde(default)]
    pub alias_ids: Vec<String>,
    /// Registered from an event participant list rather than the character
    /// prompt.
    #[serde(default)]
    pub provisional: bool,
    #[serde(default)]
    pub nonspecific: bool,
}

impl CharacterProfile {
    pub fn bare(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            summary: String::new(),
            keywords: Vec::new(),
            objective: None,
            appearance: String::new(),
            gender: Gender::Male,
            age_band: AgeBand::MiddleAge,
            quotes: Vec::new(),
            first_event_index: None,
            aliases: Vec::new(),
            alias_ids: Vec::new(),
            provisional: false,
            nonspecific: false,
        }
    }

    /// Text the seed memory is built from.
    pub fn persona_text(&self) -> String {
        let mut parts = vec![format!("I am {}.", self.name)];
        if !self.summary.is_empty() {
            parts.push(self.summary.clone());
        }
        if let Some(obj) = &self.objective {
            parts.push(format!("My objective: {obj}"));
        }
        if !self.keywords.is_empty() {
            parts.push(format!("Traits: {}.", self.keywords.join(", ")));
        }
        parts.join(" ")
    }

    pub fn all_names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
    /// Speaker as written by the extractor.
    pub speaker_name: String,
    pub content: String,
    #[serde(default)]
    pub unresolved_speaker: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryEvent {
    pub index: usize,
    pub name: String,
    pub participant_ids: Vec<String>,
    pub location_name: String,
    pub description: String,
    pub conversation: Vec<Utterance>,
    pub chunk_index: usize,
}

impl StoryEvent {
    pub fn involves(&self, character_id: &str) -> bool {
        self.participant_ids.iter().any(|p| p == character_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentDescription {
    pub location_name: String,
    pub keywords: Vec<String>,
    pub description: String,
}

/// Counters gathered while extracting, kept with the artifact.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub provider_calls: usize,
    pub clean: usize,
    pub repaired: usize,
    pub rectified: usize,
    pub failed: usize,
    pub repairs: BTreeMap<RepairKind, usize>,
    pub reasked_voice: usize,
    pub defaulted_voice: usize,
    pub merged_duplicates: usize,
    pub judge_failures: usize,
    /// Free-form notes, such as conflicting objectives found while merging.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storyline {
    pub schema_version: u32,
    pub narrative_id: String,
    pub title: String,
    pub characters: Vec<CharacterProfile>,
    pub events: Vec<StoryEvent>,
    pub environments: Vec<EnvironmentDescription>,
    #[serde(default)]
    pub stats: ExtractionStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StorylineError {
    #[error("unsupported storyline schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("event {position} has index {index}")]
    EventOrder { position: usize, index: usize },
    #[error("event {event} refers to unknown character {id}")]
    UnknownParticipant { event: usize, id: String },
    #[error("utterance {line} of event {event} has speaker {id} who is not a participant")]
    SpeakerNotParticipant { event: usize, line: usize, id: String },
    #[error("duplicate character id {0}")]
    DuplicateCharacter(String),
    #[error("character {0} has an empty name")]
    EmptyName(String),
    #[error("location {0:?} has no environment description")]
    MissingEnvironment(String),
    #[error("environment {0:?} has an empty description")]
    EmptyEnvironment(String),
    #[error("malformed storyline document: {0}")]
    Malformed(String),
}

impl Storyline {
    pub fn character(&self, id: &str) -> Option<&CharacterProfile> {
        self.characters.iter().find(|c| c.id == id)
    }

    pub fn environment(&self, location: &str) -> Option<&EnvironmentDescription> {
        self.environments.iter().find(|e| e.location_name == location)
    }

    pub fn participation(&self, id: &str) -> usize {
        self.events.iter().filter(|e| e.involves(id)).count()
    }

    pub fn validate(&self) -> Result<(), StorylineError> {
        if self.schema_version != STORYLINE_SCHEMA_VERSION {
            return Err(StorylineError::SchemaVersion {
                found: self.schema_version,
                expected: STORYLINE_SCHEMA_VERSION,
            });
        }
        let mut ids = BTreeSet::new();
        for c in &self.characters {
            if !ids.insert(c.id.as_str()) {
                return Err(StorylineError::DuplicateCharacter(c.id.clone()));
            }
            if c.name.trim().is_empty() {
                return Err(StorylineError::EmptyName(c.id.clone()));
            }
        }
        for (position, e) in self.events.iter().enumerate() {
            if e.index != position {
                return Err(StorylineError::EventOrder {
                    position,
                    index: e.index,
                });
            }
            for p in &e.participant_ids {
                if !ids.contains(p.as_str()) {
                    return Err(StorylineError::UnknownParticipant {
                        event: e.index,
                        id: p.clone(),
                    });
                }
            }
            for (line, u) in e.conversation.iter().enumerate() {
                if let Some(id) = &u.speaker_id {
                    if !e.involves(id) {
                        return Err(StorylineError::SpeakerNotParticipant {
                            event: e.index,
                            line,
                            id: id.clone(),
                        });
                    }
                }
            }
            match self.environment(&e.location_name) {
                None => return Err(StorylineError::MissingEnvironment(e.location_name.clone())),
                Some(env) if env.description.trim().is_empty() => {
                    return Err(StorylineError::EmptyEnvironment(env.location_name.clone()))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("storyline serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StorylineError> {
        let version = serde_json::from_str::<serde_json::Value>(text)
            .map_err(|e| StorylineError::Malformed(e.to_string()))?
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| StorylineError::Malformed("missing schema_version".into()))?;
        if version != u64::from(STORYLINE_SCHEMA_VERSION) {
            return Err(StorylineError::SchemaVersion {
                found: version as u32,
                expected: STORYLINE_SCHEMA_VERSION,
            });
        }
        let storyline: Self = serde_json::from_str(text).map_err(|e| StorylineError::Malformed(e.to_string()))?;
        storyline.validate()?;
        Ok(storyline)
    }
}
