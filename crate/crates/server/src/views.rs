//! Response bodies. Every session response carries what a client needs to
//! draw the current event; media are referenced by id and fetched from
//! `/assets/{id}` separately.

use std::collections::BTreeMap;

use narrativeplay::media::{AssetKind, MediaType};
use narrativeplay::progression::Phase;
use narrativeplay::storyline::{AgeBand, Gender};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRef {
    pub id: String,
    pub url: String,
    pub kind: AssetKind,
    pub media_type: MediaType,
    /// Already synthesized; otherwise the first fetch synthesizes it.
    pub ready: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub id: String,
    pub name: String,
    pub is_player: bool,
    /// The player stands on the right, everyone else on the left.
    pub position: Position,
    /// The player may approach this participant.
    pub approachable: bool,
    pub portrait: Option<AssetRef>,
    pub favorability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineView {
    pub speaker_id: Option<String>,
    pub speaker_name: String,
    pub content: String,
    pub speech: Option<AssetRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPanel {
    pub index: usize,
    pub name: String,
    /// Text for the narration box.
    pub narration: String,
    pub location: String,
    pub scene: Option<AssetRef>,
    /// Non-player participants first, the player last.
    pub participants: Vec<ParticipantView>,
    pub conversation: Vec<LineView>,
    pub skipped_events: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyView {
    pub agent_id: String,
    pub agent_name: String,
    pub text: String,
    /// The agent spoke first on approach.
    pub initiated: bool,
    /// The model's reply was unreadable and a stock line was used.
    pub fallback: bool,
    pub speech: Option<AssetRef>,
    pub favorability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_id: String,
    pub narrative_id: String,
    pub player_character_id: String,
    pub phase: Phase,
    pub current_event_index: usize,
    pub total_events: usize,
    pub conversation_partner: Option<String>,
    pub favorability: BTreeMap<String, f64>,
    /// Absent once the session is finished.
    pub event: Option<EventPanel>,
    /// Present on responses to approach (when the agent speaks first) and say.
    pub reply: Option<ReplyView>,
    pub updated_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterSummary {
    pub id: String,
    pub name: String,
    pub summary: String,
    pub objective: Option<String>,
    pub gender: Gender,
    pub age_band: AgeBand,
    pub participation: usize,
    pub playable: bool,
    pub nonspecific: bool,
    pub portrait: Option<AssetRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharactersResponse {
    pub narrative_id: String,
    pub total_events: usize,
    /// Playable characters first, by participation; then the rest.
    pub characters: Vec<CharacterSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateNarrative {
    #[serde(default)]
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    pub narrative_id: String,
    pub character_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproachBody {
    pub agent_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SayBody {
    pub agent_id: String,
    pub text: String,
}
