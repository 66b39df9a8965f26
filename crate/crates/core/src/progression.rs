//! The live story loop: pick a major character, step through the events
//! they take part in, approach other characters and talk to them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::hashing::hex_digest;
use crate::memory::{
    format_memories, remember_event, seed_agent_memories, within_budget, MemoryBank, MemoryError, MemoryKind,
    DEFAULT_MEMORY_TOKEN_BUDGET, DEFAULT_TOP_K,
};
use crate::prompts::{self, PromptTemplate};
use crate::provider::{Gateway, ProviderError};
use crate::repair::{parse_with_fallback, FallbackPolicy, FieldKind, Schema};
use crate::storyline::{CharacterProfile, EnvironmentDescription, StoryEvent, Storyline, Utterance};

pub const MAJOR_SHARE_NUMERATOR: usize = 1;
pub const MAJOR_SHARE_DENOMINATOR: usize = 5;
pub const ACQUAINTED_FAVORABILITY: f64 = 0.5;
pub const STRANGER_FAVORABILITY: f64 = 0.3;
pub const FAVORABILITY_STEP: f64 = 0.1;
pub const RESPONSE_WORD_CAP: usize = 80;
pub const DEFLECTION: &str = "I would rather not say just now.";
const DEFAULT_OBJECTIVE: &str = "staying true to yourself";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Selecting,
    InEvent,
    InConversation,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptEntry {
    SessionStarted {
        player_id: String,
        event_index: usize,
    },
    EventPresented {
        event_index: usize,
        skipped: Vec<usize>,
    },
    ScriptedLine {
        event_index: usize,
        speaker: String,
        content: String,
    },
    Approached {
        agent_id: String,
        probability: f64,
        draw: f64,
        initiated: bool,
    },
    PlayerSaid {
        agent_id: String,
        text: String,
    },
    AgentSaid {
        agent_id: String,
        text: String,
        initiated: bool,
        used_memory_ids: Vec<String>,
        fallback: bool,
    },
    FavorabilityChanged {
        agent_id: String,
        before: f64,
        after: f64,
        sentiment: Option<f64>,
    },
    ConversationEnded {
        agent_id: String,
    },
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySession {
    pub id: String,
    pub narrative_id: String,
    pub player_character_id: String,
    pub current_event_index: usize,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_partner: Option<String>,
    pub favorability: BTreeMap<String, f64>,
    pub transcript: Vec<TranscriptEntry>,
    pub seed: u64,
    /// Random draws taken so far; each draw uses its own stream.
    pub draws: u64,
}

/// A session together with the memory streams of every agent in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session: StorySession,
    pub memory: MemoryBank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub agent_id: String,
    pub text: String,
    pub used_memory_ids: Vec<String>,
    pub initiated: bool,
    /// The model's reply could not be read; `text` is the deflection line.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventView {
    pub event: StoryEvent,
    pub environment: Option<EnvironmentDescription>,
    pub participants: Vec<CharacterProfile>,
    /// Scripted lines, played before the player can act.
    pub conversation: Vec<Utterance>,
    /// Events passed over because the player was not in them.
    pub skipped_events: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub top_k: usize,
    pub memory_token_budget: usize,
    pub word_cap: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            memory_token_budget: DEFAULT_MEMORY_TOKEN_BUDGET,
            word_cap: RESPONSE_WORD_CAP,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("storyline has no events")]
    NoEvents,
    #[error("character {0} is not playable")]
    NotPlayable(String),
    #[error("action needs phase {expected}, session is {found:?}")]
    PhaseViolation { expected: &'static str, found: Phase },
    #[error("agent {0} is not in the current event")]
    NotVisible(String),
    #[error("the player is talking to {partner}, not {requested}")]
    WrongPartner { partner: String, requested: String },
    #[error("player text is empty")]
    EmptyInput,
    #[error("session state is invalid: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl EngineError {
    /// Provider failures surface unchanged through memory operations too.
    pub fn provider(&self) -> Option<&ProviderError> {
        match self {
            Self::Provider(e) | Self::Memory(MemoryError::Provider(e)) => Some(e),
            _ => None,
        }
    }
}

pub fn initiation_probability(favorability: f64) -> f64 {
    0.1 + 0.6 * favorability.clamp(0.0, 1.0)
}

pub fn apply_sentiment(favorability: f64, sentiment: f64) -> f64 {
    (favorability + FAVORABILITY_STEP * sentiment).clamp(0.0, 1.0)
}

pub fn is_major(participation: usize, total_events: usize) -> bool {
    participation * MAJOR_SHARE_DENOMINATOR >= total_events * MAJOR_SHARE_NUMERATOR
}

/// Specific characters in at least a fifth of all events, most involved
/// first, then by name.
pub fn list_playable_characters(storyline: &Storyline) -> Result<Vec<&CharacterProfile>, EngineError> {
    let total = storyline.events.len();
    if total == 0 {
        return Err(EngineError::NoEvents);
    }
    let mut playable: Vec<(&CharacterProfile, usize)> = storyline
        .characters
        .iter()
        .filter(|c| !c.nonspecific)
        .map(|c| (c, storyline.participation(&c.id)))
        .filter(|(_, n)| *n > 0 && is_major(*n, total))
        .collect();
    playable.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.name.cmp(&b.0.name)));
    Ok(playable.into_iter().map(|(c, _)| c).collect())
}

/// Keeps words up to `cap`; longer text is cut after the last sentence end
/// inside the cap, or at the cap when there is none.
pub fn cap_words(text: &str, cap: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= cap {
        return text.trim().to_string();
    }
    let head = &words[..cap];
    let ends_sentence = |w: &str| {
        w.trim_end_matches(['"', '\'', ')', '\u{201d}', '\u{2019}'])
            .ends_with(['.', '!', '?'])
    };
    match head.iter().rposition(|w| ends_sentence(w)) {
        Some(last) => head[..=last].join(" "),
        None => head.join(" "),
    }
}

fn session_id(narrative_id: &str, character_id: &str, seed: u64) -> String {
    format!("s-{}", &hex_digest(&[narrative_id, character_id, &seed.to_string()])[..16])
}

fn response_schema() -> Schema {
    Schema::object(&[("response", FieldKind::Text)])
}

/// Runs `f` on a copy of the state and keeps the result only on success.
fn atomically<T>(
    state: &mut SessionState,
    f: impl FnOnce(&mut SessionState) -> Result<T, EngineError>,
) -> Result<T, EngineError> {
    let mut work = state.clone();
    let out = f(&mut work)?;
    *state = work;
    Ok(out)
}

pub struct Engine<'a> {
    pub storyline: &'a Storyline,
    pub gateway: &'a Gateway,
    pub config: EngineConfig,
}

impl<'a> Engine<'a> {
    pub fn new(storyline: &'a Storyline, gateway: &'a Gateway) -> Self {
        Self {
            storyline,
            gateway,
            config: EngineConfig::default(),
        }
    }

    pub fn with_config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    fn name_of(&self, id: &str) -> String {
        self.storyline.character(id).map_or_else(|| id.to_string(), |c| c.name.clone())
    }

    fn next_player_event(&self, player: &str, after: Option<usize>) -> Option<usize> {
        let start = after.map_or(0, |i| i + 1);
        self.storyline.events.iter().skip(start).find(|e| e.involves(player)).map(|e| e.index)
    }

    fn scripted_lines(&self, event: &StoryEvent, session: &mut StorySession) {
        for u in &event.conversation {
            let speaker = u
                .speaker_id
                .as_deref()
                .map_or_else(|| u.speaker_name.clone(), |id| self.name_of(id));
            session.transcript.push(TranscriptEntry::ScriptedLine {
                event_index: event.index,
                speaker,
                content: u.content.clone(),
            });
        }
    }

    pub fn view(&self, event_index: usize, skipped: Vec<usize>) -> EventView {
        let event = self.storyline.events[event_index].clone();
        EventView {
            environment: self.storyline.environment(&event.location_name).cloned(),
            participants: event
                .participant_ids
                .iter()
                .filter_map(|id| self.storyline.character(id).cloned())
                .collect(),
            conversation: event.conversation.clone(),
            skipped_events: skipped,
            event,
        }
    }

    /// Opens a session at the player's first event with memories seeded.
    pub fn start_session(&self, character_id: &str, seed: u64) -> Result<SessionState, EngineError> {
        let playable = list_playable_characters(self.storyline)?;
        if !playable.iter().any(|c| c.id == character_id) {
            return Err(EngineError::NotPlayable(character_id.to_string()));
        }
        let start = self
            .next_player_event(character_id, None)
            .ok_or_else(|| EngineError::NotPlayable(character_id.to_string()))?;

        let mut memory = MemoryBank::new();
        seed_agent_memories(&mut memory, self.gateway, self.storyline, start)?;

        let favorability = self
            .storyline
            .characters
            .iter()
            .filter(|c| !c.nonspecific && c.id != character_id)
            .map(|c| {
                let shared = self
                    .storyline
                    .events
                    .iter()
                    .any(|e| e.involves(&c.id) && e.involves(character_id));
                let f = if shared { ACQUAINTED_FAVORABILITY } else { STRANGER_FAVORABILITY };
                (c.id.clone(), f)
            })
            .collect();

        let mut session = StorySession {
            id: session_id(&self.storyline.narrative_id, character_id, seed),
            narrative_id: self.storyline.narrative_id.clone(),
            player_character_id: character_id.to_string(),
            current_event_index: start,
            phase: Phase::InEvent,
            conversation_partner: None,
            favorability,
            transcript: vec![
                TranscriptEntry::SessionStarted {
                    player_id: character_id.to_string(),
                    event_index: start,
                },
                TranscriptEntry::EventPresented {
                    event_index: start,
                    skipped: (0..start).collect(),
                },
            ],
            seed,
            draws: 0,
        };
        self.scripted_lines(&self.storyline.events[start], &mut session);
        Ok(SessionState { session, memory })
    }

    pub fn current_view(&self, state: &SessionState) -> Option<EventView> {
        (state.session.phase != Phase::Finished && state.session.phase != Phase::Selecting)
            .then(|| self.view(state.session.current_event_index, Vec::new()))
    }

    fn end_conversation(session: &mut StorySession) {
        if let Some(agent_id) = session.conversation_partner.take() {
            session.transcript.push(TranscriptEntry::ConversationEnded { agent_id });
        }
        if session.phase == Phase::InConversation {
            session.phase = Phase::InEvent;
        }
    }

    pub fn leave_conversation(&self, state: &mut SessionState) -> Result<(), EngineError> {
        if state.session.phase != Phase::InConversation {
            return Err(EngineError::PhaseViolation {
                expected: "in_conversation",
                found: state.session.phase,
            });
        }
        Self::end_conversation(&mut state.session);
        Ok(())
    }

    /// Moves to the player's next event. Participants of every event passed
    /// on the way, skipped ones included, remember it. Returns `None` and
    /// finishes the session when the player has no further event.
    pub fn advance_event(&self, state: &mut SessionState) -> Result<Option<EventView>, EngineError> {
        match state.session.phase {
            Phase::InEvent | Phase::InConversation => {}
            found => {
                return Err(EngineError::PhaseViolation {
                    expected: "in_event",
                    found,
                })
            }
        }
        atomically(state, |st| {
            Self::end_conversation(&mut st.session);
            let player = st.session.player_character_id.clone();
            let from = st.session.current_event_index;
            let Some(next) = self.next_player_event(&player, Some(from)) else {
                st.session.phase = Phase::Finished;
                st.session.transcript.push(TranscriptEntry::Finished);
                return Ok(None);
            };
            for index in (from + 1)..=next {
                let event = &self.storyline.events[index];
                for id in &event.participant_ids {
                    if st.memory.has_agent(id) {
                        remember_event(&mut st.memory, self.gateway, self.storyline, id, index)?;
                    }
                }
            }
            let skipped: Vec<usize> = ((from + 1)..next).collect();
            st.session.current_event_index = next;
            st.session.transcript.push(TranscriptEntry::EventPresented {
                event_index: next,
                skipped: skipped.clone(),
            });
            self.scripted_lines(&self.storyline.events[next], &mut st.session);
            Ok(Some(self.view(next, skipped)))
        })
    }

    /// Non-player, specific participants of the current event.
    pub fn visible_agents(&self, state: &SessionState) -> Vec<String> {
        let s = &state.session;
        if !matches!(s.phase, Phase::InEvent | Phase::InConversation) {
            return Vec::new();
        }
        self.storyline.events[s.current_event_index]
            .participant_ids
            .iter()
            .filter(|id| **id != s.player_character_id)
            .filter(|id| self.storyline.character(id).is_some_and(|c| !c.nonspecific))
            .cloned()
            .collect()
    }

    fn require_visible(&self, state: &SessionState, agent_id: &str) -> Result<(), EngineError> {
        if self.visible_agents(state).iter().any(|a| a == agent_id) {
            Ok(())
        } else {
            Err(EngineError::NotVisible(agent_id.to_string()))
        }
    }

    fn draw(session: &mut StorySession) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(session.seed);
        rng.set_stream(session.draws);
        session.draws += 1;
        rng.random::<f64>()
    }

    fn generate(
        &self,
        st: &mut SessionState,
        template: &PromptTemplate,
        agent_id: &str,
        query: &str,
        user_input: &str,
    ) -> Result<(String, Vec<String>, bool), EngineError> {
        let agent = self
            .storyline
            .character(agent_id)
            .ok_or_else(|| EngineError::NotVisible(agent_id.to_string()))?;
        let current = st.session.current_event_index;
        let event = &self.storyline.events[current];
        let scored = st
            .memory
            .retrieve_top(self.gateway, agent_id, query, current, self.config.top_k)?;
        let kept = within_budget(&scored, self.config.memory_token_budget);
        let used: Vec<String> = kept.iter().map(|s| s.record.id.clone()).collect();
        let memory_text = format_memories(kept);
        let objective = agent.objective.as_deref().unwrap_or(DEFAULT_OBJECTIVE);
        let player_name = self.name_of(&st.session.player_character_id);
        let event_description = format!("{}: {}", event.name, event.description);
        let request = template
            .render(&[
                ("character", &agent.name),
                ("objective", objective),
                ("event_description", &event_description),
                ("user_character", &player_name),
                ("memory", &memory_text),
                ("user_input", user_input),
            ])
            .map_err(|e| EngineError::InvalidState(e.to_string()))?
            .with_tag(agent.name.clone());
        let raw = self.gateway.complete_chat(&request)?;
        let schema = response_schema();
        let (value, _) = parse_with_fallback(&raw, &schema, &FallbackPolicy::for_schema(&schema), None);
        let reply = value
            .get("response")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| cap_words(s, self.config.word_cap));
        Ok(match reply {
            Some(text) => (text, used, false),
            None => (DEFLECTION.to_string(), used, true),
        })
    }

    /// The player walks up to an agent. With probability `0.1 + 0.6 f` the
    /// agent speaks first. The session is in conversation either way.
    pub fn approach(&self, state: &mut SessionState, agent_id: &str) -> Result<Option<AgentResponse>, EngineError> {
        match state.session.phase {
            Phase::InEvent | Phase::InConversation => {}
            found => {
                return Err(EngineError::PhaseViolation {
                    expected: "in_event",
                    found,
                })
            }
        }
        self.require_visible(state, agent_id)?;
        atomically(state, |st| {
            if st.session.conversation_partner.as_deref() != Some(agent_id) {
                Self::end_conversation(&mut st.session);
            }
            let f = st.session.favorability.get(agent_id).copied().unwrap_or(STRANGER_FAVORABILITY);
            let p = initiation_probability(f);
            let draw = Self::draw(&mut st.session);
            let initiated = draw < p;
            st.session.transcript.push(TranscriptEntry::Approached {
                agent_id: agent_id.to_string(),
                probability: p,
                draw,
                initiated,
            });
            st.session.phase = Phase::InConversation;
            st.session.conversation_partner = Some(agent_id.to_string());
            if !initiated {
                return Ok(None);
            }
            let player = st.session.player_character_id.clone();
            let player_name = self.name_of(&player);
            let event = &self.storyline.events[st.session.current_event_index];
            let query = format!("{player_name} approaches. {}", event.description);
            let (text, used, fallback) = self.generate(st, &prompts::INITIATE, agent_id, &query, "")?;
            let index = st.session.current_event_index;
            let agent_name = self.name_of(agent_id);
            st.memory.add_memory(
                self.gateway,
                agent_id,
                &format!("I said to {player_name}: \"{text}\""),
                MemoryKind::OwnResponse,
                index,
            )?;
            if st.memory.has_agent(&player) {
                st.memory.add_memory(
                    self.gateway,
                    &player,
                    &format!("{agent_name} said to me: \"{text}\""),
                    MemoryKind::HeardUtterance,
                    index,
                )?;
            }
            st.session.transcript.push(TranscriptEntry::AgentSaid {
                agent_id: agent_id.to_string(),
                text: text.clone(),
                initiated: true,
                used_memory_ids: used.clone(),
                fallback,
            });
            Ok(Some(AgentResponse {
                agent_id: agent_id.to_string(),
                text,
                used_memory_ids: used,
                initiated: true,
                fallback,
            }))
        })
    }

    /// One exchange: the player speaks, the agent answers from retrieved
    /// memories, both remember it, and favorability moves with sentiment.
    pub fn say_to(&self, state: &mut SessionState, agent_id: &str, user_text: &str) -> Result<AgentResponse, EngineError> {
        if state.session.phase != Phase::InConversation {
            return Err(EngineError::PhaseViolation {
                expected: "in_conversation",
                found: state.session.phase,
            });
        }
        self.require_visible(state, agent_id)?;
        match state.session.conversation_partner.as_deref() {
            Some(p) if p == agent_id => {}
            other => {
                return Err(EngineError::WrongPartner {
                    partner: other.unwrap_or_default().to_string(),
                    requested: agent_id.to_string(),
                })
            }
        }
        let user_text = user_text.trim();
        if user_text.is_empty() {
            return Err(EngineError::EmptyInput);
        }
        atomically(state, |st| {
            let (text, used, fallback) = self.generate(st, &prompts::RESPOND, agent_id, user_text, user_text)?;
            let index = st.session.current_event_index;
            let player = st.session.player_character_id.clone();
            let player_name = self.name_of(&player);
            let agent_name = self.name_of(agent_id);
            st.memory.add_memory(
                self.gateway,
                agent_id,
                &format!("{player_name} said to me: \"{user_text}\""),
                MemoryKind::UserInput,
                index,
            )?;
            st.memory.add_memory(
                self.gateway,
                agent_id,
                &format!("I replied to {player_name}: \"{text}\""),
                MemoryKind::OwnResponse,
                index,
            )?;
            if st.memory.has_agent(&player) {
                st.memory.add_memory(
                    self.gateway,
                    &player,
                    &format!("I said to {agent_name}: \"{user_text}\""),
                    MemoryKind::OwnResponse,
                    index,
                )?;
                st.memory.add_memory(
                    self.gateway,
                    &player,
                    &format!("{agent_name} replied: \"{text}\""),
                    MemoryKind::HeardUtterance,
                    index,
                )?;
            }
            st.session.transcript.push(TranscriptEntry::PlayerSaid {
                agent_id: agent_id.to_string(),
                text: user_text.to_string(),
            });
            st.session.transcript.push(TranscriptEntry::AgentSaid {
                agent_id: agent_id.to_string(),
                text: text.clone(),
                initiated: false,
                used_memory_ids: used.clone(),
                fallback,
            });
            let exchange = format!("{player_name}: {user_text}\n{agent_name}: {text}");
            self.update_favorability(st, agent_id, &exchange);
            Ok(AgentResponse {
                agent_id: agent_id.to_string(),
                text,
                used_memory_ids: used,
                initiated: false,
                fallback,
            })
        })
    }

    /// Judges the exchange's sentiment on [-1, 1] and moves favorability by a
    /// tenth of it. A failed judgment leaves favorability unchanged.
    pub fn update_favorability(&self, state: &mut SessionState, agent_id: &str, exchange: &str) -> f64 {
        let before = state
            .session
            .favorability
            .get(agent_id)
            .copied()
            .unwrap_or(STRANGER_FAVORABILITY);
        let agent_name = self.name_of(agent_id);
        let sentiment = prompts::fill(
            prompts::SENTIMENT.label,
            prompts::SENTIMENT.user,
            &[("character", &agent_name), ("exchange", exchange)],
        )
        .ok()
        .and_then(|user| {
            self.gateway
                .judge_scalar(prompts::SENTIMENT.label, prompts::SENTIMENT.system, &user, (-1.0, 1.0))
                .map_err(|e| log::warn!("sentiment judge failed: {e}"))
                .ok()
        });
        let after = sentiment.map_or(before, |s| apply_sentiment(before, s));
        state.session.favorability.insert(agent_id.to_string(), after);
        state.session.transcript.push(TranscriptEntry::FavorabilityChanged {
            agent_id: agent_id.to_string(),
            before,
            after,
            sentiment,
        });
        after
    }

    /// Checks the session against the storyline; used when loading state.
    pub fn validate(&self, state: &SessionState) -> Result<(), EngineError> {
        let s = &state.session;
        let bad = |m: String| Err(EngineError::InvalidState(m));
        if s.narrative_id != self.storyline.narrative_id {
            return bad(format!("session belongs to narrative {}", s.narrative_id));
        }
        if s.current_event_index >= self.storyline.events.len() {
            return bad(format!(
                "current event {} but the storyline has {} events",
                s.current_event_index,
                self.storyline.events.len()
            ));
        }
        if self.storyline.character(&s.player_character_id).is_none() {
            return bad(format!("unknown player character {}", s.player_character_id));
        }
        if let Some((id, f)) = s.favorability.iter().find(|(_, f)| !(0.0..=1.0).contains(*f)) {
            return bad(format!("favorability {f} for {id} outside [0, 1]"));
        }
        match (s.phase, &s.conversation_partner) {
            (Phase::InConversation, None) => return bad("in conversation without a partner".into()),
            (Phase::InConversation, Some(_)) | (_, None) => {}
            (_, Some(p)) => return bad(format!("partner {p} outside a conversation")),
        }
        for (agent, records) in &state.memory.streams {
            for r in records {
                if r.event_index > s.current_event_index {
                    return bad(format!("memory {} of {agent} is from a future event", r.id));
                }
                if !(0.0..=1.0).contains(&r.importance) {
                    return bad(format!("memory {} has importance {}", r.id, r.importance));
                }
            }
        }
        Ok(())
    }
}

/// A user action, as recorded for replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Advance,
    Approach { agent_id: String },
    Say { agent_id: String, text: String },
    Leave,
}

impl Engine<'_> {
    pub fn apply(&self, state: &mut SessionState, action: &Action) -> Result<(), EngineError> {
        match action {
            Action::Advance => self.advance_event(state).map(|_| ()),
            Action::Approach { agent_id } => self.approach(state, agent_id).map(|_| ()),
            Action::Say { agent_id, text } => self.say_to(state, agent_id, text).map(|_| ()),
            Action::Leave => self.leave_conversation(state),
        }
    }

    /// Starts a session and applies `actions` in order.
    pub fn replay(&self, character_id: &str, seed: u64, actions: &[Action]) -> Result<SessionState, EngineError> {
        let mut state = self.start_session(character_id, seed)?;
        for action in actions {
            self.apply(&mut state, action)?;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_endpoints() {
        assert!((initiation_probability(0.0) - 0.1).abs() < 1e-15);
        assert!((initiation_probability(1.0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn favorability_updates() {
        assert!((apply_sentiment(0.5, 1.0) - 0.6).abs() < 1e-12);
        assert_eq!(apply_sentiment(0.95, 1.0), 1.0);
        assert_eq!(apply_sentiment(0.5, 0.0), 0.5);
        assert_eq!(apply_sentiment(0.02, -1.0), 0.0);
    }

    #[test]
    fn major_boundary() {
        assert!(is_major(2, 10));
        assert!(!is_major(1, 10));
        assert!(is_major(1, 5));
    }

    #[test]
    fn word_cap_prefers_sentence_end() {
        let long = format!("{} Done. {}", vec!["word"; 70].join(" "), vec!["more"; 20].join(" "));
        let capped = cap_words(&long, 80);
        assert!(capped.ends_with("Done."));
        assert_eq!(capped.split_whitespace().count(), 71);
        let run_on = vec!["word"; 100].join(" ");
        assert_eq!(cap_words(&run_on, 80).split_whitespace().count(), 80);
        assert_eq!(cap_words("  short reply ", 80), "short reply");
    }
}
