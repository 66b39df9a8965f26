use std::sync::Arc;

use narrativeplay::chunker::{Chunk, NarrativeText};
use narrativeplay::extraction::{
    dedupe_characters, extract_storyline, ExtractionConfig, Extractor, UNKNOWN_LOCATION,
};
use narrativeplay::provider::{
    EmbeddingProvider, EmbeddingVector, FixtureSet, Gateway, MockEmbedder, MockProvider, ProviderError,
};
use narrativeplay::repair::{RepairKind, EYE_COLOURS, HAIR_COLOURS};
use narrativeplay::storyline::{AgeBand, CharacterProfile, ExtractionStats, Gender, StoryEvent, Utterance};

const CHARACTERS_EXAMPLE: &str = r#"[{"name": "Charlie Bucket"}, {"name": "Grandpa Joe"}]"#;

const PONDICHERRY: &str = r#"[{"event": "Grandpa Joe telling story about Prince Pondicherry", "character": "Grandpa Joe, Charlie", "location": "Grandparents' room", " description": "Grandpa Joe recounts the story of Prince Pondicherry, an Indian prince who commissioned Mr Willy Wonka to build a colossal palace entirely out of chocolate."}]"#;

const EXCHANGE: &str = r#"[{"speaker": "Grandpa Joe", "content": "Not people, Charlie. Not ordinary people, anyway."}, {"speaker": "Charlie Bucket", "content": "Then who?"}, {"speaker": "Grandpa Joe", "content": "Ah-ha . . . That's it, you see . . . That's another of Mr Willy Wonka's clevernesses."}]"#;

fn chunk(index: usize, text: &str) -> Chunk {
    Chunk {
        index,
        text: text.to_string(),
        sentence_span: (0, 0),
        token_estimate: 10,
    }
}

fn gateway(fixtures: FixtureSet) -> (Gateway, Arc<MockProvider>) {
    let provider = Arc::new(MockProvider::new(11, fixtures));
    let gw = Gateway::new(provider.clone(), Arc::new(MockEmbedder::new(11, 64)));
    (gw, provider)
}

fn config() -> ExtractionConfig {
    ExtractionConfig {
        seed: 11,
        ..ExtractionConfig::default()
    }
}

#[test]
fn characters_from_format_example() {
    let (gw, _) = gateway(FixtureSet::new().with("extract_characters:ccf_ch1", CHARACTERS_EXAMPLE));
    let mut ex = Extractor::new(&gw, "ccf", config());
    let found = ex.extract_characters(&chunk(0, "Charlie and Grandpa Joe.")).unwrap();
    assert_eq!(found.value, ["Charlie Bucket", "Grandpa Joe"]);
}

#[test]
fn empty_character_list() {
    let (gw, _) = gateway(FixtureSet::new().with("extract_characters", "[]"));
    let mut ex = Extractor::new(&gw, "ccf", config());
    assert!(ex.extract_characters(&chunk(0, "Nothing happens.")).unwrap().value.is_empty());
}

#[test]
fn single_quoted_character_list_is_repaired() {
    let (gw, _) = gateway(FixtureSet::new().with(
        "extract_characters",
        "[{'name': 'Charlie Bucket'}, {'name': 'Grandpa Joe'}]",
    ));
    let mut ex = Extractor::new(&gw, "ccf", config());
    let found = ex.extract_characters(&chunk(0, "x")).unwrap();
    assert_eq!(found.value, ["Charlie Bucket", "Grandpa Joe"]);
    assert!(found.report.repairs_applied.contains(&RepairKind::QuotesNormalized));
}

#[test]
fn profile_fields_map_directly() {
    let (gw, _) = gateway(
        FixtureSet::new()
            .with(
                "extract_traits:Charlie Bucket",
                r#"{"summary": "A poor boy.", "keywords": "kind, hopeful", "objective": "Find a golden ticket"}"#,
            )
            .with("extract_appearance:Charlie Bucket", r#"{"appearance": "brown hair, blue eyes, poor"}"#)
            .with("extract_voice:Charlie Bucket", r#"{"gender": "male", "age": "child"}"#),
    );
    let mut ex = Extractor::new(&gw, "ccf", config());
    let p = ex.extract_character_profile("Charlie Bucket", &chunk(0, "x")).unwrap();
    assert_eq!(p.summary, "A poor boy.");
    assert_eq!(p.keywords, ["kind", "hopeful"]);
    assert_eq!(p.objective.as_deref(), Some("Find a golden ticket"));
    assert_eq!(p.appearance, "brown hair, blue eyes, poor");
    assert_eq!((p.gender, p.age_band), (Gender::Male, AgeBand::Child));
    assert!(!p.voice_reasked);
}

#[test]
fn missing_objective_and_appearance() {
    let (gw, _) = gateway(
        FixtureSet::new()
            .with("extract_traits", r#"{"summary": "An old man.", "keywords": "wise"}"#)
            .with("extract_appearance", "I cannot say.")
            .with("extract_voice", r#"{"gender": "male", "age": "old age"}"#),
    );
    let mut ex = Extractor::new(&gw, "ccf", config());
    let p = ex.extract_character_profile("Grandpa Joe", &chunk(0, "x")).unwrap();
    assert_eq!(p.objective, None);
    let (hair, eyes) = p.appearance.split_once(", ").unwrap();
    assert!(HAIR_COLOURS.contains(&hair.trim_end_matches(" hair")));
    assert!(EYE_COLOURS.contains(&eyes.trim_end_matches(" eyes")));
    let again = Extractor::new(&gw, "ccf", config())
        .extract_character_profile("Grandpa Joe", &chunk(0, "x"))
        .unwrap();
    assert_eq!(again.appearance, p.appearance);
}

#[test]
fn voice_outside_closed_set_is_reasked_then_defaulted() {
    let (gw, provider) = gateway(FixtureSet::new().with("extract_voice", r#"{"gender": "robot", "age": "ancient"}"#));
    let mut ex = Extractor::new(&gw, "ccf", config());
    let p = ex.extract_character_profile("Tin Man", &chunk(0, "x")).unwrap();
    assert_eq!(provider.call_count("extract_voice"), 2);
    assert!(p.voice_reasked && p.voice_defaulted);
    assert_eq!(p.age_band, AgeBand::MiddleAge);
}

#[test]
fn reask_can_fill_the_missing_half() {
    let (gw, _) = gateway(
        FixtureSet::new()
            .with("extract_voice:Ann", r#"{"gender": "female", "age": "?"}"#)
            .with("extract_voice:Ann/retry", r#"{"gender": "female", "age": "yongth"}"#),
    );
    let mut ex = Extractor::new(&gw, "n", config());
    let p = ex.extract_character_profile("Ann", &chunk(0, "x")).unwrap();
    assert_eq!((p.gender, p.age_band), (Gender::Female, AgeBand::Youth));
    assert!(p.voice_reasked && !p.voice_defaulted);
}

fn ccf_fixtures() -> FixtureSet {
    FixtureSet::new()
        .with("extract_characters:ccf_ch1", CHARACTERS_EXAMPLE)
        .with("extract_events:ccf_ch1", PONDICHERRY)
        .with("extract_conversation:ccf_e0", EXCHANGE)
        .with(
            "extract_environment:Grandparents' room",
            r#"{"keyword": "Cozy, cramped, inadequate space", "description": "A single shared bed fills the room."}"#,
        )
}

#[test]
fn pondicherry_event() {
    let (gw, _) = gateway(ccf_fixtures());
    let mut ex = Extractor::new(&gw, "ccf", config());
    let c = chunk(0, "story");
    ex.register_characters(&c).unwrap();
    let added = ex.extract_events(&c).unwrap();
    assert_eq!(added, [0]);
    let e = &ex.events()[0];
    assert_eq!(e.location_name, "Grandparents' room");
    assert_eq!(e.participant_ids, ["grandpa-joe", "charlie-bucket"]);
    assert!(ex.characters().iter().all(|c| !c.provisional));
}

#[test]
fn no_events() {
    let (gw, _) = gateway(FixtureSet::new().with("extract_events", "[]"));
    let mut ex = Extractor::new(&gw, "ccf", config());
    assert!(ex.extract_events(&chunk(0, "x")).unwrap().is_empty());
}

#[test]
fn global_indices_across_chunks() {
    let ev = |names: &[&str]| {
        let items: Vec<String> = names
            .iter()
            .map(|n| format!(r#"{{"event": "{n}", "character": "Ann", "location": "hall", "description": "{n} happens."}}"#))
            .collect();
        format!("[{}]", items.join(", "))
    };
    let (gw, _) = gateway(
        FixtureSet::new()
            .with("extract_events:n_ch1", ev(&["a", "b"]))
            .with("extract_events:n_ch2", ev(&["c", "d", "e"])),
    );
    let mut ex = Extractor::new(&gw, "n", config());
    ex.extract_events(&chunk(0, "one")).unwrap();
    ex.extract_events(&chunk(1, "two")).unwrap();
    let indices: Vec<usize> = ex.events().iter().map(|e| e.index).collect();
    assert_eq!(indices, [0, 1, 2, 3, 4]);
    assert_eq!(ex.events()[2].chunk_index, 1);
    // the unknown participant was registered once, provisionally
    assert_eq!(ex.characters().len(), 1);
    assert!(ex.characters()[0].provisional);
}

#[test]
fn conversation_in_order() {
    let (gw, _) = gateway(ccf_fixtures());
    let mut ex = Extractor::new(&gw, "ccf", config());
    let c = chunk(0, "story");
    ex.process_chunk(&c).unwrap();
    let lines = &ex.events()[0].conversation;
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].content, "Not people, Charlie. Not ordinary people, anyway.");
    assert_eq!(lines[1].speaker_id.as_deref(), Some("charlie-bucket"));
    assert!(lines.iter().all(|u| !u.unresolved_speaker));
    let joe = ex.characters().iter().find(|c| c.id == "grandpa-joe").unwrap();
    assert_eq!(joe.quotes.len(), 2);
}

#[test]
fn solo_event_skips_conversation_call() {
    let (gw, provider) = gateway(FixtureSet::new().with(
        "extract_events",
        r#"[{"event": "walk", "character": "Ann", "location": "road", "description": "Ann walks."}]"#,
    ));
    let mut ex = Extractor::new(&gw, "n", config());
    let c = chunk(0, "x");
    ex.extract_events(&c).unwrap();
    assert!(ex.extract_conversation(0, &c).unwrap().is_empty());
    assert_eq!(provider.call_count("extract_conversation"), 0);
}

#[test]
fn unknown_speaker_is_flagged() {
    let (gw, _) = gateway(
        ccf_fixtures().with(
            "extract_conversation:ccf_e0",
            r#"[{"speaker": "Narrator", "content": "Time passed."}, {"speaker": "Charlie", "content": "Then who?"}]"#,
        ),
    );
    let mut ex = Extractor::new(&gw, "ccf", config());
    ex.process_chunk(&chunk(0, "x")).unwrap();
    let lines = &ex.events()[0].conversation;
    assert!(lines[0].unresolved_speaker && lines[0].speaker_id.is_none());
    assert_eq!(lines[0].speaker_name, "Narrator");
    assert_eq!(lines[1].speaker_id.as_deref(), Some("charlie-bucket"));
}

#[test]
fn environment_examples_and_fallback() {
    let (gw, provider) = gateway(
        FixtureSet::new()
            .with(
                "extract_environment:small wooden house",
                r#"{"keyword": "Cozy, cramped, inadequate space", "description": "The small wooden house with its wooden exterior has limited space, and there was only one bed."}"#,
            )
            .with(
                "extract_environment:town",
                r#"{"keyword": "chocolate factory, small, impoverished, mysterious", "description": "Most residents live in humble, impoverished conditions, with dull and dreary surroundings."}"#,
            )
            .with("extract_environment:cellar", "no idea"),
    );
    let mut ex = Extractor::new(&gw, "ccf", ExtractionConfig { rectify: false, ..config() });
    let c = chunk(0, "x");
    let house = ex.extract_environment("small wooden house", &c).unwrap();
    assert_eq!(house.keywords, ["Cozy", "cramped", "inadequate space"]);
    assert!(house.description.contains("limited space"));
    let town = ex.extract_environment("town", &c).unwrap();
    assert!(town.description.contains("impoverished conditions, with dull and dreary surroundings"));
    let cellar = ex.extract_environment("cellar", &c).unwrap();
    assert_eq!(cellar.description, "cellar");
    assert!(cellar.keywords.is_empty());
    ex.extract_environment("town", &c).unwrap();
    assert_eq!(provider.call_count("extract_environment"), 3);
}

/// Every text maps to the same direction, so every pair is a candidate.
struct Constant;

impl EmbeddingProvider for Constant {
    fn embed(&self, _: &str) -> Result<EmbeddingVector, ProviderError> {
        Ok(EmbeddingVector::new(vec![1.0, 0.0]))
    }
}

fn judge_gateway(fixtures: FixtureSet) -> Gateway {
    Gateway::new(Arc::new(MockProvider::new(0, fixtures)), Arc::new(Constant))
}

fn profile(id: &str, name: &str, quote: &str) -> CharacterProfile {
    let mut p = CharacterProfile::bare(id, name);
    p.appearance = "grey hair, grey eyes".into();
    p.quotes = vec![quote.to_string()];
    p
}

fn event_with(ids: &[&str]) -> StoryEvent {
    StoryEvent {
        index: 0,
        name: "e".into(),
        participant_ids: ids.iter().map(|s| s.to_string()).collect(),
        location_name: "train".into(),
        description: "d".into(),
        conversation: ids
            .iter()
            .map(|id| Utterance {
                speaker_id: Some(id.to_string()),
                speaker_name: id.to_string(),
                content: "x".into(),
                unresolved_speaker: false,
            })
            .collect(),
        chunk_index: 0,
    }
}

#[test]
fn hubbard_merges_into_one_profile() {
    let gw = judge_gateway(FixtureSet::new().with("dedupe", r#"{"same": "yes"}"#));
    let registry = vec![
        profile("hubbard", "Mrs Caroline Hubbard", "q1"),
        profile("lady", "elderly American lady", "q2"),
        profile("arden", "Linda Arden", "q3"),
    ];
    let mut events = vec![event_with(&["lady", "arden"])];
    let mut stats = ExtractionStats::default();
    let merged = dedupe_characters(&gw, registry, &mut events, 0.55, &mut stats).unwrap();
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0].aliases, ["elderly American lady", "Linda Arden"]);
    assert_eq!(merged[0].alias_ids, ["lady", "arden"]);
    assert_eq!(merged[0].quotes, ["q1", "q2", "q3"]);
    assert_eq!(events[0].participant_ids, ["hubbard"]);
    assert!(events[0].conversation.iter().all(|u| u.speaker_id.as_deref() == Some("hubbard")));
}

#[test]
fn judge_says_no_keeps_registry() {
    let gw = judge_gateway(FixtureSet::new().with("dedupe", r#"{"same": "no"}"#));
    let registry = vec![profile("a", "Ann", "1"), profile("b", "Bo", "2")];
    let mut events = vec![event_with(&["a", "b"])];
    let mut stats = ExtractionStats::default();
    let merged = dedupe_characters(&gw, registry.clone(), &mut events, 0.55, &mut stats).unwrap();
    assert_eq!(merged, registry);
    assert_eq!(events[0].participant_ids, ["a", "b"]);
}

#[test]
fn chained_confirmations_merge_transitively() {
    let gw = judge_gateway(
        FixtureSet::new()
            .with("dedupe", r#"{"same": "no"}"#)
            .with("dedupe:Alpha|Beta", r#"{"same": "yes"}"#)
            .with("dedupe:Beta|Gamma", r#"{"same": "yes"}"#),
    );
    let registry = vec![profile("a", "Alpha", "1"), profile("b", "Beta", "2"), profile("c", "Gamma", "3")];
    let mut events = vec![event_with(&["c"])];
    let mut stats = ExtractionStats::default();
    let merged = dedupe_characters(&gw, registry, &mut events, 0.55, &mut stats).unwrap();
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0].id, "a");
    assert_eq!(events[0].participant_ids, ["a"]);
    assert_eq!(stats.merged_duplicates, 2);
}

#[test]
fn unreadable_judge_leaves_pair_unmerged() {
    let gw = judge_gateway(FixtureSet::new().with("dedupe", "maybe?"));
    let registry = vec![profile("a", "Ann", "1"), profile("b", "Ann Smith", "2")];
    let mut events = vec![];
    let mut stats = ExtractionStats::default();
    let merged = dedupe_characters(&gw, registry, &mut events, 0.55, &mut stats).unwrap();
    assert_eq!(merged.len(), 2);
    assert_eq!(stats.judge_failures, 1);
}

const TWO_CHUNK_STORY: &str = "Ann met Bo at the gate. Bo smiled at her. They walked home together.";

fn story_fixtures() -> FixtureSet {
    FixtureSet::new()
        .with("extract_characters", r#"[{"name": "Ann"}, {"name": "Bo"}, {"name": "somebody"}]"#)
        .with(
            "extract_events",
            r#"[{"event": "Meeting", "character": "Ann, Bo, somebody", "location": "gate", "description": "Ann meets Bo."}]"#,
        )
        .with("extract_conversation", r#"[{"speaker": "Ann", "content": "Hello."}, {"speaker": "Bo", "content": "Hi."}]"#)
}

#[test]
fn full_pipeline_is_deterministic_and_flags_nonspecific() {
    let narrative = NarrativeText::new("n", "Gate", TWO_CHUNK_STORY).unwrap();
    let run = || {
        let (gw, _) = gateway(story_fixtures());
        extract_storyline(&gw, &narrative, &config(), &mut |_, _| {}).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let somebody = a.characters.iter().find(|c| c.name == "somebody").unwrap();
    assert!(somebody.nonspecific);
    assert!(a.characters.iter().filter(|c| c.name != "somebody").all(|c| !c.nonspecific));
    assert_eq!(a.events.len(), 1);
    assert_eq!(a.environments[0].location_name, "gate");
    assert!(a.characters.iter().all(|c| !c.appearance.is_empty()));
    a.validate().unwrap();
}

#[test]
fn missing_location_uses_placeholder() {
    let (gw, _) = gateway(FixtureSet::new().with(
        "extract_events",
        r#"[{"event": "Meeting", "character": "Ann", "description": "Ann waits."}]"#,
    ));
    let mut ex = Extractor::new(&gw, "n", config());
    ex.extract_events(&chunk(0, "x")).unwrap();
    assert_eq!(ex.events()[0].location_name, UNKNOWN_LOCATION);
}
