use std::sync::Arc;

use narrativeplay::memory::{
    rank, score_memory, seed_agent_memories, MemoryBank, MemoryError, MemoryKind, MemoryRecord,
};
use narrativeplay::provider::{
    ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, FixtureSet, Gateway, MockEmbedder, MockProvider,
    ProviderError,
};
use narrativeplay::storyline::{CharacterProfile, EnvironmentDescription, StoryEvent, Storyline, Utterance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oracle_weight(h_m: &[f64], h_x: &[f64], current: usize, i: usize, s: f64) -> f64 {
    let dot: f64 = h_m.iter().zip(h_x).map(|(a, b)| a * b).sum();
    let na = h_m.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = h_x.iter().map(|b| b * b).sum::<f64>().sqrt();
    let mut decay = 1.0;
    for _ in i..current {
        decay *= 0.99;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0) + decay + s
}

fn record(seq: u64, values: Vec<f64>, i: usize, s: f64) -> MemoryRecord {
    MemoryRecord {
        id: format!("a/m{seq}"),
        agent_id: "a".into(),
        text: format!("memory {seq}"),
        embedding: EmbeddingVector::new(values),
        importance: s,
        event_index: i,
        kind: MemoryKind::ObservedEvent,
        seq,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

#[test]
fn fixed_weights() {
    let q = EmbeddingVector::new(vec![1.0, 0.0]);
    let same = record(0, vec![1.0, 0.0], 4, 0.0);
    assert_eq!(score_memory(&same, &q, 4).unwrap().weight, 2.0);
    let orth = record(1, vec![0.0, 1.0], 3, 0.5);
    assert!((score_memory(&orth, &q, 4).unwrap().weight - 1.49).abs() < 1e-12);
    let max = record(2, vec![1.0, 0.0], 4, 1.0);
    assert_eq!(score_memory(&max, &q, 4).unwrap().weight, 3.0);

    let both = [same.clone(), orth.clone()];
    let top = rank(&both, &q, 4, 1).unwrap();
    assert_eq!(top.len(), 1);
    assert_eq!(top[0].record.id, "a/m0");
    let all = rank(&both, &q, 4, 10).unwrap();
    assert_eq!(all.len(), 2);
    assert!(all[0].weight >= all[1].weight);
}

#[test]
fn zero_norm_and_future_are_errors() {
    let q = EmbeddingVector::new(vec![1.0, 0.0]);
    let zero = record(0, vec![0.0, 0.0], 0, 0.0);
    assert!(matches!(score_memory(&zero, &q, 1), Err(MemoryError::ZeroNorm)));
    let future = record(1, vec![1.0, 0.0], 5, 0.0);
    assert!(matches!(score_memory(&future, &q, 4), Err(MemoryError::FutureMemory { .. })));
    assert!(matches!(rank(&[], &q, 0, 0), Err(MemoryError::ZeroK)));
}

#[test]
fn weight_oracle_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let dim = rng.random_range(2..16);
        let h_m = random_vec(&mut rng, dim);
        let h_x = random_vec(&mut rng, dim);
        let current = rng.random_range(0..200);
        let i = rng.random_range(0..=current);
        let s = rng.random_range(0.0..=1.0);
        let m = record(0, h_m.clone(), i, s);
        let scored = score_memory(&m, &EmbeddingVector::new(h_x.clone()), current).unwrap();
        let c = scored.components;
        assert!((scored.weight - oracle_weight(&h_m, &h_x, current, i, s)).abs() < 1e-12);
        assert!((scored.weight - c.relevance - c.recency - c.importance).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&c.relevance));
        assert!(c.recency > 0.0 && c.recency <= 1.0);
    }
}

#[test]
fn recency_strictly_decreases() {
    let q = EmbeddingVector::new(vec![1.0, 1.0]);
    let mut last = f64::INFINITY;
    for i in (0..=50).rev() {
        let w = score_memory(&record(0, vec![1.0, 0.5], i, 0.3), &q, 50).unwrap().weight;
        assert!(w < last);
        last = w;
    }
}

#[test]
fn ranking_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(1..=100);
        let current = rng.random_range(0..30);
        let dim = 8;
        let records: Vec<MemoryRecord> = (0..n)
            .map(|seq| {
                // coarse values so exact ties occur
                let v = (0..dim).map(|_| rng.random_range(-2..=2) as f64).collect::<Vec<_>>();
                let v = if v.iter().all(|x| *x == 0.0) { vec![1.0; dim] } else { v };
                record(seq as u64, v, rng.random_range(0..=current), rng.random_range(0..=2) as f64 / 2.0)
            })
            .collect();
        let q = random_vec(&mut rng, dim);
        let k = rng.random_range(1..=n + 5);

        let mut oracle: Vec<(f64, usize, u64)> = records
            .iter()
            .map(|r| (oracle_weight(r.embedding.values(), &q, current, r.event_index, r.importance), r.event_index, r.seq))
            .collect();
        // bubble sort: weight desc, event desc, seq asc
        for a in 0..oracle.len() {
            for b in 0..oracle.len() - 1 - a {
                let (x, y) = (oracle[b], oracle[b + 1]);
                let swap = y.0 > x.0 || (y.0 == x.0 && (y.1 > x.1 || (y.1 == x.1 && y.2 < x.2)));
                if swap {
                    oracle.swap(b, b + 1);
                }
            }
        }
        let got: Vec<u64> = rank(&records, &EmbeddingVector::new(q), current, k)
            .unwrap()
            .iter()
            .map(|s| s.record.seq)
            .collect();
        let want: Vec<u64> = oracle.iter().take(k).map(|o| o.2).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn equal_weights_keep_insertion_order() {
    let q = EmbeddingVector::new(vec![1.0, 0.0]);
    let a = record(0, vec![1.0, 0.0], 2, 0.5);
    let b = record(1, vec![1.0, 0.0], 2, 0.5);
    let both = [a, b];
    let top = rank(&both, &q, 2, 2).unwrap();
    assert_eq!(top[0].record.seq, 0);
}

fn bank_with(gateway: &Gateway) -> MemoryBank {
    let mut bank = MemoryBank::new();
    bank.add_agent("a");
    bank.add_memory(gateway, "a", "The chocolate river flows.", MemoryKind::ObservedEvent, 0).unwrap();
    bank.add_memory(gateway, "a", "Charlie found a golden ticket.", MemoryKind::ObservedEvent, 1).unwrap();
    bank
}

#[test]
fn add_memory_under_mock() {
    let gw = Gateway::mock(3);
    let bank = bank_with(&gw);
    for r in bank.records("a").unwrap() {
        assert!((r.embedding.norm() - 1.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.importance));
    }
}

fn gateway_with(fixtures: FixtureSet) -> Gateway {
    Gateway::new(Arc::new(MockProvider::new(1, fixtures)), Arc::new(MockEmbedder::new(1, 64)))
}

#[test]
fn importance_from_judge() {
    let gw = gateway_with(FixtureSet::new().with("importance", "10"));
    let mut bank = MemoryBank::new();
    bank.add_agent("a");
    assert_eq!(bank.add_memory(&gw, "a", "x", MemoryKind::UserInput, 0).unwrap().importance, 1.0);

    let gw = gateway_with(FixtureSet::new().with("importance", "very important"));
    assert_eq!(bank.add_memory(&gw, "a", "y", MemoryKind::UserInput, 0).unwrap().importance, 0.5);
}

#[derive(Debug)]
struct NoEmbed;

impl EmbeddingProvider for NoEmbed {
    fn embed(&self, _text: &str) -> Result<EmbeddingVector, ProviderError> {
        Err(ProviderError::Auth("no key".into()))
    }
}

#[derive(Debug)]
struct Five;

impl ChatProvider for Five {
    fn name(&self) -> &str {
        "five"
    }

    fn complete(&self, _request: &ChatRequest) -> Result<String, ProviderError> {
        Ok("5".into())
    }
}

#[test]
fn embedding_failure_rejects_memory() {
    let gw = Gateway::new(Arc::new(Five), Arc::new(NoEmbed));
    let mut bank = MemoryBank::new();
    bank.add_agent("a");
    assert!(matches!(
        bank.add_memory(&gw, "a", "x", MemoryKind::UserInput, 0),
        Err(MemoryError::Provider(ProviderError::Auth(_)))
    ));
    assert!(bank.records("a").unwrap().is_empty());
}

#[test]
fn retrieve_top_behaviour() {
    let gw = Gateway::mock(3);
    let bank = bank_with(&gw);
    let before = bank.clone();
    let top = bank.retrieve_top(&gw, "a", "golden ticket", 1, 1).unwrap();
    assert_eq!(top[0].record.text, "Charlie found a golden ticket.");
    assert_eq!(bank.retrieve_top(&gw, "a", "anything", 1, 10).unwrap().len(), 2);
    assert!(matches!(bank.retrieve_top(&gw, "zed", "q", 1, 1), Err(MemoryError::UnknownAgent(_))));
    assert_eq!(bank, before);
}

fn seeded_storyline() -> Storyline {
    let lines = (0..3)
        .map(|n| Utterance {
            speaker_id: Some("b".into()),
            speaker_name: "B".into(),
            content: format!("line {n}"),
            unresolved_speaker: false,
        })
        .collect();
    let ev = |index, ids: &[&str], conversation| StoryEvent {
        index,
        name: format!("e{index}"),
        participant_ids: ids.iter().map(|s| s.to_string()).collect(),
        location_name: "Hall".into(),
        description: "something".into(),
        conversation,
        chunk_index: 0,
    };
    Storyline {
        schema_version: 1,
        narrative_id: "n".into(),
        title: "n".into(),
        characters: vec![
            CharacterProfile::bare("a", "A"),
            CharacterProfile::bare("b", "B"),
            CharacterProfile::bare("c", "C"),
            CharacterProfile::bare("d", "D"),
        ],
        events: vec![
            ev(0, &["b", "d"], lines),
            ev(1, &["d"], vec![]),
            ev(2, &["d"], vec![]),
            ev(3, &["c"], vec![]),
        ],
        environments: vec![EnvironmentDescription {
            location_name: "Hall".into(),
            keywords: vec![],
            description: "A hall.".into(),
        }],
        stats: Default::default(),
    }
}

#[test]
fn seeding_counts() {
    let s = seeded_storyline();
    let gw = Gateway::mock(2);
    let mut bank = MemoryBank::new();
    seed_agent_memories(&mut bank, &gw, &s, 3).unwrap();
    assert_eq!(bank.records("a").unwrap().len(), 1);
    assert_eq!(bank.records("a").unwrap()[0].kind, MemoryKind::SeedProfile);
    let c = bank.records("c").unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!((c[1].kind, c[1].event_index), (MemoryKind::ObservedEvent, 3));
    assert_eq!(bank.records("b").unwrap().len(), 1 + 1 + 3);
    assert_eq!(bank.records("d").unwrap().len(), 1 + 4 + 2);
}
