use narrativeplay::evaluation::{
    aggregate, evaluate_responses, extraction_metrics, fleiss_kappa, judge_response, parse_records, question_bank,
    rubric, score_rubric, Aspect, CharacterAnnotation, CharacterTier, EvalError, EvalSetup, ExtractionJudgmentSheet,
    MemoryCondition, QuestionCategory, ResponseRecord, TaggedJudgment,
};
use narrativeplay::provider::{FixtureSet, Gateway, MockEmbedder, MockProvider};
use narrativeplay::storyline::CharacterProfile;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

const WONKA: &str = "I am Willy Wonka, the greatest inventor and maker of chocolates. My objective is to bring joy and wonder to people through my chocolates. What brings you here, my dear friend?";

fn wonka_setup() -> EvalSetup {
    EvalSetup {
        event: "Grandma Josephine asks if there will be food available when they arrive at the factory.".into(),
        question: "Who are you, and what is your objective?".into(),
        agent: "Willy Wonka".into(),
    }
}

fn gateway(fixtures: FixtureSet) -> Gateway {
    Gateway::new(Arc::new(MockProvider::new(0, fixtures)), Arc::new(MockEmbedder::new(0, 64)))
}

#[test]
fn rubric_scores() {
    assert_eq!(score_rubric(Aspect::Relevance, "relevance").unwrap(), 2);
    assert_eq!(score_rubric(Aspect::Commonsense, "obey").unwrap(), 1);
    assert_eq!(score_rubric(Aspect::Coherence, "partially coherent").unwrap(), 1);
    assert_eq!(score_rubric(Aspect::Relevance, "partially relevance").unwrap(), 1);
    assert_eq!(score_rubric(Aspect::Empathetic, "no clue").unwrap(), 1);
    for (aspect, zero) in [
        (Aspect::Coherence, "incoherent"),
        (Aspect::Relevance, "inrelevant"),
        (Aspect::Empathetic, "non-empathetic"),
        (Aspect::Commonsense, "against"),
    ] {
        assert_eq!(score_rubric(aspect, zero).unwrap(), 0);
    }
    assert!(matches!(score_rubric(Aspect::Coherence, "great"), Err(EvalError::UnknownLabel { .. })));
}

#[test]
fn rubric_mapping_is_total_and_injective() {
    for aspect in Aspect::ALL {
        let scores: Vec<u8> = aspect.labels().iter().map(|l| score_rubric(aspect, l).unwrap()).collect();
        let expected: Vec<u8> = (0..=aspect.max_score()).collect();
        assert_eq!(scores, expected);
    }
    assert_eq!(Aspect::Commonsense.max_score(), 1);
    assert_eq!(Aspect::Coherence.max_score(), 2);
}

#[test]
fn rendered_rubric_reproduces_the_worked_setup() {
    let request = rubric(Aspect::Coherence).render(&wonka_setup(), WONKA).unwrap();
    let tail = format!(
        "For setup {{\"Event\": \"{}\", \"Question\": \"{}\", \"Agent\": \"Willy Wonka\"}}, response: \"{WONKA}\", gives the output:",
        wonka_setup().event,
        wonka_setup().question
    );
    assert!(request.user_content.ends_with(&tail));
    assert!(request.user_content.contains("category it into \"incoherent\", \"partially coherent\", or \"coherent\"."));
    assert_eq!(request.label, "judge_coherence");
}

#[test]
fn judging_with_mock() {
    let gw = gateway(
        FixtureSet::new()
            .with("judge_coherence", "{\"category\": \"coherent\"}")
            .with("judge_commonsense", "{'category': 'against'}")
            .with("judge_relevance", "I cannot decide."),
    );
    let j = judge_response(&gw, &wonka_setup(), WONKA, Aspect::Coherence).unwrap().unwrap();
    assert_eq!((j.score, j.category_label.as_str()), (2, "coherent"));
    let j = judge_response(&gw, &wonka_setup(), WONKA, Aspect::Commonsense).unwrap().unwrap();
    assert_eq!(j.score, 0);
    assert!(judge_response(&gw, &wonka_setup(), WONKA, Aspect::Relevance).unwrap().is_none());

    let record = ResponseRecord {
        event: wonka_setup().event,
        question: wonka_setup().question,
        agent: "Willy Wonka".into(),
        response: WONKA.into(),
        character_tier: CharacterTier::Major,
        memory_condition: MemoryCondition::With,
        turn: Some(1),
    };
    let report = evaluate_responses(&gw, &[record]).unwrap();
    assert_eq!(report.judgments.len(), 4);
    assert_eq!(report.table.excluded, 1);
    assert_eq!(report.table.cell("major", Aspect::Coherence, MemoryCondition::With).unwrap().mean, Some(2.0));
}

fn tagged(aspect: Aspect, tier: CharacterTier, cond: MemoryCondition, score: Option<u8>) -> TaggedJudgment {
    TaggedJudgment {
        aspect,
        character_tier: tier,
        memory_condition: cond,
        score,
        turn: None,
    }
}

#[test]
fn aggregation() {
    use CharacterTier::*;
    use MemoryCondition::*;
    let mut js = vec![
        tagged(Aspect::Coherence, Major, With, Some(0)),
        tagged(Aspect::Coherence, Major, With, Some(1)),
        tagged(Aspect::Coherence, Major, With, Some(2)),
        tagged(Aspect::Coherence, Minor, With, Some(2)),
        tagged(Aspect::Empathetic, Minor, Without, None),
    ];
    let t = aggregate(&js);
    assert_eq!(t.cell("major", Aspect::Coherence, With).unwrap().mean, Some(1.0));
    assert_eq!(t.cell("overall", Aspect::Coherence, With).unwrap().mean, Some(1.25));
    assert_eq!(t.cell("minor", Aspect::Empathetic, Without).unwrap().mean, None);
    assert_eq!(t.cell("major", Aspect::Relevance, Without).unwrap().count, 0);
    assert_eq!(t.excluded, 1);

    js.reverse();
    assert_eq!(aggregate(&js), t);
    let text = t.render();
    assert!(text.lines().next().unwrap().starts_with("group"));
    assert!(text.contains("1.250"));
}

#[test]
fn ceiling_batches() {
    let js: Vec<_> = (0..20)
        .flat_map(|i| {
            let tier = if i % 2 == 0 { CharacterTier::Major } else { CharacterTier::Minor };
            [
                tagged(Aspect::Relevance, tier, MemoryCondition::With, Some(score_rubric(Aspect::Relevance, "relevance").unwrap())),
                tagged(Aspect::Commonsense, tier, MemoryCondition::With, Some(score_rubric(Aspect::Commonsense, "obey").unwrap())),
            ]
        })
        .collect();
    let t = aggregate(&js);
    assert_eq!(format!("{:.3}", t.cell("overall", Aspect::Relevance, MemoryCondition::With).unwrap().mean.unwrap()), "2.000");
    assert_eq!(format!("{:.3}", t.cell("overall", Aspect::Commonsense, MemoryCondition::With).unwrap().mean.unwrap()), "1.000");
}

/// Kappa from pairwise rater agreement, counted pair by pair.
fn kappa_oracle(m: &[Vec<usize>], k: usize) -> f64 {
    let n = m[0].len();
    let items = m.len();
    let mut agree = 0.0;
    for row in m {
        let mut pairs = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b && row[a] == row[b] {
                    pairs += 1.0;
                }
            }
        }
        agree += pairs / (n * (n - 1)) as f64;
    }
    let p_bar = agree / items as f64;
    let mut p_e = 0.0;
    for c in 0..k {
        let share = m.iter().flatten().filter(|x| **x == c).count() as f64 / (items * n) as f64;
        p_e += share * share;
    }
    if p_e == 1.0 {
        return 1.0;
    }
    (p_bar - p_e) / (1.0 - p_e)
}

fn complete(m: &[Vec<usize>]) -> Vec<Vec<Option<usize>>> {
    m.iter().map(|r| r.iter().map(|x| Some(*x)).collect()).collect()
}

#[test]
fn kappa_cases() {
    let perfect = vec![vec!["A", "A", "A"], vec!["B", "B", "B"], vec!["A", "A", "A"]];
    let perfect: Vec<Vec<Option<&str>>> = perfect.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
    assert_eq!(fleiss_kappa(&perfect).unwrap(), 1.0);

    let hand = vec![vec![Some("A"), Some("A")], vec![Some("A"), Some("B")]];
    assert!((fleiss_kappa(&hand).unwrap() + 1.0 / 3.0).abs() < 1e-9);

    let unanimous = vec![vec![Some(1), Some(1)], vec![Some(1), Some(1)]];
    assert_eq!(fleiss_kappa(&unanimous).unwrap(), 1.0);

    let holes = vec![vec![Some(1), None], vec![Some(1), Some(2)]];
    assert!(matches!(fleiss_kappa(&holes), Err(EvalError::Incomplete { item: 0 })));
    let ragged = vec![vec![Some(1), Some(2)], vec![Some(1)]];
    assert!(matches!(fleiss_kappa(&ragged), Err(EvalError::Incomplete { item: 1 })));
    assert!(matches!(fleiss_kappa(&[vec![Some(1), Some(1)]]), Err(EvalError::TooSmall { .. })));
}

#[test]
fn kappa_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let items = rng.random_range(2..=10);
        let raters = rng.random_range(2..=5);
        let k = rng.random_range(2..=4);
        let m: Vec<Vec<usize>> = (0..items).map(|_| (0..raters).map(|_| rng.random_range(0..k)).collect()).collect();
        let got = fleiss_kappa(&complete(&m)).unwrap();
        let want = kappa_oracle(&m, k);
        assert!((got - want).abs() < 1e-12, "{got} vs {want} for {m:?}");
        assert!(got <= 1.0);
    }
}

fn registry(n: usize) -> Vec<CharacterProfile> {
    (0..n).map(|i| CharacterProfile::bare(format!("c{i}"), format!("C{i}"))).collect()
}

#[test]
fn metrics() {
    let reg = registry(10);
    let mut sheet = ExtractionJudgmentSheet::draft(&reg);
    sheet.annotations[3].is_specific = false;
    sheet.annotations[7].is_specific = false;
    let m = extraction_metrics(&reg, &sheet).unwrap();
    assert_eq!(m.incorrect, 0.2);
    assert_eq!(m.duplicate, 0.0);
    assert_eq!((m.summary, m.objective, m.appearance, m.voice), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));

    sheet.annotations[5].duplicate_of = Some("c1".into());
    sheet.annotations[0].voice_ok = false;
    let m = extraction_metrics(&reg, &sheet).unwrap();
    assert_eq!(m.duplicate, 0.1);
    assert_eq!(m.voice, Some(6.0 / 7.0));
    for v in [m.incorrect, m.duplicate, m.summary.unwrap(), m.voice.unwrap()] {
        assert!((0.0..=1.0).contains(&v));
    }
    let table = m.render("test");
    assert!(table.contains("0.200") && table.contains("0.857"));
}

#[test]
fn metric_sheet_errors() {
    assert!(matches!(extraction_metrics(&[], &ExtractionJudgmentSheet::default()), Err(EvalError::EmptyRegistry)));
    let reg = registry(3);
    let mut sheet = ExtractionJudgmentSheet::draft(&reg);
    sheet.annotations[0].duplicate_of = Some("c2".into());
    assert!(matches!(extraction_metrics(&reg, &sheet), Err(EvalError::Sheet(_))));
    let mut sheet = ExtractionJudgmentSheet::draft(&reg);
    sheet.annotations.pop();
    assert!(matches!(extraction_metrics(&reg, &sheet), Err(EvalError::Sheet(_))));
    let mut sheet = ExtractionJudgmentSheet::draft(&reg);
    sheet.annotations.push(CharacterAnnotation {
        character_id: "ghost".into(),
        ..sheet.annotations[0].clone()
    });
    assert!(matches!(extraction_metrics(&reg, &sheet), Err(EvalError::Sheet(_))));
}

#[test]
fn question_bank_contents() {
    let bank = question_bank();
    assert_eq!(bank.len(), 6);
    assert_eq!(bank[0].text, "Who are you, and what is your objective?");
    assert_eq!(bank.iter().filter(|q| q.category == QuestionCategory::Hypothetical).count(), 2);
    assert_eq!(bank.iter().filter(|q| q.applies_to("ccf")).count(), 5);
}

#[test]
fn line_delimited_records() {
    let text = "{\"aspect\":\"coherence\",\"character_tier\":\"major\",\"memory_condition\":\"with\",\"score\":2}\n\n{\"aspect\":\"obey\"}\n";
    let err = parse_records::<TaggedJudgment>(text).unwrap_err();
    assert!(matches!(err, EvalError::Record { line: 3, .. }));
    let ok = parse_records::<TaggedJudgment>(text.lines().next().unwrap()).unwrap();
    assert_eq!(ok[0].score, Some(2));

    let mut js = ok.clone();
    js.extend(ok.iter().cloned());
    js.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(aggregate(&js).cell("major", Aspect::Coherence, MemoryCondition::With).unwrap().count, 2);
}
