//! Response-quality evaluation: the player question bank, rubric judging,
//! aggregation into mean tables, Fleiss' kappa and extraction metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prompts::{fill, PromptError};
use crate::provider::{ChatRequest, Gateway, ProviderError, EXTRACTION_TEMPERATURE};
use crate::repair::{parse_with_fallback, FallbackPolicy, FieldKind, Schema};
use crate::storyline::CharacterProfile;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{label:?} is not a {aspect} category")]
    UnknownLabel { aspect: &'static str, label: String },
    #[error("unknown aspect {0:?}")]
    UnknownAspect(String),
    #[error("question needs a value for [{0}]")]
    MissingBinding(String),
    #[error("rating matrix needs at least 2 items and 2 raters, got {items}x{raters}")]
    TooSmall { items: usize, raters: usize },
    #[error("rating matrix is incomplete at item {item}")]
    Incomplete { item: usize },
    #[error("no characters to evaluate")]
    EmptyRegistry,
    #[error("annotation sheet: {0}")]
    Sheet(String),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionCategory {
    Character,
    Clarification,
    Relationships,
    Strategy,
    Hypothetical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub category: QuestionCategory,
    pub text: String,
    /// Narrative the question belongs to; `None` for general questions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative_binding: Option<String>,
}

impl EvalQuestion {
    fn general(category: QuestionCategory, text: &str) -> Self {
        Self {
            category,
            text: text.to_string(),
            narrative_binding: None,
        }
    }

    pub fn applies_to(&self, narrative_id: &str) -> bool {
        self.narrative_binding.as_deref().is_none_or(|n| n == narrative_id)
    }

    /// Replaces `[name]`-style placeholders from `bindings`.
    pub fn bind(&self, bindings: &BTreeMap<String, String>) -> Result<String, EvalError> {
        let mut out = String::new();
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('[') {
            let Some(close) = rest[open..].find(']') else { break };
            let key = &rest[open + 1..open + close];
            let value = bindings.get(key).ok_or_else(|| EvalError::MissingBinding(key.to_string()))?;
            out.push_str(&rest[..open]);
            out.push_str(value);
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// The six player questions; the two hypothetical ones belong to a
/// specific narrative.
pub fn question_bank() -> Vec<EvalQuestion> {
    use QuestionCategory::*;
    vec![
        EvalQuestion::general(Character, "Who are you, and what is your objective?"),
        EvalQuestion::general(Clarification, "Who is [name], and what happened the last time you met him?"),
        EvalQuestion::general(Relationships, "If you were to spend time with someone, who would it be, and why?"),
        EvalQuestion::general(Strategy, "Where are we going next, and why?"),
        EvalQuestion {
            category: Hypothetical,
            text: "If you owned this factory, what would you do?".into(),
            narrative_binding: Some("ccf".into()),
        },
        EvalQuestion {
            category: Hypothetical,
            text: "Who is most likely to be the killer, and why?".into(),
            narrative_binding: Some("moe".into()),
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Coherence,
    Relevance,
    Empathetic,
    Commonsense,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [Aspect::Coherence, Aspect::Relevance, Aspect::Empathetic, Aspect::Commonsense];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Coherence => "coherence",
            Self::Relevance => "relevance",
            Self::Empathetic => "empathetic",
            Self::Commonsense => "commonsense",
        }
    }

    pub fn parse(s: &str) -> Result<Self, EvalError> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| EvalError::UnknownAspect(s.to_string()))
    }

    /// Closed category labels, lowest score first.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Self::Coherence => &["incoherent", "partially coherent", "coherent"],
            Self::Relevance => &["inrelevant", "partially relevance", "relevance"],
            Self::Empathetic => &["non-empathetic", "no clue", "empathetic"],
            Self::Commonsense => &["against", "obey"],
        }
    }

    pub fn max_score(self) -> u8 {
        (self.labels().len() - 1) as u8
    }

    /// Request label used when judging this aspect.
    pub fn judge_label(self) -> &'static str {
        match self {
            Self::Coherence => "judge_coherence",
            Self::Relevance => "judge_relevance",
            Self::Empathetic => "judge_empathetic",
            Self::Commonsense => "judge_commonsense",
        }
    }
}

fn normalize_label(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.')
        .to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Ordinal score of a category label: its position in the aspect's closed
/// set. Case, surrounding quotes and hyphen-for-space swaps are ignored.
pub fn score_rubric(aspect: Aspect, label: &str) -> Result<u8, EvalError> {
    let wanted = normalize_label(label);
    let matches = |l: &str| l == wanted || l.replace('-', " ") == wanted.replace('-', " ");
    aspect
        .labels()
        .iter()
        .position(|l| matches(l))
        .map(|p| p as u8)
        .ok_or_else(|| EvalError::UnknownLabel {
            aspect: aspect.as_str(),
            label: label.to_string(),
        })
}

const COHERENCE: &str = include_str!("../fixtures/rubrics/coherence.txt");
const RELEVANCE: &str = include_str!("../fixtures/rubrics/relevance.txt");
const EMPATHETIC: &str = include_str!("../fixtures/rubrics/empathetic.txt");
const COMMONSENSE: &str = include_str!("../fixtures/rubrics/commonsense.txt");

/// A judging instruction: system text plus a user template with
/// `{{event}}`, `{{question}}`, `{{agent}}` and `{{response}}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rubric {
    pub aspect: Aspect,
    pub system: &'static str,
    pub user: &'static str,
}

pub fn rubric(aspect: Aspect) -> Rubric {
    let raw = match aspect {
        Aspect::Coherence => COHERENCE,
        Aspect::Relevance => RELEVANCE,
        Aspect::Empathetic => EMPATHETIC,
        Aspect::Commonsense => COMMONSENSE,
    };
    let (system, user) = raw.split_once("\n---\n").expect("rubric fixture has a separator");
    Rubric {
        aspect,
        system: system.trim(),
        user: user.trim_end(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSetup {
    pub event: String,
    pub question: String,
    pub agent: String,
}

impl Rubric {
    pub fn render(&self, setup: &EvalSetup, response: &str) -> Result<ChatRequest, EvalError> {
        let label = self.aspect.judge_label();
        let user = fill(
            label,
            self.user,
            &[
                ("event", &setup.event),
                ("question", &setup.question),
                ("agent", &setup.agent),
                ("response", response),
            ],
        )?;
        Ok(ChatRequest::new(label, self.system, user)
            .with_temperature(EXTRACTION_TEMPERATURE)
            .with_max_tokens(64)
            .with_tag(setup.agent.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricJudgment {
    pub aspect: Aspect,
    pub category_label: String,
    pub score: u8,
}

/// Asks the judge to categorize `response`. `Ok(None)` when the answer has
/// no recognizable category.
pub fn judge_response(
    gateway: &Gateway,
    setup: &EvalSetup,
    response: &str,
    aspect: Aspect,
) -> Result<Option<RubricJudgment>, ProviderError> {
    let request = rubric(aspect)
        .render(setup, response)
        .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
    let raw = gateway.complete_chat(&request)?;
    let schema = Schema::object(&[("category", FieldKind::Text)]);
    let (value, _) = parse_with_fallback(&raw, &schema, &FallbackPolicy::for_schema(&schema), None);
    let label = value.get("category").and_then(Value::as_str).unwrap_or_default();
    Ok(score_rubric(aspect, label).ok().map(|score| RubricJudgment {
        aspect,
        category_label: aspect.labels()[score as usize].to_string(),
        score,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharacterTier {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryCondition {
    Without,
    With,
}

/// One judged (or unjudgeable) response with its grouping tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedJudgment {
    pub aspect: Aspect,
    pub character_tier: CharacterTier,
    pub memory_condition: MemoryCondition,
    /// `None` when the judge answer could not be categorized.
    pub score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCell {
    /// `None` when the group has no judgments.
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    /// `major`, `minor` or `overall`.
    pub group: String,
    pub cells: BTreeMap<Aspect, BTreeMap<MemoryCondition, MeanCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTable {
    pub rows: Vec<MeanRow>,
    /// Judgments left out because they had no score.
    pub excluded: usize,
}

impl MeanTable {
    pub fn cell(&self, group: &str, aspect: Aspect, condition: MemoryCondition) -> Option<&MeanCell> {
        self.rows.iter().find(|r| r.group == group)?.cells.get(&aspect)?.get(&condition)
    }

    /// Aligned plain-text rendering, one column per aspect and condition.
    pub fn render(&self) -> String {
        let mut header = vec!["group".to_string()];
        for a in Aspect::ALL {
            header.push(format!("{} w/o", a.as_str()));
            header.push(format!("{} w/", a.as_str()));
        }
        let mut lines = vec![header];
        for row in &self.rows {
            let mut line = vec![row.group.clone()];
            for a in Aspect::ALL {
                for c in [MemoryCondition::Without, MemoryCondition::With] {
                    let text = row
                        .cells
                        .get(&a)
                        .and_then(|m| m.get(&c))
                        .and_then(|cell| cell.mean)
                        .map_or_else(|| "-".to_string(), |m| format!("{m:.3}"));
                    line.push(text);
                }
            }
            lines.push(line);
        }
        let mut out = render_aligned(&lines);
        let _ = writeln!(out, "excluded: {}", self.excluded);
        out
    }
}

fn render_aligned(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|i| lines.iter().filter_map(|l| l.get(i)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in lines {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(i, s)| if i == 0 { format!("{s:<w$}", w = widths[i]) } else { format!("{s:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Means per (aspect, tier, condition), plus an overall row across tiers.
pub fn aggregate(judgments: &[TaggedJudgment]) -> MeanTable {
    let mut sums: BTreeMap<(String, Aspect, MemoryCondition), (u64, usize)> = BTreeMap::new();
    let mut excluded = 0;
    for j in judgments {
        let Some(score) = j.score else {
            excluded += 1;
            continue;
        };
        let tier = match j.character_tier {
            CharacterTier::Major => "major",
            CharacterTier::Minor => "minor",
        };
        for group in [tier, "overall"] {
            let e = sums.entry((group.to_string(), j.aspect, j.memory_condition)).or_default();
            e.0 += u64::from(score);
            e.1 += 1;
        }
    }
    let rows = ["major", "minor", "overall"]
        .iter()
        .map(|group| MeanRow {
            group: group.to_string(),
            cells: Aspect::ALL
                .iter()
                .map(|a| {
                    let by_condition = [MemoryCondition::Without, MemoryCondition::With]
                        .iter()
                        .map(|c| {
                            let (sum, count) = sums.get(&(group.to_string(), *a, *c)).copied().unwrap_or((0, 0));
                            let mean = (count > 0).then(|| sum as f64 / count as f64);
                            (*c, MeanCell { mean, count })
                        })
                        .collect();
                    (*a, by_condition)
                })
                .collect(),
        })
        .collect();
    MeanTable { rows, excluded }
}

/// Fleiss' kappa over an items x raters matrix of category labels. When
/// every rating falls in one category the chance agreement is 1 and kappa
/// is defined as 1.
pub fn fleiss_kappa<T: Ord>(ratings: &[Vec<Option<T>>]) -> Result<f64, EvalError> {
    let items = ratings.len();
    let raters = ratings.first().map_or(0, Vec::len);
    if items < 2 || raters < 2 {
        return Err(EvalError::TooSmall { items, raters });
    }
    let mut categories: BTreeMap<&T, usize> = BTreeMap::new();
    for (i, row) in ratings.iter().enumerate() {
        if row.len() != raters || row.iter().any(Option::is_none) {
            return Err(EvalError::Incomplete { item: i });
        }
        for r in row.iter().flatten() {
            let next = categories.len();
            categories.entry(r).or_insert(next);
        }
    }
    let k = categories.len();
    let n = raters as f64;
    let mut totals = vec![0usize; k];
    let mut p_bar = 0.0;
    for row in ratings {
        let mut counts = vec![0usize; k];
        for r in row.iter().flatten() {
            counts[categories[r]] += 1;
        }
        let sq: usize = counts.iter().map(|c| c * c).sum();
        p_bar += (sq as f64 - n) / (n * (n - 1.0));
        for (t, c) in totals.iter_mut().zip(&counts) {
            *t += c;
        }
    }
    p_bar /= items as f64;
    let all = (items * raters) as f64;
    let p_e: f64 = totals.iter().map(|t| (*t as f64 / all).powi(2)).sum();
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterAnnotation {
    pub character_id: String,
    pub is_specific: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    pub summary_ok: bool,
    pub objective_ok: bool,
    pub appearance_ok: bool,
    pub voice_ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionJudgmentSheet {
    pub annotations: Vec<CharacterAnnotation>,
}

impl ExtractionJudgmentSheet {
    /// A sheet with one all-ok annotation per character, taking specificity
    /// from the extraction flags. Annotators edit it from there.
    pub fn draft(registry: &[CharacterProfile]) -> Self {
        Self {
            annotations: registry
                .iter()
                .map(|c| CharacterAnnotation {
                    character_id: c.id.clone(),
                    is_specific: !c.nonspecific,
                    duplicate_of: None,
                    summary_ok: true,
                    objective_ok: true,
                    appearance_ok: true,
                    voice_ok: true,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionMetrics {
    pub total: usize,
    pub incorrect: f64,
    pub duplicate: f64,
    /// Accuracies over specific, non-duplicate characters; `None` when
    /// there are none.
    pub summary: Option<f64>,
    pub objective: Option<f64>,
    pub appearance: Option<f64>,
    pub voice: Option<f64>,
}

impl ExtractionMetrics {
    pub fn render(&self, label: &str) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let lines = vec![
            ["narrative", "incorrect", "duplicate", "summary", "objective", "appearance", "voice"]
                .map(String::from)
                .to_vec(),
            vec![
                label.to_string(),
                format!("{:.3}", self.incorrect),
                format!("{:.3}", self.duplicate),
                fmt(self.summary),
                fmt(self.objective),
                fmt(self.appearance),
                fmt(self.voice),
            ],
        ];
        render_aligned(&lines)
    }
}

pub fn extraction_metrics(
    registry: &[CharacterProfile],
    sheet: &ExtractionJudgmentSheet,
) -> Result<ExtractionMetrics, EvalError> {
    if registry.is_empty() {
        return Err(EvalError::EmptyRegistry);
    }
    let mut order: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, c) in registry.iter().enumerate() {
        order.insert(&c.id, i);
    }
    let mut by_id: BTreeMap<&str, &CharacterAnnotation> = BTreeMap::new();
    for a in &sheet.annotations {
        let pos = *order
            .get(a.character_id.as_str())
            .ok_or_else(|| EvalError::Sheet(format!("{} is not in the registry", a.character_id)))?;
        if let Some(dup) = &a.duplicate_of {
            match order.get(dup.as_str()) {
                Some(p) if *p < pos => {}
                _ => {
                    return Err(EvalError::Sheet(format!(
                        "{} is marked a duplicate of {dup}, which is not an earlier character",
                        a.character_id
                    )))
                }
            }
        }
        if by_id.insert(&a.character_id, a).is_some() {
            return Err(EvalError::Sheet(format!("{} is annotated twice", a.character_id)));
        }
    }
    let missing: BTreeSet<&str> = order.keys().filter(|id| !by_id.contains_key(*id)).copied().collect();
    if !missing.is_empty() {
        return Err(EvalError::Sheet(format!("no annotation for {}", missing.into_iter().collect::<Vec<_>>().join(", "))));
    }

    let total = registry.len();
    let anns: Vec<&CharacterAnnotation> = by_id.into_values().collect();
    let ratio = |n: usize, d: usize| n as f64 / d as f64;
    let incorrect = ratio(anns.iter().filter(|a| !a.is_specific).count(), total);
    let duplicate = ratio(anns.iter().filter(|a| a.duplicate_of.is_some()).count(), total);
    let clean: Vec<&&CharacterAnnotation> = anns.iter().filter(|a| a.is_specific && a.duplicate_of.is_none()).collect();
    let accuracy = |f: fn(&CharacterAnnotation) -> bool| {
        (!clean.is_empty()).then(|| ratio(clean.iter().filter(|a| f(a)).count(), clean.len()))
    };
    Ok(ExtractionMetrics {
        total,
        incorrect,
        duplicate,
        summary: accuracy(|a| a.summary_ok),
        objective: accuracy(|a| a.objective_ok),
        appearance: accuracy(|a| a.appearance_ok),
        voice: accuracy(|a| a.voice_ok),
    })
}

/// Parses line-delimited JSON records, skipping blank lines.
pub fn parse_records<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Record {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// An agent response awaiting judgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub event: String,
    pub question: String,
    pub agent: String,
    pub response: String,
    pub character_tier: CharacterTier,
    pub memory_condition: MemoryCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub judgments: Vec<TaggedJudgment>,
    pub table: MeanTable,
}

/// Judges every response on every aspect and aggregates the scores.
pub fn evaluate_responses(gateway: &Gateway, records: &[ResponseRecord]) -> Result<EvalReport, ProviderError> {
    let mut judgments = Vec::with_capacity(records.len() * Aspect::ALL.len());
    for r in records {
        let setup = EvalSetup {
            event: r.event.clone(),
            question: r.question.clone(),
            agent: r.agent.clone(),
        };
        for aspect in Aspect::ALL {
            let judged = judge_response(gateway, &setup, &r.response, aspect)?;
            judgments.push(TaggedJudgment {
                aspect,
                character_tier: r.character_tier,
                memory_condition: r.memory_condition,
                score: judged.map(|j| j.score),
                turn: r.turn,
            });
        }
    }
    let table = aggregate(&judgments);
    Ok(EvalReport { judgments, table })
}
