//! Salvaging structured values from malformed model responses.
//!
//! Handles the failure modes seen in practice when a chat model is asked for
//! JSON: explanatory text around the payload, single-quoted or mixed quotes,
//! missing commas between members, unescaped quotes inside string values and
//! truncated output. Passes run in a fixed order (quotes, commas, escaping,
//! truncation) and the result must pass `serde_json` or it is reported as
//! needing rectification.

mod fallback;
mod passes;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use fallback::{
    default_appearance, parse_with_fallback, parse_with_fallback_rounds, FallbackPolicy,
    FieldKind, FieldRule, FieldSpec, Rectifier, Schema, Shape, DEFAULT_MAX_RECTIFY_ROUNDS,
    EYE_COLOURS, HAIR_COLOURS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOutcome {
    Clean,
    Repaired,
    RectifyNeeded,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairKind {
    PreambleStripped,
    CommaInserted,
    QuotesNormalized,
    InnerQuoteEscaped,
    TruncationClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub outcome: RepairOutcome,
    pub repairs_applied: Vec<RepairKind>,
    /// Parsed value, absent unless the outcome is clean or repaired.
    pub value: Option<Value>,
    /// Best-effort text after all passes; what a rectifier gets to see.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repaired_text: Option<String>,
    #[serde(default)]
    pub rectify_rounds: u32,
    /// Schema fields filled from the fallback policy.
    #[serde(default)]
    pub defaulted_fields: Vec<String>,
}

impl RepairReport {
    fn parsed(value: Value, repairs: Vec<RepairKind>) -> Self {
        let outcome = if repairs.is_empty() {
            RepairOutcome::Clean
        } else {
            RepairOutcome::Repaired
        };
        Self {
            outcome,
            repairs_applied: repairs,
            value: Some(value),
            repaired_text: None,
            rectify_rounds: 0,
            defaulted_fields: Vec::new(),
        }
    }

    fn unparsed(outcome: RepairOutcome, text: Option<String>) -> Self {
        Self {
            outcome,
            repairs_applied: Vec::new(),
            value: None,
            repaired_text: text,
            rectify_rounds: 0,
            defaulted_fields: Vec::new(),
        }
    }

    pub fn is_usable(&self) -> bool {
        matches!(self.outcome, RepairOutcome::Clean | RepairOutcome::Repaired)
    }

    fn add_repair(&mut self, kind: RepairKind) {
        if !self.repairs_applied.contains(&kind) {
            self.repairs_applied.push(kind);
            self.repairs_applied.sort();
        }
        if self.outcome == RepairOutcome::Clean {
            self.outcome = RepairOutcome::Repaired;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepairError {
    #[error("response contains no JSON object or array")]
    NoStructure,
}

/// A bracket-delimited region cut out of a raw response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extracted<'a> {
    pub candidate: &'a str,
    /// Non-whitespace text surrounded the region.
    pub preamble_stripped: bool,
    /// The region reached end of input without its brackets balancing.
    pub unbalanced: bool,
}

/// Returns the first balanced `{...}` or `[...]` region of `raw`.
///
/// Brackets inside double-quoted strings are ignored. When the first region
/// never balances (a truncated response, or a stray quote confusing the
/// scanner) the candidate runs to the end of the input.
pub fn extract_structured_value(raw: &str) -> Result<Extracted<'_>, RepairError> {
    let start = raw.find(['{', '[']).ok_or(RepairError::NoStructure)?;
    Ok(region_from(raw, start))
}

fn region_from(raw: &str, start: usize) -> Extracted<'_> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut end = None;
    for (off, c) in raw[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    end = Some(start + off + 1);
                    break;
                }
            }
            _ => {}
        }
    }
    let (candidate, unbalanced) = match end {
        Some(e) => (&raw[start..e], false),
        None => (raw[start..].trim_end(), true),
    };
    let outside_start = start;
    let outside_end = start + candidate.len();
    let preamble_stripped = !raw[..outside_start].trim().is_empty()
        || !raw[outside_end..].trim().is_empty();
    Extracted {
        candidate,
        preamble_stripped,
        unbalanced,
    }
}

/// Every distinct region worth trying, in order: the balanced region from
/// each of the first few opening brackets, then (when it differs) the span
/// from the first bracket to the last closing bracket of the same kind.
pub(crate) fn candidate_regions(raw: &str) -> Vec<Extracted<'_>> {
    const MAX_STARTS: usize = 8;
    let mut out: Vec<Extracted<'_>> = Vec::new();
    let starts: Vec<usize> = raw
        .char_indices()
        .filter(|(_, c)| matches!(c, '{' | '['))
        .map(|(i, _)| i)
        .take(MAX_STARTS)
        .collect();
    let Some(&first) = starts.first() else {
        return out;
    };
    push_distinct(&mut out, region_from(raw, first));
    let closer = if raw[first..].starts_with('{') { '}' } else { ']' };
    if let Some(last) = raw.rfind(closer) {
        if last > first {
            let candidate = &raw[first..=last];
            let preamble_stripped =
                !raw[..first].trim().is_empty() || !raw[last + 1..].trim().is_empty();
            push_distinct(
                &mut out,
                Extracted {
                    candidate,
                    preamble_stripped,
                    unbalanced: false,
                },
            );
        }
    }
    for &s in &starts[1..] {
        push_distinct(&mut out, region_from(raw, s));
    }
    out
}

fn push_distinct<'a>(out: &mut Vec<Extracted<'a>>, e: Extracted<'a>) {
    if !out.iter().any(|o| o.candidate == e.candidate) {
        out.push(e);
    }
}

fn strict(text: &str) -> Option<Value> {
    serde_json::from_str(text).ok()
}

/// Repairs a candidate that starts with `{` or `[`.
///
/// Passes are attempted conservatively first: quote normalization that only
/// rewrites single-quoted strings, no inner-quote escaping. Escaping and
/// mixed-quote closing are tried only when the conservative result does not
/// parse.
pub fn repair(candidate: &str) -> RepairReport {
    if let Some(v) = strict(candidate) {
        return RepairReport::parsed(v, Vec::new());
    }

    // (permissive quotes, inner-quote escaping), least invasive first.
    const VARIANTS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];
    let mut staged: Vec<(String, Vec<RepairKind>)> = Vec::new();
    for (permissive, escaping) in VARIANTS {
        let (quoted, quotes_changed) = passes::normalize_quotes(candidate, permissive);
        if permissive && !quotes_changed {
            continue;
        }
        let (mut text, commas_changed) = passes::insert_commas(&quoted);
        if escaping {
            let (escaped, escape_changed) = passes::escape_inner_quotes(&text);
            if !escape_changed {
                continue;
            }
            text = escaped;
        }
        let mut repairs = Vec::new();
        if quotes_changed {
            repairs.push(RepairKind::QuotesNormalized);
        }
        if commas_changed {
            repairs.push(RepairKind::CommaInserted);
        }
        if escaping {
            repairs.push(RepairKind::InnerQuoteEscaped);
        }
        if !staged.iter().any(|(t, _)| *t == text) {
            staged.push((text, repairs));
        }
    }

    // A document that only parses once closed is accepted only when no
    // variant parses as it stands.
    let mut last_text = None;
    for closing in [false, true] {
        for (text, repairs) in &staged {
            let (closed, closed_changed) = if closing {
                passes::close_truncation(text)
            } else {
                (text.clone(), false)
            };
            if closing && !closed_changed {
                continue;
            }
            if let Some(v) = strict(&closed) {
                let mut repairs = repairs.clone();
                if closed_changed {
                    repairs.push(RepairKind::TruncationClosed);
                }
                repairs.sort();
                let mut report = RepairReport::parsed(v, repairs);
                if report.outcome == RepairOutcome::Repaired {
                    report.repaired_text = Some(closed);
                }
                return report;
            }
            last_text = Some(closed);
        }
    }
    RepairReport::unparsed(RepairOutcome::RectifyNeeded, last_text)
}

/// Extract then repair, trying alternative regions when the first does not
/// yield a document. Never fails; the outcome encodes what happened.
pub fn repair_response(raw: &str) -> RepairReport {
    let trimmed = raw.trim();
    if let Some(v) = strict(trimmed) {
        return RepairReport::parsed(v, Vec::new());
    }
    let regions = candidate_regions(raw);
    if regions.is_empty() {
        return RepairReport::unparsed(RepairOutcome::RectifyNeeded, None);
    }
    let mut first_failure = None;
    for region in regions {
        let mut report = repair(region.candidate);
        if report.is_usable() {
            if region.preamble_stripped {
                report.add_repair(RepairKind::PreambleStripped);
            }
            return report;
        }
        first_failure.get_or_insert(report);
    }
    first_failure.expect("at least one region")
}
