//! Sentence splitting and greedy chunk packing.
//!
//! Chunks never split a sentence. Token counts are estimated, not measured:
//! `ceil(words * 1.3)`, which is monotone in the word count and does not
//! depend on any particular model's tokenizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CHUNK_BUDGET: usize = 3000;

const ABBREVIATIONS: &[&str] = &["Mr", "Mrs", "Ms", "Dr", "St"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("narrative body is empty")]
    EmptyInput,
    #[error("sentence {index} needs {tokens} tokens but the chunk budget is {budget}")]
    OversizedSentence {
        index: usize,
        tokens: usize,
        budget: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeText {
    pub id: String,
    pub title: String,
    pub body: String,
}

impl NarrativeText {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, ChunkError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(ChunkError::EmptyInput);
        }
        Ok(Self {
            id: id.into(),
            title: title.into(),
            body,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
    /// First and last sentence index, inclusive.
    pub sentence_span: (usize, usize),
    pub token_estimate: usize,
}

impl Chunk {
    pub fn sentence_count(&self) -> usize {
        self.sentence_span.1 - self.sentence_span.0 + 1
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 13).div_ceil(10)
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | ')')
}

fn is_sentence_start(c: char) -> bool {
    c.is_uppercase() || matches!(c, '"' | '\'' | '\u{201c}' | '\u{2018}' | '(')
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The word immediately before byte offset `dot` (which holds a '.').
fn word_before(text: &str, dot: usize) -> &str {
    let head = &text[..dot];
    let start = head
        .char_indices()
        .rev()
        .find(|(_, c)| !c.is_alphanumeric())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    &head[start..]
}

/// Splits a narrative body into sentences.
///
/// A boundary follows `.`, `!` or `?` (plus any trailing closing quotes or
/// brackets) when the next non-space character starts a sentence: an
/// uppercase letter or an opening quote. A period after a listed title
/// abbreviation never ends a sentence. Whitespace inside each sentence is
/// collapsed to single spaces.
pub fn split_sentences(body: &str) -> Result<Vec<String>, ChunkError> {
    let text = body.trim();
    if text.is_empty() {
        return Err(ChunkError::EmptyInput);
    }

    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;

    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        if c == '.' && ABBREVIATIONS.contains(&word_before(text, pos)) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && (is_terminal(chars[j].1) || is_closer(chars[j].1)) {
            j += 1;
        }
        if j >= chars.len() {
            break;
        }
        if !chars[j].1.is_whitespace() {
            i = j;
            continue;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k < chars.len() && is_sentence_start(chars[k].1) {
            let end = chars[j].0;
            sentences.push(collapse_whitespace(&text[start..end]));
            start = chars[k].0;
            i = k;
        } else {
            i = k;
        }
    }
    sentences.push(collapse_whitespace(&text[start..]));
    Ok(sentences)
}

/// Greedily packs sentences into chunks whose summed token estimate stays
/// within `budget`.
pub fn chunk_text(sentences: &[String], budget: usize) -> Result<Vec<Chunk>, ChunkError> {
    let estimates: Vec<usize> = sentences.iter().map(|s| estimate_tokens(s)).collect();
    if let Some((index, &tokens)) = estimates.iter().enumerate().find(|(_, &t)| t > budget) {
        return Err(ChunkError::OversizedSentence {
            index,
            tokens,
            budget,
        });
    }

    let mut chunks = Vec::new();
    let mut first = 0usize;
    while first < sentences.len() {
        let mut last = first;
        let mut total = estimates[first];
        while last + 1 < sentences.len() && total + estimates[last + 1] <= budget {
            last += 1;
            total += estimates[last];
        }
        chunks.push(Chunk {
            index: chunks.len(),
            text: sentences[first..=last].join(" "),
            sentence_span: (first, last),
            token_estimate: total,
        });
        first = last + 1;
    }
    Ok(chunks)
}

pub fn chunk_narrative(narrative: &NarrativeText, budget: usize) -> Result<Vec<Chunk>, ChunkError> {
    let sentences = split_sentences(&narrative.body)?;
    chunk_text(&sentences, budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        vec!["word"; n].join(" ")
    }

    /// Character-by-character scanner used to check the splitter on simple
    /// inputs: break after a terminal when a space and a capital follow.
    fn naive_split(s: &str) -> Vec<String> {
        let chars: Vec<char> = s.chars().collect();
        let mut out = Vec::new();
        let mut cur = String::new();
        let mut i = 0;
        while i < chars.len() {
            cur.push(chars[i]);
            if is_terminal(chars[i])
                && i + 2 < chars.len()
                && chars[i + 1] == ' '
                && chars[i + 2].is_uppercase()
            {
                out.push(cur.clone());
                cur.clear();
                i += 2;
                continue;
            }
            i += 1;
        }
        out.push(cur);
        out
    }

    #[test]
    fn two_terminal_periods() {
        assert_eq!(split_sentences("Hello. World.").unwrap(), vec!["Hello.", "World."]);
    }

    #[test]
    fn title_without_period() {
        let input = "Mr Wonka smiled. He left.";
        let expected = naive_split(input);
        assert_eq!(expected, vec!["Mr Wonka smiled.", "He left."]);
        assert_eq!(split_sentences(input).unwrap(), expected);
    }

    #[test]
    fn no_terminator_is_one_sentence() {
        assert_eq!(split_sentences("One sentence").unwrap(), vec!["One sentence"]);
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(
            split_sentences("Mrs. Bucket sighed. Dr. Foo came.").unwrap(),
            vec!["Mrs. Bucket sighed.", "Dr. Foo came."]
        );
    }

    #[test]
    fn dialogue_keeps_attribution() {
        assert_eq!(
            split_sentences("\"Look at that!\" she said. They looked.").unwrap(),
            vec!["\"Look at that!\" she said.", "They looked."]
        );
    }

    #[test]
    fn quote_opens_next_sentence() {
        assert_eq!(
            split_sentences("He waited.\n\n\"Come in,\" called Joe.").unwrap(),
            vec!["He waited.", "\"Come in,\" called Joe."]
        );
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(split_sentences("  \n "), Err(ChunkError::EmptyInput));
        assert!(NarrativeText::new("x", "t", "   ").is_err());
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(&words(7)), 10);
        assert_eq!(estimate_tokens(&words(23)), 30);
        assert_eq!(estimate_tokens(&words(10)), 13);
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn greedy_packing_of_four_ten_token_sentences() {
        let sentences: Vec<String> = (0..4).map(|_| words(7)).collect();
        let chunks = chunk_text(&sentences, 25).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].sentence_span, (0, 1));
        assert_eq!(chunks[1].sentence_span, (2, 3));
        assert_eq!(chunks[0].token_estimate, 20);
    }

    #[test]
    fn single_sentence_single_chunk() {
        let chunks = chunk_text(&[words(5)], 100).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].sentence_count(), 1);
    }

    #[test]
    fn oversized_sentence_is_named() {
        let err = chunk_text(&[words(2), words(23)], 25).unwrap_err();
        assert_eq!(
            err,
            ChunkError::OversizedSentence {
                index: 1,
                tokens: 30,
                budget: 25
            }
        );
    }
}
