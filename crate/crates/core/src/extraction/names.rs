//! Name normalization, matching and specificity rules.

use std::collections::BTreeSet;

const HONORIFICS: &[&str] = &[
    "mr", "mrs", "ms", "miss", "dr", "sir", "lady", "lord", "madam", "madame", "monsieur", "the",
];

const STOP_NAMES: &[&str] = &["unknown", "somebody", "people", "everyone", "nobody", "crowd", "various"];

const GROUP_NOUNS: &[&str] = &[
    "people", "crowd", "crowds", "everyone", "everybody", "folk", "folks", "townspeople", "townsfolk",
    "villagers", "residents", "citizens", "onlookers", "spectators", "passengers", "guests",
    "workers", "reporters", "others", "strangers", "someone", "anyone", "nobody", "somebody",
];

const QUANTIFIERS: &[&str] = &["all", "other", "some", "many", "several", "various", "the"];

pub fn normalize(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Lower-cased word tokens with honorifics removed. Falls back to the full
/// token list when the name is nothing but honorifics.
pub fn name_tokens(name: &str) -> BTreeSet<String> {
    let all: Vec<String> = name
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    let kept: BTreeSet<String> = all.iter().filter(|t| !HONORIFICS.contains(&t.as_str())).cloned().collect();
    if kept.is_empty() {
        all.into_iter().collect()
    } else {
        kept
    }
}

/// One name's tokens are all contained in the other's.
pub fn token_subset(a: &str, b: &str) -> bool {
    let (ta, tb) = (name_tokens(a), name_tokens(b));
    !ta.is_empty() && !tb.is_empty() && (ta.is_subset(&tb) || tb.is_subset(&ta))
}

/// Names that do not denote an individual: the stop list, or a phrase
/// built around a group noun ("people worldwide", "the other guests").
pub fn is_nonspecific(name: &str) -> bool {
    let norm = normalize(name);
    if norm.is_empty() || STOP_NAMES.contains(&norm.as_str()) {
        return true;
    }
    let words: Vec<&str> = norm
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let Some(first) = words.iter().find(|w| !QUANTIFIERS.contains(w)) else {
        return true;
    };
    STOP_NAMES.contains(first) || words.iter().any(|w| GROUP_NOUNS.contains(w))
}

/// Lower-case slug used for character ids.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    let out = out.trim_end_matches('-').to_string();
    if out.is_empty() {
        "character".to_string()
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_list_and_group_patterns() {
        assert!(is_nonspecific("unknown"));
        assert!(is_nonspecific("Somebody"));
        assert!(is_nonspecific("people worldwide"));
        assert!(is_nonspecific("the other guests"));
        assert!(!is_nonspecific("Hercule Poirot"));
        assert!(!is_nonspecific("Grandpa Joe"));
    }

    #[test]
    fn honorifics_do_not_block_subsets() {
        assert!(token_subset("Mr Wonka", "Willy Wonka"));
        assert!(token_subset("Charlie", "Charlie Bucket"));
        assert!(!token_subset("Grandpa Joe", "Grandma Josephine"));
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("Grandparents' Joe!"), "grandparents-joe");
        assert_eq!(slug("  Élise "), "élise");
        assert_eq!(slug("***"), "character");
    }
}
