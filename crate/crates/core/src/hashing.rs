//! Stable, platform-independent hashing used for seeded randomness,
//! fixture selection and content-addressed ids.

use sha2::{Digest, Sha256};

/// SHA-256 over the parts, each length-prefixed so `["ab", "c"]` and
/// `["a", "bc"]` hash differently.
pub fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

pub fn stable_hash(parts: &[&str]) -> u64 {
    let bytes: Vec<&[u8]> = parts.iter().map(|p| p.as_bytes()).collect();
    let d = digest(&bytes);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn seeded_hash(seed: u64, parts: &[&str]) -> u64 {
    let seed = seed.to_string();
    let mut all = Vec::with_capacity(parts.len() + 1);
    all.push(seed.as_str());
    all.extend_from_slice(parts);
    stable_hash(&all)
}

/// Lowercase hex SHA-256 of the parts.
pub fn hex_digest(parts: &[&str]) -> String {
    let bytes: Vec<&[u8]> = parts.iter().map(|p| p.as_bytes()).collect();
    hex::encode(digest(&bytes))
}

/// Hex SHA-256 of a single string, without length prefixing. This is what
/// fixture hash-prefix selectors are matched against.
pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Maps a hash onto `[0, 1)`.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
