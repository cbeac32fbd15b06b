//! Tokenization, hashed bag-of-words embeddings and seed derivation shared by
//! the offline stub adapters.

use sha2::{Digest, Sha256};

/// Default dimensionality of the hashed bag-of-words space.
pub const HASHED_DIM: usize = 1024;

/// Lower-cased alphanumeric tokens, in order of appearance.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Bucket index of a token in a hashed space of `dim` buckets.
pub fn bucket(token: &str, dim: usize) -> usize {
    (fnv1a(token.as_bytes()) % dim as u64) as usize
}

/// Term-count vector over `dim` hashed buckets. Not normalized.
pub fn hashed_counts(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for t in tokens(text) {
        v[bucket(&t, dim)] += 1.0;
    }
    v
}

/// Hashed bag-of-words scaled to unit length. Returns `None` for text with no
/// tokens.
pub fn unit_hashed(text: &str, dim: usize) -> Option<Vec<f64>> {
    let mut v = hashed_counts(text, dim);
    let n = norm(&v);
    if n == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector is zero.
///
/// Computed as `ab / sqrt(aa * bb)` so that identical inputs give exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (aa * bb).sqrt()
}

/// Derives a child RNG seed from a parent seed and a list of labels.
///
/// The derivation is a SHA-256 over the parent and length-prefixed labels, so
/// `("ab", "c")` and `("a", "bc")` never collide.
pub fn derive_seed(parent: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output has 32 bytes"))
}

/// Hex SHA-256 digest of arbitrary bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Function words and generic kitchen/workshop verbs skipped when pulling
/// noun phrases out of context text.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "add", "after", "all", "almost", "also", "an", "and", "any", "are", "as", "at",
    "be", "been", "before", "being", "bring", "but", "by", "can", "combine", "cook", "cut", "do",
    "dress", "each", "except", "few", "for", "from", "get", "has", "have", "here", "if", "in",
    "including", "into", "is", "it", "its", "let", "make", "minutes", "more", "of", "on", "once",
    "one", "onto", "or", "other", "over", "place", "put", "remove", "rest", "set", "should",
    "some", "such", "than", "that", "the", "their", "them", "then", "there", "these", "this",
    "those", "to", "too", "top", "two", "under", "until", "up", "use", "very", "was", "while",
    "will", "with", "you", "your", "fourth", "cup", "cups", "tablespoon", "tablespoons",
    "teaspoon", "teaspoons", "separately", "first", "image",
];

pub fn is_stop_word(token: &str) -> bool {
    STOP_WORDS.contains(&token) || token.chars().all(|c| c.is_ascii_digit())
}

/// Maximal runs of non-stop-word tokens, split at punctuation.
///
/// `"a board with avocado, crab meat, and grapes"` yields
/// `["board", "avocado", "crab meat", "grapes"]`.
pub fn noun_phrases(text: &str) -> Vec<String> {
    let mut phrases = Vec::new();
    for clause in text.split([',', '.', ';', ':', '!', '?', '(', ')']) {
        let mut current: Vec<String> = Vec::new();
        for tok in tokens(clause) {
            if is_stop_word(&tok) {
                if !current.is_empty() {
                    phrases.push(current.join(" "));
                    current.clear();
                }
            } else {
                current.push(tok);
            }
        }
        if !current.is_empty() {
            phrases.push(current.join(" "));
        }
    }
    phrases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_lowercase_and_split() {
        assert_eq!(tokens("Serve and Enjoy!"), vec!["serve", "and", "enjoy"]);
        assert!(tokens("  ...  ").is_empty());
    }

    #[test]
    fn unit_hashed_has_unit_norm() {
        let v = unit_hashed("chop the onions finely", HASHED_DIM).unwrap();
        assert!((norm(&v) - 1.0).abs() < 1e-12);
        assert!(unit_hashed("!!", HASHED_DIM).is_none());
    }

    #[test]
    fn derive_seed_is_label_sensitive() {
        assert_eq!(derive_seed(7, &["a", "b"]), derive_seed(7, &["a", "b"]));
        assert_ne!(derive_seed(7, &["ab", "c"]), derive_seed(7, &["a", "bc"]));
        assert_ne!(derive_seed(7, &["a"]), derive_seed(8, &["a"]));
    }

    #[test]
    fn noun_phrases_from_caption() {
        let p = noun_phrases(
            "A wooden cutting board with ingredients for a salad including avocado, crab meat, and grapes",
        );
        assert!(p.contains(&"avocado".to_string()));
        assert!(p.contains(&"crab meat".to_string()));
        assert!(p.contains(&"grapes".to_string()));
    }
}
