//! Text utilities shared by content-based identifier construction and the
//! model vocabulary: a lowercasing word tokenizer and a stable 64-bit hash
//! (FNV-1a) so hashed features never depend on platform or std internals.

/// Lowercase and split on any non-alphanumeric character, dropping empty
/// fragments.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// FNV-1a 64-bit hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Term-frequency bag-of-words over `terms`, hashed into `dim` buckets and
/// normalized to sum to 1 (the zero vector when `terms` is empty).
pub fn hashed_bow(terms: &[String], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0f64; dim];
    if terms.is_empty() {
        return v;
    }
    for t in terms {
        v[(fnv1a(t.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let total = terms.len() as f64;
    for x in &mut v {
        *x /= total;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_splits_on_punctuation() {
        assert_eq!(
            tokenize("Long-Lasting Lipstick, 2x!"),
            vec!["long", "lasting", "lipstick", "2x"]
        );
        assert!(tokenize("--- ,,, ").is_empty());
    }

    #[test]
    fn fnv1a_matches_published_vectors() {
        // reference values of the FNV-1a 64-bit test suite
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hashed_bow_is_a_distribution_over_buckets() {
        let terms: Vec<String> = ["red", "red", "gloss"].iter().map(|s| s.to_string()).collect();
        let v = hashed_bow(&terms, 16);
        let sum: f64 = v.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // "red" appears twice: its bucket holds 2/3 unless it collides with "gloss"
        let red_bucket = (fnv1a(b"red") % 16) as usize;
        assert!(v[red_bucket] >= 2.0 / 3.0 - 1e-12);
    }

    #[test]
    fn empty_terms_give_zero_vector() {
        assert!(hashed_bow(&[], 8).iter().all(|&x| x == 0.0));
    }
}
