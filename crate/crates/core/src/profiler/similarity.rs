//! Lexical name similarity for join inference.
//!
//! Score = max(Jaro-Winkler over the lowercased identifiers, Jaccard overlap
//! of the identifier token sets). Tokens come from splitting identifiers on
//! underscores, non-alphanumerics, and camel-case boundaries. Deterministic,
//! so join inference needs no network; an embedding-backed metric can slot
//! in behind the same interface later.

use std::collections::BTreeSet;

/// Jaro similarity of two strings, over Unicode scalar values.
pub fn jaro(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_matched = vec![false; a.len()];
    let mut b_matched = vec![false; b.len()];
    let mut matches = 0usize;
    for (i, ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_matched[j] && b[j] == *ca {
                a_matched[i] = true;
                b_matched[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let mut transpositions = 0usize;
    let mut j = 0usize;
    for (i, matched) in a_matched.iter().enumerate() {
        if !matched {
            continue;
        }
        while !b_matched[j] {
            j += 1;
        }
        if a[i] != b[j] {
            transpositions += 1;
        }
        j += 1;
    }
    let m = matches as f64;
    let t = (transpositions / 2) as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

/// Jaro-Winkler with the standard prefix scale 0.1 capped at 4 characters.
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let j = jaro(a, b);
    let prefix = a
        .chars()
        .zip(b.chars())
        .take(4)
        .take_while(|(x, y)| x == y)
        .count() as f64;
    j + prefix * 0.1 * (1.0 - j)
}

/// Split an identifier into lowercase tokens on `_`, non-alphanumerics, and
/// lower-to-upper camel-case boundaries.
pub fn identifier_tokens(name: &str) -> BTreeSet<String> {
    let mut tokens = BTreeSet::new();
    let mut current = String::new();
    let mut prev_lower = false;
    for ch in name.chars() {
        if ch.is_alphanumeric() {
            if ch.is_uppercase() && prev_lower && !current.is_empty() {
                tokens.insert(current.to_lowercase());
                current = String::new();
            }
            prev_lower = ch.is_lowercase() || ch.is_numeric();
            current.push(ch);
        } else {
            if !current.is_empty() {
                tokens.insert(current.to_lowercase());
                current = String::new();
            }
            prev_lower = false;
        }
    }
    if !current.is_empty() {
        tokens.insert(current.to_lowercase());
    }
    tokens
}

fn token_set_overlap(a: &str, b: &str) -> f64 {
    let ta = identifier_tokens(a);
    let tb = identifier_tokens(b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let inter = ta.intersection(&tb).count() as f64;
    let union = ta.union(&tb).count() as f64;
    inter / union
}

/// Similarity between two column identifiers in [0, 1]. Token overlap runs
/// on the original spellings so camel-case boundaries survive.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    let whole = jaro_winkler(&a.to_lowercase(), &b.to_lowercase());
    whole.max(token_set_overlap(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} != {b}");
    }

    #[test]
    fn jaro_winkler_reference_values() {
        close(jaro("martha", "marhta"), 0.9444444444444445);
        close(jaro_winkler("martha", "marhta"), 0.9611111111111111);
        close(jaro_winkler("same", "same"), 1.0);
        close(jaro("abc", "xyz"), 0.0);
    }

    #[test]
    fn cust_id_vs_customer_id_crosses_the_fk_gate() {
        // Hand computation: 7 matches over lengths 7 and 11, no
        // transpositions, shared prefix "cust" -> 30.6/33.
        close(jaro_winkler("cust_id", "customer_id"), 30.6 / 33.0);
        assert!(name_similarity("cust_id", "customer_id") >= 0.85);
    }

    #[test]
    fn camel_case_and_underscores_tokenize_alike() {
        assert_eq!(
            identifier_tokens("customerId"),
            identifier_tokens("customer_id")
        );
        assert_eq!(name_similarity("customerId", "CUSTOMER_ID"), 1.0);
    }

    #[test]
    fn token_overlap_rescues_reordered_names() {
        // Whole-string JW is weak here; the shared token set carries it.
        assert!(name_similarity("id_customer", "customer_id") >= 0.85);
    }

    #[test]
    fn unrelated_names_score_low() {
        assert!(name_similarity("zip", "frpm_count") < 0.85);
    }
}
