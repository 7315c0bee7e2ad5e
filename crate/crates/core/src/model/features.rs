//! Lexical feature channels: exact-match flags and answer overlap ratios.

use std::collections::HashSet;

/// `1` where the lowercased token of `a` occurs anywhere in `b`.
pub fn em_features<S: AsRef<str>>(a: &[S], b: &[S]) -> Vec<bool> {
    let other: HashSet<String> = b.iter().map(|t| t.as_ref().to_lowercase()).collect();
    a.iter()
        .map(|t| other.contains(&t.as_ref().to_lowercase()))
        .collect()
}

/// Overlap between an answer and another sequence: the fraction of answer
/// tokens found in `other`, the fraction of `other` tokens found in the
/// answer, and both again weighted by `idf`. Counts are over occurrences;
/// an empty side yields zeros.
pub fn overlap_features<S: AsRef<str>>(
    answer: &[S],
    other: &[S],
    idf: impl Fn(&str) -> f64,
) -> [f64; 4] {
    if answer.is_empty() || other.is_empty() {
        return [0.0; 4];
    }
    let lower =
        |xs: &[S]| -> Vec<String> { xs.iter().map(|t| t.as_ref().to_lowercase()).collect() };
    let (a, o) = (lower(answer), lower(other));
    let a_set: HashSet<&str> = a.iter().map(String::as_str).collect();
    let o_set: HashSet<&str> = o.iter().map(String::as_str).collect();
    let ratio = |xs: &[String], set: &HashSet<&str>| {
        let (mut hit, mut hit_w, mut all_w) = (0usize, 0.0, 0.0);
        for t in xs {
            let w = idf(t);
            all_w += w;
            if set.contains(t.as_str()) {
                hit += 1;
                hit_w += w;
            }
        }
        let weighted = if all_w > 0.0 { hit_w / all_w } else { 0.0 };
        (hit as f64 / xs.len() as f64, weighted)
    };
    let (a_in_o, a_in_o_w) = ratio(&a, &o_set);
    let (o_in_a, o_in_a_w) = ratio(&o, &a_set);
    [a_in_o, o_in_a, a_in_o_w, o_in_a_w]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn em_is_case_insensitive() {
        assert_eq!(
            em_features(&["The", "cat"], &["cat", "sat"]),
            vec![false, true]
        );
        assert_eq!(em_features(&["A", "b"], &["a", "B"]), vec![true, true]);
    }

    #[test]
    fn overlap_extremes() {
        assert_eq!(
            overlap_features(&["x", "y"], &["x", "y"], |_| 1.0),
            [1.0; 4]
        );
        assert_eq!(overlap_features(&["x"], &["y"], |_| 1.0), [0.0; 4]);
        assert_eq!(overlap_features::<&str>(&[], &["y"], |_| 1.0), [0.0; 4]);
    }
}
