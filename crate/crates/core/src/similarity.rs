//! Unit-cost edit distance over Unicode scalar values and the normalized
//! similarity used for merging actions.

use crate::grammar::CanonicalAction;

/// Levenshtein distance between `s` and `t`, counted in `char`s.
pub fn levenshtein(s: &str, t: &str) -> usize {
    let a: Vec<char> = s.chars().collect();
    let b: Vec<char> = t.chars().collect();
    levenshtein_chars(&a, &b)
}

/// Two-row dynamic program, `O(|a|·|b|)` time and `O(min)` space.
pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, &lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let substitute = prev[j] + usize::from(lc != sc);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Edit distance if it is at most `limit`, otherwise `None`.
///
/// Stops as soon as every cell of a row exceeds `limit`.
pub fn levenshtein_within(a: &[char], b: &[char], limit: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > limit {
        return None;
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return (long.len() <= limit).then_some(long.len());
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, &lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        let mut row_min = cur[0];
        for (j, &sc) in short.iter().enumerate() {
            let substitute = prev[j] + usize::from(lc != sc);
            let v = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
            cur[j + 1] = v;
            row_min = row_min.min(v);
        }
        if row_min > limit {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[short.len()];
    (d <= limit).then_some(d)
}

/// `1 − d / max(|a|, |b|)`; two empty strings are identical.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    similarity_chars(&a, &b)
}

pub fn similarity_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    similarity_from_distance(levenshtein_chars(a, b), longest)
}

#[inline]
pub fn similarity_from_distance(distance: usize, longest: usize) -> f64 {
    if longest == 0 {
        return 1.0;
    }
    1.0 - distance as f64 / longest as f64
}

/// Largest distance `d` for which `1 − d/longest ≥ theta`, evaluated with the
/// same floating-point expression as [`similarity_from_distance`].
pub fn max_distance_for(theta: f64, longest: usize) -> Option<usize> {
    if longest == 0 {
        return (1.0 >= theta).then_some(0);
    }
    let mut d = ((1.0 - theta) * longest as f64).floor().max(0.0) as usize;
    d = d.min(longest);
    while d < longest && similarity_from_distance(d + 1, longest) >= theta {
        d += 1;
    }
    while similarity_from_distance(d, longest) < theta {
        if d == 0 {
            return None;
        }
        d -= 1;
    }
    Some(d)
}

/// Similarity of two pre-split strings if it reaches `theta`.
pub fn similarity_at_least(a: &[char], b: &[char], theta: f64) -> Option<f64> {
    let longest = a.len().max(b.len());
    let limit = max_distance_for(theta, longest)?;
    levenshtein_within(a, b, limit).map(|d| similarity_from_distance(d, longest))
}

/// Similarity of two actions over their canonical serializations.
pub fn similarity(a: &CanonicalAction, b: &CanonicalAction) -> f64 {
    normalized_similarity(&a.canonical_string(), &b.canonical_string())
}
