use std::collections::HashMap;

use super::tokenize::is_split_space;

pub(crate) fn word_ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_default() += 1;
    }
    out
}

pub(crate) fn char_ngrams(s: &str, n: usize, whitespace: bool) -> HashMap<String, usize> {
    let chars: Vec<char> =
        if whitespace { s.chars().collect() } else { s.chars().filter(|&c| !is_split_space(c)).collect() };
    let mut out = HashMap::new();
    if n == 0 || chars.len() < n {
        return out;
    }
    for w in chars.windows(n) {
        *out.entry(w.iter().collect()).or_default() += 1;
    }
    out
}
