use std::sync::LazyLock;

use regex::Regex;

static RULES: LazyLock<[(Regex, &'static str); 4]> = LazyLock::new(|| {
    [
        // ASCII symbols and punctuation other than period, comma, dash and apostrophe
        (Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(), " ${1} "),
        // period and comma unless preceded by a digit
        (Regex::new(r"([^0-9])([\.,])").unwrap(), "${1} ${2} "),
        // period and comma unless followed by a digit
        (Regex::new(r"([\.,])([^0-9])").unwrap(), " ${1} ${2}"),
        // dash after a digit
        (Regex::new(r"([0-9])(-)").unwrap(), "${1} ${2} "),
    ]
});

/// Whitespace as understood by Python's `str.split()`, which also counts the
/// ASCII information separators.
pub(crate) fn is_split_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

pub(crate) fn split_words(s: &str) -> impl Iterator<Item = &str> {
    s.split(is_split_space).filter(|w| !w.is_empty())
}

/// The `13a` tokenizer of mteval-v13a as used for BLEU.
pub fn tokenize_13a(s: &str) -> Vec<String> {
    let mut line = s.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    let mut line = format!(" {line} ");
    for (re, rep) in RULES.iter() {
        line = re.replace_all(&line, *rep).into_owned();
    }
    split_words(&line).map(str::to_string).collect()
}
