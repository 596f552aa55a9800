//! Shared byte-pair-encoding vocabulary.
//!
//! Spaces are rewritten to [`WORD_BOUNDARY`] and one boundary symbol is prepended
//! to every string, so each word starts with the marker and decoding is lossless.
//! Merges are learned greedily by pair frequency with lexicographic tie-breaking.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::fsutil::{sha256_hex, write_atomic};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Joins context sentences inside one encoded context sequence.
pub const SEP: usize = 4;
pub const NUM_RESERVED: usize = 5;
const RESERVED_NAMES: [&str; NUM_RESERVED] = ["<pad>", "<s>", "</s>", "<unk>", "<sep>"];

pub const WORD_BOUNDARY: char = '\u{2581}';

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("target size {target} is below the {minimum} reserved and base symbols")]
    TargetTooSmall { target: usize, minimum: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(usize),
    #[error("malformed vocabulary file: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordVocabulary {
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    token_to_id: HashMap<String, usize>,
    merge_rank: HashMap<(String, String), usize>,
    target_size: usize,
    seed: u64,
}

/// Rewrite spaces to the boundary marker and split into boundary-initial words.
fn pre_tokenize(s: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    current.push(WORD_BOUNDARY);
    for ch in s.chars() {
        if ch == ' ' {
            words.push(std::mem::take(&mut current));
            current.push(WORD_BOUNDARY);
        } else {
            current.push(ch);
        }
    }
    words.push(current);
    words
}

fn merge_word(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
        }
        i += 1;
    }
}

/// Learn a vocabulary of (up to) `target_size` ids from `lines`.
///
/// Training is fully deterministic; `seed` is only recorded in the vocabulary header.
pub fn train_vocab<S: AsRef<str>>(
    lines: &[S],
    target_size: usize,
    seed: u64,
) -> Result<SubwordVocabulary, SubwordError> {
    let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in lines {
        let line = line.as_ref();
        if line.is_empty() {
            continue;
        }
        for w in pre_tokenize(line) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    let mut alphabet: Vec<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    alphabet.push(WORD_BOUNDARY);
    alphabet.sort_unstable();
    alphabet.dedup();
    let minimum = NUM_RESERVED + alphabet.len();
    if target_size < minimum {
        return Err(SubwordError::TargetTooSmall { target: target_size, minimum });
    }
    let mut tokens: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    let mut known: HashMap<String, usize> =
        tokens[NUM_RESERVED..].iter().enumerate().map(|(i, t)| (t.clone(), i + NUM_RESERVED)).collect();

    let mut words: Vec<(Vec<String>, usize)> =
        word_counts.into_iter().map(|(w, c)| (w.chars().map(String::from).collect(), c)).collect();
    let mut merges = Vec::new();
    while tokens.len() < target_size {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, count) in &words {
            for pair in symbols.windows(2) {
                *pair_counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|((l, r), _)| (l.to_string(), r.to_string()));
        let Some((left, right)) = best else { break };
        for (symbols, _) in &mut words {
            merge_word(symbols, &left, &right);
        }
        let merged = format!("{left}{right}");
        if !known.contains_key(&merged) {
            known.insert(merged.clone(), tokens.len());
            tokens.push(merged);
        }
        merges.push((left, right));
    }
    Ok(SubwordVocabulary::assemble(merges, tokens, target_size, seed))
}

impl SubwordVocabulary {
    fn assemble(merges: Vec<(String, String)>, tokens: Vec<String>, target_size: usize, seed: u64) -> Self {
        let token_to_id = tokens.iter().enumerate().skip(NUM_RESERVED).map(|(i, t)| (t.clone(), i)).collect();
        let merge_rank = merges.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        SubwordVocabulary { merges, tokens, token_to_id, merge_rank, target_size, seed }
    }

    /// Number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    fn segment_word(&self, word: &str, out: &mut Vec<usize>) {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|p| {
                    self.merge_rank.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, p[0].clone(), p[1].clone()))
                })
                .min();
            match best {
                Some((_, l, r)) => merge_word(&mut symbols, &l, &r),
                None => break,
            }
        }
        out.extend(symbols.iter().map(|s| self.id(s).unwrap_or(UNK)));
    }

    fn encode_body(&self, s: &str, out: &mut Vec<usize>) {
        if s.is_empty() {
            return;
        }
        for w in pre_tokenize(s) {
            self.segment_word(&w, out);
        }
    }

    /// Subword ids of `s` followed by EOS.
    pub fn encode(&self, s: &str) -> Vec<usize> {
        let mut out = Vec::new();
        self.encode_body(s, &mut out);
        out.push(EOS);
        out
    }

    /// Context sentences joined by [`SEP`], followed by EOS; an empty context is `[EOS]`.
    pub fn encode_context(&self, context: &[String]) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, s) in context.iter().enumerate() {
            if i > 0 {
                out.push(SEP);
            }
            self.encode_body(s, &mut out);
        }
        out.push(EOS);
        out
    }

    /// Inverse of [`encode`](Self::encode). PAD, BOS and EOS are dropped, UNK becomes
    /// U+FFFD and SEP becomes a TAB.
    pub fn decode(&self, ids: &[usize]) -> Result<String, SubwordError> {
        let mut text = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => text.push('\u{FFFD}'),
                SEP => text.push('\t'),
                _ => text.push_str(self.tokens.get(id).ok_or(SubwordError::UnknownId(id))?),
            }
        }
        let mut out = String::with_capacity(text.len());
        let mut at_start = true;
        for ch in text.chars() {
            match ch {
                WORD_BOUNDARY if at_start => {}
                WORD_BOUNDARY => out.push(' '),
                '\t' => {
                    out.push('\t');
                    at_start = true;
                    continue;
                }
                c => out.push(c),
            }
            at_start = false;
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "ctxmt-vocab merges={} tokens={} target_size={} seed={}\n",
            self.merges.len(),
            self.tokens.len(),
            self.target_size,
            self.seed
        );
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l} {r}");
        }
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{t}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SubwordError> {
        let bad = |m: &str| SubwordError::Malformed(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let mut fields = header.split(' ');
        if fields.next() != Some("ctxmt-vocab") {
            return Err(bad("missing ctxmt-vocab header"));
        }
        let mut kv = HashMap::new();
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| bad("header field without '='"))?;
            kv.insert(k, v.parse::<u64>().map_err(|_| bad("non-numeric header value"))?);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(&format!("header lacks {k}")));
        let (n_merges, n_tokens) = (get("merges")? as usize, get("tokens")? as usize);
        let (target_size, seed) = (get("target_size")? as usize, get("seed")?);
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let line = lines.next().ok_or_else(|| bad("truncated merge list"))?;
            let (l, r) = line.split_once(' ').ok_or_else(|| bad("merge line without a space"))?;
            merges.push((l.to_string(), r.to_string()));
        }
        let mut tokens = Vec::with_capacity(n_tokens);
        for i in 0..n_tokens {
            let line = lines.next().ok_or_else(|| bad("truncated token table"))?;
            let (id, tok) = line.split_once('\t').ok_or_else(|| bad("token line without a TAB"))?;
            if id.parse::<usize>().ok() != Some(i) {
                return Err(bad("token ids are not dense"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED].iter().zip(RESERVED_NAMES).any(|(a, b)| a != b) {
            return Err(bad("reserved ids do not match"));
        }
        let vocab = Self::assemble(merges, tokens, target_size, seed);
        if let Some((l, r)) = vocab.merges.iter().find(|(l, r)| vocab.id(&format!("{l}{r}")).is_none()) {
            return Err(bad(&format!("merge output {l}{r} missing from token table")));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), SubwordError> {
        Ok(write_atomic(path, self.to_text().as_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, SubwordError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the serialized vocabulary.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base_size(lines: &[&str]) -> usize {
        let mut chars: Vec<char> = lines.iter().flat_map(|l| l.chars()).filter(|&c| c != ' ').collect();
        chars.push(WORD_BOUNDARY);
        chars.sort_unstable();
        chars.dedup();
        NUM_RESERVED + chars.len()
    }

    // Brute-force pair counter over boundary-marked words.
    fn most_frequent_pair(lines: &[&str]) -> (String, String) {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for line in lines {
            for word in line.split(' ') {
                let chars: Vec<char> = std::iter::once(WORD_BOUNDARY).chain(word.chars()).collect();
                for i in 0..chars.len() - 1 {
                    *counts.entry((chars[i].to_string(), chars[i + 1].to_string())).or_default() += 1;
                }
            }
        }
        let max = *counts.values().max().unwrap();
        counts.into_iter().find(|(_, c)| *c == max).unwrap().0
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let lines = ["aaab", "aaab"];
        let v = train_vocab(&lines, base_size(&lines) + 1, 0).unwrap();
        assert_eq!(most_frequent_pair(&lines), ("a".to_string(), "a".to_string()));
        assert_eq!(v.merges()[0], ("a".to_string(), "a".to_string()));
        assert_eq!(v.len(), base_size(&lines) + 1);
    }

    #[test]
    fn too_small_target_is_rejected() {
        let lines = ["abc"];
        let err = train_vocab(&lines, base_size(&lines) - 1, 0).unwrap_err();
        assert!(matches!(err, SubwordError::TargetTooSmall { .. }));
        assert!(train_vocab(&lines, 3, 0).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let lines = ["the cat sat on the mat", "the dog sat", "a cat and a dog"];
        let a = train_vocab(&lines, 40, 1).unwrap();
        let b = train_vocab(&lines, 40, 1).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn vocabulary_stops_at_maximal_size() {
        let lines = ["ab ab"];
        let v = train_vocab(&lines, 1000, 0).unwrap();
        // ▁a, ▁ab are the only merges available
        assert_eq!(v.len(), base_size(&lines) + 2);
        assert_eq!(v.encode("ab"), vec![v.id("\u{2581}ab").unwrap(), EOS]);
    }

    #[test]
    fn empty_string_encodes_to_eos() {
        let v = train_vocab(&["abc"], 10, 0).unwrap();
        assert_eq!(v.encode(""), vec![EOS]);
        assert_eq!(v.decode(&[EOS]).unwrap(), "");
        assert_eq!(v.encode_context(&[]), vec![EOS]);
    }

    #[test]
    fn unseen_character_maps_to_unk() {
        let v = train_vocab(&["abc"], 12, 0).unwrap();
        assert!(v.encode("abz").contains(&UNK));
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let v = train_vocab(&["abc"], 12, 0).unwrap();
        assert!(matches!(v.decode(&[v.len()]), Err(SubwordError::UnknownId(_))));
    }

    #[test]
    fn context_encoding_decodes_to_tab_joined_line() {
        let v = train_vocab(&["ab c", "c d"], 30, 0).unwrap();
        let ids = v.encode_context(&["ab c".into(), "c d".into()]);
        assert_eq!(ids.iter().filter(|&&i| i == SEP).count(), 1);
        assert_eq!(v.decode(&ids).unwrap(), "ab c\tc d");
    }

    #[test]
    fn file_round_trip() {
        let v = train_vocab(&["hello world", "hello there"], 30, 9).unwrap();
        let w = SubwordVocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(v, w);
        let truncated: String = v.to_text().lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(SubwordVocabulary::from_text(&truncated).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_over_training_charset(s in "[abc ]{0,20}", target in 9usize..40) {
            let v = train_vocab(&["abc cab", "a b c", "ccc aaa bbb"], target, 0).unwrap();
            let ids = v.encode(&s);
            prop_assert!(!ids.contains(&UNK));
            prop_assert_eq!(v.decode(&ids).unwrap(), s);
        }
    }
}
