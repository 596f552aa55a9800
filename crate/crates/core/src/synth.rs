//! A synthetic zero-anaphora translation task.
//!
//! Every document has four sentences of single-character words. The first
//! sentence carries an entity marker (`A`, `B`, ...); each later sentence
//! contains a dropped argument `*` whose translation is the entity of the
//! document (`Q`, `R`, ...). The marker therefore sits one to three sentences
//! back, so only a model that reads enough context can translate `*` reliably.
//! One entity is much more frequent than the others. Ordinary words translate
//! one-to-one through a fixed substitution.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, ParallelDocumentCorpus, SentencePair};

pub const MARKERS: [char; 10] = ['A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J'];
pub const ENTITIES: [char; 10] = ['Q', 'R', 'S', 'T', 'U', 'V', 'W', 'X', 'Y', 'Z'];
pub const DROPPED: char = '*';
const WORDS: &str = "abcdefghijklmnop";
const OOD_WORDS: &str = "0123456789";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_sentences: usize,
    pub valid_sentences: usize,
    pub test_sentences: usize,
    pub sentences_per_doc: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Number of distinct entities, at most 10.
    pub entities: usize,
    /// Probability of the first entity; the rest share the remainder evenly.
    pub majority_share: f64,
    pub ood_pool_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_sentences: 2000,
            valid_sentences: 200,
            test_sentences: 200,
            sentences_per_doc: 4,
            min_words: 3,
            max_words: 5,
            entities: 4,
            majority_share: 0.55,
            ood_pool_size: 500,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthTask {
    pub train: ParallelDocumentCorpus,
    pub valid: ParallelDocumentCorpus,
    pub test: ParallelDocumentCorpus,
    /// Sentences over a disjoint alphabet, for out-of-domain random context.
    pub ood_pool: Arc<[String]>,
}

fn translate_word(c: char) -> char {
    match WORDS.find(c) {
        Some(i) => WORDS.as_bytes()[WORDS.len() - 1 - i] as char,
        None => match MARKERS.iter().position(|&m| m == c) {
            Some(i) => ENTITIES[i],
            None => c,
        },
    }
}

fn random_words(rng: &mut ChaCha8Rng, alphabet: &str, len: usize) -> Vec<char> {
    let chars: Vec<char> = alphabet.chars().collect();
    (0..len).map(|_| chars[rng.random_range(0..chars.len())]).collect()
}

fn join(words: &[char]) -> String {
    let mut s = String::with_capacity(words.len() * 2);
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push(*w);
    }
    s
}

fn document(rng: &mut ChaCha8Rng, cfg: &SynthConfig, entity_dist: &WeightedIndex<f64>, doc_id: String) -> Document {
    let entity = entity_dist.sample(rng);
    let sentences = (0..cfg.sentences_per_doc)
        .map(|k| {
            let len = rng.random_range(cfg.min_words..=cfg.max_words);
            let mut src = random_words(rng, WORDS, len);
            let slot = rng.random_range(0..len);
            src[slot] = if k == 0 { MARKERS[entity] } else { DROPPED };
            let tgt: Vec<char> =
                src.iter().map(|&c| if c == DROPPED { ENTITIES[entity] } else { translate_word(c) }).collect();
            SentencePair { source: join(&src), target: join(&tgt) }
        })
        .collect();
    Document { doc_id, sentences }
}

fn split(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    dist: &WeightedIndex<f64>,
    name: &str,
    sentences: usize,
) -> ParallelDocumentCorpus {
    let docs = sentences.div_ceil(cfg.sentences_per_doc.max(1));
    let documents = (0..docs).map(|i| document(rng, cfg, dist, format!("{name}-{i:04}"))).collect();
    ParallelDocumentCorpus::new(documents).expect("generated documents are well formed")
}

/// Deterministic train/valid/test corpora and an out-of-domain pool.
pub fn generate(cfg: &SynthConfig) -> SynthTask {
    assert!(cfg.sentences_per_doc >= 1 && cfg.min_words >= 1 && cfg.min_words <= cfg.max_words);
    assert!((1..=MARKERS.len()).contains(&cfg.entities) && (0.0..=1.0).contains(&cfg.majority_share));
    let rest = if cfg.entities > 1 { (1.0 - cfg.majority_share) / (cfg.entities - 1) as f64 } else { 0.0 };
    let weights: Vec<f64> = (0..cfg.entities).map(|i| if i == 0 { cfg.majority_share } else { rest }).collect();
    let dist = WeightedIndex::new(&weights).expect("entity weights must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = split(&mut rng, cfg, &dist, "train", cfg.train_sentences);
    let valid = split(&mut rng, cfg, &dist, "valid", cfg.valid_sentences);
    let test = split(&mut rng, cfg, &dist, "test", cfg.test_sentences);
    let ood_pool: Vec<String> = (0..cfg.ood_pool_size)
        .map(|_| {
            let len = rng.random_range(cfg.min_words..=cfg.max_words);
            join(&random_words(&mut rng, OOD_WORDS, len))
        })
        .collect();
    SynthTask { train, valid, test, ood_pool: ood_pool.into() }
}

/// Reference translation computed from the source and its context alone.
///
/// `*` takes the entity of the most recent marker in the context; `None` if the
/// source needs one and the context has none.
pub fn oracle_translate(context: &[String], source: &str) -> Option<String> {
    let entity = context.iter().rev().flat_map(|s| s.chars().rev()).find_map(|c| MARKERS.iter().position(|&m| m == c));
    let words: Option<Vec<char>> = source
        .split(' ')
        .map(|w| {
            let c = w.chars().next()?;
            if c == DROPPED {
                entity.map(|e| ENTITIES[e])
            } else {
                Some(translate_word(c))
            }
        })
        .collect();
    words.map(|w| join(&w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_contexts, ContextConfig};
    use std::collections::BTreeSet;

    fn small() -> SynthConfig {
        SynthConfig { train_sentences: 400, valid_sentences: 40, test_sentences: 40, ..SynthConfig::default() }
    }

    #[test]
    fn split_sizes_match_default_config() {
        let t = generate(&SynthConfig::default());
        assert_eq!(t.train.num_sentences(), 2000);
        assert_eq!(t.valid.num_sentences(), 200);
        assert_eq!(t.test.num_sentences(), 200);
        assert_eq!(t.ood_pool.len(), 500);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.train, b.train);
        assert_eq!(a.ood_pool, b.ood_pool);
        let c = generate(&SynthConfig { seed: 7, ..small() });
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn three_sentences_of_context_determine_every_target() {
        let t = generate(&small());
        for corpus in [&t.train, &t.valid, &t.test] {
            let ds = build_contexts(corpus, &ContextConfig::n_context(3)).unwrap();
            for ex in &ds.examples {
                assert_eq!(oracle_translate(&ex.context, &ex.source).as_deref(), Some(ex.target.as_str()));
            }
        }
    }

    #[test]
    fn marker_lies_one_to_three_sentences_back() {
        let t = generate(&small());
        for doc in t.train.documents() {
            assert!(doc.sentences[0].source.chars().any(|c| MARKERS.contains(&c)));
            for (k, p) in doc.sentences.iter().enumerate().skip(1) {
                assert!((1..=3).contains(&k));
                assert_eq!(p.source.matches(DROPPED).count(), 1);
                assert!(!p.source.chars().any(|c| MARKERS.contains(&c)));
            }
        }
        let ds = build_contexts(&t.train, &ContextConfig::n_context(0)).unwrap();
        let unresolved = ds.examples.iter().filter(|e| oracle_translate(&e.context, &e.source).is_none()).count();
        assert_eq!(unresolved, 300);
    }

    #[test]
    fn vocabulary_is_small_and_ood_pool_is_disjoint() {
        let t = generate(&SynthConfig::default());
        let mut symbols = BTreeSet::new();
        for s in t.train.source_sentences().chain(t.train.target_sentences()) {
            symbols.extend(s.split(' ').map(str::to_string));
        }
        assert!(symbols.len() <= 64, "{}", symbols.len());
        let corpus_chars: BTreeSet<char> = symbols.iter().flat_map(|s| s.chars()).collect();
        assert!(t.ood_pool.iter().flat_map(|s| s.chars()).filter(|&c| c != ' ').all(|c| !corpus_chars.contains(&c)));
        let cfg = ContextConfig::random_out_of_domain(3, 1, t.ood_pool.clone());
        assert!(build_contexts(&t.test, &cfg).is_ok());
    }

    #[test]
    fn entity_prior_is_skewed() {
        let t = generate(&SynthConfig::default());
        let first: Vec<char> = t
            .train
            .documents()
            .iter()
            .map(|d| d.sentences[0].source.chars().find(|c| MARKERS.contains(c)).unwrap())
            .collect();
        let share = first.iter().filter(|&&c| c == 'A').count() as f64 / first.len() as f64;
        assert!((share - 0.55).abs() < 0.07, "{share}");
    }
}
