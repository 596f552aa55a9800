//! Corpus-level BLEU, NIST and ChrF2 with bootstrap confidence intervals.
//!
//! Every metric reduces a sentence pair to a vector of sufficient statistics;
//! corpus scores (and bootstrap resamples) are computed from their sums.

mod bootstrap;
mod ngram;
mod tokenize;

pub use bootstrap::{bootstrap_ci, bootstrap_paired, resample_indices, ConfidenceInterval, MetricReport};
pub use tokenize::tokenize_13a;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ngram::{char_ngrams, word_ngrams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("bootstrap needs at least 2 sentences, got {0}")]
    CorpusTooSmall(usize),
    #[error("invalid metric config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Nist,
    Chrf2,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Bleu, Metric::Nist, Metric::Chrf2];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::Nist => "nist",
            Metric::Chrf2 => "chrf2",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bleu" => Ok(Metric::Bleu),
            "nist" => Ok(Metric::Nist),
            "chrf2" | "chrf" => Ok(Metric::Chrf2),
            _ => Err(format!("unknown metric {s:?} (expected bleu, nist or chrf2)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub bleu_max_order: usize,
    pub nist_max_order: usize,
    pub chrf_order: usize,
    pub chrf_beta: f64,
    /// Keep whitespace characters inside ChrF character n-grams.
    pub chrf_whitespace: bool,
    pub lowercase: bool,
    pub bootstrap_samples: usize,
    pub bootstrap_seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            bleu_max_order: 4,
            nist_max_order: 5,
            chrf_order: 6,
            chrf_beta: 2.0,
            chrf_whitespace: false,
            lowercase: false,
            bootstrap_samples: 1000,
            bootstrap_seed: 12345,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |m: &str| Err(MetricError::InvalidConfig(m.to_string()));
        if self.bleu_max_order < 1 || self.nist_max_order < 1 || self.chrf_order < 1 {
            return bad("n-gram orders must be >= 1");
        }
        if self.bootstrap_samples < 1 {
            return bad("bootstrap_samples must be >= 1");
        }
        if self.chrf_beta.is_nan() || self.chrf_beta <= 0.0 {
            return bad("chrf_beta must be > 0");
        }
        Ok(())
    }

    fn prepare(&self, s: &str) -> String {
        if self.lowercase {
            s.to_lowercase()
        } else {
            s.to_string()
        }
    }
}

/// BLEU with its components.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    /// Per-order precisions in percent, after smoothing.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
}

/// BLEU from summed statistics `[sys_len, ref_len, correct_1..N, total_1..N]`.
fn bleu_from_stats(s: &[f64], order: usize) -> BleuScore {
    let (sys, rf) = (s[0], s[1]);
    let (correct, total) = (&s[2..2 + order], &s[2 + order..2 + 2 * order]);
    let bp = if sys < rf {
        if sys > 0.0 {
            (1.0 - rf / sys).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    let mut precisions = vec![0.0; order];
    let mut out = BleuScore {
        score: 0.0,
        precisions: Vec::new(),
        brevity_penalty: bp,
        sys_len: sys as usize,
        ref_len: rf as usize,
    };
    if correct.iter().all(|&c| c == 0.0) {
        out.precisions = precisions;
        return out;
    }
    let mut smooth = 1.0;
    let mut used = 0;
    for n in 0..order {
        // orders longer than every hypothesis are left out
        if total[n] == 0.0 {
            break;
        }
        used = n + 1;
        precisions[n] = if correct[n] == 0.0 {
            smooth *= 2.0;
            100.0 / (smooth * total[n])
        } else {
            100.0 * correct[n] / total[n]
        };
    }
    let mean_log = precisions[..used].iter().map(|p| p.ln()).sum::<f64>() / used as f64;
    out.score = bp * mean_log.exp();
    out.precisions = precisions;
    out
}

fn bleu_sentence_stats(hyp: &[String], rf: &[String], order: usize) -> Vec<f64> {
    let mut s = vec![0.0; 2 + 2 * order];
    s[0] = hyp.len() as f64;
    s[1] = rf.len() as f64;
    for n in 1..=order {
        let h = word_ngrams(hyp, n);
        let r = word_ngrams(rf, n);
        s[1 + n] = h.iter().map(|(g, &c)| c.min(*r.get(g).unwrap_or(&0))).sum::<usize>() as f64;
        s[1 + order + n] = hyp.len().saturating_sub(n - 1) as f64;
    }
    s
}

/// `ln(0.5) / ln²(2/3)`: the brevity penalty is exactly 0.5 at a length ratio of 2/3.
pub fn nist_beta() -> f64 {
    0.5f64.ln() / (2.0f64 / 3.0).ln().powi(2)
}

pub fn nist_brevity_penalty(hyp_len: f64, ref_len: f64) -> f64 {
    if hyp_len <= 0.0 {
        return 0.0;
    }
    if ref_len <= 0.0 {
        return 1.0;
    }
    let ratio = (hyp_len / ref_len).min(1.0);
    (nist_beta() * ratio.ln().powi(2)).exp()
}

/// Information weight of every reference n-gram up to `order`.
fn nist_information(refs: &[Vec<String>], order: usize) -> HashMap<Vec<String>, f64> {
    let mut counts: HashMap<Vec<String>, usize> = HashMap::new();
    let mut words = 0usize;
    for r in refs {
        words += r.len();
        for n in 1..=order {
            for (g, c) in word_ngrams(r, n) {
                *counts.entry(g.to_vec()).or_default() += c;
            }
        }
    }
    counts
        .iter()
        .map(|(g, &c)| {
            let context = if g.len() == 1 { words } else { counts[&g[..g.len() - 1]] };
            (g.clone(), (context as f64 / c as f64).log2())
        })
        .collect()
}

/// `[hyp_len, ref_len, info_1..N, total_1..N]`
fn nist_sentence_stats(hyp: &[String], rf: &[String], order: usize, info: &HashMap<Vec<String>, f64>) -> Vec<f64> {
    let mut s = vec![0.0; 2 + 2 * order];
    s[0] = hyp.len() as f64;
    s[1] = rf.len() as f64;
    for n in 1..=order {
        let h = word_ngrams(hyp, n);
        let r = word_ngrams(rf, n);
        let mut gained = 0.0;
        for (g, &c) in &h {
            let m = c.min(*r.get(g).unwrap_or(&0));
            if m > 0 {
                gained += m as f64 * info[*g];
            }
        }
        s[1 + n] = gained;
        s[1 + order + n] = hyp.len().saturating_sub(n - 1) as f64;
    }
    s
}

fn nist_from_stats(s: &[f64], order: usize) -> f64 {
    let sum: f64 = (0..order)
        .map(|n| {
            let total = s[2 + order + n];
            if total > 0.0 {
                s[2 + n] / total
            } else {
                0.0
            }
        })
        .sum();
    sum * nist_brevity_penalty(s[0], s[1])
}

/// `[hyp_n, ref_n, match_n]` for each order.
fn chrf_sentence_stats(hyp: &str, rf: &str, order: usize, whitespace: bool) -> Vec<f64> {
    let mut s = Vec::with_capacity(3 * order);
    for n in 1..=order {
        let h = char_ngrams(hyp, n, whitespace);
        let r = char_ngrams(rf, n, whitespace);
        let m: usize = h.iter().map(|(g, &c)| c.min(*r.get(g).unwrap_or(&0))).sum();
        s.extend([h.values().sum::<usize>() as f64, r.values().sum::<usize>() as f64, m as f64]);
    }
    s
}

/// Orders with no n-grams on either side are left out of the averages.
fn chrf_from_stats(s: &[f64], beta: f64) -> f64 {
    let (mut p, mut r, mut used) = (0.0, 0.0, 0usize);
    for o in s.chunks(3) {
        let (hyp, rf, m) = (o[0], o[1], o[2]);
        if hyp == 0.0 && rf == 0.0 {
            continue;
        }
        used += 1;
        p += if hyp > 0.0 { m / hyp } else { 0.0 };
        r += if rf > 0.0 { m / rf } else { 0.0 };
    }
    if used == 0 {
        return 0.0;
    }
    let (p, r) = (p / used as f64, r / used as f64);
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        0.0
    } else {
        100.0 * (1.0 + b2) * p * r / denom
    }
}

/// Per-sentence sufficient statistics of one metric over one corpus.
#[derive(Clone, Debug)]
pub struct ScoredCorpus {
    metric: Metric,
    cfg: MetricConfig,
    stats: Vec<Vec<f64>>,
}

fn check_lengths<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<(), MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

impl ScoredCorpus {
    pub fn new<S: AsRef<str>>(metric: Metric, hyps: &[S], refs: &[S], cfg: &MetricConfig) -> Result<Self, MetricError> {
        cfg.validate()?;
        check_lengths(hyps, refs)?;
        let tok = |s: &S| tokenize_13a(&cfg.prepare(s.as_ref()));
        let stats = match metric {
            Metric::Bleu => {
                hyps.iter().zip(refs).map(|(h, r)| bleu_sentence_stats(&tok(h), &tok(r), cfg.bleu_max_order)).collect()
            }
            Metric::Nist => {
                let ref_toks: Vec<Vec<String>> = refs.iter().map(tok).collect();
                let info = nist_information(&ref_toks, cfg.nist_max_order);
                hyps.iter()
                    .zip(&ref_toks)
                    .map(|(h, r)| nist_sentence_stats(&tok(h), r, cfg.nist_max_order, &info))
                    .collect()
            }
            Metric::Chrf2 => hyps
                .iter()
                .zip(refs)
                .map(|(h, r)| {
                    chrf_sentence_stats(
                        &cfg.prepare(h.as_ref()),
                        &cfg.prepare(r.as_ref()),
                        cfg.chrf_order,
                        cfg.chrf_whitespace,
                    )
                })
                .collect(),
        };
        Ok(ScoredCorpus { metric, cfg: cfg.clone(), stats })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn sentence_stats(&self) -> &[Vec<f64>] {
        &self.stats
    }

    /// Score from already summed statistics.
    pub fn score_from_sums(&self, sums: &[f64]) -> f64 {
        match self.metric {
            Metric::Bleu => bleu_from_stats(sums, self.cfg.bleu_max_order).score,
            Metric::Nist => nist_from_stats(sums, self.cfg.nist_max_order),
            Metric::Chrf2 => chrf_from_stats(sums, self.cfg.chrf_beta),
        }
    }

    /// Score of the multiset of sentences named by `indices`.
    pub fn score_indices(&self, indices: &[usize]) -> f64 {
        let mut sums = vec![0.0; self.stats[0].len()];
        for &i in indices {
            for (s, x) in sums.iter_mut().zip(&self.stats[i]) {
                *s += x;
            }
        }
        self.score_from_sums(&sums)
    }

    pub fn score(&self) -> f64 {
        let all: Vec<usize> = (0..self.len()).collect();
        self.score_indices(&all)
    }
}

pub fn bleu_corpus<S: AsRef<str>>(hyps: &[S], refs: &[S], cfg: &MetricConfig) -> Result<BleuScore, MetricError> {
    let c = ScoredCorpus::new(Metric::Bleu, hyps, refs, cfg)?;
    let mut sums = vec![0.0; c.stats[0].len()];
    for s in &c.stats {
        for (a, x) in sums.iter_mut().zip(s) {
            *a += x;
        }
    }
    Ok(bleu_from_stats(&sums, cfg.bleu_max_order))
}

pub fn nist_corpus<S: AsRef<str>>(hyps: &[S], refs: &[S], cfg: &MetricConfig) -> Result<f64, MetricError> {
    Ok(ScoredCorpus::new(Metric::Nist, hyps, refs, cfg)?.score())
}

pub fn chrf_corpus<S: AsRef<str>>(hyps: &[S], refs: &[S], cfg: &MetricConfig) -> Result<f64, MetricError> {
    Ok(ScoredCorpus::new(Metric::Chrf2, hyps, refs, cfg)?.score())
}

pub fn score_corpus<S: AsRef<str>>(
    metric: Metric,
    hyps: &[S],
    refs: &[S],
    cfg: &MetricConfig,
) -> Result<f64, MetricError> {
    Ok(ScoredCorpus::new(metric, hyps, refs, cfg)?.score())
}

#[cfg(test)]
mod tests;
