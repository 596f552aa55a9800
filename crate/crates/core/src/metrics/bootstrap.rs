use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Metric, MetricError, ScoredCorpus};
use crate::Execution;

/// Sentence indices of resample `i`, drawn with replacement from an RNG stream
/// derived from `(seed, i)`.
pub fn resample_indices(n: usize, seed: u64, i: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub half_width: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// 95% percentile interval from `samples` bootstrap resamples.
pub fn bootstrap_ci(
    corpus: &ScoredCorpus,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ConfidenceInterval, MetricError> {
    let n = corpus.len();
    if n < 2 {
        return Err(MetricError::CorpusTooSmall(n));
    }
    if samples < 1 {
        return Err(MetricError::InvalidConfig("bootstrap_samples must be >= 1".into()));
    }
    let mut scores = exec.map(samples, |i| corpus.score_indices(&resample_indices(n, seed, i)));
    scores.sort_by(f64::total_cmp);
    let (low, high) = (percentile(&scores, 2.5), percentile(&scores, 97.5));
    Ok(ConfidenceInterval { point: corpus.score(), low, high, half_width: (high - low) / 2.0, samples, seed })
}

/// Fraction of shared resamples on which system `a` scores strictly higher than `b`.
pub fn bootstrap_paired(
    a: &ScoredCorpus,
    b: &ScoredCorpus,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch { hyps: a.len(), refs: b.len() });
    }
    if a.metric() != b.metric() {
        return Err(MetricError::InvalidConfig("paired systems must use the same metric".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricError::CorpusTooSmall(n));
    }
    if samples < 1 {
        return Err(MetricError::InvalidConfig("bootstrap_samples must be >= 1".into()));
    }
    let wins = exec.map(samples, |i| {
        let idx = resample_indices(n, seed, i);
        a.score_indices(&idx) > b.score_indices(&idx)
    });
    Ok(wins.iter().filter(|&&w| w).count() as f64 / samples as f64)
}

/// One scored metric with its interval.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    pub ci: ConfidenceInterval,
}

impl MetricReport {
    pub const TSV_HEADER: &'static str = "metric\tscore\tci_low\tci_high\thalf_width\tB\tseed";

    pub fn tsv_row(&self) -> String {
        let c = &self.ci;
        format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            self.metric, c.point, c.low, c.high, c.half_width, c.samples, c.seed
        )
    }

    /// `score ± half_width` with two decimals.
    pub fn plus_minus(&self) -> String {
        format!("{:.2} ± {:.2}", self.ci.point, self.ci.half_width)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} (95% percentile half-width, B={}, seed={})",
            self.metric,
            self.plus_minus(),
            self.ci.samples,
            self.ci.seed
        )
    }
}
