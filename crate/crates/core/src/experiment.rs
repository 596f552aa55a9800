//! End-to-end runs over context configurations and seeds.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_contexts, ContextConfig, ContextKind, CorpusError, ParallelDocumentCorpus};
use crate::metrics::{bootstrap_ci, ConfidenceInterval};
use crate::metrics::{Metric, MetricConfig, MetricError, ScoredCorpus};
use crate::model::{translate_all, Arch, EncodedExample, ModelConfig, ModelError};
use crate::subword::{train_vocab, SubwordError, SubwordVocabulary};
use crate::svg::{bar_chart, Bar};
use crate::trainer::{train, TrainConfig, TrainError};
use crate::Execution;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("configuration {0} needs an out-of-domain sentence pool")]
    MissingPool(String),
    #[error("no seeds configured")]
    NoSeeds,
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSpec {
    pub name: String,
    pub arch: Arch,
    pub kind: ContextKind,
    pub n: usize,
}

impl RunSpec {
    pub fn baseline() -> Self {
        RunSpec { name: "baseline".into(), arch: Arch::Baseline, kind: ContextKind::NContext, n: 0 }
    }

    pub fn n_context(n: usize) -> Self {
        RunSpec { name: format!("{n}-context"), arch: Arch::MultiSource, kind: ContextKind::NContext, n }
    }

    pub fn random(kind: ContextKind, n: usize) -> Self {
        let suffix = match kind {
            ContextKind::RandomOutOfDomain => "random-ood",
            _ => "random-ind",
        };
        RunSpec { name: format!("{n}-{suffix}"), arch: Arch::MultiSource, kind, n }
    }
}

/// baseline, 0..=4-context, 3-random-ind, 3-random-ood.
pub fn standard_runs() -> Vec<RunSpec> {
    let mut runs = vec![RunSpec::baseline()];
    runs.extend((0..=4).map(RunSpec::n_context));
    runs.push(RunSpec::random(ContextKind::RandomInDomain, 3));
    runs.push(RunSpec::random(ContextKind::RandomOutOfDomain, 3));
    runs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_size: usize,
    pub metrics: MetricConfig,
    pub beam: usize,
    pub max_decode_len: usize,
}

/// Defaults sized for the synthetic task: a one-layer model and a step cap
/// that keeps the full seed sweep within a few minutes per configuration.
impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig { dropout: 0.1, ..ModelConfig::default() },
            train: TrainConfig { max_steps: 3000, ..TrainConfig::default() },
            vocab_size: 64,
            metrics: MetricConfig::default(),
            beam: 1,
            max_decode_len: 32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: ParallelDocumentCorpus,
    pub valid: ParallelDocumentCorpus,
    pub test: ParallelDocumentCorpus,
    pub ood_pool: Option<Arc<[String]>>,
}

impl ExperimentData {
    /// Shared vocabulary over training sources, targets and the out-of-domain pool.
    pub fn train_vocab(&self, size: usize, seed: u64) -> Result<SubwordVocabulary, SubwordError> {
        let mut lines: Vec<&str> = self.train.source_sentences().chain(self.train.target_sentences()).collect();
        if let Some(pool) = &self.ood_pool {
            lines.extend(pool.iter().map(String::as_str));
        }
        train_vocab(&lines, size, seed)
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub name: String,
    pub seed: u64,
    pub bleu: ConfidenceInterval,
    /// Fraction of test sentences translated exactly.
    pub accuracy: f64,
    pub steps: usize,
    pub best_validation_loss: f64,
    pub seconds: f64,
    pub hypotheses: Vec<String>,
}

fn context_config(spec: &RunSpec, data: &ExperimentData, rng_seed: u64) -> Result<ContextConfig, ExperimentError> {
    Ok(match (spec.arch, spec.kind) {
        (Arch::Baseline, _) => ContextConfig::n_context(0),
        (_, ContextKind::NContext) => ContextConfig::n_context(spec.n),
        (_, ContextKind::RandomInDomain) => ContextConfig::random_in_domain(spec.n, rng_seed),
        (_, ContextKind::RandomOutOfDomain) => {
            let pool = data.ood_pool.clone().ok_or_else(|| ExperimentError::MissingPool(spec.name.clone()))?;
            ContextConfig::random_out_of_domain(spec.n, rng_seed, pool)
        }
    })
}

struct Encoded {
    examples: Vec<EncodedExample>,
    targets: Vec<String>,
}

fn encode_split(
    corpus: &ParallelDocumentCorpus,
    cfg: &ContextConfig,
    vocab: &SubwordVocabulary,
) -> Result<Encoded, ExperimentError> {
    let ds = build_contexts(corpus, cfg)?;
    let examples = ds
        .examples
        .iter()
        .map(|e| EncodedExample {
            context: vocab.encode_context(&e.context),
            source: vocab.encode(&e.source),
            target: vocab.encode(&e.target),
        })
        .collect();
    let targets = ds.examples.into_iter().map(|e| e.target).collect();
    Ok(Encoded { examples, targets })
}

/// Trains and evaluates one configuration with one seed.
pub fn run_single(
    data: &ExperimentData,
    vocab: &SubwordVocabulary,
    cfg: &ExperimentConfig,
    spec: &RunSpec,
    seed: u64,
) -> Result<RunResult, ExperimentError> {
    let start = Instant::now();
    let split = |corpus, k: u64| -> Result<Encoded, ExperimentError> {
        let cc = context_config(spec, data, seed.wrapping_mul(31).wrapping_add(k))?;
        encode_split(corpus, &cc, vocab)
    };
    let train_set = split(&data.train, 0)?;
    let valid_set = split(&data.valid, 1)?;
    let test_set = split(&data.test, 2)?;
    let model = ModelConfig { arch: spec.arch, vocab_size: vocab.len(), ..cfg.model.clone() };
    let outcome = train(&model, &train_set.examples, &valid_set.examples, &cfg.train, seed)?;
    let inputs: Vec<(Vec<usize>, Vec<usize>)> =
        test_set.examples.iter().map(|e| (e.context.clone(), e.source.clone())).collect();
    let ids = translate_all(&outcome.params, &model, &inputs, cfg.beam, cfg.max_decode_len, Execution::Sequential)?;
    let hypotheses = ids.iter().map(|t| vocab.decode(t)).collect::<Result<Vec<_>, _>>()?;
    let exact = hypotheses.iter().zip(&test_set.targets).filter(|(h, r)| h == r).count();
    let scored = ScoredCorpus::new(Metric::Bleu, &hypotheses, &test_set.targets, &cfg.metrics)?;
    let bleu = bootstrap_ci(&scored, cfg.metrics.bootstrap_samples, cfg.metrics.bootstrap_seed, Execution::Sequential)?;
    Ok(RunResult {
        name: spec.name.clone(),
        seed,
        bleu,
        accuracy: exact as f64 / hypotheses.len().max(1) as f64,
        steps: outcome.state.step,
        best_validation_loss: outcome.state.best_validation_loss,
        seconds: start.elapsed().as_secs_f64(),
        hypotheses,
    })
}

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub name: String,
    pub runs: Vec<RunResult>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl ReportRow {
    pub fn mean_bleu(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.bleu.point))
    }

    /// Mean of the per-seed bootstrap half-widths.
    pub fn mean_half_width(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.bleu.half_width))
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(self.runs.iter().map(|r| r.accuracy))
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("config,bleu_mean,bleu_half_width,accuracy_mean,seeds,per_seed_bleu,per_seed_accuracy\n");
        for r in &self.rows {
            let seeds: Vec<String> = r.runs.iter().map(|x| x.seed.to_string()).collect();
            let bleu: Vec<String> = r.runs.iter().map(|x| format!("{:.4}", x.bleu.point)).collect();
            let acc: Vec<String> = r.runs.iter().map(|x| format!("{:.4}", x.accuracy)).collect();
            let _ = writeln!(
                s,
                "{},{:.4},{:.4},{:.4},{},{},{}",
                r.name,
                r.mean_bleu(),
                r.mean_half_width(),
                r.mean_accuracy(),
                seeds.join(";"),
                bleu.join(";"),
                acc.join(";")
            );
        }
        s
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    format!("{:.2} ± {:.2}", r.mean_bleu(), r.mean_half_width()),
                    format!("{:.2}", 100.0 * r.mean_accuracy()),
                ]
            })
            .collect();
        let header = ["config".to_string(), "BLEU".to_string(), "exact %".to_string()];
        let widths: Vec<usize> =
            (0..3).map(|i| cells.iter().chain([&header]).map(|c| c[i].chars().count()).max().unwrap_or(0)).collect();
        let line = |c: &[String; 3]| {
            format!("{:<w0$}  {:>w1$}  {:>w2$}\n", c[0], c[1], c[2], w0 = widths[0], w1 = widths[1], w2 = widths[2])
        };
        let mut s = line(&header);
        s.push_str(&format!("{}\n", "-".repeat(widths.iter().sum::<usize>() + 4)));
        for c in &cells {
            s.push_str(&line(c));
        }
        s
    }

    /// Bar chart of mean BLEU with half-width error bars.
    pub fn to_svg(&self) -> String {
        let bars: Vec<Bar> = self
            .rows
            .iter()
            .map(|r| Bar { label: r.name.clone(), value: r.mean_bleu(), error: Some(r.mean_half_width()) })
            .collect();
        bar_chart("BLEU by context configuration", "configuration", "BLEU", &bars)
    }
}

/// Runs every `(spec, seed)` pair. Independent runs go through `exec`; each run
/// is itself sequential, so results do not depend on the executor.
pub fn run_experiment(
    data: &ExperimentData,
    cfg: &ExperimentConfig,
    runs: &[RunSpec],
    exec: Execution,
    on_run: impl Fn(&RunResult) + Sync,
) -> Result<ExperimentReport, ExperimentError> {
    if cfg.train.seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    let vocab = data.train_vocab(cfg.vocab_size, cfg.train.seeds[0])?;
    let jobs: Vec<(usize, u64)> = (0..runs.len()).flat_map(|i| cfg.train.seeds.iter().map(move |&s| (i, s))).collect();
    let results = exec.map(jobs.len(), |j| {
        let (i, seed) = jobs[j];
        let r = run_single(data, &vocab, cfg, &runs[i], seed);
        if let Ok(r) = &r {
            on_run(r);
        }
        r
    });
    let mut rows: Vec<ReportRow> = runs.iter().map(|s| ReportRow { name: s.name.clone(), runs: Vec::new() }).collect();
    for ((i, _), r) in jobs.into_iter().zip(results) {
        rows[i].runs.push(r?);
    }
    Ok(ExperimentReport { rows })
}
