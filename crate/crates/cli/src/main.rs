mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctxmt_core::corpus::ContextKind;
use ctxmt_core::metrics::Metric;

/// Context-aware NMT experiments at desk scale.
#[derive(Debug, Parser)]
#[command(name = "ctxmt", version, about, after_help = "Set CTXMT_THREADS to cap the number of worker threads.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a document corpus into line-aligned context/source/target files.
    BuildContext(BuildContextArgs),
    /// Learn a shared subword vocabulary from source and target text.
    TrainVocab(TrainVocabArgs),
    /// Train a model on line-aligned files and write a checkpoint.
    Train(TrainArgs),
    /// Translate source sentences with a trained checkpoint.
    Translate(TranslateArgs),
    /// Score a system output with bootstrap confidence intervals.
    Score(ScoreArgs),
    /// Paired bootstrap comparison of two system outputs.
    Compare(CompareArgs),
    /// Aggregate pairwise human judgments.
    Humaneval(HumanevalArgs),
    /// Antecedent distance histogram from a mention-pair TSV.
    CorefStats(CorefArgs),
    /// Train and evaluate every context configuration over all seeds.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Ncontext,
    RandomInd,
    RandomOod,
}

impl From<KindArg> for ContextKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Ncontext => ContextKind::NContext,
            KindArg::RandomInd => ContextKind::RandomInDomain,
            KindArg::RandomOod => ContextKind::RandomOutOfDomain,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Bleu,
    Nist,
    Chrf2,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Bleu => Metric::Bleu,
            MetricArg::Nist => Metric::Nist,
            MetricArg::Chrf2 => Metric::Chrf2,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildContextArgs {
    /// Source side, documents separated by blank lines.
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Maximum number of context sentences.
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Ncontext)]
    pub kind: KindArg,
    /// One sentence per line; required for random-ood.
    #[arg(long)]
    pub ood_src: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainVocabArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Vocabulary file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Line-aligned source sentences.
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Line-aligned context file (TAB-separated sentences); empty context if omitted.
    #[arg(long)]
    pub ctx: Option<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint file to write; the training log goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub ctx: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Beam width; 1 is greedy.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// System output, one sentence per line.
    #[arg(long)]
    pub hyp: PathBuf,
    /// Reference translations.
    #[arg(long)]
    pub tgt: PathBuf,
    /// Repeatable; all three metrics if omitted.
    #[arg(long, value_enum)]
    pub metric: Vec<MetricArg>,
    /// Number of bootstrap resamples.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// TSV report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Give exactly twice: system A, then system B.
    #[arg(long, num_args = 1, required = true)]
    pub hyp: Vec<PathBuf>,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Bleu)]
    pub metric: MetricArg,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HumanevalArgs {
    /// TSV with columns item_id, rater_id, vote.
    pub ratings: PathBuf,
    /// Aggregate over a seeded sample of this many items.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorefArgs {
    /// TSV with columns doc_id, sentence_idx, antecedent_sentence_idx.
    pub records: PathBuf,
    /// Report the share of antecedents more than this many sentences back.
    #[arg(long, default_value_t = 2)]
    pub n: i64,
    /// Directory for the CSV histogram and SVG chart.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Without a `[data]` section the synthetic anaphora task is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for synthetic data generation and bootstrap resampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ood_src: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Output directory for reports and translations.
    #[arg(long)]
    pub out: PathBuf,
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn configure_threads() -> Result<(), UsageError> {
    let Ok(v) = std::env::var("CTXMT_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("CTXMT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsageError(format!("cannot configure thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().map_err(anyhow::Error::from).and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("Run `ctxmt --help` for usage.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
