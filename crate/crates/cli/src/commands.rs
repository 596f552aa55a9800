use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use ctxmt_core::corefstats::{distance_histogram, fraction_beyond, parse_records};
use ctxmt_core::corpus::{
    build_contexts, load_documents, load_pool, parse_context_line, serialize_contexts, ContextConfig, ContextKind,
};
use ctxmt_core::experiment::{run_experiment, standard_runs, ExperimentData, ExperimentReport};
use ctxmt_core::fsutil::write_atomic;
use ctxmt_core::humaneval::{pairwise_score, sample_eval_items, RatingMatrix};
use ctxmt_core::metrics::{bootstrap_ci, bootstrap_paired, Metric, MetricConfig, MetricReport, ScoredCorpus};
use ctxmt_core::model::{translate_all, EncodedExample, ModelConfig};
use ctxmt_core::subword::{train_vocab, SubwordVocabulary};
use ctxmt_core::synth::generate;
use ctxmt_core::trainer::{load_checkpoint, save_checkpoint, train_with};
use ctxmt_core::Execution;

use crate::config::FileConfig;
use crate::{
    BuildContextArgs, Command, CompareArgs, CorefArgs, ExperimentArgs, HumanevalArgs, ScoreArgs, TrainArgs,
    TrainVocabArgs, TranslateArgs, UsageError,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildContext(a) => build_context(a),
        Command::TrainVocab(a) => train_vocab_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Translate(a) => translate(a),
        Command::Score(a) => score(a),
        Command::Compare(a) => compare(a),
        Command::Humaneval(a) => humaneval(a),
        Command::CorefStats(a) => coref_stats(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines: Vec<String> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect();
    if lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    Ok(lines)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, body.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn metric_config(cfg: &FileConfig, bootstrap: Option<usize>, seed: Option<u64>) -> Result<MetricConfig> {
    let mut m = cfg.experiment.metrics.clone();
    if let Some(b) = bootstrap {
        m.bootstrap_samples = b;
    }
    if let Some(s) = seed.or(cfg.seed) {
        m.bootstrap_seed = s;
    }
    m.validate().map_err(|e| usage(e.to_string()))?;
    Ok(m)
}

fn build_context(a: BuildContextArgs) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let context = match ContextKind::from(a.kind) {
        ContextKind::NContext => ContextConfig::n_context(a.n),
        ContextKind::RandomInDomain => ContextConfig::random_in_domain(a.n, seed),
        ContextKind::RandomOutOfDomain => {
            let path = a.ood_src.as_deref().ok_or_else(|| usage("--kind random-ood needs --ood-src"))?;
            ContextConfig::random_out_of_domain(a.n, seed, load_pool(path)?)
        }
    };
    let corpus = load_documents(&a.src, &a.tgt)?;
    let ds = build_contexts(&corpus, &context)?;
    let files = serialize_contexts(&ds, &a.out)?;
    println!("wrote {} examples: {}", ds.len(), files.context.display());
    Ok(())
}

fn train_vocab_cmd(a: TrainVocabArgs) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let mut lines = read_lines(&a.src)?;
    lines.extend(read_lines(&a.tgt)?);
    let vocab = train_vocab(&lines, cfg.experiment.vocab_size, a.seed.or(cfg.seed).unwrap_or(0))?;
    vocab.save(&a.out)?;
    println!("vocabulary of {} ids ({} merges) written to {}", vocab.len(), vocab.merges().len(), a.out.display());
    Ok(())
}

fn encode_files(vocab: &SubwordVocabulary, src: &Path, tgt: &Path, ctx: Option<&Path>) -> Result<Vec<EncodedExample>> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        bail!("{} has {} lines but {} has {}", src.display(), s.len(), tgt.display(), t.len());
    }
    let c = match ctx {
        Some(p) => {
            let c = read_lines(p)?;
            if c.len() != s.len() {
                bail!("{} has {} lines but {} has {}", p.display(), c.len(), src.display(), s.len());
            }
            c
        }
        None => vec![String::new(); s.len()],
    };
    Ok(s.iter()
        .zip(&t)
        .zip(&c)
        .map(|((s, t), c)| EncodedExample {
            context: vocab.encode_context(&parse_context_line(c)),
            source: vocab.encode(s),
            target: vocab.encode(t),
        })
        .collect())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let vocab = SubwordVocabulary::load(&a.vocab)?;
    let mut train_set = encode_files(&vocab, &a.src, &a.tgt, a.ctx.as_deref())?;
    let valid_set = match &cfg.valid {
        Some(v) => encode_files(&vocab, &v.src, &v.tgt, v.ctx.as_deref())?,
        None => {
            let hold = (train_set.len() / 10).max(1);
            if train_set.len() <= hold {
                bail!("need at least two training lines to hold out a validation set");
            }
            train_set.split_off(train_set.len() - hold)
        }
    };
    let exp = &cfg.experiment;
    let model = ModelConfig { vocab_size: vocab.len(), ..exp.model.clone() };
    model.validate().map_err(|e| usage(e.to_string()))?;
    let seed = a.seed.or(cfg.seed).or(exp.train.seeds.first().copied()).unwrap_or(0);
    let outcome = train_with(&model, &train_set, &valid_set, &exp.train, seed, Execution::default(), |s| {
        if let Some(e) = s.loss_history.last() {
            eprintln!(
                "step {:>6}  train {:.4}  valid {:.4}  since best {}",
                e.step, e.train_loss, e.validation_loss, s.checkpoints_since_best
            );
        }
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&outcome.params, &model, &vocab.hash(), seed, &outcome.state, &a.out)?;
    let log = PathBuf::from(format!("{}.log.tsv", a.out.display()));
    write_file(&log, &outcome.state.to_tsv())?;
    println!(
        "best validation loss {:.4} at step {} of {}; checkpoint {}",
        outcome.state.best_validation_loss,
        outcome.state.best_step,
        outcome.state.step,
        a.out.display()
    );
    Ok(())
}

fn translate(a: TranslateArgs) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let vocab = SubwordVocabulary::load(&a.vocab)?;
    let ckpt = load_checkpoint(&a.model)?;
    ckpt.verify(&vocab.hash(), None)?;
    let sources = read_lines(&a.src)?;
    let contexts = match &a.ctx {
        Some(p) => read_lines(p)?,
        None => vec![String::new(); sources.len()],
    };
    if contexts.len() != sources.len() {
        bail!("context has {} lines but source has {}", contexts.len(), sources.len());
    }
    let inputs: Vec<(Vec<usize>, Vec<usize>)> = contexts
        .iter()
        .zip(&sources)
        .map(|(c, s)| (vocab.encode_context(&parse_context_line(c)), vocab.encode(s)))
        .collect();
    let beam = a.beam.unwrap_or(cfg.experiment.beam);
    if beam == 0 {
        return Err(usage("--beam must be at least 1"));
    }
    let ids =
        translate_all(&ckpt.params, &ckpt.config, &inputs, beam, cfg.experiment.max_decode_len, Execution::default())?;
    let mut out = String::new();
    for t in &ids {
        out.push_str(&vocab.decode(t)?);
        out.push('\n');
    }
    match &a.out {
        Some(p) => write_file(p, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn load_pair(hyp: &Path, tgt: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let (h, r) = (read_lines(hyp)?, read_lines(tgt)?);
    if h.len() != r.len() {
        bail!("{} has {} lines but {} has {}", hyp.display(), h.len(), tgt.display(), r.len());
    }
    Ok((h, r))
}

fn score(a: ScoreArgs) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let mc = metric_config(&cfg, a.bootstrap, a.seed)?;
    let (h, r) = load_pair(&a.hyp, &a.tgt)?;
    let metrics: Vec<Metric> =
        if a.metric.is_empty() { Metric::ALL.to_vec() } else { a.metric.iter().map(|&m| m.into()).collect() };
    let mut tsv = format!("{}\n", MetricReport::TSV_HEADER);
    for metric in metrics {
        let corpus = ScoredCorpus::new(metric, &h, &r, &mc)?;
        let ci = bootstrap_ci(&corpus, mc.bootstrap_samples, mc.bootstrap_seed, Execution::default())?;
        let report = MetricReport { metric, ci };
        println!("{report}");
        tsv.push_str(&report.tsv_row());
        tsv.push('\n');
    }
    if let Some(p) = &a.out {
        write_file(p, &tsv)?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    if a.hyp.len() != 2 {
        return Err(usage(format!("compare needs exactly two --hyp files, got {}", a.hyp.len())));
    }
    let cfg = FileConfig::load(a.config.as_deref())?;
    let mc = metric_config(&cfg, a.bootstrap, a.seed)?;
    let metric: Metric = a.metric.into();
    let (ha, r) = load_pair(&a.hyp[0], &a.tgt)?;
    let (hb, _) = load_pair(&a.hyp[1], &a.tgt)?;
    let ca = ScoredCorpus::new(metric, &ha, &r, &mc)?;
    let cb = ScoredCorpus::new(metric, &hb, &r, &mc)?;
    let exec = Execution::default();
    let ia = bootstrap_ci(&ca, mc.bootstrap_samples, mc.bootstrap_seed, exec)?;
    let ib = bootstrap_ci(&cb, mc.bootstrap_samples, mc.bootstrap_seed, exec)?;
    let a_wins = bootstrap_paired(&ca, &cb, mc.bootstrap_samples, mc.bootstrap_seed, exec)?;
    let b_wins = bootstrap_paired(&cb, &ca, mc.bootstrap_samples, mc.bootstrap_seed, exec)?;
    let mut text = String::new();
    let _ = writeln!(text, "system\t{metric}\thalf_width\tbetter_fraction");
    let _ = writeln!(text, "{}\t{:.4}\t{:.4}\t{:.4}", a.hyp[0].display(), ia.point, ia.half_width, a_wins);
    let _ = writeln!(text, "{}\t{:.4}\t{:.4}\t{:.4}", a.hyp[1].display(), ib.point, ib.half_width, b_wins);
    let _ = writeln!(text, "p_value_a_not_better\t{:.4}", 1.0 - a_wins);
    print!("{text}");
    if let Some(p) = &a.out {
        write_file(p, &text)?;
    }
    Ok(())
}

fn humaneval(a: HumanevalArgs) -> Result<()> {
    let text = fs::read_to_string(&a.ratings).with_context(|| format!("reading {}", a.ratings.display()))?;
    let mut m = RatingMatrix::from_tsv(&text)?;
    if let Some(n) = a.n {
        let keep = sample_eval_items(m.items(), n, a.seed.unwrap_or(0))?;
        let rows: Vec<Vec<i8>> = m.rows().map(<[i8]>::to_vec).collect();
        m = RatingMatrix::new(keep.iter().map(|&i| rows[i].iter().map(|&v| v as i64).collect()).collect())?;
    }
    let result = pairwise_score(&m);
    println!("{result}");
    if let Some(p) = &a.out {
        let body = format!(
            "items\traters\twins\tlosses\tties\tscore\tagreement\tkappa\n{}\t{}\t{}\t{}\t{}\t{:.2}\t{:.4}\t{:.4}\n",
            m.items(),
            m.raters(),
            result.wins,
            result.losses,
            result.ties,
            result.score,
            result.agreement,
            result.kappa
        );
        write_file(p, &body)?;
    }
    Ok(())
}

fn coref_stats(a: CorefArgs) -> Result<()> {
    let text = fs::read_to_string(&a.records).with_context(|| format!("reading {}", a.records.display()))?;
    let records = parse_records(&text)?;
    let hist = distance_histogram(&records)?;
    print!("{}", hist.to_csv());
    println!("antecedents more than {} sentences back: {:.2}%", a.n, 100.0 * fraction_beyond(&records, a.n)?);
    if let Some(dir) = &a.out {
        write_file(&dir.join("histogram.csv"), &hist.to_csv())?;
        write_file(&dir.join("histogram.svg"), &hist.to_svg("Antecedent distance"))?;
    }
    Ok(())
}

fn runs_tsv(report: &ExperimentReport) -> String {
    let mut s = String::from("config\tseed\tbleu\tci_low\tci_high\thalf_width\texact\tsteps\tbest_valid_loss\n");
    for row in &report.rows {
        for r in &row.runs {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{:.6}",
                r.name,
                r.seed,
                r.bleu.point,
                r.bleu.low,
                r.bleu.high,
                r.bleu.half_width,
                r.accuracy,
                r.steps,
                r.best_validation_loss
            );
        }
    }
    s
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let cfg = FileConfig::load(a.config.as_deref())?;
    let mut exp = cfg.experiment.clone();
    if let Some(b) = a.beam {
        if b == 0 {
            return Err(usage("--beam must be at least 1"));
        }
        exp.beam = b;
    }
    if let Some(b) = a.bootstrap {
        exp.metrics.bootstrap_samples = b;
    }
    let seed = a.seed.or(cfg.seed);
    if let Some(s) = seed {
        exp.metrics.bootstrap_seed = s;
    }
    exp.metrics.validate().map_err(|e| usage(e.to_string()))?;
    let data = match &cfg.data {
        Some(d) => {
            let ood = a.ood_src.as_deref().or(d.ood_src.as_deref());
            ExperimentData {
                train: load_documents(&d.train_src, &d.train_tgt)?,
                valid: load_documents(&d.valid_src, &d.valid_tgt)?,
                test: load_documents(&d.test_src, &d.test_tgt)?,
                ood_pool: ood.map(load_pool).transpose()?.map(Into::into),
            }
        }
        None => {
            let mut synth = cfg.synth.clone();
            if let Some(s) = seed {
                synth.seed = s;
            }
            let t = generate(&synth);
            let ood_pool = match &a.ood_src {
                Some(p) => load_pool(p)?.into(),
                None => t.ood_pool,
            };
            ExperimentData { train: t.train, valid: t.valid, test: t.test, ood_pool: Some(ood_pool) }
        }
    };
    if data.ood_pool.is_none() {
        return Err(usage("the 3-random-ood configuration needs --ood-src or data.ood_src"));
    }
    let runs = standard_runs();
    let report = run_experiment(&data, &exp, &runs, Execution::default(), |r| {
        eprintln!(
            "{:<13} seed {:<7} BLEU {:6.2}  exact {:6.2}%  {} steps  {:.0}s",
            r.name,
            r.seed,
            r.bleu.point,
            100.0 * r.accuracy,
            r.steps,
            r.seconds
        );
    })?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_file(&a.out.join("report.csv"), &report.to_csv())?;
    write_file(&a.out.join("report.txt"), &report.to_table())?;
    write_file(&a.out.join("report.svg"), &report.to_svg())?;
    write_file(&a.out.join("runs.tsv"), &runs_tsv(&report))?;
    for row in &report.rows {
        for r in &row.runs {
            let mut body = r.hypotheses.join("\n");
            body.push('\n');
            write_file(&a.out.join("hyps").join(format!("{}.seed{}.txt", r.name, r.seed)), &body)?;
        }
    }
    print!("{}", report.to_table());
    Ok(())
}
