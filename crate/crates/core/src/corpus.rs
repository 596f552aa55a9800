//! Document-aligned parallel corpora and context datasets.
//!
//! Corpus files hold one sentence per line with documents separated by a single
//! blank line. A [`ContextConfig`] turns a corpus into one [`ContextualExample`]
//! per sentence pair, where the context is either the preceding sentences of the
//! same document or randomly drawn sentences (in-domain or from a separate pool).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fsutil::write_atomic;

/// Separator between context sentences on a context-file line.
pub const CONTEXT_SEPARATOR: char = '\t';

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("source and target are misaligned: {0}")]
    MisalignedCorpus(String),
    #[error("illegal character {ch:?} in {side} line {line}")]
    IllegalCharacter { side: &'static str, line: usize, ch: char },
    #[error("empty document in {side} near line {line}")]
    EmptyDocument { side: &'static str, line: usize },
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("random out-of-domain context needs a sentence pool")]
    MissingPool,
    #[error("out-of-domain pool shares sentence {0:?} with the corpus")]
    PoolOverlap(String),
    #[error("no sentences available to sample context from")]
    PoolTooSmall,
    #[error("malformed context files: {0}")]
    MalformedContextFiles(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<SentencePair>,
}

/// Ordered documents of aligned sentence pairs. Construction validates that
/// documents are non-empty, ids are unique and no sentence contains a TAB or newline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelDocumentCorpus {
    documents: Vec<Document>,
}

fn check_sentence(s: &str, side: &'static str, line: usize) -> Result<(), CorpusError> {
    match s.chars().find(|c| matches!(c, '\t' | '\n' | '\r')) {
        Some(ch) => Err(CorpusError::IllegalCharacter { side, line, ch }),
        None => Ok(()),
    }
}

impl ParallelDocumentCorpus {
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        let mut line = 0;
        for doc in &documents {
            if doc.sentences.is_empty() {
                return Err(CorpusError::EmptyDocument { side: "corpus", line });
            }
            if !ids.insert(doc.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDocId(doc.doc_id.clone()));
            }
            for pair in &doc.sentences {
                line += 1;
                check_sentence(&pair.source, "source", line)?;
                check_sentence(&pair.target, "target", line)?;
            }
        }
        Ok(ParallelDocumentCorpus { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn source_sentences(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flat_map(|d| d.sentences.iter().map(|p| p.source.as_str()))
    }

    pub fn target_sentences(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flat_map(|d| d.sentences.iter().map(|p| p.target.as_str()))
    }
}

/// Split file text into blank-line separated blocks of sentences.
fn split_blocks(text: &str, side: &'static str) -> Result<Vec<Vec<String>>, CorpusError> {
    let mut blocks: Vec<Vec<String>> = Vec::new();
    let mut current = Vec::new();
    let mut lines: Vec<&str> = text.split('\n').collect();
    // trailing terminators do not open a new document
    while lines.last().is_some_and(|l| l.trim_end_matches('\r').is_empty()) {
        lines.pop();
    }
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            if current.is_empty() {
                return Err(CorpusError::EmptyDocument { side, line: i + 1 });
            }
            blocks.push(std::mem::take(&mut current));
        } else {
            check_sentence(line, side, i + 1)?;
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    Ok(blocks)
}

/// Parse corpus text pairs (see [`load_documents`]).
pub fn parse_documents(source: &str, target: &str) -> Result<ParallelDocumentCorpus, CorpusError> {
    let src = split_blocks(source, "source")?;
    let tgt = split_blocks(target, "target")?;
    if src.len() != tgt.len() {
        return Err(CorpusError::MisalignedCorpus(format!(
            "{} source documents vs {} target documents",
            src.len(),
            tgt.len()
        )));
    }
    let width = src.len().to_string().len().max(4);
    let mut documents = Vec::with_capacity(src.len());
    for (i, (s, t)) in src.into_iter().zip(tgt).enumerate() {
        if s.len() != t.len() {
            return Err(CorpusError::MisalignedCorpus(format!(
                "document {i} has {} source and {} target sentences",
                s.len(),
                t.len()
            )));
        }
        documents.push(Document {
            doc_id: format!("d{i:0width$}"),
            sentences: s.into_iter().zip(t).map(|(source, target)| SentencePair { source, target }).collect(),
        });
    }
    ParallelDocumentCorpus::new(documents)
}

/// Load a source/target file pair with identical blank-line document structure.
pub fn load_documents(source: &Path, target: &Path) -> Result<ParallelDocumentCorpus, CorpusError> {
    let s = fs::read_to_string(source).map_err(io_err(source))?;
    let t = fs::read_to_string(target).map_err(io_err(target))?;
    parse_documents(&s, &t)
}

/// Read a plain sentence pool (one sentence per line, blank lines ignored).
pub fn load_pool(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut pool = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        check_sentence(line, "pool", i + 1)?;
        pool.push(line.to_string());
    }
    Ok(pool)
}

/// Write a corpus in the blank-line separated format.
pub fn write_documents(corpus: &ParallelDocumentCorpus, source: &Path, target: &Path) -> Result<(), CorpusError> {
    let render = |side: fn(&SentencePair) -> &str| {
        let mut out = String::new();
        for (i, doc) in corpus.documents.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for pair in &doc.sentences {
                out.push_str(side(pair));
                out.push('\n');
            }
        }
        out
    };
    write_atomic(source, render(|p| &p.source).as_bytes()).map_err(io_err(source))?;
    write_atomic(target, render(|p| &p.target).as_bytes()).map_err(io_err(target))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextKind {
    NContext,
    RandomInDomain,
    RandomOutOfDomain,
}

impl ContextKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::NContext => "ncontext",
            ContextKind::RandomInDomain => "random-ind",
            ContextKind::RandomOutOfDomain => "random-ood",
        }
    }
}

impl std::str::FromStr for ContextKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ncontext" => Ok(ContextKind::NContext),
            "random-ind" => Ok(ContextKind::RandomInDomain),
            "random-ood" => Ok(ContextKind::RandomOutOfDomain),
            other => Err(format!("unknown context kind {other:?} (expected ncontext, random-ind, random-ood)")),
        }
    }
}

/// How many context slots a random configuration fills per sentence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CountPolicy {
    /// `min(n, position)`, the same count the n-context configuration would give.
    #[default]
    MirrorPosition,
    /// Always exactly `n`.
    Fixed,
}

#[derive(Clone, Debug)]
pub struct ContextConfig {
    pub kind: ContextKind,
    pub n: usize,
    pub rng_seed: u64,
    pub ood_pool: Option<Arc<[String]>>,
    pub count_policy: CountPolicy,
}

impl ContextConfig {
    pub fn n_context(n: usize) -> Self {
        ContextConfig {
            kind: ContextKind::NContext,
            n,
            rng_seed: 0,
            ood_pool: None,
            count_policy: CountPolicy::MirrorPosition,
        }
    }

    pub fn random_in_domain(n: usize, rng_seed: u64) -> Self {
        ContextConfig { kind: ContextKind::RandomInDomain, rng_seed, ..Self::n_context(n) }
    }

    pub fn random_out_of_domain(n: usize, rng_seed: u64, pool: impl Into<Arc<[String]>>) -> Self {
        ContextConfig {
            kind: ContextKind::RandomOutOfDomain,
            rng_seed,
            ood_pool: Some(pool.into()),
            ..Self::n_context(n)
        }
    }

    fn count(&self, position: usize) -> usize {
        match (self.kind, self.count_policy) {
            (ContextKind::NContext, _) | (_, CountPolicy::MirrorPosition) => self.n.min(position),
            (_, CountPolicy::Fixed) => self.n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextualExample {
    pub context: Vec<String>,
    pub source: String,
    pub target: String,
    pub doc_id: String,
    pub position: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextualDataset {
    pub examples: Vec<ContextualExample>,
}

impl ContextualDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Materialize one example per sentence pair under `cfg`, in corpus order.
pub fn build_contexts(corpus: &ParallelDocumentCorpus, cfg: &ContextConfig) -> Result<ContextualDataset, CorpusError> {
    let all_sources: Vec<&str> = corpus.source_sentences().collect();
    let pool: Option<&[String]> = match cfg.kind {
        ContextKind::RandomOutOfDomain => {
            let pool = cfg.ood_pool.as_deref().ok_or(CorpusError::MissingPool)?;
            if pool.is_empty() {
                return Err(CorpusError::MissingPool);
            }
            let corpus_set: HashSet<&str> = all_sources.iter().copied().collect();
            for (i, s) in pool.iter().enumerate() {
                check_sentence(s, "pool", i + 1)?;
                if s.is_empty() {
                    return Err(CorpusError::EmptyDocument { side: "pool", line: i + 1 });
                }
                if corpus_set.contains(s.as_str()) {
                    return Err(CorpusError::PoolOverlap(s.clone()));
                }
            }
            Some(pool)
        }
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut examples = Vec::with_capacity(all_sources.len());
    let mut global = 0usize;
    for doc in corpus.documents() {
        for (position, pair) in doc.sentences.iter().enumerate() {
            let count = cfg.count(position);
            let context: Vec<String> = match cfg.kind {
                ContextKind::NContext => {
                    doc.sentences[position - count..position].iter().map(|p| p.source.clone()).collect()
                }
                ContextKind::RandomInDomain => {
                    if count > 0 && all_sources.len() < 2 {
                        return Err(CorpusError::PoolTooSmall);
                    }
                    (0..count)
                        .map(|_| {
                            // uniform over every other sentence of the corpus
                            let mut j = rng.random_range(0..all_sources.len() - 1);
                            if j >= global {
                                j += 1;
                            }
                            all_sources[j].to_string()
                        })
                        .collect()
                }
                ContextKind::RandomOutOfDomain => {
                    let pool = pool.expect("validated above");
                    (0..count).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
                }
            };
            examples.push(ContextualExample {
                context,
                source: pair.source.clone(),
                target: pair.target.clone(),
                doc_id: doc.doc_id.clone(),
                position,
            });
            global += 1;
        }
    }
    Ok(ContextualDataset { examples })
}

/// Paths of the line-aligned files written by [`serialize_contexts`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextFiles {
    pub context: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
    pub index: PathBuf,
}

impl ContextFiles {
    pub fn in_dir(dir: &Path) -> Self {
        ContextFiles {
            context: dir.join("context.txt"),
            source: dir.join("source.txt"),
            target: dir.join("target.txt"),
            index: dir.join("index.tsv"),
        }
    }
}

/// Context line: the context sentences joined by a single TAB, empty when there is no context.
pub fn context_line(context: &[String]) -> String {
    context.join("\t")
}

pub fn parse_context_line(line: &str) -> Vec<String> {
    if line.is_empty() {
        Vec::new()
    } else {
        line.split(CONTEXT_SEPARATOR).map(str::to_string).collect()
    }
}

/// Write `context.txt`, `source.txt`, `target.txt` (line aligned) plus `index.tsv`
/// (`doc_id`, `position`) into `dir`.
pub fn serialize_contexts(ds: &ContextualDataset, dir: &Path) -> Result<ContextFiles, CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = ContextFiles::in_dir(dir);
    let mut ctx = String::new();
    let mut src = String::new();
    let mut tgt = String::new();
    let mut idx = String::new();
    for ex in &ds.examples {
        ctx.push_str(&context_line(&ex.context));
        ctx.push('\n');
        src.push_str(&ex.source);
        src.push('\n');
        tgt.push_str(&ex.target);
        tgt.push('\n');
        idx.push_str(&format!("{}\t{}\n", ex.doc_id, ex.position));
    }
    for (path, body) in [(&files.context, ctx), (&files.source, src), (&files.target, tgt), (&files.index, idx)] {
        write_atomic(path, body.as_bytes()).map_err(io_err(path))?;
    }
    Ok(files)
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines: Vec<String> = text.split('\n').map(str::to_string).collect();
    if lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    Ok(lines)
}

/// Inverse of [`serialize_contexts`].
pub fn deserialize_contexts(files: &ContextFiles) -> Result<ContextualDataset, CorpusError> {
    let ctx = read_lines(&files.context)?;
    let src = read_lines(&files.source)?;
    let tgt = read_lines(&files.target)?;
    let idx = read_lines(&files.index)?;
    if ctx.len() != src.len() || src.len() != tgt.len() || tgt.len() != idx.len() {
        return Err(CorpusError::MalformedContextFiles(format!(
            "line counts differ: context {}, source {}, target {}, index {}",
            ctx.len(),
            src.len(),
            tgt.len(),
            idx.len()
        )));
    }
    let mut examples = Vec::with_capacity(src.len());
    for (i, (((c, s), t), ix)) in ctx.into_iter().zip(src).zip(tgt).zip(idx).enumerate() {
        let (doc_id, pos) = ix
            .split_once('\t')
            .ok_or_else(|| CorpusError::MalformedContextFiles(format!("index line {} lacks a TAB", i + 1)))?;
        let position = pos
            .parse()
            .map_err(|_| CorpusError::MalformedContextFiles(format!("index line {}: bad position {pos:?}", i + 1)))?;
        examples.push(ContextualExample {
            context: parse_context_line(&c),
            source: s,
            target: t,
            doc_id: doc_id.to_string(),
            position,
        });
    }
    Ok(ContextualDataset { examples })
}
