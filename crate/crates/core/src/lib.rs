//! Toolkit for multi-source context-aware neural machine translation.
//!
//! The crate covers the whole experimental loop at desk scale:
//!
//! * [`corpus`]: document-aligned corpora and the n-context / random context datasets,
//! * [`subword`]: a shared byte-pair-encoding vocabulary,
//! * [`autograd`] and [`model`]: a reverse-mode tensor core and the baseline and
//!   dual-encoder transformers built on it,
//! * [`trainer`]: seeded Adam training with patience-based early stopping and checkpoints,
//! * [`metrics`]: BLEU, NIST, ChrF2 and paired bootstrap resampling,
//! * [`humaneval`]: pairwise human-judgement aggregation and free-marginal kappa,
//! * [`corefstats`]: antecedent-distance histograms,
//! * [`synth`] and [`experiment`]: a synthetic anaphora task and the end-to-end runner.

pub mod autograd;
pub mod corefstats;
pub mod corpus;
pub mod exec;
pub mod experiment;
pub mod fsutil;
pub mod humaneval;
pub mod metrics;
pub mod model;
pub mod subword;
pub mod svg;
pub mod synth;
pub mod trainer;

pub use exec::Execution;
