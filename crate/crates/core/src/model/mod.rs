//! Baseline and multi-source transformer translation models.
//!
//! Both architectures share one token-embedding table between the encoders,
//! the decoder input and the output projection. The multi-source model adds a
//! context encoder and, in every decoder layer, a second cross-attention block
//! stacked on the source cross-attention (order configurable).

mod batch;
mod decode;
mod forward;

pub use batch::{Batch, EncodedExample, PaddedIds};
pub use decode::{
    beam_search, decode_beam, decode_greedy, greedy_search, translate_all, Hypothesis, ModelScorer, StepScorer,
};
pub use forward::{encode_memory, forward, forward_graph, loss, sequence_log_prob, Dropout, EncoderMemory, ParamVars};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{AutogradError, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Baseline,
    MultiSource,
}

/// Order of the two decoder cross-attention blocks in the multi-source model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionOrder {
    #[default]
    SourceThenContext,
    ContextThenSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub ctx_attention_order: AttentionOrder,
    /// Run the context through the source encoder's layers instead of its own.
    pub share_encoders: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::MultiSource,
            layers: 1,
            d_model: 32,
            heads: 2,
            d_ff: 64,
            vocab_size: 64,
            max_len: 64,
            dropout: 0.0,
            label_smoothing: 0.1,
            ctx_attention_order: AttentionOrder::SourceThenContext,
            share_encoders: false,
        }
    }
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Baseline => "baseline",
            Arch::MultiSource => "multi-source",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Arch::Baseline),
            "multi-source" => Ok(Arch::MultiSource),
            _ => Err(format!("unknown arch {s:?}")),
        }
    }
}

impl AttentionOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionOrder::SourceThenContext => "source-then-context",
            AttentionOrder::ContextThenSource => "context-then-source",
        }
    }
}

impl std::str::FromStr for AttentionOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "source-then-context" => Ok(AttentionOrder::SourceThenContext),
            "context-then-source" => Ok(AttentionOrder::ContextThenSource),
            _ => Err(format!("unknown attention order {s:?}")),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        for (name, v) in [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.vocab_size <= crate::subword::NUM_RESERVED {
            return bad(format!("vocab_size {} leaves no room for real tokens", self.vocab_size));
        }
        for (name, p) in [("dropout", self.dropout), ("label_smoothing", self.label_smoothing)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn has_context_encoder(&self) -> bool {
        self.arch == Arch::MultiSource
    }

    /// Stable `key=value` lines, used in checkpoint headers.
    pub fn to_header(&self) -> Vec<(String, String)> {
        vec![
            ("arch".into(), self.arch.as_str().into()),
            ("layers".into(), self.layers.to_string()),
            ("d_model".into(), self.d_model.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("d_ff".into(), self.d_ff.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("max_len".into(), self.max_len.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("label_smoothing".into(), self.label_smoothing.to_string()),
            ("ctx_attention_order".into(), self.ctx_attention_order.as_str().into()),
            ("share_encoders".into(), self.share_encoders.to_string()),
        ]
    }

    pub fn from_header(kv: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<T, ModelError> {
            kv.get(k)
                .ok_or_else(|| ModelError::InvalidConfig(format!("missing {k}")))?
                .parse()
                .map_err(|_| ModelError::InvalidConfig(format!("bad value for {k}")))
        }
        let cfg = ModelConfig {
            arch: get(kv, "arch")?,
            layers: get(kv, "layers")?,
            d_model: get(kv, "d_model")?,
            heads: get(kv, "heads")?,
            d_ff: get(kv, "d_ff")?,
            vocab_size: get(kv, "vocab_size")?,
            max_len: get(kv, "max_len")?,
            dropout: get(kv, "dropout")?,
            label_smoothing: get(kv, "label_smoothing")?,
            ctx_attention_order: get(kv, "ctx_attention_order")?,
            share_encoders: get(kv, "share_encoders")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Embedding,
    Zeros,
    Ones,
}

fn attention_shapes(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    for p in ["q", "k", "v", "o"] {
        out.push((format!("{prefix}.{p}.w"), vec![d, d], Init::Xavier { fan_in: d, fan_out: d }));
        out.push((format!("{prefix}.{p}.b"), vec![d], Init::Zeros));
    }
}

fn norm_shapes(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    out.push((format!("{prefix}.gain"), vec![d], Init::Ones));
    out.push((format!("{prefix}.bias"), vec![d], Init::Zeros));
}

fn ffn_shapes(prefix: &str, d: usize, ff: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    out.push((format!("{prefix}.w1"), vec![d, ff], Init::Xavier { fan_in: d, fan_out: ff }));
    out.push((format!("{prefix}.b1"), vec![ff], Init::Zeros));
    out.push((format!("{prefix}.w2"), vec![ff, d], Init::Xavier { fan_in: ff, fan_out: d }));
    out.push((format!("{prefix}.b2"), vec![d], Init::Zeros));
}

fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, ff) = (cfg.d_model, cfg.d_ff);
    let mut out = vec![
        ("embed".to_string(), vec![cfg.vocab_size, d], Init::Embedding),
        ("out.bias".to_string(), vec![cfg.vocab_size], Init::Zeros),
    ];
    let mut encoders = vec!["src_enc"];
    if cfg.has_context_encoder() && !cfg.share_encoders {
        encoders.push("ctx_enc");
    }
    for enc in encoders {
        for l in 0..cfg.layers {
            attention_shapes(&format!("{enc}.{l}.self"), d, &mut out);
            norm_shapes(&format!("{enc}.{l}.ln_self"), d, &mut out);
            ffn_shapes(&format!("{enc}.{l}.ffn"), d, ff, &mut out);
            norm_shapes(&format!("{enc}.{l}.ln_ffn"), d, &mut out);
        }
        norm_shapes(&format!("{enc}.ln_final"), d, &mut out);
    }
    for l in 0..cfg.layers {
        attention_shapes(&format!("dec.{l}.self"), d, &mut out);
        norm_shapes(&format!("dec.{l}.ln_self"), d, &mut out);
        attention_shapes(&format!("dec.{l}.src"), d, &mut out);
        norm_shapes(&format!("dec.{l}.ln_src"), d, &mut out);
        if cfg.has_context_encoder() {
            attention_shapes(&format!("dec.{l}.ctx"), d, &mut out);
            norm_shapes(&format!("dec.{l}.ln_ctx"), d, &mut out);
        }
        ffn_shapes(&format!("dec.{l}.ffn"), d, ff, &mut out);
        norm_shapes(&format!("dec.{l}.ln_ffn"), d, &mut out);
    }
    norm_shapes("dec.ln_final", d, &mut out);
    out
}

/// Named parameter tensors of one model, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParameters {
    tensors: BTreeMap<String, Arc<Tensor>>,
}

impl ModelParameters {
    pub fn get(&self, name: &str) -> Result<&Arc<Tensor>, ModelError> {
        self.tensors.get(name).ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ModelError> {
        self.tensors.get_mut(name).map(Arc::make_mut).ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), Arc::new(t));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<Tensor>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.is_finite())
    }

    /// Check that names and shapes match what `cfg` requires.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let layout = parameter_layout(cfg);
        if layout.len() != self.tensors.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} parameters present, config needs {}",
                self.tensors.len(),
                layout.len()
            )));
        }
        for (name, shape, _) in layout {
            let t = self.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ShapeMismatch(format!("{name}: {:?} vs {shape:?}", t.shape())));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ModelParameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.tensors {
            writeln!(f, "{k} {:?}", v.shape())?;
        }
        Ok(())
    }
}

/// Number of scalars the parameters of `cfg` hold.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    parameter_layout(cfg).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
}

/// Seeded initialization: Xavier-uniform linear weights, `N(0, d_model^-1/2)`
/// embeddings, unit layer-norm gains and zero biases.
pub fn init_parameters(cfg: &ModelConfig, seed: u64) -> Result<ModelParameters, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (cfg.d_model as f64).powf(-0.5)).expect("positive std");
    let mut params = ModelParameters::default();
    for (name, shape, init) in parameter_layout(cfg) {
        let t = match init {
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(&shape, |_| rng.random_range(-a..a))
            }
            Init::Embedding => Tensor::from_fn(&shape, |_| normal.sample(&mut rng)),
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::full(&shape, 1.0),
        };
        params.insert(name, t);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(arch: Arch) -> ModelConfig {
        ModelConfig { arch, vocab_size: 16, d_model: 8, d_ff: 16, ..ModelConfig::default() }
    }

    #[test]
    fn init_is_deterministic() {
        let c = cfg(Arch::MultiSource);
        assert_eq!(init_parameters(&c, 5).unwrap(), init_parameters(&c, 5).unwrap());
        assert_ne!(init_parameters(&c, 5).unwrap(), init_parameters(&c, 6).unwrap());
    }

    #[test]
    fn baseline_has_no_context_parameters() {
        let p = init_parameters(&cfg(Arch::Baseline), 0).unwrap();
        assert!(p.names().all(|n| !n.starts_with("ctx_enc") && !n.contains(".ctx.") && !n.contains("ln_ctx")));
    }

    #[test]
    fn multi_source_is_larger() {
        let b = parameter_count(&cfg(Arch::Baseline));
        let m = parameter_count(&cfg(Arch::MultiSource));
        assert!(m > b);
        assert_eq!(init_parameters(&cfg(Arch::MultiSource), 1).unwrap().count(), m);
        let mut shared = cfg(Arch::MultiSource);
        shared.share_encoders = true;
        assert!(parameter_count(&shared) < m && parameter_count(&shared) > b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg(Arch::Baseline);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = cfg(Arch::Baseline);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg(Arch::Baseline);
        c.layers = 0;
        assert!(init_parameters(&c, 0).is_err());
    }

    #[test]
    fn header_round_trip() {
        let mut c = cfg(Arch::MultiSource);
        c.dropout = 0.15;
        c.ctx_attention_order = AttentionOrder::ContextThenSource;
        let kv: BTreeMap<String, String> = c.to_header().into_iter().collect();
        assert_eq!(ModelConfig::from_header(&kv).unwrap(), c);
    }

    #[test]
    fn layout_check_detects_foreign_parameters() {
        let p = init_parameters(&cfg(Arch::Baseline), 0).unwrap();
        assert!(p.check_layout(&cfg(Arch::Baseline)).is_ok());
        assert!(p.check_layout(&cfg(Arch::MultiSource)).is_err());
    }
}
