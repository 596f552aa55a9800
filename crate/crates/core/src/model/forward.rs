use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AttentionOrder, Batch, ModelConfig, ModelError, ModelParameters, PaddedIds, LAYER_NORM_EPS};
use crate::autograd::{Graph, Tensor, Var};
use crate::subword::PAD;

/// Parameters registered as nodes of one graph.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Adds every parameter to `g`, tracked for gradients when `trainable`.
    pub fn register(g: &mut Graph, params: &ModelParameters, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable { g.param(Arc::clone(t)) } else { g.constant(Arc::clone(t)) };
                (name.to_string(), v)
            })
            .collect();
        ParamVars { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Inverted dropout driven by a caller-owned generator.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: &'r mut ChaCha8Rng,
}

/// Fixed sinusoidal position table, `[len, d]`.
fn positional_encoding(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[len, d], |i| {
        let (pos, j) = ((i / d) as f64, i % d);
        let angle = pos / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// `[B, H, Tq, Tk]` attention mask built from a `[B, Tk]` key-padding mask.
fn attention_mask(key_pad: &[bool], b: usize, heads: usize, tq: usize, tk: usize, causal: bool) -> Vec<bool> {
    let mut m = Vec::with_capacity(b * heads * tq * tk);
    for bi in 0..b {
        let keys = &key_pad[bi * tk..(bi + 1) * tk];
        for _ in 0..heads {
            for q in 0..tq {
                m.extend(keys.iter().enumerate().map(|(k, &pad)| pad || (causal && k > q)));
            }
        }
    }
    m
}

struct Net<'a, 'r> {
    g: &'a mut Graph,
    p: &'a ParamVars,
    cfg: &'a ModelConfig,
    dropout: Option<Dropout<'r>>,
}

impl Net<'_, '_> {
    fn w(&self, name: &str) -> Result<Var, ModelError> {
        self.p.get(name)
    }

    fn drop(&mut self, x: Var) -> Result<Var, ModelError> {
        let Some(d) = self.dropout.as_mut() else { return Ok(x) };
        if d.p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - d.p);
        let shape = self.g.shape(x).to_vec();
        let mask = Tensor::from_fn(&shape, |_| if d.rng.random::<f64>() < d.p { 0.0 } else { keep });
        let m = self.g.constant(mask);
        Ok(self.g.mul(x, m)?)
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var, ModelError> {
        let (w, b) = (self.w(w)?, self.w(b)?);
        let y = self.g.matmul(x, w)?;
        Ok(self.g.add(y, b)?)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let (gain, bias) = (self.w(&format!("{prefix}.gain"))?, self.w(&format!("{prefix}.bias"))?);
        Ok(self.g.layer_norm(x, gain, bias, LAYER_NORM_EPS)?)
    }

    fn split_heads(&mut self, x: Var) -> Result<Var, ModelError> {
        let s = self.g.shape(x).to_vec();
        let h = self.cfg.heads;
        let r = self.g.reshape(x, &[s[0], s[1], h, s[2] / h])?;
        Ok(self.g.permute(r, &[0, 2, 1, 3])?)
    }

    fn attention(&mut self, prefix: &str, query: Var, memory: Var, mask: &[bool]) -> Result<Var, ModelError> {
        let q = self.linear(query, &format!("{prefix}.q.w"), &format!("{prefix}.q.b"))?;
        let k = self.linear(memory, &format!("{prefix}.k.w"), &format!("{prefix}.k.b"))?;
        let v = self.linear(memory, &format!("{prefix}.v.w"), &format!("{prefix}.v.b"))?;
        let (q, k, v) = (self.split_heads(q)?, self.split_heads(k)?, self.split_heads(v)?);
        let kt = self.g.transpose(k)?;
        let scores = self.g.matmul(q, kt)?;
        let dh = (self.cfg.d_model / self.cfg.heads) as f64;
        let scores = self.g.scale(scores, 1.0 / dh.sqrt());
        let scores = self.g.masked_fill(scores, mask)?;
        let att = self.g.softmax(scores);
        let ctx = self.g.matmul(att, v)?;
        let ctx = self.g.permute(ctx, &[0, 2, 1, 3])?;
        let s = self.g.shape(ctx).to_vec();
        let ctx = self.g.reshape(ctx, &[s[0], s[1], s[2] * s[3]])?;
        self.linear(ctx, &format!("{prefix}.o.w"), &format!("{prefix}.o.b"))
    }

    fn ffn(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let h = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
        let h = self.g.relu(h);
        self.linear(h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    /// Pre-norm residual block: `x + dropout(f(norm(x)))`.
    fn residual(
        &mut self,
        x: Var,
        norm: &str,
        f: impl FnOnce(&mut Self, Var) -> Result<Var, ModelError>,
    ) -> Result<Var, ModelError> {
        let h = self.norm(x, norm)?;
        let y = f(self, h)?;
        let y = self.drop(y)?;
        Ok(self.g.add(x, y)?)
    }

    fn embed(&mut self, ids: &PaddedIds) -> Result<Var, ModelError> {
        let d = self.cfg.d_model;
        if ids.cols > self.cfg.max_len {
            return Err(ModelError::ShapeMismatch(format!(
                "sequence of {} exceeds max_len {}",
                ids.cols, self.cfg.max_len
            )));
        }
        if let Some(&bad) = ids.ids.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(ModelError::ShapeMismatch(format!(
                "token id {bad} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        let table = self.w("embed")?;
        let e = self.g.embedding(table, &ids.ids, &[ids.rows, ids.cols])?;
        let e = self.g.scale(e, (d as f64).sqrt());
        let pe = self.g.constant(positional_encoding(ids.cols, d));
        let x = self.g.add(e, pe)?;
        self.drop(x)
    }

    fn encoder(&mut self, prefix: &str, ids: &PaddedIds) -> Result<Var, ModelError> {
        let mask = attention_mask(&ids.padding_mask(), ids.rows, self.cfg.heads, ids.cols, ids.cols, false);
        let mut x = self.embed(ids)?;
        for l in 0..self.cfg.layers {
            let att = format!("{prefix}.{l}.self");
            x = self.residual(x, &format!("{prefix}.{l}.ln_self"), |n, h| n.attention(&att, h, h, &mask))?;
            let ffn = format!("{prefix}.{l}.ffn");
            x = self.residual(x, &format!("{prefix}.{l}.ln_ffn"), |n, h| n.ffn(h, &ffn))?;
        }
        self.norm(x, &format!("{prefix}.ln_final"))
    }

    fn context_encoder_prefix(&self) -> &'static str {
        if self.cfg.share_encoders {
            "src_enc"
        } else {
            "ctx_enc"
        }
    }

    fn decoder(&mut self, input: &PaddedIds, src: &Memory, ctx: Option<&Memory>) -> Result<Var, ModelError> {
        let (b, t, heads) = (input.rows, input.cols, self.cfg.heads);
        let self_mask = attention_mask(&input.padding_mask(), b, heads, t, t, true);
        let src_mask = attention_mask(&src.key_pad, b, heads, t, src.cols, false);
        let ctx_mask = ctx.map(|c| attention_mask(&c.key_pad, b, heads, t, c.cols, false));
        let mut x = self.embed(input)?;
        for l in 0..self.cfg.layers {
            let att = format!("dec.{l}.self");
            x = self.residual(x, &format!("dec.{l}.ln_self"), |n, h| n.attention(&att, h, h, &self_mask))?;
            let src_block = |n: &mut Self, x: Var| {
                let att = format!("dec.{l}.src");
                n.residual(x, &format!("dec.{l}.ln_src"), |n, h| n.attention(&att, h, src.var, &src_mask))
            };
            let ctx_block = |n: &mut Self, x: Var| match (ctx, &ctx_mask) {
                (Some(c), Some(m)) => {
                    let att = format!("dec.{l}.ctx");
                    n.residual(x, &format!("dec.{l}.ln_ctx"), |n, h| n.attention(&att, h, c.var, m))
                }
                _ => Ok(x),
            };
            x = match self.cfg.ctx_attention_order {
                AttentionOrder::SourceThenContext => {
                    let x = src_block(self, x)?;
                    ctx_block(self, x)?
                }
                AttentionOrder::ContextThenSource => {
                    let x = ctx_block(self, x)?;
                    src_block(self, x)?
                }
            };
            let ffn = format!("dec.{l}.ffn");
            x = self.residual(x, &format!("dec.{l}.ln_ffn"), |n, h| n.ffn(h, &ffn))?;
        }
        let x = self.norm(x, "dec.ln_final")?;
        let table = self.w("embed")?;
        let out = self.g.transpose(table)?;
        let logits = self.g.matmul(x, out)?;
        let bias = self.w("out.bias")?;
        let logits = self.g.add(logits, bias)?;
        Ok(self.g.log_softmax(logits))
    }
}

struct Memory {
    var: Var,
    key_pad: Vec<bool>,
    cols: usize,
}

/// Log-probabilities `[B, T_tgt, vocab]` built on `g`. Dropout is applied only when given.
pub fn forward_graph(
    g: &mut Graph,
    p: &ParamVars,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout: Option<Dropout<'_>>,
) -> Result<Var, ModelError> {
    let mut net = Net { g, p, cfg, dropout };
    let src = net.encoder("src_enc", &batch.source)?;
    let src = Memory { var: src, key_pad: batch.source.padding_mask(), cols: batch.source.cols };
    let ctx = if cfg.has_context_encoder() {
        let prefix = net.context_encoder_prefix();
        let var = net.encoder(prefix, &batch.context)?;
        Some(Memory { var, key_pad: batch.context.padding_mask(), cols: batch.context.cols })
    } else {
        None
    };
    for rows in [batch.context.rows, batch.target.rows, batch.decoder_input.rows] {
        if rows != batch.source.rows && (rows != 0 || cfg.has_context_encoder()) {
            return Err(ModelError::ShapeMismatch(format!("batch rows {rows} vs {}", batch.source.rows)));
        }
    }
    net.decoder(&batch.decoder_input, &src, ctx.as_ref())
}

/// Inference forward pass: per-token log-probabilities `[B, T_tgt, vocab]`.
pub fn forward(params: &ModelParameters, cfg: &ModelConfig, batch: &Batch) -> Result<Tensor, ModelError> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false);
    let out = forward_graph(&mut g, &p, cfg, batch, None)?;
    Ok(g.value(out).clone())
}

/// Mean label-smoothed NLL of `logprobs` against the batch targets, PAD excluded.
pub fn loss(g: &mut Graph, logprobs: Var, batch: &Batch, label_smoothing: f64) -> Result<Var, ModelError> {
    Ok(g.smoothed_nll(logprobs, &batch.target.ids, label_smoothing, PAD)?)
}

/// Encoder outputs for a single example, reused across decoding steps.
#[derive(Clone, Debug)]
pub struct EncoderMemory {
    src: Arc<Tensor>,
    src_len: usize,
    ctx: Option<(Arc<Tensor>, usize)>,
}

/// Runs the encoders once for one (context, source) pair.
pub fn encode_memory(
    params: &ModelParameters,
    cfg: &ModelConfig,
    context: &[usize],
    source: &[usize],
) -> Result<EncoderMemory, ModelError> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false);
    let mut net = Net { g: &mut g, p: &p, cfg, dropout: None };
    let src_ids = PaddedIds::from_sequences(&[source], cfg.max_len);
    let src = net.encoder("src_enc", &src_ids)?;
    let ctx = if cfg.has_context_encoder() {
        let ctx_ids = PaddedIds::from_sequences(&[context], cfg.max_len);
        let prefix = net.context_encoder_prefix();
        Some((net.encoder(prefix, &ctx_ids)?, ctx_ids.cols))
    } else {
        None
    };
    Ok(EncoderMemory {
        src: Arc::new(g.value(src).clone()),
        src_len: src_ids.cols,
        ctx: ctx.map(|(v, n)| (Arc::new(g.value(v).clone()), n)),
    })
}

/// Next-token log-probabilities after `BOS + prefix`.
pub(super) fn next_token_logprobs(
    params: &ModelParameters,
    cfg: &ModelConfig,
    memory: &EncoderMemory,
    prefix: &[usize],
) -> Result<Vec<f64>, ModelError> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false);
    let mut input = Vec::with_capacity(prefix.len() + 1);
    input.push(crate::subword::BOS);
    input.extend_from_slice(prefix);
    let input = PaddedIds { rows: 1, cols: input.len(), lengths: vec![input.len()], ids: input };
    let src =
        Memory { var: g.constant(Arc::clone(&memory.src)), key_pad: vec![false; memory.src_len], cols: memory.src_len };
    let ctx =
        memory.ctx.as_ref().map(|(t, n)| Memory { var: g.constant(Arc::clone(t)), key_pad: vec![false; *n], cols: *n });
    let mut net = Net { g: &mut g, p: &p, cfg, dropout: None };
    let out = net.decoder(&input, &src, ctx.as_ref())?;
    let v = cfg.vocab_size;
    let data = g.value(out).data();
    Ok(data[data.len() - v..].to_vec())
}

/// Sum of gold-token log-probabilities of each target row (PAD excluded).
pub fn sequence_log_prob(params: &ModelParameters, cfg: &ModelConfig, batch: &Batch) -> Result<Vec<f64>, ModelError> {
    let lp = forward(params, cfg, batch)?;
    let (t, v) = (batch.target.cols, cfg.vocab_size);
    Ok((0..batch.target.rows)
        .map(|r| (0..batch.target.lengths[r]).map(|c| lp.data()[(r * t + c) * v + batch.target.ids[r * t + c]]).sum())
        .collect())
}
