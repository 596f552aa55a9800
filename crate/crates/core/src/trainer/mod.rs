//! Seeded training loop with checkpoint-based early stopping.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::Graph;
use crate::model::{
    forward_graph, init_parameters, loss, Batch, Dropout, EncodedExample, ModelConfig, ModelError, ModelParameters,
    ParamVars,
};
use crate::Execution;

pub const DEFAULT_SEEDS: [u64; 3] = [347155, 42, 9457];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged at step {step}: {value}")]
    DivergedLoss { step: usize, value: f64 },
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint does not match: {0}")]
    ConfigMismatch(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Peak learning rate, reached at the end of warmup.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warmup_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.98, epsilon: 1e-9, warmup_steps: 400 }
    }
}

impl OptimizerConfig {
    /// Linear warmup to `learning_rate`, then decay with the inverse square root of the step.
    pub fn rate(&self, step: usize) -> f64 {
        let step = step.max(1) as f64;
        let warm = self.warmup_steps.max(1) as f64;
        self.learning_rate * (step / warm).min((warm / step).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seeds: Vec<u64>,
    /// Sentences per batch.
    pub batch_size: usize,
    pub checkpoint_every: usize,
    /// Checkpoints without improvement before stopping.
    pub patience: usize,
    pub max_steps: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seeds: DEFAULT_SEEDS.to_vec(),
            batch_size: 32,
            checkpoint_every: 100,
            patience: 7,
            max_steps: 20_000,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.checkpoint_every < 1 {
            return bad("checkpoint_every must be >= 1");
        }
        if self.optimizer.learning_rate.is_nan() || self.optimizer.learning_rate <= 0.0 {
            return bad("learning_rate must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub best_validation_loss: f64,
    pub best_step: usize,
    pub checkpoints_since_best: usize,
    pub loss_history: Vec<LogEntry>,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            step: 0,
            best_validation_loss: f64::INFINITY,
            best_step: 0,
            checkpoints_since_best: 0,
            loss_history: Vec::new(),
        }
    }
}

impl TrainState {
    /// Records one checkpoint evaluation; returns true when it is a new best.
    pub fn record(&mut self, entry: LogEntry) -> bool {
        self.step = entry.step;
        self.loss_history.push(entry);
        if entry.validation_loss < self.best_validation_loss {
            self.best_validation_loss = entry.validation_loss;
            self.best_step = entry.step;
            self.checkpoints_since_best = 0;
            true
        } else {
            self.checkpoints_since_best += 1;
            false
        }
    }

    /// TSV log: `step, train_loss, val_loss, since_best`, one row per checkpoint.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\ttrain_loss\tval_loss\tsince_best\n");
        let mut best = f64::INFINITY;
        let mut since = 0;
        for e in &self.loss_history {
            if e.validation_loss < best {
                best = e.validation_loss;
                since = 0;
            } else {
                since += 1;
            }
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{}", e.step, e.train_loss, e.validation_loss, since);
        }
        out
    }
}

pub fn should_stop(state: &TrainState, patience: usize) -> bool {
    state.checkpoints_since_best >= patience
}

/// Adam without weight decay.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    steps: usize,
}

impl Adam {
    pub fn step(
        &mut self,
        params: &mut ModelParameters,
        grads: &BTreeMap<String, Vec<f64>>,
        cfg: &OptimizerConfig,
        lr: f64,
    ) -> Result<(), ModelError> {
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// Length-bucketed batches in a seeded random order.
pub fn make_batches(data: &[EncodedExample], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| data[i].source.len() + data[i].target.len());
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Loss and gradients of one batch.
pub fn batch_gradients(
    params: &ModelParameters,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout: Option<Dropout<'_>>,
) -> Result<(f64, BTreeMap<String, Vec<f64>>), ModelError> {
    let mut g = Graph::new();
    let vars = ParamVars::register(&mut g, params, true);
    let lp = forward_graph(&mut g, &vars, cfg, batch, dropout)?;
    let l = loss(&mut g, lp, batch, cfg.label_smoothing)?;
    g.backward(l)?;
    let value = g.value(l).data()[0];
    let grads = vars.iter().filter_map(|(name, v)| g.grad(v).map(|gr| (name.to_string(), gr.to_vec()))).collect();
    Ok((value, grads))
}

/// Token-weighted mean cross-entropy (no smoothing) over `data`.
pub fn validation_loss(
    params: &ModelParameters,
    cfg: &ModelConfig,
    data: &[EncodedExample],
    batch_size: usize,
    exec: Execution,
) -> Result<f64, ModelError> {
    let chunks: Vec<&[EncodedExample]> = data.chunks(batch_size.max(1)).collect();
    let parts = exec.map(chunks.len(), |i| -> Result<(f64, usize), ModelError> {
        let b = Batch::new(chunks[i], cfg.max_len);
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, params, false);
        let lp = forward_graph(&mut g, &vars, cfg, &b, None)?;
        let l = loss(&mut g, lp, &b, 0.0)?;
        let n = b.target_tokens();
        Ok((g.value(l).data()[0] * n as f64, n))
    });
    let (mut total, mut tokens) = (0.0, 0usize);
    for p in parts {
        let (s, n) = p?;
        total += s;
        tokens += n;
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation checkpoint.
    pub params: ModelParameters,
    pub state: TrainState,
}

/// Trains from a seeded initialization. Initialization, batch order and
/// dropout masks are all derived from `seed`.
pub fn train(
    model_cfg: &ModelConfig,
    train_data: &[EncodedExample],
    valid_data: &[EncodedExample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    train_with(model_cfg, train_data, valid_data, cfg, seed, Execution::Sequential, |_| {})
}

/// [`train`] with a validation executor and a callback run after every checkpoint.
pub fn train_with(
    model_cfg: &ModelConfig,
    train_data: &[EncodedExample],
    valid_data: &[EncodedExample],
    cfg: &TrainConfig,
    seed: u64,
    exec: Execution,
    mut on_checkpoint: impl FnMut(&TrainState),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if valid_data.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let mut params = init_parameters(model_cfg, seed)?;
    let mut best = params.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(2);
    let mut adam = Adam::default();
    let mut state = TrainState::default();
    let (mut window_loss, mut window_n) = (0.0, 0usize);
    let mut step = 0;
    'epochs: loop {
        for idx in make_batches(train_data, cfg.batch_size, &mut shuffle_rng) {
            let examples: Vec<EncodedExample> = idx.iter().map(|&i| train_data[i].clone()).collect();
            let batch = Batch::new(&examples, model_cfg.max_len);
            let dropout = (model_cfg.dropout > 0.0).then_some(Dropout { p: model_cfg.dropout, rng: &mut dropout_rng });
            let (value, grads) = batch_gradients(&params, model_cfg, &batch, dropout)?;
            step += 1;
            if !value.is_finite() {
                return Err(TrainError::DivergedLoss { step, value });
            }
            adam.step(&mut params, &grads, &cfg.optimizer, cfg.optimizer.rate(step))?;
            window_loss += value;
            window_n += 1;
            if step % cfg.checkpoint_every == 0 || step >= cfg.max_steps {
                let val = validation_loss(&params, model_cfg, valid_data, cfg.batch_size, exec)?;
                if !val.is_finite() {
                    return Err(TrainError::DivergedLoss { step, value: val });
                }
                let entry = LogEntry { step, train_loss: window_loss / window_n as f64, validation_loss: val };
                (window_loss, window_n) = (0.0, 0);
                if state.record(entry) {
                    best = params.clone();
                }
                on_checkpoint(&state);
                if should_stop(&state, cfg.patience) || step >= cfg.max_steps {
                    break 'epochs;
                }
            }
        }
    }
    Ok(TrainOutcome { params: best, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;
    use crate::model::Arch;
    use crate::subword::EOS;

    fn entry(step: usize, v: f64) -> LogEntry {
        LogEntry { step, train_loss: v, validation_loss: v }
    }

    #[test]
    fn stopping_rule() {
        let mut s = TrainState { checkpoints_since_best: 6, ..TrainState::default() };
        assert!(!should_stop(&s, 7));
        s.checkpoints_since_best = 7;
        assert!(should_stop(&s, 7));
        s.record(entry(1, 0.5));
        assert_eq!(s.checkpoints_since_best, 0);
        assert!(!should_stop(&s, 7));
    }

    #[test]
    fn plateau_stops_after_patience_evaluations() {
        let losses = [3.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let mut s = TrainState::default();
        let mut stopped_at = None;
        for (i, &v) in losses.iter().enumerate() {
            s.record(entry(i + 1, v));
            assert!(s.checkpoints_since_best <= 7);
            if should_stop(&s, 7) {
                stopped_at = Some(i + 1);
                break;
            }
        }
        // the improvement is checkpoint 2; seven more evaluations follow it
        assert_eq!(stopped_at, Some(9));
        assert_eq!(s.best_step, 2);
        assert_eq!(s.best_validation_loss, 2.0);
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let o = OptimizerConfig { learning_rate: 1.0, warmup_steps: 4, ..OptimizerConfig::default() };
        assert_eq!(o.rate(1), 0.25);
        assert_eq!(o.rate(4), 1.0);
        assert_eq!(o.rate(16), 0.5);
    }

    #[test]
    fn adam_with_zero_gradient_is_a_no_op() {
        let mut p = ModelParameters::default();
        p.insert("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.clone();
        let grads = BTreeMap::from([("w".to_string(), vec![0.0; 3])]);
        Adam::default().step(&mut p, &grads, &OptimizerConfig::default(), 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = ModelParameters::default();
        p.insert("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let grads = BTreeMap::from([("w".to_string(), vec![0.5, -3.0])]);
        Adam::default().step(&mut p, &grads, &OptimizerConfig::default(), 0.1).unwrap();
        let w = p.get("w").unwrap().data().to_vec();
        assert!((w[0] - 0.9).abs() < 1e-9 && (w[1] - 1.1).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs() {
        for c in [
            TrainConfig { patience: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig {
                optimizer: OptimizerConfig { learning_rate: 0.0, ..OptimizerConfig::default() },
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        }
    }

    #[test]
    fn batches_cover_every_example_once() {
        let data: Vec<EncodedExample> = (0..23)
            .map(|i| EncodedExample { context: vec![EOS], source: vec![5; i % 7 + 1], target: vec![6, EOS] })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen: Vec<usize> = make_batches(&data, 4, &mut rng).concat();
        seen.sort();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
    }

    fn copy_task(n: usize, seed: u64) -> Vec<EncodedExample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(1..4);
                let mut s: Vec<usize> = (0..len).map(|_| rng.random_range(5..12)).collect();
                s.push(EOS);
                EncodedExample { context: vec![EOS], source: s.clone(), target: s }
            })
            .collect()
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            arch: Arch::MultiSource,
            d_model: 16,
            heads: 2,
            d_ff: 32,
            vocab_size: 12,
            max_len: 8,
            dropout: 0.1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (tr, va) = (copy_task(64, 1), copy_task(16, 2));
        let cfg = TrainConfig {
            batch_size: 16,
            checkpoint_every: 10,
            max_steps: 60,
            optimizer: OptimizerConfig { learning_rate: 3e-3, warmup_steps: 10, ..OptimizerConfig::default() },
            ..TrainConfig::default()
        };
        let a = train(&small_model(), &tr, &va, &cfg, 42).unwrap();
        let b = train_with(&small_model(), &tr, &va, &cfg, 42, Execution::default(), |_| {}).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.params, b.params);
        let h = &a.state.loss_history;
        assert_eq!(h.len(), 6);
        assert!(h.last().unwrap().train_loss < h[0].train_loss);
        let initial = validation_loss(
            &init_parameters(&small_model(), 42).unwrap(),
            &small_model(),
            &va,
            16,
            Execution::Sequential,
        )
        .unwrap();
        assert!(a.state.best_validation_loss < initial);
        assert_eq!(a.state.best_validation_loss, h.iter().map(|e| e.validation_loss).fold(f64::INFINITY, f64::min));
        let c = train(&small_model(), &tr, &va, &cfg, 43).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn divergence_is_reported() {
        let (tr, va) = (copy_task(8, 1), copy_task(4, 2));
        let cfg = TrainConfig {
            batch_size: 4,
            checkpoint_every: 1,
            max_steps: 30,
            optimizer: OptimizerConfig { learning_rate: 1e300, warmup_steps: 1, ..OptimizerConfig::default() },
            ..TrainConfig::default()
        };
        assert!(matches!(train(&small_model(), &tr, &va, &cfg, 0), Err(TrainError::DivergedLoss { .. })));
    }

    #[test]
    fn empty_data_is_rejected() {
        let va = copy_task(4, 2);
        assert!(matches!(
            train(&small_model(), &[], &va, &TrainConfig::default(), 0),
            Err(TrainError::EmptyDataset(_))
        ));
    }

    #[test]
    fn log_is_tab_separated() {
        let mut s = TrainState::default();
        s.record(entry(100, 2.5));
        s.record(entry(200, 2.75));
        let log = s.to_tsv();
        let rows: Vec<&str> = log.lines().collect();
        assert_eq!(rows[0], "step\ttrain_loss\tval_loss\tsince_best");
        assert_eq!(rows[2], "200\t2.750000\t2.750000\t1");
    }
}
