use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{LogEntry, TrainError, TrainState};
use crate::autograd::Tensor;
use crate::fsutil::{sha256_hex, write_atomic};
use crate::model::{ModelConfig, ModelParameters};

const MAGIC: &str = "ctxmt-checkpoint 1";
const END: &str = "end-header";

/// Everything stored in a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub seed: u64,
    pub state: TrainState,
    pub params: ModelParameters,
}

impl Checkpoint {
    /// Rejects a checkpoint trained with another vocabulary or model shape.
    pub fn verify(&self, vocab_hash: &str, config: Option<&ModelConfig>) -> Result<(), TrainError> {
        if self.vocab_hash != vocab_hash {
            return Err(TrainError::ConfigMismatch(format!("vocabulary hash {} vs {vocab_hash}", self.vocab_hash)));
        }
        if let Some(c) = config {
            if c != &self.config {
                return Err(TrainError::ConfigMismatch("model config differs".into()));
            }
        }
        Ok(())
    }
}

fn payload(params: &ModelParameters) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, t) in params.iter() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend(x.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    params: &ModelParameters,
    cfg: &ModelConfig,
    vocab_hash: &str,
    seed: u64,
    state: &TrainState,
    path: &Path,
) -> Result<(), TrainError> {
    let body = payload(params);
    let mut header = format!("{MAGIC}\n");
    for (k, v) in cfg.to_header() {
        let _ = writeln!(header, "model.{k}={v}");
    }
    let _ = writeln!(header, "vocab_hash={vocab_hash}");
    let _ = writeln!(header, "seed={seed}");
    let _ = writeln!(header, "state.step={}", state.step);
    let _ = writeln!(header, "state.best_validation_loss={}", state.best_validation_loss);
    let _ = writeln!(header, "state.best_step={}", state.best_step);
    let _ = writeln!(header, "state.checkpoints_since_best={}", state.checkpoints_since_best);
    let history: Vec<String> =
        state.loss_history.iter().map(|e| format!("{},{},{}", e.step, e.train_loss, e.validation_loss)).collect();
    let _ = writeln!(header, "state.history={}", history.join(";"));
    let _ = writeln!(header, "tensors={}", params.len());
    let _ = writeln!(header, "payload_bytes={}", body.len());
    let _ = writeln!(header, "payload_sha256={}", sha256_hex(&body));
    let _ = writeln!(header, "{END}");
    let mut bytes = header.into_bytes();
    bytes.extend(body);
    write_atomic(path, &bytes).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
}

fn corrupt(m: impl Into<String>) -> TrainError {
    TrainError::CorruptCheckpoint(m.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], TrainError> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("payload truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse_history(s: &str) -> Result<Vec<LogEntry>, TrainError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|row| {
            let f: Vec<&str> = row.split(',').collect();
            let bad = || corrupt(format!("bad history row {row:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(LogEntry {
                step: f[0].parse().map_err(|_| bad())?,
                train_loss: f[1].parse().map_err(|_| bad())?,
                validation_loss: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let marker = format!("\n{END}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| corrupt("header not terminated"))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("header is not UTF-8"))?;
    let body = &bytes[split + marker.len()..];
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("not a checkpoint file"));
    }
    let mut kv = BTreeMap::new();
    for line in lines {
        let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("bad header line {line:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| corrupt(format!("missing {k}")));
    fn num<T: std::str::FromStr>(s: &str, k: &str) -> Result<T, TrainError> {
        s.parse().map_err(|_| corrupt(format!("bad value for {k}")))
    }
    let expected_len: usize = num(get("payload_bytes")?, "payload_bytes")?;
    if body.len() != expected_len {
        return Err(corrupt(format!("payload has {} bytes, header says {expected_len}", body.len())));
    }
    if sha256_hex(body) != get("payload_sha256")? {
        return Err(corrupt("payload checksum mismatch"));
    }
    let model_kv: BTreeMap<String, String> =
        kv.iter().filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k.to_string(), v.clone()))).collect();
    let config = ModelConfig::from_header(&model_kv).map_err(|e| corrupt(e.to_string()))?;
    let state = TrainState {
        step: num(get("state.step")?, "state.step")?,
        best_validation_loss: num(get("state.best_validation_loss")?, "state.best_validation_loss")?,
        best_step: num(get("state.best_step")?, "state.best_step")?,
        checkpoints_since_best: num(get("state.checkpoints_since_best")?, "state.checkpoints_since_best")?,
        loss_history: parse_history(get("state.history")?)?,
    };
    let count: usize = num(get("tensors")?, "tensors")?;
    let mut r = Reader { buf: body, pos: 0 };
    let mut params = ModelParameters::default();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| corrupt("tensor name is not UTF-8"))?.to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel =
            shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor too large"))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.insert(name, Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?);
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    params.check_layout(&config).map_err(|e| corrupt(e.to_string()))?;
    Ok(Checkpoint {
        config,
        vocab_hash: get("vocab_hash")?.to_string(),
        seed: num(get("seed")?, "seed")?,
        state,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, Arch};

    fn fixture() -> (ModelParameters, ModelConfig, TrainState) {
        let cfg = ModelConfig {
            arch: Arch::MultiSource,
            d_model: 8,
            heads: 2,
            d_ff: 16,
            vocab_size: 16,
            dropout: 0.1,
            ..ModelConfig::default()
        };
        let params = init_parameters(&cfg, 9).unwrap();
        let mut state = TrainState::default();
        state.record(LogEntry { step: 100, train_loss: 2.0 / 3.0, validation_loss: 0.1 + 0.2 });
        state.record(LogEntry { step: 200, train_loss: 1e-300, validation_loss: 0.5 });
        (params, cfg, state)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (params, cfg, state) = fixture();
        save_checkpoint(&params, &cfg, "abc", 42, &state, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.params, params);
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.state, state);
        assert_eq!(ck.seed, 42);
        ck.verify("abc", Some(&cfg)).unwrap();
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (params, cfg, state) = fixture();
        save_checkpoint(&params, &cfg, "abc", 1, &state, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(parse(&bytes[..cut]), Err(TrainError::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x40;
        assert!(matches!(parse(&flipped), Err(TrainError::CorruptCheckpoint(_))));
        assert!(matches!(parse(b"hello"), Err(TrainError::CorruptCheckpoint(_))));
    }

    #[test]
    fn mismatched_vocabulary_or_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (params, cfg, state) = fixture();
        save_checkpoint(&params, &cfg, "abc", 1, &state, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert!(matches!(ck.verify("other", None), Err(TrainError::ConfigMismatch(_))));
        let other = ModelConfig { layers: 2, ..cfg };
        assert!(matches!(ck.verify("abc", Some(&other)), Err(TrainError::ConfigMismatch(_))));
    }
}
