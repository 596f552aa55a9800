use crate::subword::{BOS, EOS, PAD};

/// One example as subword ids. Every sequence ends with EOS; an empty context is `[EOS]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub context: Vec<usize>,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Row-major `rows x cols` id matrix padded with PAD, plus the true length of each row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedIds {
    pub ids: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub lengths: Vec<usize>,
}

impl PaddedIds {
    /// Pads `seqs` to a common width. Sequences longer than `max_len` are
    /// truncated and re-terminated with EOS.
    pub fn from_sequences<S: AsRef<[usize]>>(seqs: &[S], max_len: usize) -> Self {
        let clipped: Vec<Vec<usize>> = seqs
            .iter()
            .map(|s| {
                let s = s.as_ref();
                if s.is_empty() {
                    vec![EOS]
                } else if s.len() > max_len {
                    let mut v = s[..max_len].to_vec();
                    v[max_len - 1] = EOS;
                    v
                } else {
                    s.to_vec()
                }
            })
            .collect();
        let cols = clipped.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = vec![PAD; clipped.len() * cols];
        for (r, s) in clipped.iter().enumerate() {
            ids[r * cols..r * cols + s.len()].copy_from_slice(s);
        }
        PaddedIds { ids, rows: clipped.len(), cols, lengths: clipped.iter().map(Vec::len).collect() }
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.ids[r * self.cols..r * self.cols + self.lengths[r]]
    }

    /// `[rows, cols]` key-padding mask: true where a column is past the row's length.
    pub fn padding_mask(&self) -> Vec<bool> {
        let mut m = Vec::with_capacity(self.rows * self.cols);
        for &len in &self.lengths {
            m.extend((0..self.cols).map(|c| c >= len));
        }
        m
    }
}

/// Teacher-forced training batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub context: PaddedIds,
    pub source: PaddedIds,
    /// Gold output ids (the loss targets).
    pub target: PaddedIds,
    /// Decoder input: BOS followed by the target shifted right.
    pub decoder_input: PaddedIds,
}

impl Batch {
    pub fn new(examples: &[EncodedExample], max_len: usize) -> Self {
        let context: Vec<&[usize]> = examples.iter().map(|e| e.context.as_slice()).collect();
        let source: Vec<&[usize]> = examples.iter().map(|e| e.source.as_slice()).collect();
        let target: Vec<&[usize]> = examples.iter().map(|e| e.target.as_slice()).collect();
        let target = PaddedIds::from_sequences(&target, max_len);
        Batch {
            context: PaddedIds::from_sequences(&context, max_len),
            source: PaddedIds::from_sequences(&source, max_len),
            decoder_input: shift_right(&target),
            target,
        }
    }

    pub fn len(&self) -> usize {
        self.source.rows
    }

    pub fn is_empty(&self) -> bool {
        self.source.rows == 0
    }

    /// Number of non-PAD target tokens.
    pub fn target_tokens(&self) -> usize {
        self.target.lengths.iter().sum()
    }
}

fn shift_right(target: &PaddedIds) -> PaddedIds {
    let mut ids = vec![PAD; target.ids.len()];
    for r in 0..target.rows {
        let len = target.lengths[r];
        let base = r * target.cols;
        if len > 0 {
            ids[base] = BOS;
            ids[base + 1..base + len].copy_from_slice(&target.ids[base..base + len - 1]);
        }
    }
    PaddedIds { ids, rows: target.rows, cols: target.cols, lengths: target.lengths.clone() }
}
