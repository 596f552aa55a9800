use super::forward::next_token_logprobs;
use super::{encode_memory, EncoderMemory, ModelConfig, ModelError, ModelParameters};
use crate::subword::{BOS, EOS, PAD, SEP};
use crate::Execution;

/// Anything that can score the next token given the tokens generated so far.
pub trait StepScorer {
    fn next_logprobs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError>;
}

/// Trained model bound to one encoded (context, source) pair.
pub struct ModelScorer<'a> {
    params: &'a ModelParameters,
    cfg: &'a ModelConfig,
    memory: EncoderMemory,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        params: &'a ModelParameters,
        cfg: &'a ModelConfig,
        context: &[usize],
        source: &[usize],
    ) -> Result<Self, ModelError> {
        Ok(ModelScorer { params, cfg, memory: encode_memory(params, cfg, context, source)? })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn next_logprobs(&self, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut lp = next_token_logprobs(self.params, self.cfg, &self.memory, prefix)?;
        // never emit structural tokens
        for id in [PAD, BOS, SEP] {
            if id < lp.len() {
                lp[id] = f64::NEG_INFINITY;
            }
        }
        Ok(lp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, EOS excluded.
    pub tokens: Vec<usize>,
    /// Cumulative log-probability, including the EOS step when finished.
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Scored length: generated tokens plus the EOS when finished.
    pub fn length(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.length().max(1) as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    // first maximum wins, so ties go to the lowest id
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Appends the argmax token until `eos` or `max_len` tokens.
pub fn greedy_search(scorer: &impl StepScorer, eos: usize, max_len: usize) -> Result<Hypothesis, ModelError> {
    let mut h = Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false };
    while h.tokens.len() < max_len {
        let lp = scorer.next_logprobs(&h.tokens)?;
        let tok = argmax(&lp);
        h.log_prob += lp[tok];
        if tok == eos {
            h.finished = true;
            break;
        }
        h.tokens.push(tok);
    }
    Ok(h)
}

/// Length-normalized beam search. Each step keeps the `beam` best expansions
/// (ties by parent rank, then lowest id); expansions ending in `eos` leave the
/// beam as finished hypotheses. Stops once `beam` hypotheses have finished, the
/// beam empties, or `max_len` tokens were generated.
pub fn beam_search(
    scorer: &impl StepScorer,
    beam: usize,
    eos: usize,
    max_len: usize,
) -> Result<Hypothesis, ModelError> {
    let beam = beam.max(1);
    let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (rank, h) in live.iter().enumerate() {
            let lp = scorer.next_logprobs(&h.tokens)?;
            cands.extend(
                lp.iter().enumerate().filter(|(_, s)| s.is_finite()).map(|(tok, s)| (h.log_prob + s, rank, tok)),
            );
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(beam);
        for (score, rank, tok) in cands.into_iter().take(beam) {
            let mut tokens = live[rank].tokens.clone();
            if tok == eos {
                done.push(Hypothesis { tokens, log_prob: score, finished: true });
            } else {
                tokens.push(tok);
                next.push(Hypothesis { tokens, log_prob: score, finished: false });
            }
        }
        live = next;
        if live.is_empty() || done.len() >= beam {
            break;
        }
    }
    done.extend(live);
    let mut best: Option<Hypothesis> = None;
    for h in done {
        if best.as_ref().is_none_or(|b| h.normalized_score() > b.normalized_score()) {
            best = Some(h);
        }
    }
    Ok(best.expect("search produces at least one hypothesis"))
}

pub fn decode_greedy(
    params: &ModelParameters,
    cfg: &ModelConfig,
    context: &[usize],
    source: &[usize],
    max_len: usize,
) -> Result<Vec<usize>, ModelError> {
    let scorer = ModelScorer::new(params, cfg, context, source)?;
    Ok(greedy_search(&scorer, EOS, max_len)?.tokens)
}

pub fn decode_beam(
    params: &ModelParameters,
    cfg: &ModelConfig,
    context: &[usize],
    source: &[usize],
    beam: usize,
    max_len: usize,
) -> Result<Vec<usize>, ModelError> {
    let scorer = ModelScorer::new(params, cfg, context, source)?;
    Ok(beam_search(&scorer, beam, EOS, max_len)?.tokens)
}

/// Decodes every `(context, source)` pair; `beam <= 1` means greedy.
pub fn translate_all(
    params: &ModelParameters,
    cfg: &ModelConfig,
    inputs: &[(Vec<usize>, Vec<usize>)],
    beam: usize,
    max_len: usize,
    exec: Execution,
) -> Result<Vec<Vec<usize>>, ModelError> {
    exec.map(inputs.len(), |i| {
        let (ctx, src) = &inputs[i];
        if beam <= 1 {
            decode_greedy(params, cfg, ctx, src, max_len)
        } else {
            decode_beam(params, cfg, ctx, src, beam, max_len)
        }
    })
    .into_iter()
    .collect()
}
