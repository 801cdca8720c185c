use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};

use super::seq2seq::RnnState;
use super::{DialogueModel, Net};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeStrategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub beam_width: usize,
    /// Maximum generated tokens, counting the terminating EOS.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: DecodeStrategy::Greedy,
            beam_width: 5,
            max_len: 20,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 || self.beam_width == 0 {
            return Err(Error::InvalidArgument(
                "max_len and beam_width must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub enum DecoderState {
    Rnn(RnnState),
    Prefix(Vec<usize>),
}

/// Incremental decoding for one context.
pub struct Decoder<'m> {
    model: &'m DialogueModel,
    tape: Tape<'m>,
    memory: Var,
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m DialogueModel, context: &[usize]) -> Result<(Self, DecoderState)> {
        if context.is_empty() {
            return Err(Error::Empty("context has no tokens".into()));
        }
        model.check_ids(context)?;
        let mut tape = Tape::inference(model.params());
        let (memory, state) = match &model.net {
            Net::Seq2Seq(n) => {
                let (enc, finals) = n.encode(&mut tape, context);
                (enc, DecoderState::Rnn(finals))
            }
            Net::Transformer(n) => (
                n.encode(&mut tape, context),
                DecoderState::Prefix(Vec::new()),
            ),
        };
        Ok((
            Decoder {
                model,
                tape,
                memory,
            },
            state,
        ))
    }

    /// Feeds `token` and returns log-probabilities of the next token.
    pub fn step(&mut self, state: &DecoderState, token: usize) -> (Vec<f64>, DecoderState) {
        match (&self.model.net, state) {
            (Net::Seq2Seq(n), DecoderState::Rnn(s)) => {
                let (lp, next) = n.step(&mut self.tape, self.memory, s, token);
                (self.tape.value(lp).data.clone(), DecoderState::Rnn(next))
            }
            (Net::Transformer(n), DecoderState::Prefix(prefix)) => {
                let mut p = prefix.clone();
                p.push(token);
                let lp = n.decode(&mut self.tape, self.memory, &p);
                let m = self.tape.value(lp);
                (m.row(m.rows - 1).to_vec(), DecoderState::Prefix(p))
            }
            _ => unreachable!("decoder state does not match architecture"),
        }
    }
}

/// Lowest index among the maxima.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Generates a response for `context`; the trailing EOS is not included.
pub fn generate(
    model: &DialogueModel,
    context: &[usize],
    config: &DecodeConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    match config.strategy {
        DecodeStrategy::Greedy => greedy(model, context, config.max_len),
        DecodeStrategy::Beam => beam(model, context, config.beam_width, config.max_len),
    }
}

fn greedy(model: &DialogueModel, context: &[usize], max_len: usize) -> Result<Vec<usize>> {
    let (mut dec, mut state) = Decoder::new(model, context)?;
    let mut out = Vec::new();
    let mut token = BOS;
    for _ in 0..max_len {
        let (lp, next) = dec.step(&state, token);
        token = argmax(&lp);
        if token == EOS {
            break;
        }
        out.push(token);
        state = next;
    }
    Ok(out)
}

struct Hyp {
    tokens: Vec<usize>,
    score: f64,
    state: DecoderState,
}

fn beam(
    model: &DialogueModel,
    context: &[usize],
    width: usize,
    max_len: usize,
) -> Result<Vec<usize>> {
    let (mut dec, state) = Decoder::new(model, context)?;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        state,
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for step in 0..max_len {
        // (hyp index, token, total score)
        let mut expansions: Vec<(usize, usize, f64, DecoderState)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            let last = hyp.tokens.last().copied().unwrap_or(BOS);
            let (lp, next) = dec.step(&hyp.state, last);
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(width) {
                expansions.push((h, tok, hyp.score + lp[tok], next.clone()));
            }
        }
        expansions.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut next_live = Vec::with_capacity(width);
        for (h, tok, score, state) in expansions {
            if next_live.len() >= width {
                break;
            }
            let mut tokens = live[h].tokens.clone();
            if tok == EOS {
                finished.push((tokens, score));
                // a finished hypothesis still occupies a beam slot
                next_live.push(Hyp {
                    tokens: Vec::new(),
                    score: f64::NEG_INFINITY,
                    state,
                });
                continue;
            }
            tokens.push(tok);
            if step + 1 == max_len {
                finished.push((tokens, score));
                continue;
            }
            next_live.push(Hyp {
                tokens,
                score,
                state,
            });
        }
        live = next_live
            .into_iter()
            .filter(|h| h.score.is_finite())
            .collect();
        let best_finished = finished
            .iter()
            .map(|f| f.1)
            .fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || live.iter().all(|h| h.score < best_finished) {
            break;
        }
    }
    let best = finished
        .into_iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
        .map(|(_, f)| f.0)
        .unwrap_or_default();
    Ok(best)
}
