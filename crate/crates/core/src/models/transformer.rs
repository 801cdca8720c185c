//! Pre-norm transformer encoder-decoder with sinusoidal positions.

use rand::Rng;

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::tensor::Matrix;

use super::ModelConfig;

#[derive(Debug, Clone)]
struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    norm3: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
pub(crate) struct Transformer {
    embedding: ParamId,
    encoder: Vec<EncoderBlock>,
    encoder_norm: Norm,
    decoder: Vec<DecoderBlock>,
    decoder_norm: Norm,
    pub(crate) out_w: ParamId,
    pub(crate) out_b: ParamId,
    dim: usize,
    heads: usize,
}

const LN_EPS: f64 = 1e-5;

fn norm(params: &mut ParamSet, name: &str, d: usize) -> Norm {
    Norm {
        gamma: params.add(format!("{name}.gamma"), Matrix::filled(1, d, 1.0)),
        beta: params.add(format!("{name}.beta"), Matrix::zeros(1, d)),
    }
}

fn attention<R: Rng>(
    params: &mut ParamSet,
    name: &str,
    d: usize,
    s: f64,
    rng: &mut R,
) -> Attention {
    Attention {
        wq: params.add(format!("{name}.wq"), Matrix::uniform(d, d, s, rng)),
        wk: params.add(format!("{name}.wk"), Matrix::uniform(d, d, s, rng)),
        wv: params.add(format!("{name}.wv"), Matrix::uniform(d, d, s, rng)),
        wo: params.add(format!("{name}.wo"), Matrix::uniform(d, d, s, rng)),
    }
}

fn feed_forward<R: Rng>(
    params: &mut ParamSet,
    name: &str,
    d: usize,
    ff: usize,
    s: f64,
    rng: &mut R,
) -> FeedForward {
    FeedForward {
        w1: params.add(format!("{name}.w1"), Matrix::uniform(d, ff, s, rng)),
        b1: params.add(format!("{name}.b1"), Matrix::zeros(1, ff)),
        w2: params.add(format!("{name}.w2"), Matrix::uniform(ff, d, s, rng)),
        b2: params.add(format!("{name}.b2"), Matrix::zeros(1, d)),
    }
}

pub(crate) fn sinusoidal(len: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

impl Transformer {
    pub(crate) fn build<R: Rng>(config: &ModelConfig, params: &mut ParamSet, rng: &mut R) -> Self {
        let (v, d, ff, s) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.init_scale,
        );
        let embedding = params.add("embedding", Matrix::uniform(v, d, s, rng));
        let encoder = (0..config.layers)
            .map(|l| {
                let n = format!("encoder.{l}");
                EncoderBlock {
                    norm1: norm(params, &format!("{n}.norm1"), d),
                    attn: attention(params, &format!("{n}.attn"), d, s, rng),
                    norm2: norm(params, &format!("{n}.norm2"), d),
                    ff: feed_forward(params, &format!("{n}.ff"), d, ff, s, rng),
                }
            })
            .collect();
        let encoder_norm = norm(params, "encoder.norm", d);
        let decoder = (0..config.layers)
            .map(|l| {
                let n = format!("decoder.{l}");
                DecoderBlock {
                    norm1: norm(params, &format!("{n}.norm1"), d),
                    self_attn: attention(params, &format!("{n}.self_attn"), d, s, rng),
                    norm2: norm(params, &format!("{n}.norm2"), d),
                    cross_attn: attention(params, &format!("{n}.cross_attn"), d, s, rng),
                    norm3: norm(params, &format!("{n}.norm3"), d),
                    ff: feed_forward(params, &format!("{n}.ff"), d, ff, s, rng),
                }
            })
            .collect();
        let decoder_norm = norm(params, "decoder.norm", d);
        let out_w = params.add("output.w", Matrix::uniform(d, v, s, rng));
        let out_b = params.add("output.b", Matrix::zeros(1, v));
        Transformer {
            embedding,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            out_w,
            out_b,
            dim: d,
            heads: config.heads,
        }
    }

    fn layer_norm(&self, tape: &mut Tape, x: Var, n: &Norm) -> Var {
        let g = tape.param(n.gamma);
        let b = tape.param(n.beta);
        tape.layer_norm(x, g, b, LN_EPS)
    }

    fn attend(&self, tape: &mut Tape, query: Var, memory: Var, a: &Attention, causal: bool) -> Var {
        let wq = tape.param(a.wq);
        let wk = tape.param(a.wk);
        let wv = tape.param(a.wv);
        let q = tape.matmul(query, wq);
        let k = tape.matmul(memory, wk);
        let v = tape.matmul(memory, wv);
        let dh = self.dim / self.heads;
        let tq = tape.value(query).rows;
        let tk = tape.value(memory).rows;
        let mask = causal.then(|| {
            let mut m = Matrix::zeros(tq, tk);
            for i in 0..tq {
                for j in (i + 1)..tk {
                    m.set(i, j, -1e9);
                }
            }
            tape.constant(m)
        });
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt);
            let mut s = tape.scale(s, 1.0 / (dh as f64).sqrt());
            if let Some(m) = mask {
                s = tape.add(s, m);
            }
            let p = tape.softmax(s);
            heads.push(tape.matmul(p, vh));
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        let wo = tape.param(a.wo);
        tape.matmul(cat, wo)
    }

    fn feed_forward(&self, tape: &mut Tape, x: Var, f: &FeedForward) -> Var {
        let w1 = tape.param(f.w1);
        let b1 = tape.param(f.b1);
        let w2 = tape.param(f.w2);
        let b2 = tape.param(f.b2);
        let h = tape.matmul(x, w1);
        let h = tape.add_row(h, b1);
        let h = tape.relu(h);
        let o = tape.matmul(h, w2);
        tape.add_row(o, b2)
    }

    fn embed(&self, tape: &mut Tape, ids: &[usize]) -> Var {
        let e = tape.embed(self.embedding, ids);
        let pos = tape.constant(sinusoidal(ids.len(), self.dim));
        tape.add(e, pos)
    }

    /// Encoder memory (`L × d`).
    pub(crate) fn encode(&self, tape: &mut Tape, context: &[usize]) -> Var {
        let mut x = self.embed(tape, context);
        for block in &self.encoder {
            let n = self.layer_norm(tape, x, &block.norm1);
            let a = self.attend(tape, n, n, &block.attn, false);
            x = tape.add(x, a);
            let n = self.layer_norm(tape, x, &block.norm2);
            let f = self.feed_forward(tape, n, &block.ff);
            x = tape.add(x, f);
        }
        self.layer_norm(tape, x, &self.encoder_norm)
    }

    /// Log-probabilities (`T × V`) for every position of `inputs` given `memory`.
    pub(crate) fn decode(&self, tape: &mut Tape, memory: Var, inputs: &[usize]) -> Var {
        let mut x = self.embed(tape, inputs);
        for block in &self.decoder {
            let n = self.layer_norm(tape, x, &block.norm1);
            let a = self.attend(tape, n, n, &block.self_attn, true);
            x = tape.add(x, a);
            let n = self.layer_norm(tape, x, &block.norm2);
            let a = self.attend(tape, n, memory, &block.cross_attn, false);
            x = tape.add(x, a);
            let n = self.layer_norm(tape, x, &block.norm3);
            let f = self.feed_forward(tape, n, &block.ff);
            x = tape.add(x, f);
        }
        let x = self.layer_norm(tape, x, &self.decoder_norm);
        let wo = tape.param(self.out_w);
        let bo = tape.param(self.out_b);
        let logits = tape.matmul(x, wo);
        let logits = tape.add_row(logits, bo);
        tape.log_softmax(logits)
    }

    pub(crate) fn teacher_forced(
        &self,
        tape: &mut Tape,
        context: &[usize],
        inputs: &[usize],
    ) -> Var {
        let memory = self.encode(tape, context);
        self.decode(tape, memory, inputs)
    }
}
