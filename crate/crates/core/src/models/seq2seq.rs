//! LSTM encoder-decoder with dot-product (Luong) attention over encoder states.

use rand::Rng;

use crate::autograd::{ParamId, ParamSet, Tape, Var};
use crate::tensor::Matrix;

use super::ModelConfig;

#[derive(Debug, Clone)]
struct LstmLayer {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Seq2Seq {
    embedding: ParamId,
    encoder: Vec<LstmLayer>,
    decoder: Vec<LstmLayer>,
    combine_w: ParamId,
    combine_b: ParamId,
    pub(crate) out_w: ParamId,
    pub(crate) out_b: ParamId,
    hidden: usize,
}

/// Per-layer `(h, c)` rows.
pub(crate) type RnnState = Vec<(Var, Var)>;

fn lstm_layer<R: Rng>(
    params: &mut ParamSet,
    name: &str,
    input: usize,
    hidden: usize,
    scale: f64,
    rng: &mut R,
) -> LstmLayer {
    let w = params.add(
        format!("{name}.w"),
        Matrix::uniform(input, 4 * hidden, scale, rng),
    );
    let u = params.add(
        format!("{name}.u"),
        Matrix::uniform(hidden, 4 * hidden, scale, rng),
    );
    let mut bias = Matrix::zeros(1, 4 * hidden);
    // forget gate starts open
    for j in hidden..2 * hidden {
        bias.data[j] = 1.0;
    }
    let b = params.add(format!("{name}.b"), bias);
    LstmLayer { w, u, b }
}

impl Seq2Seq {
    pub(crate) fn build<R: Rng>(config: &ModelConfig, params: &mut ParamSet, rng: &mut R) -> Self {
        let (v, e, h, s) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.init_scale,
        );
        let embedding = params.add("embedding", Matrix::uniform(v, e, s, rng));
        let encoder = (0..config.layers)
            .map(|l| {
                lstm_layer(
                    params,
                    &format!("encoder.{l}"),
                    if l == 0 { e } else { h },
                    h,
                    s,
                    rng,
                )
            })
            .collect();
        let decoder = (0..config.layers)
            .map(|l| {
                lstm_layer(
                    params,
                    &format!("decoder.{l}"),
                    if l == 0 { e } else { h },
                    h,
                    s,
                    rng,
                )
            })
            .collect();
        let combine_w = params.add("attention.combine_w", Matrix::uniform(2 * h, h, s, rng));
        let combine_b = params.add("attention.combine_b", Matrix::zeros(1, h));
        let out_w = params.add("output.w", Matrix::uniform(h, v, s, rng));
        let out_b = params.add("output.b", Matrix::zeros(1, v));
        Seq2Seq {
            embedding,
            encoder,
            decoder,
            combine_w,
            combine_b,
            out_w,
            out_b,
            hidden: h,
        }
    }

    /// One LSTM step given the precomputed input projection row `xw`.
    fn cell(&self, tape: &mut Tape, layer: &LstmLayer, xw: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let u = tape.param(layer.u);
        let hu = tape.matmul(h, u);
        let z = tape.add(xw, hu);
        let i = tape.slice_cols(z, 0, hd);
        let f = tape.slice_cols(z, hd, hd);
        let g = tape.slice_cols(z, 2 * hd, hd);
        let o = tape.slice_cols(z, 3 * hd, hd);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c2 = tape.add(fc, ig);
        let tc = tape.tanh(c2);
        let h2 = tape.mul(o, tc);
        (h2, c2)
    }

    /// Runs a stack of layers over `inputs` (`T × in`); returns top-layer outputs and final states.
    fn run_stack(
        &self,
        tape: &mut Tape,
        layers: &[LstmLayer],
        inputs: Var,
        init: Option<&RnnState>,
    ) -> (Var, RnnState) {
        let steps = tape.value(inputs).rows;
        let mut current = inputs;
        let mut finals = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let w = tape.param(layer.w);
            let xw = tape.matmul(current, w);
            let b = tape.param(layer.b);
            let xw = tape.add_row(xw, b);
            let (mut h, mut c) = match init {
                Some(s) => s[l],
                None => {
                    let z = tape.constant(Matrix::zeros(1, self.hidden));
                    (z, z)
                }
            };
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let row = tape.slice_rows(xw, t, 1);
                let (h2, c2) = self.cell(tape, layer, row, h, c);
                h = h2;
                c = c2;
                outs.push(h);
            }
            finals.push((h, c));
            current = tape.concat_rows(&outs);
        }
        (current, finals)
    }

    /// Encoder outputs (`L × H`) and final per-layer states.
    pub(crate) fn encode(&self, tape: &mut Tape, context: &[usize]) -> (Var, RnnState) {
        let x = tape.embed(self.embedding, context);
        let layers = self.encoder.clone();
        self.run_stack(tape, &layers, x, None)
    }

    /// Attention readout: log-probabilities (`T × V`) for decoder outputs `dec` (`T × H`).
    fn readout(&self, tape: &mut Tape, dec: Var, enc: Var) -> Var {
        let enc_t = tape.transpose(enc);
        let scores = tape.matmul(dec, enc_t);
        let attn = tape.softmax(scores);
        let ctx = tape.matmul(attn, enc);
        let cat = tape.concat_cols(&[dec, ctx]);
        let wc = tape.param(self.combine_w);
        let bc = tape.param(self.combine_b);
        let comb = tape.matmul(cat, wc);
        let comb = tape.add_row(comb, bc);
        let comb = tape.tanh(comb);
        let wo = tape.param(self.out_w);
        let bo = tape.param(self.out_b);
        let logits = tape.matmul(comb, wo);
        let logits = tape.add_row(logits, bo);
        tape.log_softmax(logits)
    }

    /// Teacher-forced log-probabilities for `inputs` (BOS-shifted response).
    pub(crate) fn teacher_forced(
        &self,
        tape: &mut Tape,
        context: &[usize],
        inputs: &[usize],
    ) -> Var {
        let (enc, state) = self.encode(tape, context);
        let x = tape.embed(self.embedding, inputs);
        let layers = self.decoder.clone();
        let (dec, _) = self.run_stack(tape, &layers, x, Some(&state));
        self.readout(tape, dec, enc)
    }

    /// Single decoder step from `state`; returns the `1 × V` log-probability row and the new state.
    pub(crate) fn step(
        &self,
        tape: &mut Tape,
        enc: Var,
        state: &RnnState,
        token: usize,
    ) -> (Var, RnnState) {
        let x = tape.embed(self.embedding, &[token]);
        let layers = self.decoder.clone();
        let (out, finals) = self.run_stack(tape, &layers, x, Some(state));
        (self.readout(tape, out, enc), finals)
    }
}
