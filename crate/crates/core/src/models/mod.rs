//! Dialogue models: conditional sequence generators exposing exact
//! teacher-forced log-probabilities, gradients, and decoding.

mod checkpoint;
mod decode;
mod seq2seq;
mod train;
mod transformer;

use std::ops::Deref;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, ParamId, ParamSet, Tape, Var};
use crate::corpus::{TokenizedPair, BOS, EOS};
use crate::error::{Error, Result};
use crate::parallel::par_map;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use decode::{generate, DecodeConfig, DecodeStrategy, Decoder};
pub(crate) use train::EarlyStopping;
pub use train::{train_mle, TrainConfig, TrainRecord, TrainingOutcome, ValidationHook};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Seq2seqAttention,
    Transformer,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Seq2seqAttention => "seq2seq-attention",
            Architecture::Transformer => "transformer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// LSTM hidden size, or feed-forward width for the transformer.
    pub hidden_dim: usize,
    pub layers: usize,
    /// Attention heads (transformer only).
    pub heads: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Seq2seqAttention,
            vocab_size: 0,
            embed_dim: 32,
            hidden_dim: 64,
            layers: 1,
            heads: 2,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab_size <= EOS {
            return bad(format!(
                "vocab size {} leaves no room for reserved tokens",
                self.vocab_size
            ));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return bad("embed_dim, hidden_dim and layers must be positive".into());
        }
        if self.architecture == Architecture::Transformer
            && (self.heads == 0 || self.embed_dim % self.heads != 0)
        {
            return bad(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Net {
    Seq2Seq(seq2seq::Seq2Seq),
    Transformer(transformer::Transformer),
}

/// A trainable encoder-decoder.
#[derive(Debug, Clone)]
pub struct DialogueModel {
    config: ModelConfig,
    params: ParamSet,
    net: Net,
}

impl DialogueModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let net = match config.architecture {
            Architecture::Seq2seqAttention => {
                Net::Seq2Seq(seq2seq::Seq2Seq::build(&config, &mut params, &mut rng))
            }
            Architecture::Transformer => Net::Transformer(transformer::Transformer::build(
                &config,
                &mut params,
                &mut rng,
            )),
        };
        Ok(DialogueModel {
            config,
            params,
            net,
        })
    }

    /// Rebuilds the architecture for `config` and installs `params`, which must match
    /// it name-for-name and shape-for-shape.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let mut model = Self::new(config)?;
        if model.params.names() != params.names() {
            return Err(Error::InvalidArgument(
                "parameter names do not match the architecture".into(),
            ));
        }
        for (a, b) in model.params.tensors().iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter shape {:?} does not match {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Output projection weight and bias; zeroing both gives a uniform model.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        match &self.net {
            Net::Seq2Seq(n) => (n.out_w, n.out_b),
            Net::Transformer(n) => (n.out_w, n.out_b),
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.config.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                size: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn check_inputs(&self, context: &[usize], response: &[usize]) -> Result<()> {
        if context.is_empty() {
            return Err(Error::Empty("context has no tokens".into()));
        }
        if response.last() != Some(&EOS) {
            return Err(Error::InvalidArgument(
                "response must be non-empty and end with EOS".into(),
            ));
        }
        self.check_ids(context)?;
        self.check_ids(response)
    }

    /// Teacher-forced `T × V` log-probabilities on `tape`.
    pub fn teacher_forced(&self, tape: &mut Tape, context: &[usize], response: &[usize]) -> Var {
        let mut inputs = Vec::with_capacity(response.len());
        inputs.push(BOS);
        inputs.extend_from_slice(&response[..response.len() - 1]);
        match &self.net {
            Net::Seq2Seq(n) => n.teacher_forced(tape, context, &inputs),
            Net::Transformer(n) => n.teacher_forced(tape, context, &inputs),
        }
    }

    fn log_prob_var(&self, tape: &mut Tape, context: &[usize], response: &[usize]) -> Var {
        let lp = self.teacher_forced(tape, context, response);
        tape.gather_sum(lp, response)
    }

    /// `log p(response | context)`; `response` must end with EOS.
    pub fn cond_log_prob(&self, context: &[usize], response: &[usize]) -> Result<f64> {
        self.check_inputs(context, response)?;
        let mut tape = Tape::inference(&self.params);
        let v = self.log_prob_var(&mut tape, context, response);
        Ok(tape.scalar(v))
    }

    /// Per-token mean of [`Self::cond_log_prob`].
    pub fn cond_log_prob_mean(&self, context: &[usize], response: &[usize]) -> Result<f64> {
        Ok(self.cond_log_prob(context, response)? / response.len() as f64)
    }

    /// Records `log p(response | context)` on a fresh gradient tape so the caller
    /// can pick the backward seed after seeing the value.
    pub fn log_prob_tape(&self, context: &[usize], response: &[usize]) -> Result<(Tape<'_>, Var)> {
        self.check_inputs(context, response)?;
        let mut tape = Tape::new(&self.params);
        let v = self.log_prob_var(&mut tape, context, response);
        Ok((tape, v))
    }

    /// Computes `log p(response | context)` and adds `seed · ∇θ log p` into `grads`.
    pub fn cond_log_prob_backward(
        &self,
        context: &[usize],
        response: &[usize],
        seed: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.check_inputs(context, response)?;
        let mut tape = Tape::new(&self.params);
        let v = self.log_prob_var(&mut tape, context, response);
        tape.backward(v, seed, grads);
        Ok(tape.scalar(v))
    }

    /// Log-probabilities for many pairs, in input order.
    pub fn batch_log_probs(
        &self,
        items: &[(&[usize], &[usize])],
        workers: usize,
    ) -> Result<Vec<f64>> {
        par_map(items, workers, |(c, r)| self.cond_log_prob(c, r))
            .into_iter()
            .collect()
    }

    /// Token-mean negative log-likelihood averaged over the batch.
    pub fn mle_loss(&self, batch: &[TokenizedPair]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("empty batch".into()));
        }
        let mut total = 0.0;
        for p in batch {
            total -= self.cond_log_prob(&p.context, &p.response)? / p.response.len() as f64;
        }
        Ok(total / batch.len() as f64)
    }

    /// [`Self::mle_loss`] and its gradient. Pairs are processed in fixed chunks of
    /// `chunk` and reduced in order, so the result does not depend on `workers`.
    pub fn mle_loss_and_grad(
        &self,
        batch: &[TokenizedPair],
        workers: usize,
        chunk: usize,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Empty("empty batch".into()));
        }
        let n = batch.len() as f64;
        let chunks: Vec<&[TokenizedPair]> = batch.chunks(chunk.max(1)).collect();
        let parts = par_map(&chunks, workers, |part| -> Result<(f64, Gradients)> {
            let mut grads = self.params.zero_gradients();
            let mut loss = 0.0;
            for p in part.iter() {
                let len = p.response.len() as f64;
                let lp = self.cond_log_prob_backward(
                    &p.context,
                    &p.response,
                    -1.0 / (n * len),
                    &mut grads,
                )?;
                loss -= lp / len;
            }
            Ok((loss, grads))
        });
        let mut total = 0.0;
        let mut grads = self.params.zero_gradients();
        for part in parts {
            let (l, g) = part?;
            total += l;
            grads.add_assign(&g);
        }
        Ok((total / n, grads))
    }
}

/// A frozen copy of a model's parameters. Cloning shares the same immutable
/// parameters; there is no way to obtain mutable access.
#[derive(Debug, Clone)]
pub struct ReferenceModel(Arc<DialogueModel>);

impl ReferenceModel {
    pub fn model(&self) -> &DialogueModel {
        &self.0
    }
}

impl Deref for ReferenceModel {
    type Target = DialogueModel;

    fn deref(&self) -> &DialogueModel {
        &self.0
    }
}

/// Deep copy of `model`'s current parameters.
pub fn snapshot_reference(model: &DialogueModel) -> ReferenceModel {
    ReferenceModel(Arc::new(model.clone()))
}
