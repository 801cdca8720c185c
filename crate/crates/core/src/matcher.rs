//! Context/response matching scores and their mapping onto loss weights.
//!
//! A [`Matcher`] returns a raw score in `[-1, 1]`. Positives are weighted by
//! `s⁺ = max(raw, 0.05)` and negatives by `s⁻ = min(raw, 0)`. A negative the
//! matcher scores above zero therefore gets weight 0 and drops out of the loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamSet, Tape};
use crate::corpus::Vocab;
use crate::corpus::{TokenizedPair, UNK};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{cosine, Matrix};

/// Floor applied to positive weights.
pub const POSITIVE_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub raw: f64,
    pub role: Role,
    pub weighted: f64,
}

impl MatchScore {
    pub fn new(raw: f64, role: Role) -> Result<Self> {
        let weighted = match role {
            Role::Positive => to_positive_weight(raw)?,
            Role::Negative => to_negative_weight(raw)?,
        };
        Ok(MatchScore {
            raw,
            role,
            weighted,
        })
    }
}

fn check_range(raw: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&raw) {
        Ok(())
    } else {
        Err(Error::ScoreOutOfRange(raw))
    }
}

/// `s⁺ ∈ (0, 1]`.
pub fn to_positive_weight(raw: f64) -> Result<f64> {
    check_range(raw)?;
    Ok(raw.max(POSITIVE_FLOOR))
}

/// `s⁻ ∈ [-1, 0]`.
pub fn to_negative_weight(raw: f64) -> Result<f64> {
    check_range(raw)?;
    Ok(raw.min(0.0))
}

/// Scores how well a response fits a flattened context. Implementations must be
/// pure: identical inputs give bit-identical scores.
pub trait Matcher: Send + Sync {
    fn score(&self, context: &[usize], response: &[usize]) -> Result<f64>;

    fn score_pair(&self, context: &TokenizedPair, response: &TokenizedPair) -> Result<f64> {
        self.score(&context.context, &response.response)
    }
}

/// Reserved ids other than UNK carry no content and are skipped when embedding.
fn content_ids(ids: &[usize]) -> impl Iterator<Item = usize> + '_ {
    ids.iter().copied().filter(|&i| i == UNK || i >= 4)
}

/// Mean-embedding cosine matcher.
#[derive(Debug, Clone)]
pub struct CosineMatcher {
    lookup: Matrix,
}

impl CosineMatcher {
    pub fn new(table: &EmbeddingTable, vocab: &Vocab) -> Self {
        CosineMatcher {
            lookup: table.lookup_matrix(vocab),
        }
    }

    pub fn from_lookup(lookup: Matrix) -> Self {
        CosineMatcher { lookup }
    }

    pub fn dim(&self) -> usize {
        self.lookup.cols
    }

    pub fn lookup(&self) -> &Matrix {
        &self.lookup
    }

    /// Mean embedding of the content tokens of `ids`.
    pub fn embed_ids(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.lookup.cols];
        let mut n = 0usize;
        for id in content_ids(ids) {
            if id >= self.lookup.rows {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.lookup.rows,
                });
            }
            for (o, x) in out.iter_mut().zip(self.lookup.row(id)) {
                *o += x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("no content tokens to embed".into()));
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        Ok(out)
    }
}

impl Matcher for CosineMatcher {
    fn score(&self, context: &[usize], response: &[usize]) -> Result<f64> {
        let c = self.embed_ids(context)?;
        let r = self.embed_ids(response)?;
        Ok(cosine(&c, &r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiEncoderConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for BiEncoderConfig {
    fn default() -> Self {
        BiEncoderConfig {
            batch_size: 32,
            epochs: 5,
            lr: 5e-3,
            temperature: 0.1,
            seed: 0,
        }
    }
}

/// Separate linear projections of the context and response mean embeddings,
/// scored by cosine. Both projections start at the identity, where the score
/// equals [`CosineMatcher`]'s.
#[derive(Debug, Clone)]
pub struct BiEncoder {
    base: CosineMatcher,
    params: ParamSet,
    context_proj: ParamId,
    response_proj: ParamId,
}

impl BiEncoder {
    pub fn identity(base: CosineMatcher) -> Self {
        let d = base.dim();
        let mut eye = Matrix::zeros(d, d);
        for i in 0..d {
            eye.set(i, i, 1.0);
        }
        let mut params = ParamSet::new();
        let context_proj = params.add("context_proj", eye.clone());
        let response_proj = params.add("response_proj", eye);
        BiEncoder {
            base,
            params,
            context_proj,
            response_proj,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn project(&self, proj: ParamId, v: &[f64]) -> Vec<f64> {
        Matrix::row_vector(v.to_vec())
            .matmul(self.params.get(proj))
            .data
    }
}

impl Matcher for BiEncoder {
    fn score(&self, context: &[usize], response: &[usize]) -> Result<f64> {
        let c = self.project(self.context_proj, &self.base.embed_ids(context)?);
        let r = self.project(self.response_proj, &self.base.embed_ids(response)?);
        Ok(cosine(&c, &r))
    }
}

/// Trains a [`BiEncoder`] with an in-batch softmax objective: each context must pick
/// its own response among the shuffled batch.
pub fn train_biencoder(
    pairs: &[TokenizedPair],
    base: CosineMatcher,
    config: &BiEncoderConfig,
) -> Result<BiEncoder> {
    if config.batch_size < 2 || pairs.len() < 2 * config.batch_size {
        return Err(Error::CorpusTooSmall(format!(
            "bi-encoder training needs at least {} pairs, got {}",
            2 * config.batch_size.max(2),
            pairs.len()
        )));
    }
    let ctx: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| base.embed_ids(&p.context))
        .collect::<Result<_>>()?;
    let resp: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| base.embed_ids(&p.response))
        .collect::<Result<_>>()?;
    let mut model = BiEncoder::identity(base);
    let mut opt = Adam::new(
        &model.params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let d = model.base.dim();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks_exact(config.batch_size) {
            let b = batch.len();
            let stack = |src: &[Vec<f64>]| {
                let mut m = Matrix::zeros(b, d);
                for (r, &i) in batch.iter().enumerate() {
                    m.row_mut(r).copy_from_slice(&src[i]);
                }
                m
            };
            let (cm, rm) = (stack(&ctx), stack(&resp));
            let mut grads = model.params.zero_gradients();
            {
                let mut tape = Tape::new(&model.params);
                let c = tape.constant(cm);
                let r = tape.constant(rm);
                let wc = tape.param(model.context_proj);
                let wr = tape.param(model.response_proj);
                let pc = tape.matmul(c, wc);
                let pr = tape.matmul(r, wr);
                let nc = tape.normalize_rows(pc);
                let nr = tape.normalize_rows(pr);
                let nrt = tape.transpose(nr);
                let sims = tape.matmul(nc, nrt);
                let logits = tape.scale(sims, 1.0 / config.temperature);
                let ls = tape.log_softmax(logits);
                let diag: Vec<usize> = (0..b).collect();
                let total = tape.gather_sum(ls, &diag);
                tape.backward(total, -1.0 / b as f64, &mut grads);
            }
            opt.step(&mut model.params, &mut grads);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> (EmbeddingTable, Vocab) {
        let vocab = Vocab::with_words(&["u", "v", "w"]).unwrap();
        let table = EmbeddingTable::new(
            2,
            vec![
                ("u".into(), vec![1.0, 0.0]),
                ("v".into(), vec![0.0, 1.0]),
                ("w".into(), vec![1.0, 1.0]),
            ],
        )
        .unwrap();
        (table, vocab)
    }

    #[test]
    fn identical_text_scores_one() {
        let (t, v) = table();
        let m = CosineMatcher::new(&t, &v);
        let s = m.score(&[4, 6], &[4, 6, crate::corpus::EOS]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_scores_zero() {
        let (t, v) = table();
        let m = CosineMatcher::new(&t, &v);
        assert_eq!(m.score(&[4], &[5]).unwrap(), 0.0);
    }

    #[test]
    fn empty_inputs_error() {
        let (t, v) = table();
        let m = CosineMatcher::new(&t, &v);
        assert!(m.score(&[], &[5]).is_err());
        assert!(m.score(&[4], &[crate::corpus::EOS]).is_err());
    }

    #[test]
    fn weight_mapping_examples() {
        assert_eq!(to_positive_weight(0.8).unwrap(), 0.8);
        assert_eq!(to_positive_weight(-0.3).unwrap(), 0.05);
        assert_eq!(to_negative_weight(0.2).unwrap(), 0.0);
        assert_eq!(to_negative_weight(-0.4).unwrap(), -0.4);
        assert!(to_positive_weight(1.5).is_err());
        assert!(to_negative_weight(-1.01).is_err());
    }

    #[test]
    fn identity_biencoder_equals_cosine() {
        let (t, v) = table();
        let m = CosineMatcher::new(&t, &v);
        let b = BiEncoder::identity(m.clone());
        for (c, r) in [
            (&[4usize][..], &[5usize][..]),
            (&[4, 6], &[6]),
            (&[5, 6], &[4, 4, 5]),
        ] {
            assert!((m.score(c, r).unwrap() - b.score(c, r).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn biencoder_rejects_tiny_corpus() {
        let (t, v) = table();
        let pairs = vec![
            TokenizedPair {
                id: 0,
                turns: vec![vec![4]],
                context: vec![4],
                response: vec![5, 3],
            };
            10
        ];
        let cfg = BiEncoderConfig::default();
        assert!(matches!(
            train_biencoder(&pairs, CosineMatcher::new(&t, &v), &cfg),
            Err(Error::CorpusTooSmall(_))
        ));
    }

    mod props {
        use proptest::prelude::*;

        use super::super::*;

        proptest! {
            #[test]
            fn weights_stay_in_range(raw in -1.0f64..=1.0) {
                let p = to_positive_weight(raw).unwrap();
                let n = to_negative_weight(raw).unwrap();
                prop_assert!(p > 0.0 && p <= 1.0);
                prop_assert!((-1.0..=0.0).contains(&n));
            }

            #[test]
            fn clamping_is_monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(to_positive_weight(lo).unwrap() <= to_positive_weight(hi).unwrap());
                prop_assert!(to_negative_weight(lo).unwrap() <= to_negative_weight(hi).unwrap());
            }
        }
    }
}
