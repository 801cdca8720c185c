use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::models::{
    DialogueModel, EarlyStopping, ReferenceModel, TrainConfig, TrainRecord, TrainingOutcome,
    ValidationHook,
};
use crate::optim::Adam;
use crate::parallel::par_map;
use crate::sampler::ContrastiveGroup;

use super::{
    check_compatible, prepare_groups, score_group, score_group_backward, GroupScore, LossConfig,
    PreparedGroup,
};

#[derive(Default)]
struct Totals {
    loss: f64,
    d_pos: f64,
    n_pos: usize,
    d_neg: f64,
    n_neg: usize,
}

impl Totals {
    fn add(&mut self, s: &GroupScore) {
        self.loss += s.loss;
        self.d_pos += s.d_pos.iter().sum::<f64>();
        self.n_pos += s.d_pos.len();
        self.d_neg += s.d_neg.iter().sum::<f64>();
        self.n_neg += s.d_neg.len();
    }

    fn record(&self, step: usize, split: &str, groups: usize, lr: f64) -> TrainRecord {
        TrainRecord {
            step,
            split: split.into(),
            loss: self.loss / groups as f64,
            mean_d_pos: Some(self.d_pos / self.n_pos.max(1) as f64),
            mean_d_neg: Some(self.d_neg / self.n_neg.max(1) as f64),
            lr,
        }
    }
}

fn non_finite(step: usize, group: &PreparedGroup, s: &GroupScore) -> Error {
    Error::NonFiniteLoss {
        step,
        detail: format!(
            "anchor {}: loss {}, D+ {:?}, D- {:?}",
            group.anchor_id, s.loss, s.d_pos, s.d_neg
        ),
    }
}

fn validate(
    model: &DialogueModel,
    pairs: &[TokenizedPair],
    groups: &[PreparedGroup],
    loss: &LossConfig,
    workers: usize,
    step: usize,
    lr: f64,
) -> Result<TrainRecord> {
    let scores = par_map(groups, workers, |g| score_group(model, pairs, g, loss));
    let mut totals = Totals::default();
    for (g, s) in groups.iter().zip(scores) {
        let s = s?;
        if !s.loss.is_finite() {
            return Err(non_finite(step, g, &s));
        }
        totals.add(&s);
    }
    Ok(totals.record(step, "valid", groups.len(), lr))
}

/// Fine-tunes `target` on `train_groups` (ids index `train_pairs`) against the
/// frozen `reference`, validating on held-out groups every
/// `1 / validations_per_epoch` epochs and returning the best-validation
/// parameters. Log records carry the mean difference over positives and negatives.
#[allow(clippy::too_many_arguments)]
pub fn train_contrastive(
    mut target: DialogueModel,
    reference: &ReferenceModel,
    train_pairs: &[TokenizedPair],
    train_groups: &[ContrastiveGroup],
    valid_pairs: &[TokenizedPair],
    valid_groups: &[ContrastiveGroup],
    loss: &LossConfig,
    config: &TrainConfig,
    mut hook: Option<&mut ValidationHook>,
) -> Result<TrainingOutcome> {
    loss.validate()?;
    check_compatible(&target, reference)?;
    if train_groups.is_empty() || valid_groups.is_empty() {
        return Err(Error::Empty(
            "contrastive training needs non-empty train and valid group caches".into(),
        ));
    }
    let workers = config.workers;
    let train = prepare_groups(train_groups, train_pairs, reference, loss, workers)?;
    let valid = prepare_groups(valid_groups, valid_pairs, reference, loss, workers)?;

    let batch = config.batch_size.max(1);
    let steps_per_epoch = train.len().div_ceil(batch);
    let validate_every = (steps_per_epoch / config.validations_per_epoch.max(1)).max(1);
    let mut opt = Adam::new(target.params(), config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = target.clone();
    let mut log = Vec::new();
    let mut step = 0usize;

    'epochs: for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(batch) {
            let scale = 1.0 / idx.len() as f64;
            let chunks: Vec<&[usize]> = idx.chunks(config.grad_chunk.max(1)).collect();
            let model = &target;
            let parts = par_map(&chunks, workers, |part| {
                let mut grads = model.params().zero_gradients();
                let mut scores = Vec::with_capacity(part.len());
                for &i in part.iter() {
                    scores.push(score_group_backward(
                        model,
                        train_pairs,
                        &train[i],
                        loss,
                        scale,
                        &mut grads,
                    )?);
                }
                Ok::<_, Error>((scores, grads))
            });
            let mut grads = target.params().zero_gradients();
            let mut totals = Totals::default();
            for (part, res) in chunks.iter().zip(parts) {
                let (scores, g) = res?;
                for (&i, s) in part.iter().zip(&scores) {
                    if !s.loss.is_finite() {
                        return Err(non_finite(step, &train[i], s));
                    }
                    totals.add(s);
                }
                grads.add_assign(&g);
            }
            if !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: "non-finite gradient".into(),
                });
            }
            opt.step(target.params_mut(), &mut grads);
            step += 1;
            log.push(totals.record(step, "train", idx.len(), opt.lr()));

            if step % validate_every == 0 {
                let rec = validate(&target, valid_pairs, &valid, loss, workers, step, opt.lr())?;
                let vloss = rec.loss;
                log.push(rec);
                let index = stopper.count;
                let improved = stopper.observe(vloss);
                if improved {
                    best = target.clone();
                }
                if let Some(h) = hook.as_mut() {
                    h(index, &target, vloss, improved)?;
                }
                if stopper.should_stop() {
                    break 'epochs;
                }
            }
        }
    }
    if stopper.count == 0 {
        let rec = validate(&target, valid_pairs, &valid, loss, workers, step, opt.lr())?;
        stopper.observe(rec.loss);
        log.push(rec);
        best = target.clone();
    }
    Ok(TrainingOutcome {
        model: best,
        log,
        best_validation_loss: stopper.best,
        best_validation: stopper.best_index,
        validations: stopper.count,
        steps: step,
    })
}
