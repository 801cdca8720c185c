//! MLE pretraining with half-epoch validation and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};

use super::DialogueModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive validations without improvement.
    pub patience: usize,
    pub validations_per_epoch: usize,
    pub seed: u64,
    pub workers: usize,
    /// Pairs per gradient work unit; fixes the floating-point reduction order.
    pub grad_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamConfig::default(),
            batch_size: 128,
            max_epochs: 30,
            patience: 5,
            validations_per_epoch: 2,
            seed: 0,
            workers: 1,
            grad_chunk: 16,
        }
    }
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub split: String,
    pub loss: f64,
    #[serde(
        rename = "mean_D_pos",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub mean_d_pos: Option<f64>,
    #[serde(
        rename = "mean_D_neg",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub mean_d_neg: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Parameters from the best validation.
    pub model: DialogueModel,
    pub log: Vec<TrainRecord>,
    pub best_validation_loss: f64,
    /// 0-based index of the best validation.
    pub best_validation: usize,
    pub validations: usize,
    pub steps: usize,
}

/// Tracks the best validation and consecutive non-improvements.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopping {
    pub best: f64,
    pub best_index: usize,
    pub count: usize,
    bad: usize,
    patience: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            best: f64::INFINITY,
            best_index: 0,
            count: 0,
            bad: 0,
            patience,
        }
    }

    /// Records a validation loss; returns whether it improved on the best so far.
    pub fn observe(&mut self, loss: f64) -> bool {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_index = self.count;
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        self.count += 1;
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.bad >= self.patience
    }
}

pub type ValidationHook<'a> = dyn FnMut(usize, &DialogueModel, f64, bool) -> Result<()> + 'a;

/// Minimises token-mean NLL on `train`, validating on `valid` every
/// `1 / validations_per_epoch` epochs. `hook` sees every validation as
/// `(index, model, loss, improved)`.
pub fn train_mle(
    mut model: DialogueModel,
    train: &[TokenizedPair],
    valid: &[TokenizedPair],
    config: &TrainConfig,
    mut hook: Option<&mut ValidationHook>,
) -> Result<TrainingOutcome> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Empty(
            "MLE training needs non-empty train and valid splits".into(),
        ));
    }
    let batch = config.batch_size.max(1);
    let steps_per_epoch = train.len().div_ceil(batch);
    let validate_every = (steps_per_epoch / config.validations_per_epoch.max(1)).max(1);
    let mut opt = Adam::new(model.params(), config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut log = Vec::new();
    let mut step = 0usize;

    'epochs: for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(batch) {
            let items: Vec<TokenizedPair> = idx.iter().map(|&i| train[i].clone()).collect();
            let (loss, mut grads) =
                model.mle_loss_and_grad(&items, config.workers, config.grad_chunk)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("MLE batch loss {loss}"),
                });
            }
            opt.step(model.params_mut(), &mut grads);
            step += 1;
            log.push(TrainRecord {
                step,
                split: "train".into(),
                loss,
                mean_d_pos: None,
                mean_d_neg: None,
                lr: opt.lr(),
            });
            if step % validate_every == 0 {
                let vloss = model.mle_loss(valid)?;
                log.push(TrainRecord {
                    step,
                    split: "valid".into(),
                    loss: vloss,
                    mean_d_pos: None,
                    mean_d_neg: None,
                    lr: opt.lr(),
                });
                let index = stopper.count;
                let improved = stopper.observe(vloss);
                if improved {
                    best = model.clone();
                }
                if let Some(h) = hook.as_mut() {
                    h(index, &model, vloss, improved)?;
                }
                if stopper.should_stop() {
                    break 'epochs;
                }
            }
        }
    }
    if stopper.count == 0 {
        // fewer steps than one validation interval
        let vloss = model.mle_loss(valid)?;
        stopper.observe(vloss);
        best = model.clone();
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
