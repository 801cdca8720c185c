//! Contrastive fine-tuning of a target model against a frozen reference.
//!
//! For a pair `(c, r)` the difference `D = log p_target(r|c) - log p_ref(r|c)`
//! is pushed up on positives and down on negatives. See [`loss`] for the
//! objectives and [`train_contrastive`] for the training loop.

pub mod loss;
mod trainer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::models::{DialogueModel, ReferenceModel};
use crate::parallel::par_map;
use crate::sampler::{ContrastiveGroup, GroupEntry, Source};

pub use loss::{group_loss, pairwise_loss, weighted_group_loss, LossGrad, Term, DEFAULT_EPS};
pub use trainer::train_contrastive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// One positive and one negative per anchor.
    Pairwise,
    /// Whole group, weights ignored.
    Group,
    /// Whole group, terms scaled by matching weights.
    Weighted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_group: bool,
    pub no_pos_group: bool,
    pub no_neg_group: bool,
    pub no_response_side: bool,
    pub no_context_side: bool,
    pub no_scores: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub ablations: Ablations,
    pub eps: f64,
    pub k: usize,
    /// Weight of an added anchor NLL term. Zero gives the pure contrastive objective.
    pub mle_mix: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: LossVariant::Weighted,
            ablations: Ablations::default(),
            eps: DEFAULT_EPS,
            k: 3,
            mle_mix: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let a = &self.ablations;
        if !(self.eps > 0.0 && self.eps < 0.01) {
            return bad("eps must lie in (0, 0.01)");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if (self.variant == LossVariant::Pairwise) != a.no_group {
            return bad("the pairwise variant and no_group must be set together");
        }
        if a.no_group && (a.no_pos_group || a.no_neg_group) {
            return bad("no_group already implies a single positive and negative");
        }
        if a.no_scores && self.variant == LossVariant::Weighted {
            return bad("no_scores is incompatible with the weighted variant");
        }
        if a.no_response_side && a.no_context_side {
            return bad("dropping both sampling sides leaves no negatives");
        }
        if !(self.mle_mix >= 0.0 && self.mle_mix.is_finite()) {
            return bad("mle_mix must be a non-negative number");
        }
        Ok(())
    }
}

/// The full objective and the six ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoGroup,
    NoPositiveGroup,
    NoNegativeGroup,
    NoResponseSide,
    NoContextSide,
    NoScores,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoGroup,
        Variant::NoPositiveGroup,
        Variant::NoNegativeGroup,
        Variant::NoResponseSide,
        Variant::NoContextSide,
        Variant::NoScores,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGroup => "(a) w/o group-wise sampling",
            Variant::NoPositiveGroup => "(b) w/o group-wise positive sampling",
            Variant::NoNegativeGroup => "(c) w/o group-wise negative sampling",
            Variant::NoResponseSide => "(d) w/o response-side sampling",
            Variant::NoContextSide => "(e) w/o context-side sampling",
            Variant::NoScores => "(f) w/o impact of matching scores",
        }
    }

    pub fn config(self, k: usize) -> LossConfig {
        let mut c = LossConfig {
            k,
            ..LossConfig::default()
        };
        let a = &mut c.ablations;
        match self {
            Variant::Full => {}
            Variant::NoGroup => {
                a.no_group = true;
                c.variant = LossVariant::Pairwise;
            }
            Variant::NoPositiveGroup => a.no_pos_group = true,
            Variant::NoNegativeGroup => a.no_neg_group = true,
            Variant::NoResponseSide => a.no_response_side = true,
            Variant::NoContextSide => a.no_context_side = true,
            Variant::NoScores => {
                a.no_scores = true;
                c.variant = LossVariant::Group;
            }
        }
        c
    }
}

/// Positives and negatives that enter the loss under `config`.
pub fn select_members<'g>(
    group: &'g ContrastiveGroup,
    config: &LossConfig,
) -> Result<(Vec<&'g GroupEntry>, Vec<&'g GroupEntry>)> {
    let a = &config.ablations;
    let keep = |e: &&GroupEntry| match e.source {
        Source::Anchor => true,
        Source::ResponseSide | Source::ResponseSidePad => !a.no_response_side,
        Source::ContextSide | Source::ContextSidePad => !a.no_context_side,
    };
    let mut pos: Vec<&GroupEntry> = group.positives.iter().filter(keep).collect();
    let mut neg: Vec<&GroupEntry> = group.negatives.iter().filter(keep).collect();
    if a.no_group || a.no_pos_group {
        pos.retain(|e| e.source == Source::Anchor);
    }
    if a.no_group || a.no_neg_group {
        // keep the least compatible negative; first one wins ties
        if let Some(i) =
            (0..neg.len()).min_by(|&i, &j| neg[i].raw.total_cmp(&neg[j].raw).then(i.cmp(&j)))
        {
            neg = vec![neg[i]];
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::GroupInvariant {
            anchor: group.anchor_id,
            message: format!(
                "{} positives and {} negatives after ablation",
                pos.len(),
                neg.len()
            ),
        });
    }
    Ok((pos, neg))
}

fn check_compatible(target: &DialogueModel, reference: &DialogueModel) -> Result<()> {
    if target.vocab_size() != reference.vocab_size() {
        return Err(Error::VocabMismatch {
            expected: format!("vocabulary of {} tokens", reference.vocab_size()),
            found: format!("vocabulary of {} tokens", target.vocab_size()),
        });
    }
    Ok(())
}

/// `log p_target(r|c) - log p_ref(r|c)`.
pub fn difference(
    target: &DialogueModel,
    reference: &ReferenceModel,
    context: &[usize],
    response: &[usize],
) -> Result<f64> {
    check_compatible(target, reference)?;
    Ok(target.cond_log_prob(context, response)? - reference.cond_log_prob(context, response)?)
}

/// A loss operand with its reference log-probability already computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub context_id: usize,
    pub response_id: usize,
    pub weight: f64,
    pub reference: f64,
    pub anchor: bool,
}

/// Group members selected by a [`LossConfig`], ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGroup {
    pub anchor_id: usize,
    pub positives: Vec<Member>,
    pub negatives: Vec<Member>,
}

/// Per-group result: loss and the differences of every member.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScore {
    pub loss: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// Selects members and scores each distinct pair once with the reference model.
/// Group ids index into `pairs`.
pub fn prepare_groups(
    groups: &[ContrastiveGroup],
    pairs: &[TokenizedPair],
    reference: &ReferenceModel,
    config: &LossConfig,
    workers: usize,
) -> Result<Vec<PreparedGroup>> {
    config.validate()?;
    let mut selected = Vec::with_capacity(groups.len());
    let mut keys = BTreeMap::new();
    for g in groups {
        let (pos, neg) = select_members(g, config)?;
        for e in pos.iter().chain(&neg) {
            if e.context_id >= pairs.len() || e.response_id >= pairs.len() {
                return Err(Error::GroupInvariant {
                    anchor: g.anchor_id,
                    message: format!(
                        "entry ({}, {}) outside {} pairs",
                        e.context_id,
                        e.response_id,
                        pairs.len()
                    ),
                });
            }
            keys.insert((e.context_id, e.response_id), 0.0);
        }
        selected.push((g.anchor_id, pos, neg));
    }
    let items: Vec<(usize, usize)> = keys.keys().copied().collect();
    let scores = par_map(&items, workers, |&(c, r)| {
        reference.cond_log_prob(&pairs[c].context, &pairs[r].response)
    });
    for (key, s) in items.iter().zip(scores) {
        keys.insert(*key, s?);
    }
    let unweighted = config.variant != LossVariant::Weighted;
    let member = |e: &GroupEntry, default: f64| Member {
        context_id: e.context_id,
        response_id: e.response_id,
        weight: if unweighted { default } else { e.weight },
        reference: keys[&(e.context_id, e.response_id)],
        anchor: e.source == Source::Anchor,
    };
    Ok(selected
        .into_iter()
        .map(|(anchor_id, pos, neg)| PreparedGroup {
            anchor_id,
            positives: pos.iter().map(|e| member(e, 1.0)).collect(),
            negatives: neg.iter().map(|e| member(e, -1.0)).collect(),
        })
        .collect())
}

fn terms(members: &[Member], d: &[f64]) -> Vec<Term> {
    members
        .iter()
        .zip(d)
        .map(|(m, &d)| Term::new(d, m.weight))
        .collect()
}

fn anchor_nll(
    target: &DialogueModel,
    pairs: &[TokenizedPair],
    group: &PreparedGroup,
    lp: &[f64],
) -> Result<f64> {
    let p = &pairs[group.anchor_id];
    let l = match group.positives.iter().position(|m| m.anchor) {
        Some(i) => lp[i],
        None => target.cond_log_prob(&p.context, &p.response)?,
    };
    Ok(-l / p.response.len() as f64)
}

/// Evaluates the configured loss of one prepared group without gradients.
pub fn score_group(
    target: &DialogueModel,
    pairs: &[TokenizedPair],
    group: &PreparedGroup,
    config: &LossConfig,
) -> Result<GroupScore> {
    let lp = |m: &Member| {
        target.cond_log_prob(&pairs[m.context_id].context, &pairs[m.response_id].response)
    };
    let pos_lp = group
        .positives
        .iter()
        .map(lp)
        .collect::<Result<Vec<f64>>>()?;
    let neg_lp = group
        .negatives
        .iter()
        .map(lp)
        .collect::<Result<Vec<f64>>>()?;
    let d_pos: Vec<f64> = pos_lp
        .iter()
        .zip(&group.positives)
        .map(|(l, m)| l - m.reference)
        .collect();
    let d_neg: Vec<f64> = neg_lp
        .iter()
        .zip(&group.negatives)
        .map(|(l, m)| l - m.reference)
        .collect();
    let mut loss = loss::weighted_loss_and_grad(
        &terms(&group.positives, &d_pos),
        &terms(&group.negatives, &d_neg),
        config.eps,
    )?
    .loss;
    if config.mle_mix > 0.0 {
        loss += config.mle_mix * anchor_nll(target, pairs, group, &pos_lp)?;
    }
    Ok(GroupScore { loss, d_pos, d_neg })
}

/// Like [`score_group`], and adds `scale · ∇θ loss` into `grads`.
pub fn score_group_backward(
    target: &DialogueModel,
    pairs: &[TokenizedPair],
    group: &PreparedGroup,
    config: &LossConfig,
    scale: f64,
    grads: &mut Gradients,
) -> Result<GroupScore> {
    let mut tapes = Vec::with_capacity(group.positives.len() + group.negatives.len());
    for m in group.positives.iter().chain(&group.negatives) {
        tapes.push(
            target.log_prob_tape(&pairs[m.context_id].context, &pairs[m.response_id].response)?,
        );
    }
    let lp: Vec<f64> = tapes.iter().map(|(t, v)| t.scalar(*v)).collect();
    let np = group.positives.len();
    let d_pos: Vec<f64> = lp[..np]
        .iter()
        .zip(&group.positives)
        .map(|(l, m)| l - m.reference)
        .collect();
    let d_neg: Vec<f64> = lp[np..]
        .iter()
        .zip(&group.negatives)
        .map(|(l, m)| l - m.reference)
        .collect();
    let lg = loss::weighted_loss_and_grad(
        &terms(&group.positives, &d_pos),
        &terms(&group.negatives, &d_neg),
        config.eps,
    )?;
    let mut seeds: Vec<f64> = lg.d_pos.iter().chain(&lg.d_neg).copied().collect();
    let mut total = lg.loss;
    if config.mle_mix > 0.0 {
        let anchor = group.positives.iter().position(|m| m.anchor);
        let len = pairs[group.anchor_id].response.len() as f64;
        match anchor {
            Some(i) => {
                total -= config.mle_mix * lp[i] / len;
                seeds[i] -= config.mle_mix / len;
            }
            None => {
                let p = &pairs[group.anchor_id];
                let l = target.cond_log_prob_backward(
                    &p.context,
                    &p.response,
                    -scale * config.mle_mix / len,
                    grads,
                )?;
                total -= config.mle_mix * l / len;
            }
        }
    }
    for ((tape, v), s) in tapes.iter().zip(seeds) {
        if s != 0.0 {
            tape.backward(*v, scale * s, grads);
        }
    }
    Ok(GroupScore {
        loss: total,
        d_pos,
        d_neg,
    })
}

/// Configured loss of one raw group, scoring the reference on the fly.
pub fn group_objective(
    target: &DialogueModel,
    reference: &ReferenceModel,
    pairs: &[TokenizedPair],
    group: &ContrastiveGroup,
    config: &LossConfig,
) -> Result<f64> {
    check_compatible(target, reference)?;
    let prepared = prepare_groups(std::slice::from_ref(group), pairs, reference, config, 1)?;
    Ok(score_group(target, pairs, &prepared[0], config)?.loss)
}

#[cfg(test)]
mod tests;
