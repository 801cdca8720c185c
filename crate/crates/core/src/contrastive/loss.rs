//! Contrastive objectives as functions of the difference values `D`.
//!
//! Every loss is built from two per-term primitives:
//! a positive term `-log max(s·σ̂(D), ε)` and a negative term
//! `-log max(1 + s·σ̂(D), ε)`, where `σ̂` is the logistic function clamped
//! to `[ε, 1-ε]`. The unweighted losses use `s = 1` for positives and
//! `s = -1` for negatives, which makes the reductions exact.

use crate::autograd::sigmoid;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-7;

/// One loss operand: a difference value and its matching weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub d: f64,
    pub weight: f64,
}

impl Term {
    pub fn new(d: f64, weight: f64) -> Self {
        Term { d, weight }
    }

    pub fn positive(d: f64) -> Self {
        Term { d, weight: 1.0 }
    }

    pub fn negative(d: f64) -> Self {
        Term { d, weight: -1.0 }
    }
}

/// Loss value and its partial derivatives with respect to each `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// `σ(d)` clamped to `[eps, 1 - eps]`, with its derivative (zero where clamped).
fn clamped_sigmoid(d: f64, eps: f64) -> (f64, f64) {
    let s = sigmoid(d);
    if s <= eps {
        (eps, 0.0)
    } else if s >= 1.0 - eps {
        (1.0 - eps, 0.0)
    } else {
        (s, s * (1.0 - s))
    }
}

fn positive_term(t: Term, eps: f64) -> (f64, f64) {
    let (s, ds) = clamped_sigmoid(t.d, eps);
    let arg = t.weight * s;
    if arg <= eps {
        (-eps.ln(), 0.0)
    } else {
        (-arg.ln(), -t.weight * ds / arg)
    }
}

fn negative_term(t: Term, eps: f64) -> (f64, f64) {
    let (s, ds) = clamped_sigmoid(t.d, eps);
    let arg = 1.0 + t.weight * s;
    if arg <= eps {
        (-eps.ln(), 0.0)
    } else {
        (-arg.ln(), -t.weight * ds / arg)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.01 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "clamp epsilon {eps} outside (0, 0.01)"
        )))
    }
}

fn check_weights(pos: &[Term], neg: &[Term]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "group needs positives and negatives, got {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    if let Some(t) = pos.iter().find(|t| !(t.weight > 0.0 && t.weight <= 1.0)) {
        return Err(Error::ScoreOutOfRange(t.weight));
    }
    if let Some(t) = neg.iter().find(|t| !(-1.0..=0.0).contains(&t.weight)) {
        return Err(Error::ScoreOutOfRange(t.weight));
    }
    Ok(())
}

/// Mean positive term over `pos` plus mean negative term over `neg`, with
/// derivatives. Normalisers are the actual term counts.
pub fn weighted_loss_and_grad(pos: &[Term], neg: &[Term], eps: f64) -> Result<LossGrad> {
    check_eps(eps)?;
    check_weights(pos, neg)?;
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut loss_pos = 0.0;
    let mut loss_neg = 0.0;
    let mut d_pos = Vec::with_capacity(pos.len());
    let mut d_neg = Vec::with_capacity(neg.len());
    for &t in pos {
        let (l, g) = positive_term(t, eps);
        loss_pos += l;
        d_pos.push(g / np);
    }
    for &t in neg {
        let (l, g) = negative_term(t, eps);
        loss_neg += l;
        d_neg.push(g / nn);
    }
    Ok(LossGrad {
        loss: loss_pos / np + loss_neg / nn,
        d_pos,
        d_neg,
    })
}

/// `-log σ(D⁺) - log(1 - σ(D⁻))`.
pub fn pairwise_loss(d_pos: f64, d_neg: f64, eps: f64) -> f64 {
    let (lp, _) = positive_term(Term::positive(d_pos), eps);
    let (ln, _) = negative_term(Term::negative(d_neg), eps);
    lp + ln
}

/// Unweighted group loss over `2k+1` positive and `2k` negative differences.
pub fn group_loss(d_pos: &[f64], d_neg: &[f64], eps: f64) -> Result<f64> {
    let pos: Vec<Term> = d_pos.iter().map(|&d| Term::positive(d)).collect();
    let neg: Vec<Term> = d_neg.iter().map(|&d| Term::negative(d)).collect();
    Ok(weighted_loss_and_grad(&pos, &neg, eps)?.loss)
}

/// Group loss with each term scaled by its matching weight.
pub fn weighted_group_loss(pos: &[Term], neg: &[Term], eps: f64) -> Result<f64> {
    Ok(weighted_loss_and_grad(pos, neg, eps)?.loss)
}

/// `-(1/|pos|) Σ log s⁺`, the infimum of [`weighted_group_loss`].
pub fn lower_bound(pos: &[Term]) -> f64 {
    -pos.iter().map(|t| t.weight.ln()).sum::<f64>() / pos.len() as f64
}
