use super::*;
use crate::corpus::EOS;
use crate::models::{snapshot_reference, Architecture, ModelConfig, TrainConfig};
use crate::optim::AdamConfig;
use crate::sampler::Source;

const LN2: f64 = std::f64::consts::LN_2;

fn micro(seed: u64) -> DialogueModel {
    DialogueModel::new(ModelConfig {
        architecture: Architecture::Seq2seqAttention,
        vocab_size: 12,
        embed_dim: 8,
        hidden_dim: 8,
        layers: 1,
        heads: 2,
        init_scale: 0.5,
        seed,
    })
    .unwrap()
}

fn pairs() -> Vec<TokenizedPair> {
    let raw: [(&[usize], &[usize]); 6] = [
        (&[4, 5], &[6, EOS]),
        (&[4, 7], &[6, 8, EOS]),
        (&[9, 5], &[10, EOS]),
        (&[11, 11], &[9, 4, EOS]),
        (&[5], &[8, EOS]),
        (&[7, 9, 10], &[11, EOS]),
    ];
    raw.iter()
        .enumerate()
        .map(|(id, (c, r))| TokenizedPair {
            id,
            turns: vec![c.to_vec()],
            context: c.to_vec(),
            response: r.to_vec(),
        })
        .collect()
}

fn entry(c: usize, r: usize, weight: f64, raw: f64, source: Source) -> GroupEntry {
    GroupEntry {
        context_id: c,
        response_id: r,
        weight,
        raw,
        source,
    }
}

/// k = 1 group around pair 0.
fn group_k1() -> ContrastiveGroup {
    ContrastiveGroup {
        anchor_id: 0,
        positives: vec![
            entry(0, 0, 1.0, 0.9, Source::Anchor),
            entry(0, 1, 0.7, 0.7, Source::ResponseSide),
            entry(4, 0, 0.4, 0.4, Source::ContextSide),
        ],
        negatives: vec![
            entry(0, 3, -0.2, -0.2, Source::ResponseSide),
            entry(5, 0, -0.6, -0.6, Source::ContextSidePad),
        ],
    }
}

/// k = 3 group around pair 2 with a mix of sides.
fn group_k3() -> ContrastiveGroup {
    ContrastiveGroup {
        anchor_id: 2,
        positives: vec![
            entry(2, 2, 1.0, 0.8, Source::Anchor),
            entry(2, 0, 0.6, 0.6, Source::ResponseSide),
            entry(2, 4, 0.5, 0.5, Source::ResponseSide),
            entry(2, 5, 0.05, 0.01, Source::ResponseSidePad),
            entry(0, 2, 0.9, 0.9, Source::ContextSide),
            entry(4, 2, 0.3, 0.3, Source::ContextSide),
            entry(1, 2, 0.2, 0.2, Source::ContextSide),
        ],
        negatives: vec![
            entry(2, 3, -0.5, -0.5, Source::ResponseSide),
            entry(2, 1, -0.1, -0.1, Source::ResponseSide),
            entry(2, 1 + 5 - 5, 0.0, 0.2, Source::ResponseSidePad),
            entry(3, 2, -0.9, -0.9, Source::ContextSide),
            entry(5, 2, -0.3, -0.3, Source::ContextSide),
            entry(1, 3 - 3 + 1, -0.4, -0.4, Source::ContextSidePad),
        ],
    }
}

#[test]
fn identical_models_have_zero_difference_and_two_ln_two_losses() {
    let m = micro(1);
    let reference = snapshot_reference(&m);
    let p = pairs();
    for pair in &p {
        assert_eq!(
            difference(&m, &reference, &pair.context, &pair.response).unwrap(),
            0.0
        );
    }
    for variant in [Variant::NoGroup, Variant::NoScores] {
        let l = group_objective(&m, &reference, &p, &group_k1(), &variant.config(1)).unwrap();
        assert!((l - 2.0 * LN2).abs() < 1e-12, "{variant:?}: {l}");
    }
    let mut unit = group_k1();
    unit.positives.iter_mut().for_each(|e| e.weight = 1.0);
    unit.negatives.iter_mut().for_each(|e| e.weight = -1.0);
    let l = group_objective(&m, &reference, &p, &unit, &Variant::Full.config(1)).unwrap();
    assert!((l - 2.0 * LN2).abs() < 1e-12);
}

#[test]
fn uniform_boost_gives_difference_equal_to_length() {
    let mut reference_model = micro(1);
    let (w, b) = reference_model.output_layer();
    reference_model
        .params_mut()
        .get_mut(w)
        .data
        .iter_mut()
        .for_each(|x| *x = 0.0);
    reference_model
        .params_mut()
        .get_mut(b)
        .data
        .iter_mut()
        .for_each(|x| *x = 0.0);
    let reference = snapshot_reference(&reference_model);
    // bias x on two tokens of a 12-way softmax multiplies their probability by e
    let e = std::f64::consts::E;
    let x = (e * 10.0 / (12.0 - 2.0 * e)).ln();
    let mut target = reference_model.clone();
    let bias = target.params_mut().get_mut(b);
    bias.data[5] = x;
    bias.data[EOS] = x;
    let d = difference(&target, &reference, &[4, 6], &[5, 5, 5, EOS]).unwrap();
    assert!((d - 4.0).abs() < 1e-12, "{d}");
}

#[test]
fn difference_equals_two_separate_passes() {
    let target = micro(2);
    let reference = snapshot_reference(&micro(1));
    let p = &pairs()[3];
    let d = difference(&target, &reference, &p.context, &p.response).unwrap();
    let lt = target.cond_log_prob(&p.context, &p.response).unwrap();
    let lr = reference.cond_log_prob(&p.context, &p.response).unwrap();
    assert_eq!(d, lt - lr);
    assert_ne!(d, 0.0);
}

#[test]
fn vocab_mismatch_is_rejected() {
    let small = micro(1);
    let big = DialogueModel::new(ModelConfig {
        vocab_size: 20,
        ..*small.config()
    })
    .unwrap();
    let reference = snapshot_reference(&big);
    assert!(matches!(
        difference(&small, &reference, &[4], &[EOS]),
        Err(Error::VocabMismatch { .. })
    ));
}

#[test]
fn model_loss_matches_scalar_loss_on_its_differences() {
    let target = micro(2);
    let reference = snapshot_reference(&micro(1));
    let p = pairs();
    let g = group_k3();
    let cfg = Variant::Full.config(3);
    let d = |e: &GroupEntry| {
        difference(
            &target,
            &reference,
            &p[e.context_id].context,
            &p[e.response_id].response,
        )
        .unwrap()
    };
    let pos: Vec<Term> = g
        .positives
        .iter()
        .map(|e| Term::new(d(e), e.weight))
        .collect();
    let neg: Vec<Term> = g
        .negatives
        .iter()
        .map(|e| Term::new(d(e), e.weight))
        .collect();
    let expected = weighted_group_loss(&pos, &neg, DEFAULT_EPS).unwrap();
    let got = group_objective(&target, &reference, &p, &g, &cfg).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

fn gradient_check(loss: &LossConfig, group: &ContrastiveGroup) -> f64 {
    let target = micro(2);
    let reference = snapshot_reference(&micro(1));
    let p = pairs();
    let prepared = prepare_groups(std::slice::from_ref(group), &p, &reference, loss, 1).unwrap();
    let g = &prepared[0];
    let mut grads = target.params().zero_gradients();
    let base = score_group_backward(&target, &p, g, loss, 1.0, &mut grads).unwrap();
    assert!((base.loss - score_group(&target, &p, g, loss).unwrap().loss).abs() < 1e-12);
    // five-point stencil keeps both truncation and roundoff error near 1e-12
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for (pi, t) in target.params().tensors().iter().enumerate() {
        for k in 0..t.len() {
            let at = |delta: f64| {
                let mut m = target.clone();
                m.params_mut().tensors_mut()[pi].data[k] += delta;
                score_group(&m, &p, g, loss).unwrap().loss
            };
            let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            let analytic = grads.tensors[pi].data[k];
            let denom = analytic.abs().max(numeric.abs());
            if denom > 1e-7 {
                let rel = (analytic - numeric).abs() / denom;
                worst = worst.max(rel);
            } else {
                assert!((analytic - numeric).abs() < 1e-9);
            }
        }
    }
    worst
}

#[test]
fn weighted_loss_gradient_matches_finite_differences() {
    let worst = gradient_check(&Variant::Full.config(1), &group_k1());
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn mixed_objective_gradient_matches_finite_differences() {
    let mut cfg = Variant::NoNegativeGroup.config(3);
    cfg.mle_mix = 0.5;
    let worst = gradient_check(&cfg, &group_k3());
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn ablations_select_expected_members() {
    let g = group_k3();
    let counts = |v: Variant| {
        let (p, n) = select_members(&g, &v.config(3)).unwrap();
        (p.len(), n.len())
    };
    assert_eq!(counts(Variant::Full), (7, 6));
    assert_eq!(counts(Variant::NoGroup), (1, 1));
    assert_eq!(counts(Variant::NoPositiveGroup), (1, 6));
    assert_eq!(counts(Variant::NoNegativeGroup), (7, 1));
    assert_eq!(counts(Variant::NoResponseSide), (4, 3));
    assert_eq!(counts(Variant::NoContextSide), (4, 3));
    assert_eq!(counts(Variant::NoScores), (7, 6));

    let (_, n) = select_members(&g, &Variant::NoGroup.config(3)).unwrap();
    assert_eq!(n[0].raw, -0.9);
    let (p, n) = select_members(&g, &Variant::NoResponseSide.config(3)).unwrap();
    assert!(p
        .iter()
        .chain(&n)
        .all(|e| e.source.side() != Some(crate::bm25::Side::Response)));
}

#[test]
fn ablation_configs_are_distinct_and_valid() {
    let configs: Vec<LossConfig> = Variant::ALL.iter().map(|v| v.config(3)).collect();
    for (i, a) in configs.iter().enumerate() {
        a.validate().unwrap();
        for b in &configs[i + 1..] {
            assert_ne!(a, b);
        }
    }
    let labels: std::collections::HashSet<&str> = Variant::ALL.iter().map(|v| v.label()).collect();
    assert_eq!(labels.len(), 7);
}

#[test]
fn inconsistent_switches_are_rejected() {
    let mut c = Variant::Full.config(3);
    c.ablations.no_group = true;
    assert!(c.validate().is_err());
    let mut c = Variant::NoGroup.config(3);
    c.ablations.no_neg_group = true;
    assert!(c.validate().is_err());
    let mut c = Variant::Full.config(3);
    c.ablations.no_scores = true;
    assert!(c.validate().is_err());
    let mut c = Variant::Full.config(3);
    c.eps = 0.5;
    assert!(c.validate().is_err());
}

#[test]
fn unweighted_variants_ignore_stored_weights() {
    let reference = snapshot_reference(&micro(1));
    let prepared = prepare_groups(
        &[group_k3()],
        &pairs(),
        &reference,
        &Variant::NoScores.config(3),
        1,
    )
    .unwrap();
    assert!(prepared[0].positives.iter().all(|m| m.weight == 1.0));
    assert!(prepared[0].negatives.iter().all(|m| m.weight == -1.0));
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        optimizer: AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
        batch_size: 2,
        max_epochs: epochs,
        patience: 100,
        validations_per_epoch: 1,
        seed: 5,
        workers: 2,
        grad_chunk: 1,
    }
}

#[test]
fn zero_steps_leave_target_equal_to_reference() {
    let m = micro(1);
    let reference = snapshot_reference(&m);
    let p = pairs();
    let groups = [group_k1(), group_k1()];
    let out = train_contrastive(
        m.clone(),
        &reference,
        &p,
        &groups,
        &p,
        &groups,
        &Variant::NoScores.config(1),
        &train_config(0),
        None,
    )
    .unwrap();
    assert_eq!(out.steps, 0);
    assert_eq!(out.model.params(), reference.params());
    assert!((out.best_validation_loss - 2.0 * LN2).abs() < 1e-12);
}

#[test]
fn training_separates_positives_from_negatives_and_keeps_reference_frozen() {
    let m = micro(1);
    let reference = snapshot_reference(&m);
    let frozen = reference.params().clone();
    let p = pairs();
    let groups = [group_k1(), group_k3()];
    let cfg = Variant::Full.config(3);
    let out = train_contrastive(
        m,
        &reference,
        &p,
        &groups,
        &p,
        &groups,
        &cfg,
        &train_config(30),
        None,
    )
    .unwrap();
    assert_eq!(reference.params(), &frozen);
    let last = out.log.iter().rev().find(|r| r.split == "valid").unwrap();
    assert!(last.mean_d_pos.unwrap() > 0.0);
    assert!(last.mean_d_neg.unwrap() < 0.0);
    let first = out.log.iter().find(|r| r.split == "valid").unwrap();
    assert!(out.best_validation_loss < first.loss);
}

#[test]
fn training_is_deterministic_across_runs_and_workers() {
    let m = micro(1);
    let reference = snapshot_reference(&m);
    let p = pairs();
    let groups = [group_k1(), group_k3(), group_k1()];
    let cfg = Variant::Full.config(3);
    let a = train_contrastive(
        m.clone(),
        &reference,
        &p,
        &groups,
        &p,
        &groups,
        &cfg,
        &train_config(3),
        None,
    )
    .unwrap();
    let mut one = train_config(3);
    one.workers = 1;
    let b = train_contrastive(m, &reference, &p, &groups, &p, &groups, &cfg, &one, None).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.log, b.log);
}

#[test]
fn non_finite_parameters_abort_training() {
    let mut m = micro(1);
    let reference = snapshot_reference(&m);
    m.params_mut().tensors_mut()[0].data[4 * 8] = f64::NAN;
    let p = pairs();
    let groups = [group_k1()];
    let err = train_contrastive(
        m,
        &reference,
        &p,
        &groups,
        &p,
        &groups,
        &Variant::Full.config(1),
        &train_config(1),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
}

#[test]
fn empty_cache_is_rejected() {
    let m = micro(1);
    let reference = snapshot_reference(&m);
    let p = pairs();
    let err = train_contrastive(
        m,
        &reference,
        &p,
        &[],
        &p,
        &[group_k1()],
        &Variant::Full.config(1),
        &train_config(1),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Empty(_)));
}
