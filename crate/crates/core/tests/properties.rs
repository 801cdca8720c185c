use groupcl::contrastive::loss::{lower_bound, weighted_loss_and_grad};
use groupcl::contrastive::{group_loss, pairwise_loss, weighted_group_loss, Term, DEFAULT_EPS};
use groupcl::corpus::{build_vocab, tokenize, DialoguePair, EOS};
use groupcl::matcher::{CosineMatcher, Matcher};
use groupcl::sampler::{sample_groups, Indexes, SamplerConfig};
use groupcl::synth::{build_corpus, SynthSpec};
use proptest::prelude::*;

fn terms(ds: &[f64], ws: &[f64]) -> Vec<Term> {
    ds.iter().zip(ws).map(|(&d, &w)| Term::new(d, w)).collect()
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

fn utterance() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..6).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn single_term_group_equals_pairwise(dp in -30.0f64..30.0, dn in -30.0f64..30.0) {
        let group = group_loss(&[dp], &[dn], DEFAULT_EPS).unwrap();
        prop_assert!((group - pairwise_loss(dp, dn, DEFAULT_EPS)).abs() < 1e-10);
    }

    #[test]
    fn loss_is_monotone_in_each_difference(
        dp in prop::collection::vec(-6.0f64..6.0, 1..6),
        dn in prop::collection::vec(-6.0f64..6.0, 1..6),
        wp in prop::collection::vec(0.05f64..=1.0, 6),
        wn in prop::collection::vec(0.01f64..=1.0, 6),
    ) {
        let wn: Vec<f64> = wn.iter().map(|w| -w).collect();
        let loss = |dp: &[f64], dn: &[f64]| weighted_group_loss(&terms(dp, &wp), &terms(dn, &wn), DEFAULT_EPS).unwrap();
        let h = 1e-4;
        for i in 0..dp.len() {
            let (mut lo, mut hi) = (dp.clone(), dp.clone());
            lo[i] -= h;
            hi[i] += h;
            prop_assert!(loss(&hi, &dn) < loss(&lo, &dn));
        }
        for i in 0..dn.len() {
            let (mut lo, mut hi) = (dn.clone(), dn.clone());
            lo[i] -= h;
            hi[i] += h;
            prop_assert!(loss(&dp, &hi) > loss(&dp, &lo));
        }
    }

    #[test]
    fn loss_never_drops_below_the_bound(
        dp in prop::collection::vec(-40.0f64..40.0, 1..8),
        dn in prop::collection::vec(-40.0f64..40.0, 1..8),
        wp in prop::collection::vec(0.05f64..=1.0, 8),
        wn in prop::collection::vec(-1.0f64..=0.0, 8),
    ) {
        let pos = terms(&dp, &wp);
        let lg = weighted_loss_and_grad(&pos, &terms(&dn, &wn), DEFAULT_EPS).unwrap();
        prop_assert!(lg.loss >= lower_bound(&pos) - 1e-12);
    }

    #[test]
    fn vocabulary_and_tokenization_round_trip(
        data in prop::collection::vec((prop::collection::vec(utterance(), 1..3), utterance()), 1..10),
    ) {
        let pairs: Vec<DialoguePair> = data
            .into_iter()
            .enumerate()
            .map(|(id, (context, response))| DialoguePair { id, context, response })
            .collect();
        let vocab = build_vocab(&pairs, usize::MAX, 1).unwrap();
        prop_assert_eq!(vocab.to_file_contents(), build_vocab(&pairs, usize::MAX, 1).unwrap().to_file_contents());
        for p in &pairs {
            let t = tokenize(p, &vocab, 64).unwrap();
            prop_assert!(t.context.iter().chain(&t.response).all(|&id| id < vocab.len()));
            prop_assert_eq!(t.response.last(), Some(&EOS));
            let words: Vec<&str> = p.response.split_whitespace().collect();
            prop_assert_eq!(vocab.decode(&t.response[..t.response.len() - 1]), words);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn sampled_groups_respect_structure(seed in 0u64..1000, k in 1usize..4, pool in 8usize..40) {
        let spec = SynthSpec { topics: 6, vocab_size: 120, train: 90, valid: 10, test: 10, embed_dim: 12, seed, ..SynthSpec::default() };
        let corpus = build_corpus(&spec).unwrap();
        let vocab = build_vocab(&corpus.train, usize::MAX, 1).unwrap();
        let pairs: Vec<_> = corpus.train.iter().map(|p| tokenize(p, &vocab, 64).unwrap()).collect();
        let matcher = CosineMatcher::new(&corpus.embeddings, &vocab);
        let cfg = SamplerConfig { k, pool_size: pool, random_pad: 0, seed, ..SamplerConfig::default() };
        let indexes = Indexes::build(&pairs, cfg.k1, cfg.b);
        let groups = sample_groups(&pairs, &indexes, &matcher, &cfg, 1).unwrap();
        for g in &groups {
            g.validate(k, pairs.len()).unwrap();
            prop_assert!(g.positives.iter().chain(&g.negatives).all(|e| (-1.0..=1.0).contains(&e.raw)));
            for side in [groupcl::bm25::Side::Context, groupcl::bm25::Side::Response] {
                let raw = |es: &[groupcl::sampler::GroupEntry]| -> Vec<f64> {
                    es.iter().filter(|e| e.source.side() == Some(side)).map(|e| e.raw).collect()
                };
                let min_pos = raw(&g.positives).into_iter().fold(f64::INFINITY, f64::min);
                let max_neg = raw(&g.negatives).into_iter().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(min_pos >= max_neg, "anchor {}: {} < {}", g.anchor_id, min_pos, max_neg);
            }
            let a = &pairs[g.anchor_id];
            let again = matcher.score(&a.context, &a.response).unwrap();
            prop_assert_eq!(again.to_bits(), g.positives[0].raw.to_bits());
        }
    }
}
