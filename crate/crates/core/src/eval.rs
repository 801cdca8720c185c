//! Automatic metrics: BLEU-n, Dist-n, embedding similarity, coherence, Ent-n.
//!
//! All metrics work on whitespace tokens. Corpus scores are means of
//! per-sentence scores, accumulated in input order.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_text, DialoguePair, TokenizedPair, Vocab};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::io;
use crate::models::{generate, DecodeConfig, DialogueModel};
use crate::parallel::par_map;
use crate::tensor::cosine;

/// Text written at the top of every report.
pub const METRIC_NOTES: &str = "\
# bleu: sentence-level, brevity penalty, p1 unsmoothed, p2..p4 add-one smoothed, corpus mean
# dist: unique n-grams / total n-grams over all hypotheses
# embeddings: no stopword filtering; out-of-vocabulary tokens use the mean vector
# extrema: per-dimension value of largest magnitude, sign kept
# ent: add-one smoothed training n-gram distribution, unseen floor 1/(T+V+1), natural log
# scaling: bleu, dist and embedding metrics x100; ent unscaled";

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> Vec<Vec<&str>> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens
        .windows(n)
        .map(|w| w.iter().map(|t| t.as_ref()).collect())
        .collect()
}

fn counts<'a>(grams: &[Vec<&'a str>]) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    for g in grams {
        *m.entry(g.clone()).or_insert(0) += 1;
    }
    m
}

/// Clipped `(matches, total)` of order-`n` n-grams.
fn modified_precision<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let h = ngrams(hyp, n);
    let r = counts(&ngrams(reference, n));
    let matched = counts(&h)
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, h.len())
}

/// BLEU-`n` of one sentence.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> f64 {
    if hyp.is_empty() || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for m in 1..=n {
        let (matched, total) = modified_precision(hyp, reference, m);
        let p = if m == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / n as f64).exp()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!(
            "{a} hypotheses but {b} references"
        )));
    }
    if a == 0 {
        return Err(Error::Empty("no hypotheses to evaluate".into()));
    }
    Ok(())
}

/// Corpus mean of [`sentence_bleu`].
pub fn bleu_n<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    n: usize,
) -> Result<f64> {
    check_lengths(hypotheses.len(), references.len())?;
    let total: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| sentence_bleu(h, r, n))
        .sum();
    Ok(total / hypotheses.len() as f64)
}

/// Unique n-grams over total n-grams across all hypotheses; 0 when there are none.
pub fn distinct_n<S: AsRef<str>>(hypotheses: &[Vec<S>], n: usize) -> f64 {
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for h in hypotheses {
        for g in ngrams(h, n) {
            total += 1;
            unique.insert(g);
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

fn vectors<'t, S: AsRef<str>>(table: &'t EmbeddingTable, tokens: &[S]) -> Result<Vec<&'t [f64]>> {
    if tokens.is_empty() {
        return Err(Error::Empty("cannot embed an empty utterance".into()));
    }
    Ok(tokens.iter().map(|t| table.vector(t.as_ref())).collect())
}

fn extrema_vector(vs: &[&[f64]]) -> Vec<f64> {
    let mut out = vs[0].to_vec();
    for v in &vs[1..] {
        for (o, &x) in out.iter_mut().zip(v.iter()) {
            if x.abs() > o.abs() {
                *o = x;
            }
        }
    }
    out
}

/// Mean over `a` of each token's best cosine against `b`.
fn greedy_match(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let total: f64 = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| cosine(x, y))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / a.len() as f64
}

/// Average, extrema and greedy similarity of one hypothesis/reference pair.
pub fn sentence_embedding_metrics<S: AsRef<str>>(
    hyp: &[S],
    reference: &[S],
    table: &EmbeddingTable,
) -> Result<(f64, f64, f64)> {
    let h = vectors(table, hyp)?;
    let r = vectors(table, reference)?;
    let average = cosine(
        &table.embed_utterance(hyp)?,
        &table.embed_utterance(reference)?,
    );
    let extrema = cosine(&extrema_vector(&h), &extrema_vector(&r));
    let greedy = (greedy_match(&h, &r) + greedy_match(&r, &h)) / 2.0;
    Ok((average, extrema, greedy))
}

/// Corpus means of `(average, extrema, greedy)`.
pub fn embedding_metrics<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    table: &EmbeddingTable,
) -> Result<(f64, f64, f64)> {
    check_lengths(hypotheses.len(), references.len())?;
    let mut sums = (0.0, 0.0, 0.0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (a, e, g) = sentence_embedding_metrics(h, r, table)?;
        sums.0 += a;
        sums.1 += e;
        sums.2 += g;
    }
    let n = hypotheses.len() as f64;
    Ok((sums.0 / n, sums.1 / n, sums.2 / n))
}

/// Mean cosine between the flattened context and the hypothesis mean vectors.
pub fn coherence<S: AsRef<str>>(
    contexts: &[Vec<S>],
    hypotheses: &[Vec<S>],
    table: &EmbeddingTable,
) -> Result<f64> {
    check_lengths(hypotheses.len(), contexts.len())?;
    let mut total = 0.0;
    for (c, h) in contexts.iter().zip(hypotheses) {
        total += cosine(&table.embed_utterance(c)?, &table.embed_utterance(h)?);
    }
    Ok(total / hypotheses.len() as f64)
}

/// Add-one smoothed n-gram distribution of a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramDistribution {
    n: usize,
    counts: HashMap<Vec<String>, usize>,
    total: usize,
}

impl NgramDistribution {
    pub fn fit<S: AsRef<str>>(sentences: &[Vec<S>], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "n-gram order must be positive".into(),
            ));
        }
        let mut counts = HashMap::new();
        let mut total = 0;
        for s in sentences {
            for g in ngrams(s, n) {
                *counts
                    .entry(g.iter().map(|t| t.to_string()).collect())
                    .or_insert(0) += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::Empty(format!("training data has no {n}-grams")));
        }
        Ok(NgramDistribution { n, counts, total })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Number of distinct training n-grams.
    pub fn types(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `(count + 1) / (T + V + 1)`, one extra slot reserved for all unseen n-grams.
    pub fn prob<S: AsRef<str>>(&self, gram: &[S]) -> f64 {
        let key: Vec<String> = gram.iter().map(|t| t.as_ref().to_string()).collect();
        let c = self.counts.get(&key).copied().unwrap_or(0);
        (c as f64 + 1.0) / (self.total + self.types() + 1) as f64
    }

    /// Probability of any unseen n-gram.
    pub fn floor(&self) -> f64 {
        1.0 / (self.total + self.types() + 1) as f64
    }
}

/// Mean over hypotheses of the per-n-gram negative log-probability. Hypotheses
/// shorter than `n` are skipped.
pub fn entropy_n<S: AsRef<str>>(hypotheses: &[Vec<S>], dist: &NgramDistribution) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for h in hypotheses {
        let grams = ngrams(h, dist.order());
        if grams.is_empty() {
            continue;
        }
        let nll: f64 = grams.iter().map(|g| -dist.prob(g).ln()).sum();
        total += nll / grams.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Empty(format!(
            "no hypothesis has a {}-gram",
            dist.order()
        )));
    }
    Ok(total / counted as f64)
}

/// Unscaled metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub dist: [f64; 3],
    pub average: f64,
    pub extrema: f64,
    pub greedy: f64,
    pub coherence: f64,
    pub ent: [f64; 2],
    pub count: usize,
}

impl EvalReport {
    /// Checks value ranges; a small tolerance absorbs cosine rounding.
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-9;
        let unit = |x: f64| (-tol..=1.0 + tol).contains(&x);
        let sim = |x: f64| (-1.0 - tol..=1.0 + tol).contains(&x);
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if let Some(x) = self.bleu.iter().chain(&self.dist).find(|&&x| !unit(x)) {
            return bad(format!("bleu/dist value {x} outside [0, 1]"));
        }
        if let Some(x) = [self.average, self.extrema, self.greedy, self.coherence]
            .into_iter()
            .find(|&x| !sim(x))
        {
            return bad(format!("embedding metric {x} outside [-1, 1]"));
        }
        if let Some(x) = self.ent.iter().find(|&&x| !(x >= 0.0)) {
            return bad(format!("entropy {x} is negative"));
        }
        Ok(())
    }

    /// `(name, value)` rows in report units.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        for (i, b) in self.bleu.iter().enumerate() {
            rows.push((format!("bleu-{}", i + 1), b * 100.0));
        }
        for (i, d) in self.dist.iter().enumerate() {
            rows.push((format!("dist-{}", i + 1), d * 100.0));
        }
        rows.push(("average".into(), self.average * 100.0));
        rows.push(("extrema".into(), self.extrema * 100.0));
        rows.push(("greedy".into(), self.greedy * 100.0));
        rows.push(("coherence".into(), self.coherence * 100.0));
        for (i, e) in self.ent.iter().enumerate() {
            rows.push((format!("ent-{}", i + 1), *e));
        }
        rows
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(METRIC_NOTES);
        s.push('\n');
        s.push_str(&format!("count = {}\n", self.count));
        for (k, v) in self.rows() {
            s.push_str(&format!("{k} = {v:.4}\n"));
        }
        s
    }
}

/// One generated response with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub context: Vec<String>,
    pub reference: String,
    pub hypothesis: String,
}

/// Training-side statistics needed by Ent-1 and Ent-2.
#[derive(Debug, Clone)]
pub struct EntropyModel {
    pub unigram: NgramDistribution,
    pub bigram: NgramDistribution,
}

impl EntropyModel {
    pub fn fit(train: &[DialoguePair]) -> Result<Self> {
        let sentences: Vec<Vec<String>> =
            train.iter().map(|p| tokenize_text(&p.response)).collect();
        Ok(EntropyModel {
            unigram: NgramDistribution::fit(&sentences, 1)?,
            bigram: NgramDistribution::fit(&sentences, 2)?,
        })
    }
}

/// Scores hypotheses against the raw test pairs.
pub fn score_hypotheses(
    test: &[DialoguePair],
    hypotheses: &[Vec<String>],
    table: &EmbeddingTable,
    entropy: &EntropyModel,
) -> Result<EvalReport> {
    check_lengths(hypotheses.len(), test.len())?;
    let references: Vec<Vec<String>> = test.iter().map(|p| tokenize_text(&p.response)).collect();
    let contexts: Vec<Vec<String>> = test
        .iter()
        .map(|p| p.context.iter().flat_map(|t| tokenize_text(t)).collect())
        .collect();
    // embedding metrics need a token on both sides
    let placeholder = vec![crate::corpus::RESERVED[crate::corpus::UNK].to_string()];
    let embeddable: Vec<Vec<String>> = hypotheses
        .iter()
        .map(|h| {
            if h.is_empty() {
                placeholder.clone()
            } else {
                h.clone()
            }
        })
        .collect();
    let mut bleu = [0.0; 4];
    for (n, b) in bleu.iter_mut().enumerate() {
        *b = bleu_n(hypotheses, &references, n + 1)?;
    }
    let (average, extrema, greedy) = embedding_metrics(&embeddable, &references, table)?;
    let report = EvalReport {
        bleu,
        dist: [
            distinct_n(hypotheses, 1),
            distinct_n(hypotheses, 2),
            distinct_n(hypotheses, 3),
        ],
        average,
        extrema,
        greedy,
        coherence: coherence(&contexts, &embeddable, table)?,
        ent: [
            entropy_n(hypotheses, &entropy.unigram).unwrap_or(0.0),
            entropy_n(hypotheses, &entropy.bigram).unwrap_or(0.0),
        ],
        count: hypotheses.len(),
    };
    report.validate()?;
    Ok(report)
}

/// Runs `generator` on every test pair and scores the outputs.
pub fn evaluate_with<G>(
    test: &[DialoguePair],
    tokenized: &[TokenizedPair],
    generator: G,
    table: &EmbeddingTable,
    entropy: &EntropyModel,
    workers: usize,
) -> Result<(EvalReport, Vec<ManifestEntry>)>
where
    G: Fn(&TokenizedPair) -> Result<Vec<String>> + Sync,
{
    if test.is_empty() {
        return Err(Error::Empty("empty test set".into()));
    }
    check_lengths(test.len(), tokenized.len())?;
    let hypotheses = par_map(tokenized, workers, &generator)
        .into_iter()
        .collect::<Result<Vec<Vec<String>>>>()?;
    let report = score_hypotheses(test, &hypotheses, table, entropy)?;
    let manifest = test
        .iter()
        .zip(&hypotheses)
        .map(|(p, h)| ManifestEntry {
            context: p.context.clone(),
            reference: p.response.clone(),
            hypothesis: h.join(" "),
        })
        .collect();
    Ok((report, manifest))
}

/// Decodes every test context with `model` and scores the outputs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    model: &DialogueModel,
    vocab: &Vocab,
    test: &[DialoguePair],
    tokenized: &[TokenizedPair],
    decode: &DecodeConfig,
    table: &EmbeddingTable,
    entropy: &EntropyModel,
    workers: usize,
) -> Result<(EvalReport, Vec<ManifestEntry>)> {
    let generator = |p: &TokenizedPair| Ok(vocab.decode(&generate(model, &p.context, decode)?));
    evaluate_with(test, tokenized, generator, table, entropy, workers)
}

/// Writes `report.txt`, `report.json` and `manifest.jsonl` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport, manifest: &[ManifestEntry]) -> Result<()> {
    io::write_file(&dir.join("report.txt"), report.to_text().as_bytes())?;
    io::write_file(
        &dir.join("report.json"),
        &serde_json::to_vec_pretty(report)?,
    )?;
    io::write_jsonl(&dir.join("manifest.jsonl"), manifest)
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_str(&io::read_to_string(
        &dir.join("report.json"),
    )?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| toks(l)).collect()
    }

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(
            3,
            vec![
                ("a".into(), vec![1.0, 0.0, 0.0]),
                ("b".into(), vec![0.0, 1.0, 0.0]),
                ("c".into(), vec![1.0, 1.0, 0.0]),
                ("d".into(), vec![-2.0, 0.5, 1.0]),
                ("z".into(), vec![0.0, 0.0, 1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&corpus(&["a b", "a c"]), 1), 0.75);
        assert_eq!(distinct_n(&corpus(&["x", "x", "x", "x"]), 1), 0.25);
        assert_eq!(distinct_n(&corpus(&["a b", "a b"]), 2), 0.5);
        assert_eq!(distinct_n(&corpus(&["a"]), 2), 0.0);
    }

    #[test]
    fn distinct_matches_set_oracle() {
        let hyps = corpus(&[
            "i like the red car",
            "i like it",
            "the car is red",
            "i do not know",
            "i do not know",
            "red red red",
            "a",
            "the red car is fast",
            "it is fast",
            "i know",
        ]);
        for n in 1..=3 {
            let mut set = HashSet::new();
            let mut total = 0;
            for h in &hyps {
                if h.len() >= n {
                    for i in 0..=h.len() - n {
                        set.insert(h[i..i + n].join(" "));
                        total += 1;
                    }
                }
            }
            assert_eq!(distinct_n(&hyps, n), set.len() as f64 / total as f64);
        }
    }

    #[test]
    fn duplicating_unique_hypotheses_halves_distinct() {
        let hyps = corpus(&["a b c", "d e f"]);
        let doubled: Vec<Vec<String>> = hyps.iter().chain(&hyps).cloned().collect();
        for n in 1..=3 {
            assert_eq!(distinct_n(&doubled, n), distinct_n(&hyps, n) / 2.0);
        }
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let s = corpus(&["the cat sat on the mat", "hello there"]);
        for n in 1..=4 {
            assert!((bleu_n(&s, &s, n).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(
            bleu_n(&corpus(&["a b"]), &corpus(&["c d"]), 1).unwrap(),
            0.0
        );
        assert!(bleu_n(&corpus(&["a"]), &corpus(&["a", "b"]), 1).is_err());
    }

    #[test]
    fn bleu_hand_computed_fixture() {
        let hyps = corpus(&["the cat the cat", "a b c d e", "x y"]);
        let refs = corpus(&["the cat is here", "a b c", "x y z w"]);
        // sentence 1: unigrams clipped to 2/4, bigram "the cat" clipped to 1 of 3, equal lengths
        let s1_p1: f64 = 2.0 / 4.0;
        let s1_p2: f64 = (1.0 + 1.0) / (3.0 + 1.0);
        let s1 = (s1_p1.ln() / 2.0 + s1_p2.ln() / 2.0).exp();
        // sentence 2: longer than reference, no penalty
        let s2_p1: f64 = 3.0 / 5.0;
        let s2_p2: f64 = (2.0 + 1.0) / (4.0 + 1.0);
        let s2 = (s2_p1.ln() / 2.0 + s2_p2.ln() / 2.0).exp();
        // sentence 3: brevity penalty exp(1 - 4/2)
        let s3_p2: f64 = (1.0 + 1.0) / (1.0 + 1.0);
        let s3 = (1.0 - 2.0f64).exp() * (s3_p2.ln() / 2.0).exp();
        let expected = (s1 + s2 + s3) / 3.0;
        assert!((bleu_n(&hyps, &refs, 2).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn embedding_identity_and_single_token() {
        let t = table();
        let s = corpus(&["a b c", "d z"]);
        let (a, e, g) = embedding_metrics(&s, &s, &t).unwrap();
        for x in [a, e, g] {
            assert!((x - 1.0).abs() < 1e-12);
        }
        let (a, e, g) = embedding_metrics(&corpus(&["a"]), &corpus(&["c"]), &t).unwrap();
        let c = cosine(t.vector("a"), t.vector("c"));
        for x in [a, e, g] {
            assert!((x - c).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_hand_computed_fixture() {
        let t = table();
        let (a, e, g) = sentence_embedding_metrics(&toks("a d"), &toks("b z"), &t).unwrap();
        // means: (-0.5, 0.25, 0.5) and (0, 0.5, 0.5)
        let avg = cosine(&[-0.5, 0.25, 0.5], &[0.0, 0.5, 0.5]);
        // extrema: (-2, 0.5, 1) and (0, 1, 1)
        let ext = cosine(&[-2.0, 0.5, 1.0], &[0.0, 1.0, 1.0]);
        let cos = |x: &[f64], y: &[f64]| cosine(x, y);
        let (va, vd, vb, vz) = (t.vector("a"), t.vector("d"), t.vector("b"), t.vector("z"));
        let hr = (cos(va, vb).max(cos(va, vz)) + cos(vd, vb).max(cos(vd, vz))) / 2.0;
        let rh = (cos(vb, va).max(cos(vb, vd)) + cos(vz, va).max(cos(vz, vd))) / 2.0;
        assert!((a - avg).abs() < 1e-12);
        assert!((e - ext).abs() < 1e-12);
        assert!((g - (hr + rh) / 2.0).abs() < 1e-12);
        assert!(sentence_embedding_metrics::<String>(&[], &toks("a"), &t).is_err());
    }

    #[test]
    fn coherence_examples() {
        let t = table();
        let c = coherence(&corpus(&["a b"]), &corpus(&["a b"]), &t).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        let c = coherence(&corpus(&["a b"]), &corpus(&["z"]), &t).unwrap();
        assert!(c.abs() < 1e-12);
        let c = coherence(&corpus(&["a", "b c"]), &corpus(&["c", "d"]), &t).unwrap();
        let expected =
            (cosine(t.vector("a"), t.vector("c")) + cosine(&[0.5, 1.0, 0.0], t.vector("d"))) / 2.0;
        assert!((c - expected).abs() < 1e-12);
        assert!(coherence::<String>(&[], &[], &t).is_err());
    }

    #[test]
    fn entropy_floor_and_hand_values() {
        let train = corpus(&["a b", "a c", "a"]);
        let d = NgramDistribution::fit(&train, 1).unwrap();
        // T = 5 tokens, V = 3 types
        assert_eq!(d.floor(), 1.0 / 9.0);
        let unseen = entropy_n(&corpus(&["q r s"]), &d).unwrap();
        assert_eq!(unseen, -(1.0f64 / 9.0).ln());
        let hyp = entropy_n(&corpus(&["a b", "c"]), &d).unwrap();
        let expected =
            (-(4.0f64 / 9.0).ln() - (2.0f64 / 9.0).ln()) / 2.0 / 2.0 + -(2.0f64 / 9.0).ln() / 2.0;
        assert!((hyp - expected).abs() < 1e-12);
        assert!(entropy_n(&corpus(&["a"]), &NgramDistribution::fit(&train, 2).unwrap()).is_err());
    }

    #[test]
    fn entropy_near_zero_for_deterministic_training_data() {
        let train: Vec<Vec<String>> = (0..10_000).map(|_| toks("a")).collect();
        let d = NgramDistribution::fit(&train, 1).unwrap();
        let e = entropy_n(&corpus(&["a"]), &d).unwrap();
        assert!((e + (10_001.0f64 / 10_002.0).ln()).abs() < 1e-12);
        assert!(e < 1e-3);
    }

    #[test]
    fn entropy_drops_for_frequent_ngrams() {
        let train = corpus(&[
            "i do not know",
            "i do not know",
            "i like red cars",
            "you are fast",
        ]);
        let d = NgramDistribution::fit(&train, 2).unwrap();
        let diverse = entropy_n(&corpus(&["you are fast", "red cars"]), &d).unwrap();
        let generic = entropy_n(&corpus(&["i do not know", "i do not know"]), &d).unwrap();
        assert!(generic < diverse);
    }

    #[test]
    fn oracle_generator_scores_perfectly() {
        let test: Vec<DialoguePair> = (0..3)
            .map(|i| DialoguePair {
                id: i,
                context: vec![format!("a b {}", ["c", "d", "z"][i])],
                response: ["a c", "b", "z d a"][i].to_string(),
            })
            .collect();
        let tokenized: Vec<TokenizedPair> = (0..3)
            .map(|id| TokenizedPair {
                id,
                turns: vec![vec![4]],
                context: vec![4],
                response: vec![3],
            })
            .collect();
        let entropy = EntropyModel::fit(&test).unwrap();
        let (report, manifest) = evaluate_with(
            &test,
            &tokenized,
            |p: &TokenizedPair| Ok(tokenize_text(&test[p.id].response)),
            &table(),
            &entropy,
            2,
        )
        .unwrap();
        for b in report.bleu {
            assert!((b - 1.0).abs() < 1e-12);
        }
        for x in [report.average, report.extrema, report.greedy] {
            assert!((x - 1.0).abs() < 1e-12);
        }
        assert_eq!(manifest[2].hypothesis, "z d a");
        assert!(evaluate_with(
            &[],
            &[],
            |_: &TokenizedPair| Ok(vec![]),
            &table(),
            &entropy,
            1
        )
        .is_err());
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &report, &manifest).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), report);
        let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(text.starts_with("# bleu"));
        assert!(text.contains("bleu-1 = 100.0000"));
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::sample::select(vec!["a", "b", "c", "d", "z", "q"]),
            1..6,
        )
        .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_equivariant(
            data in prop::collection::vec((sentence(), sentence()), 1..8),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let t = table();
            let mut shuffled = data.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (h1, r1): (Vec<_>, Vec<_>) = data.into_iter().unzip();
            let (h2, r2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            for n in 1..=4 {
                prop_assert!((bleu_n(&h1, &r1, n).unwrap() - bleu_n(&h2, &r2, n).unwrap()).abs() < 1e-12);
            }
            for n in 1..=3 {
                prop_assert_eq!(distinct_n(&h1, n), distinct_n(&h2, n));
            }
            let a = embedding_metrics(&h1, &r1, &t).unwrap();
            let b = embedding_metrics(&h2, &r2, &t).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12 && (a.2 - b.2).abs() < 1e-12);
        }

        #[test]
        fn greedy_is_symmetric_and_ranges_hold(h in sentence(), r in sentence()) {
            let t = table();
            let (a1, e1, g1) = sentence_embedding_metrics(&h, &r, &t).unwrap();
            let (_, _, g2) = sentence_embedding_metrics(&r, &h, &t).unwrap();
            prop_assert!((g1 - g2).abs() < 1e-12);
            for x in [a1, e1, g1] {
                prop_assert!((-1.0..=1.0 + 1e-12).contains(&x));
            }
            let b = sentence_bleu(&h, &r, 4);
            prop_assert!((0.0..=1.0).contains(&b));
        }
    }
}
