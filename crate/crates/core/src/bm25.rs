//! Okapi BM25 over token-id documents.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ set(q)} idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln((N − df(t) + 0.5) / (df(t) + 0.5) + 1)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizedPair, UNK};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Context,
    Response,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    pub side: Side,
    pub k1: f64,
    pub b: f64,
    /// term → (document position, term frequency), ascending by position.
    postings: BTreeMap<usize, Vec<(usize, u32)>>,
    doc_len: Vec<usize>,
    /// Pair id of each indexed document.
    pair_ids: Vec<usize>,
    avg_len: f64,
}

/// Content tokens of a document: reserved ids other than UNK are dropped.
pub fn document_terms(ids: &[usize]) -> Vec<usize> {
    ids.iter()
        .copied()
        .filter(|&i| i == UNK || i >= 4)
        .collect()
}

impl Bm25Index {
    pub fn build(pairs: &[TokenizedPair], side: Side, k1: f64, b: f64) -> Self {
        let docs: Vec<Vec<usize>> = pairs
            .iter()
            .map(|p| match side {
                Side::Context => document_terms(&p.context),
                Side::Response => document_terms(&p.response),
            })
            .collect();
        let ids = pairs.iter().map(|p| p.id).collect();
        Self::from_documents(&docs, ids, side, k1, b)
    }

    pub fn from_documents(
        docs: &[Vec<usize>],
        pair_ids: Vec<usize>,
        side: Side,
        k1: f64,
        b: f64,
    ) -> Self {
        assert_eq!(docs.len(), pair_ids.len());
        let mut postings: BTreeMap<usize, Vec<(usize, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (pos, doc) in docs.iter().enumerate() {
            let mut tf: HashMap<usize, u32> = HashMap::new();
            for &t in doc {
                *tf.entry(t).or_insert(0) += 1;
            }
            let mut terms: Vec<(usize, u32)> = tf.into_iter().collect();
            terms.sort_unstable();
            for (t, c) in terms {
                postings.entry(t).or_default().push((pos, c));
            }
            doc_len.push(doc.len());
        }
        let total: usize = doc_len.iter().sum();
        let avg_len = if total == 0 {
            1.0
        } else {
            total as f64 / docs.len() as f64
        };
        Bm25Index {
            side,
            k1,
            b,
            postings,
            doc_len,
            pair_ids,
            avg_len,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn pair_ids(&self) -> &[usize] {
        &self.pair_ids
    }

    pub fn document_frequency(&self, term: usize) -> usize {
        self.postings.get(&term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: usize) -> f64 {
        let n = self.len() as f64;
        let df = self.document_frequency(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// BM25 score of every indexed document, by document position.
    pub fn scores(&self, query: &[usize]) -> Vec<f64> {
        let mut scores = vec![0.0; self.len()];
        let terms: BTreeSet<usize> = document_terms(query).into_iter().collect();
        for t in terms {
            let Some(list) = self.postings.get(&t) else {
                continue;
            };
            let idf = self.idf(t);
            for &(pos, tf) in list {
                let tf = tf as f64;
                let norm = 1.0 - self.b + self.b * self.doc_len[pos] as f64 / self.avg_len;
                scores[pos] += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm);
            }
        }
        scores
    }

    /// Up to `limit` pair ids by descending score (ties: lower pair id first),
    /// with `exclude` removed.
    pub fn retrieve(
        &self,
        query: &[usize],
        limit: usize,
        exclude: Option<usize>,
    ) -> Vec<(usize, f64)> {
        let scores = self.scores(query);
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .map(|(pos, s)| (self.pair_ids[pos], s))
            .filter(|(id, _)| Some(*id) != exclude)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(limit);
        ranked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the formula, scanning whole documents.
    fn oracle(docs: &[Vec<usize>], query: &[usize], k1: f64, b: f64) -> Vec<f64> {
        let n = docs.len() as f64;
        let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let mut q: Vec<usize> = query.to_vec();
        q.sort();
        q.dedup();
        docs.iter()
            .map(|d| {
                q.iter()
                    .map(|t| {
                        let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                        let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                        let tf = d.iter().filter(|x| *x == t).count() as f64;
                        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg))
                    })
                    .sum()
            })
            .collect()
    }

    fn toy() -> Vec<Vec<usize>> {
        vec![
            vec![10, 11, 12, 10],
            vec![11, 13],
            vec![14, 15, 16, 17, 10],
            vec![12, 12, 12],
            vec![13, 14, 11, 10, 16, 18],
        ]
    }

    #[test]
    fn absent_term_contributes_nothing() {
        let idx = Bm25Index::from_documents(&toy(), (0..5).collect(), Side::Context, 1.2, 0.75);
        assert!(idx.scores(&[99]).iter().all(|&s| s == 0.0));
        assert_eq!(idx.scores(&[10, 99]), idx.scores(&[10]));
    }

    #[test]
    fn single_document_ranks_first() {
        let docs = vec![vec![4, 5, 6]];
        let idx = Bm25Index::from_documents(&docs, vec![0], Side::Context, 1.2, 0.75);
        assert_eq!(idx.retrieve(&[4, 5, 6], 10, None)[0].0, 0);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let docs = toy();
        let idx = Bm25Index::from_documents(&docs, (0..5).collect(), Side::Context, 1.2, 0.75);
        for q in [vec![10, 12], vec![11, 13, 18], vec![12, 12, 16], vec![17]] {
            let expected = oracle(&docs, &q, 1.2, 0.75);
            for (a, e) in idx.scores(&q).iter().zip(&expected) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
            let mut order: Vec<usize> = (0..5).collect();
            order.sort_by(|&a, &b| expected[b].total_cmp(&expected[a]).then(a.cmp(&b)));
            let got: Vec<usize> = idx
                .retrieve(&q, 5, None)
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            assert_eq!(got, order);
        }
    }

    #[test]
    fn limit_exceeding_corpus_returns_rest() {
        let idx = Bm25Index::from_documents(&toy(), (0..5).collect(), Side::Context, 1.2, 0.75);
        let got: Vec<usize> = idx
            .retrieve(&[10], 100, Some(2))
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        assert_eq!(got.len(), 4);
        assert!(!got.contains(&2));
    }

    #[test]
    fn ties_break_by_lower_id() {
        let docs = vec![vec![5, 6], vec![7], vec![5, 6], vec![7]];
        let idx = Bm25Index::from_documents(&docs, (0..4).collect(), Side::Response, 1.2, 0.75);
        let got: Vec<usize> = idx
            .retrieve(&[5], 4, None)
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        assert_eq!(got, vec![0, 2, 1, 3]);
    }
}
