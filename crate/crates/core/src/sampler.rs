//! Contrastive dual sampling.
//!
//! For an anchor pair `(c, r)`:
//!
//! * response side: contexts similar to `c` are retrieved from the context index and
//!   their responses `r'` become candidates `(c, r')`;
//! * context side: responses similar to `r` are retrieved from the response index and
//!   their contexts `c'` become candidates `(c', r)`.
//!
//! Each side keeps its `k` best-matching candidates as positives and its `k` worst
//! (over the retrieval pool plus a seeded random pad) as negatives. The anchor itself
//! is added as a positive with weight 1, giving `2k + 1` positives and `2k` negatives.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Index, Side, DEFAULT_B, DEFAULT_K1};
use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::io;
use crate::matcher::{to_negative_weight, to_positive_weight, Matcher};
use crate::parallel::par_map;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Positives (and negatives) mined per side.
    pub k: usize,
    /// Retrieval pool size per side.
    pub pool_size: usize,
    /// Uniform random candidates added to the negative pool.
    pub random_pad: usize,
    pub seed: u64,
    pub k1: f64,
    pub b: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 3,
            pool_size: 100,
            random_pad: 50,
            seed: 0,
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument(
                "group size k must be at least 1".into(),
            ));
        }
        if self.pool_size < 2 * self.k {
            return Err(Error::InvalidArgument(format!(
                "pool size {} must be at least 2k = {}",
                self.pool_size,
                2 * self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Anchor,
    ResponseSide,
    ContextSide,
    /// Random-pad candidate on the response side.
    ResponseSidePad,
    /// Random-pad candidate on the context side.
    ContextSidePad,
}

impl Source {
    pub fn side(self) -> Option<Side> {
        match self {
            Source::Anchor => None,
            Source::ResponseSide | Source::ResponseSidePad => Some(Side::Response),
            Source::ContextSide | Source::ContextSidePad => Some(Side::Context),
        }
    }

    pub fn is_pad(self) -> bool {
        matches!(self, Source::ResponseSidePad | Source::ContextSidePad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub context_id: usize,
    pub response_id: usize,
    /// `s⁺` for positives, `s⁻` for negatives.
    pub weight: f64,
    /// Matcher score before clamping.
    pub raw: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveGroup {
    pub anchor_id: usize,
    pub positives: Vec<GroupEntry>,
    pub negatives: Vec<GroupEntry>,
}

impl ContrastiveGroup {
    /// Checks cardinalities, weight ranges, id bounds and duplicate combinations.
    pub fn validate(&self, k: usize, corpus_len: usize) -> Result<()> {
        let fail = |message: String| Error::GroupInvariant {
            anchor: self.anchor_id,
            message,
        };
        if self.positives.len() != 2 * k + 1 {
            return Err(fail(format!(
                "{} positives, expected {}",
                self.positives.len(),
                2 * k + 1
            )));
        }
        if self.negatives.len() != 2 * k {
            return Err(fail(format!(
                "{} negatives, expected {}",
                self.negatives.len(),
                2 * k
            )));
        }
        let anchors = self
            .positives
            .iter()
            .filter(|e| e.context_id == self.anchor_id && e.response_id == self.anchor_id)
            .count();
        if anchors != 1 {
            return Err(fail(format!(
                "anchor pair appears {anchors} times among positives"
            )));
        }
        let mut seen = HashSet::new();
        for e in self.positives.iter().chain(&self.negatives) {
            if e.context_id >= corpus_len || e.response_id >= corpus_len {
                return Err(fail(format!(
                    "entry ({}, {}) outside corpus of {corpus_len}",
                    e.context_id, e.response_id
                )));
            }
            if !seen.insert((e.context_id, e.response_id)) {
                return Err(fail(format!(
                    "duplicate entry ({}, {})",
                    e.context_id, e.response_id
                )));
            }
        }
        if let Some(e) = self
            .positives
            .iter()
            .find(|e| !(e.weight > 0.0 && e.weight <= 1.0))
        {
            return Err(fail(format!("positive weight {} outside (0, 1]", e.weight)));
        }
        if let Some(e) = self
            .negatives
            .iter()
            .find(|e| !(-1.0..=0.0).contains(&e.weight))
        {
            return Err(fail(format!(
                "negative weight {} outside [-1, 0]",
                e.weight
            )));
        }
        Ok(())
    }
}

/// Both retrieval indexes over one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Indexes {
    pub context: Bm25Index,
    pub response: Bm25Index,
}

impl Indexes {
    pub fn build(pairs: &[TokenizedPair], k1: f64, b: f64) -> Self {
        Indexes {
            context: Bm25Index::build(pairs, Side::Context, k1, b),
            response: Bm25Index::build(pairs, Side::Response, k1, b),
        }
    }
}

/// Per-anchor seed so padding does not depend on iteration order.
fn anchor_seed(seed: u64, anchor: usize) -> u64 {
    let mut z = seed ^ (anchor as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_pad(n: usize, anchor: usize, config: &SamplerConfig) -> Vec<usize> {
    if n <= 1 || config.random_pad == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(anchor_seed(config.seed, anchor));
    let amount = config.random_pad.min(n - 1);
    let mut ids: Vec<usize> = sample(&mut rng, n - 1, amount)
        .into_iter()
        .map(|i| if i >= anchor { i + 1 } else { i })
        .collect();
    ids.sort_unstable();
    ids
}

struct Scored {
    id: usize,
    raw: f64,
    padded: bool,
}

/// Top-k positives and bottom-k negatives for one side.
fn select_side(
    pool: &[usize],
    pad: &[usize],
    k: usize,
    score: impl Fn(usize) -> Result<f64>,
) -> Result<(Vec<Scored>, Vec<Scored>)> {
    let pool_set: HashSet<usize> = pool.iter().copied().collect();
    let mut candidates: Vec<Scored> = Vec::with_capacity(pool.len() + pad.len());
    for &id in pool {
        candidates.push(Scored {
            id,
            raw: score(id)?,
            padded: false,
        });
    }
    for &id in pad {
        if !pool_set.contains(&id) {
            candidates.push(Scored {
                id,
                raw: score(id)?,
                padded: true,
            });
        }
    }
    let by_desc = |a: &Scored, b: &Scored| b.raw.total_cmp(&a.raw).then(a.id.cmp(&b.id));
    let by_asc = |a: &Scored, b: &Scored| a.raw.total_cmp(&b.raw).then(a.id.cmp(&b.id));

    let (mut pool_part, pad_part): (Vec<Scored>, Vec<Scored>) =
        candidates.into_iter().partition(|c| !c.padded);
    pool_part.sort_by(by_desc);
    let mut rest: Vec<Scored>;
    let mut positives: Vec<Scored>;
    if pool_part.len() >= k {
        rest = pool_part.split_off(k);
        positives = pool_part;
        rest.extend(pad_part);
    } else {
        // Pool too small: positives fall back to the best padded candidates.
        let mut all = pool_part;
        all.extend(pad_part);
        all.sort_by(by_desc);
        rest = all.split_off(k.min(all.len()));
        positives = all;
    }
    if positives.len() < k {
        return Err(Error::CorpusTooSmall(format!(
            "only {} positive candidates for k = {k}",
            positives.len()
        )));
    }
    rest.sort_by(by_asc);
    if rest.len() < k {
        return Err(Error::CorpusTooSmall(format!(
            "only {} negative candidates for k = {k}",
            rest.len()
        )));
    }
    rest.truncate(k);
    positives.truncate(k);
    Ok((positives, rest))
}

/// Builds the contrastive group for `anchor`. `pairs[i].id` must equal `i`.
pub fn dual_sample(
    anchor: &TokenizedPair,
    pairs: &[TokenizedPair],
    indexes: &Indexes,
    matcher: &dyn Matcher,
    config: &SamplerConfig,
) -> Result<ContrastiveGroup> {
    config.validate()?;
    let k = config.k;
    let a = anchor.id;
    let pad = random_pad(pairs.len(), a, config);

    let response_pool: Vec<usize> = indexes
        .context
        .retrieve(&anchor.context, config.pool_size, Some(a))
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    let (resp_pos, resp_neg) = select_side(&response_pool, &pad, k, |j| {
        matcher.score(&anchor.context, &pairs[j].response)
    })?;

    let context_pool: Vec<usize> = indexes
        .response
        .retrieve(&anchor.response, config.pool_size, Some(a))
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    let (ctx_pos, ctx_neg) = select_side(&context_pool, &pad, k, |j| {
        matcher.score(&pairs[j].context, &anchor.response)
    })?;

    let response_entry = |s: &Scored, weight: f64| GroupEntry {
        context_id: a,
        response_id: s.id,
        weight,
        raw: s.raw,
        source: if s.padded {
            Source::ResponseSidePad
        } else {
            Source::ResponseSide
        },
    };
    let context_entry = |s: &Scored, weight: f64| GroupEntry {
        context_id: s.id,
        response_id: a,
        weight,
        raw: s.raw,
        source: if s.padded {
            Source::ContextSidePad
        } else {
            Source::ContextSide
        },
    };

    let mut positives = Vec::with_capacity(2 * k + 1);
    positives.push(GroupEntry {
        context_id: a,
        response_id: a,
        weight: 1.0,
        raw: matcher.score(&anchor.context, &anchor.response)?,
        source: Source::Anchor,
    });
    for s in &resp_pos {
        positives.push(response_entry(s, to_positive_weight(s.raw)?));
    }
    for s in &ctx_pos {
        positives.push(context_entry(s, to_positive_weight(s.raw)?));
    }
    let mut negatives = Vec::with_capacity(2 * k);
    for s in &resp_neg {
        negatives.push(response_entry(s, to_negative_weight(s.raw)?));
    }
    for s in &ctx_neg {
        negatives.push(context_entry(s, to_negative_weight(s.raw)?));
    }
    Ok(ContrastiveGroup {
        anchor_id: a,
        positives,
        negatives,
    })
}

/// One group per pair, in pair order.
pub fn sample_groups(
    pairs: &[TokenizedPair],
    indexes: &Indexes,
    matcher: &dyn Matcher,
    config: &SamplerConfig,
    workers: usize,
) -> Result<Vec<ContrastiveGroup>> {
    for (i, p) in pairs.iter().enumerate() {
        if p.id != i {
            return Err(Error::InvalidArgument(format!(
                "pair at position {i} has id {}",
                p.id
            )));
        }
    }
    par_map(pairs, workers, |p| {
        dual_sample(p, pairs, indexes, matcher, config)
    })
    .into_iter()
    .collect()
}

/// Samples every pair and writes the group cache.
pub fn sample_corpus(
    pairs: &[TokenizedPair],
    indexes: &Indexes,
    matcher: &dyn Matcher,
    config: &SamplerConfig,
    workers: usize,
    out: &Path,
) -> Result<Vec<ContrastiveGroup>> {
    let groups = sample_groups(pairs, indexes, matcher, config, workers)?;
    write_cache(out, &groups)?;
    Ok(groups)
}

pub fn write_cache(path: &Path, groups: &[ContrastiveGroup]) -> Result<()> {
    io::write_jsonl(path, groups)
}

pub fn read_cache(path: &Path) -> Result<Vec<ContrastiveGroup>> {
    io::read_jsonl(path)
}
