//! Synthetic multi-mapping dialogue corpora with a known match relation.
//!
//! Every topic owns a pool of content words, `contexts_per_response` context
//! prototypes and `responses_per_context` response prototypes; every context
//! prototype matches every response prototype of its topic. The responses of a
//! topic share one head word and differ in a second content word. A fixed share of
//! pairs carries the generic response instead, which matches any context.
//!
//! The companion embedding table gives topic words a shared content direction
//! plus a topic direction, and places the generic response's content words
//! opposite the shared direction, so a cosine matcher ranks generic replies
//! below on-topic and off-topic ones.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{dataset_bytes, tokenize_text, write_dataset, DialoguePair};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::io;

pub const RELATION_FORMAT: &str = "groupcl-synth/1";
pub const GENERIC_RESPONSE: &str = "i don't know .";
pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

const FILLERS: [&str; 14] = [
    "hey",
    "so",
    "well",
    "what",
    "about",
    "tell",
    "me",
    "we",
    "talked",
    "yesterday",
    "really",
    "then",
    "maybe",
    "now",
];
const VERBS: [&str; 3] = ["like", "love", "enjoy"];
const TEMPLATE: [&str; 6] = ["i", "and", ".", "?", "the", "a"];
const GENERIC_CONTENT: [&str; 2] = ["don't", "know"];
const CONTEXT_TOPIC_WORDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub topics: usize,
    /// One-to-many fanout: valid topical responses per context.
    pub responses_per_context: usize,
    /// Many-to-one fanout: valid contexts per topical response.
    pub contexts_per_response: usize,
    pub generic_rate: f64,
    /// Target number of word types; determines the per-topic word pool.
    pub vocab_size: usize,
    pub seed: u64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub embed_dim: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            topics: 20,
            responses_per_context: 5,
            contexts_per_response: 3,
            generic_rate: 0.4,
            vocab_size: 300,
            seed: 0,
            train: 1600,
            valid: 200,
            test: 200,
            embed_dim: 50,
        }
    }
}

impl SynthSpec {
    fn shared_words() -> usize {
        FILLERS.len() + VERBS.len() + TEMPLATE.len() + GENERIC_CONTENT.len()
    }

    /// Content words per topic.
    pub fn words_per_topic(&self) -> usize {
        self.vocab_size.saturating_sub(Self::shared_words()) / self.topics.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.topics == 0 {
            return bad("topic count must be positive".into());
        }
        if self.responses_per_context < 2 || self.contexts_per_response < 2 {
            return bad(format!(
                "fanouts ({}, {}) must both be at least 2",
                self.responses_per_context, self.contexts_per_response
            ));
        }
        if !(0.0..1.0).contains(&self.generic_rate) {
            return bad(format!("generic rate {} outside [0, 1)", self.generic_rate));
        }
        let need = (self.responses_per_context + 1).max(CONTEXT_TOPIC_WORDS);
        if self.words_per_topic() < need {
            return bad(format!(
                "vocabulary of {} leaves {} words per topic for {} topics; at least {need} needed",
                self.vocab_size,
                self.words_per_topic(),
                self.topics
            ));
        }
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return bad("every split needs at least one pair".into());
        }
        if self.embed_dim == 0 {
            return bad("embedding dimension must be positive".into());
        }
        Ok(())
    }

    pub fn split_size(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "valid" => self.valid,
            _ => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPrototype {
    pub topic: usize,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePrototype {
    /// `None` for the generic response.
    pub topic: Option<usize>,
    pub text: String,
}

/// Prototype ids of one generated pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOrigin {
    pub context: usize,
    pub response: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub sha256: String,
    pub pairs: Vec<PairOrigin>,
}

/// Ground-truth match structure of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationTable {
    pub format: String,
    pub spec: SynthSpec,
    pub topic_words: Vec<Vec<String>>,
    pub contexts: Vec<ContextPrototype>,
    /// Index 0 is the generic response.
    pub responses: Vec<ResponsePrototype>,
    pub splits: BTreeMap<String, SplitInfo>,
}

impl RelationTable {
    /// Whether response prototype `r` is a valid reply to context prototype `c`.
    pub fn valid(&self, c: usize, r: usize) -> bool {
        match self.responses[r].topic {
            None => true,
            Some(t) => t == self.contexts[c].topic,
        }
    }

    /// All valid `(context prototype, response prototype)` combinations.
    pub fn valid_combinations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for c in 0..self.contexts.len() {
            for r in 0..self.responses.len() {
                if self.valid(c, r) {
                    out.push((c, r));
                }
            }
        }
        out
    }

    /// Whether the context of pair `context_pair` matches the response of pair
    /// `response_pair`, both in `split`.
    pub fn matches(&self, split: &str, context_pair: usize, response_pair: usize) -> Result<bool> {
        let info = self
            .splits
            .get(split)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {split:?}")))?;
        let get = |i: usize| {
            info.pairs.get(i).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "pair {i} outside split {split:?} of {}",
                    info.pairs.len()
                ))
            })
        };
        Ok(self.valid(get(context_pair)?.context, get(response_pair)?.response))
    }

    pub fn is_generic(&self, split: &str, pair: usize) -> bool {
        self.splits
            .get(split)
            .and_then(|s| s.pairs.get(pair))
            .is_some_and(|p| self.responses[p.response].topic.is_none())
    }
}

/// A generated corpus held in memory.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<DialoguePair>,
    pub valid: Vec<DialoguePair>,
    pub test: Vec<DialoguePair>,
    pub relation: RelationTable,
    pub embeddings: EmbeddingTable,
}

impl SynthCorpus {
    pub fn split(&self, name: &str) -> &[DialoguePair] {
        match name {
            "train" => &self.train,
            "valid" => &self.valid,
            _ => &self.test,
        }
    }
}

fn pseudo_words(count: usize, taken: &HashSet<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut seen = taken.clone();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(C[rng.gen_range(0..C.len())] as char);
            w.push(V[rng.gen_range(0..V.len())] as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

fn realise_context(proto: &ContextPrototype, rng: &mut ChaCha8Rng) -> Vec<String> {
    let w = &proto.words;
    let first = format!("{} {} the {} ?", pick(rng, &FILLERS), w[0], w[1]);
    let second = format!(
        "{} {} {} a {} .",
        pick(rng, &FILLERS),
        pick(rng, &FILLERS),
        w[2],
        w[3]
    );
    vec![first, second]
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let n = crate::tensor::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn embeddings(spec: &SynthSpec, topic_words: &[Vec<String>]) -> Result<EmbeddingTable> {
    let dim = spec.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_e3be);
    let content = unit(&mut rng, dim);
    let topics: Vec<Vec<f64>> = (0..spec.topics).map(|_| unit(&mut rng, dim)).collect();
    let mut noisy = |base: &[f64], scale: f64| -> Vec<f64> {
        let n = unit(&mut rng, dim);
        base.iter().zip(&n).map(|(b, x)| b + scale * x).collect()
    };
    let zero = vec![0.0; dim];
    let mut entries = Vec::new();
    for w in FILLERS.iter().chain(&VERBS).chain(&TEMPLATE) {
        entries.push((w.to_string(), noisy(&zero, 0.5)));
    }
    let anti: Vec<f64> = content.iter().map(|x| -x).collect();
    for w in GENERIC_CONTENT {
        entries.push((w.to_string(), noisy(&anti, 0.5)));
    }
    for (t, words) in topic_words.iter().enumerate() {
        let centre: Vec<f64> = content.iter().zip(&topics[t]).map(|(a, b)| a + b).collect();
        for w in words {
            entries.push((w.clone(), noisy(&centre, 0.5)));
        }
    }
    EmbeddingTable::new(dim, entries)
}

/// Builds the corpus in memory. Identical specs give identical corpora.
pub fn build_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let taken: HashSet<String> = FILLERS
        .iter()
        .chain(&VERBS)
        .chain(&TEMPLATE)
        .chain(&GENERIC_CONTENT)
        .map(|w| w.to_string())
        .collect();
    let per_topic = spec.words_per_topic();
    let all = pseudo_words(per_topic * spec.topics, &taken, &mut rng);
    let topic_words: Vec<Vec<String>> = all.chunks(per_topic).map(|c| c.to_vec()).collect();

    let mut contexts = Vec::new();
    let mut responses = vec![ResponsePrototype {
        topic: None,
        text: GENERIC_RESPONSE.to_string(),
    }];
    let mut topic_contexts = Vec::new();
    let mut topic_responses = Vec::new();
    for (t, words) in topic_words.iter().enumerate() {
        let mut ids = Vec::new();
        for _ in 0..spec.contexts_per_response {
            let chosen: Vec<String> = words
                .choose_multiple(&mut rng, CONTEXT_TOPIC_WORDS)
                .cloned()
                .collect();
            ids.push(contexts.len());
            contexts.push(ContextPrototype {
                topic: t,
                words: chosen,
            });
        }
        topic_contexts.push(ids);
        let mut order: Vec<&String> = words.iter().collect();
        order.shuffle(&mut rng);
        let mut ids = Vec::new();
        for j in 0..spec.responses_per_context {
            let text = format!(
                "i {} {} and {} .",
                VERBS[j % VERBS.len()],
                order[0],
                order[j + 1]
            );
            ids.push(responses.len());
            responses.push(ResponsePrototype {
                topic: Some(t),
                text,
            });
        }
        topic_responses.push(ids);
    }

    let mut splits = BTreeMap::new();
    let mut data: Vec<Vec<DialoguePair>> = Vec::new();
    for split in SPLITS {
        let n = spec.split_size(split);
        let generic = (spec.generic_rate * n as f64).round() as usize;
        let mut is_generic = vec![false; n];
        is_generic[..generic].iter_mut().for_each(|g| *g = true);
        is_generic.shuffle(&mut rng);
        let mut pairs = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        for (id, &g) in is_generic.iter().enumerate() {
            let t = rng.gen_range(0..spec.topics);
            let c = *topic_contexts[t].choose(&mut rng).expect("non-empty");
            let r = if g {
                0
            } else {
                *topic_responses[t].choose(&mut rng).expect("non-empty")
            };
            pairs.push(DialoguePair {
                id,
                context: realise_context(&contexts[c], &mut rng),
                response: responses[r].text.clone(),
            });
            origins.push(PairOrigin {
                context: c,
                response: r,
            });
        }
        splits.insert(
            split.to_string(),
            SplitInfo {
                sha256: String::new(),
                pairs: origins,
            },
        );
        data.push(pairs);
    }
    let embeddings = embeddings(spec, &topic_words)?;
    let test = data.pop().expect("three splits");
    let valid = data.pop().expect("three splits");
    let train = data.pop().expect("three splits");
    let mut relation = RelationTable {
        format: RELATION_FORMAT.to_string(),
        spec: *spec,
        topic_words,
        contexts,
        responses,
        splits,
    };
    for (name, pairs) in [("train", &train), ("valid", &valid), ("test", &test)] {
        relation.splits.get_mut(name).expect("split").sha256 =
            io::sha256_hex(&dataset_bytes(pairs)?);
    }
    Ok(SynthCorpus {
        train,
        valid,
        test,
        relation,
        embeddings,
    })
}

/// Generates the corpus and writes `<split>.jsonl`, `relation.json` and
/// `embeddings.txt` into `dir`.
pub fn generate_corpus(spec: &SynthSpec, dir: &Path) -> Result<SynthCorpus> {
    let corpus = build_corpus(spec)?;
    for split in SPLITS {
        let path = dir.join(format!("{split}.jsonl"));
        write_dataset(&path, corpus.split(split))?;
        let hash = io::hash_file(&path)?;
        if hash != corpus.relation.splits[split].sha256 {
            return Err(Error::InvalidArgument(format!(
                "{}: unexpected serialisation",
                path.display()
            )));
        }
    }
    io::write_file(
        &dir.join("relation.json"),
        &serde_json::to_vec_pretty(&corpus.relation)?,
    )?;
    corpus.embeddings.save(&dir.join("embeddings.txt"))?;
    Ok(corpus)
}

/// Loads the relation table of the corpus in `dir`, checking that every split
/// file is the one it was generated with.
pub fn oracle_relation(dir: &Path) -> Result<RelationTable> {
    let path = dir.join("relation.json");
    let table: RelationTable = serde_json::from_str(&io::read_to_string(&path)?).map_err(|e| {
        Error::InvalidArgument(format!("{}: not a synthetic corpus ({e})", dir.display()))
    })?;
    if table.format != RELATION_FORMAT {
        return Err(Error::InvalidArgument(format!(
            "{}: unknown relation format {:?}",
            dir.display(),
            table.format
        )));
    }
    for (split, info) in &table.splits {
        let file = dir.join(format!("{split}.jsonl"));
        if io::hash_file(&file)? != info.sha256 {
            return Err(Error::InvalidArgument(format!(
                "{}: split {split} does not belong to this relation table",
                dir.display()
            )));
        }
    }
    Ok(table)
}

/// First topic whose content words occur in `text`.
pub fn topic_of(table: &RelationTable, text: &str) -> Option<usize> {
    let tokens: HashSet<String> = tokenize_text(text).into_iter().collect();
    table
        .topic_words
        .iter()
        .position(|ws| ws.iter().any(|w| tokens.contains(w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_dataset;
    use crate::tensor::cosine;

    fn small() -> SynthSpec {
        SynthSpec {
            train: 1000,
            valid: 50,
            test: 50,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generic_count_is_exact() {
        let c = build_corpus(&small()).unwrap();
        let generic = c
            .train
            .iter()
            .filter(|p| p.response == GENERIC_RESPONSE)
            .count();
        assert_eq!(generic, 400);
        assert_eq!(
            c.valid
                .iter()
                .filter(|p| p.response == GENERIC_RESPONSE)
                .count(),
            20
        );
    }

    #[test]
    fn fanouts_hold_in_relation_table() {
        let c = build_corpus(&SynthSpec::default()).unwrap();
        let r = &c.relation;
        assert_eq!(r.contexts.len(), 60);
        assert_eq!(r.responses.len(), 101);
        for ctx in 0..r.contexts.len() {
            let topical = (1..r.responses.len()).filter(|&x| r.valid(ctx, x)).count();
            assert_eq!(topical, 5);
            assert!(r.valid(ctx, 0));
        }
        for resp in 1..r.responses.len() {
            assert_eq!(
                (0..r.contexts.len()).filter(|&x| r.valid(x, resp)).count(),
                3
            );
        }
        assert_eq!(r.valid_combinations().len(), 60 * 5 + 60);
    }

    #[test]
    fn every_pair_is_in_the_relation() {
        let c = build_corpus(&small()).unwrap();
        for split in SPLITS {
            for (i, p) in c.split(split).iter().enumerate() {
                assert!(c.relation.matches(split, i, i).unwrap());
                let origin = c.relation.splits[split].pairs[i];
                assert_eq!(c.relation.responses[origin.response].text, p.response);
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_corpus(&small(), a.path()).unwrap();
        generate_corpus(&small(), b.path()).unwrap();
        for f in [
            "train.jsonl",
            "valid.jsonl",
            "test.jsonl",
            "relation.json",
            "embeddings.txt",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let other = build_corpus(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(other.train, build_corpus(&small()).unwrap().train);
    }

    #[test]
    fn written_files_load_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&small(), dir.path()).unwrap();
        assert_eq!(
            load_dataset(&dir.path().join("train.jsonl"), "train").unwrap(),
            c.train
        );
        assert_eq!(oracle_relation(dir.path()).unwrap(), c.relation);
        assert_eq!(
            EmbeddingTable::load(&dir.path().join("embeddings.txt"))
                .unwrap()
                .len(),
            c.embeddings.len()
        );
    }

    #[test]
    fn foreign_corpus_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(&small(), dir.path()).unwrap();
        let other = build_corpus(&SynthSpec { seed: 9, ..small() }).unwrap();
        write_dataset(&dir.path().join("valid.jsonl"), &other.valid).unwrap();
        assert!(oracle_relation(dir.path()).is_err());
        let empty = tempfile::tempdir().unwrap();
        assert!(oracle_relation(empty.path()).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(build_corpus(&SynthSpec {
            vocab_size: 100,
            ..small()
        })
        .is_err());
        assert!(build_corpus(&SynthSpec {
            responses_per_context: 1,
            ..small()
        })
        .is_err());
        assert!(build_corpus(&SynthSpec {
            generic_rate: 1.0,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn embeddings_rank_generic_below_other_topics() {
        let c = build_corpus(&small()).unwrap();
        let t = &c.embeddings;
        let embed = |s: &str| t.embed_utterance(&tokenize_text(s)).unwrap();
        let r = &c.relation;
        let mut violations = 0;
        for p in c.train.iter().take(200) {
            let ctx = embed(&p.context.join(" "));
            let topic = topic_of(r, &p.context.join(" ")).unwrap();
            let same = r.responses.iter().find(|x| x.topic == Some(topic)).unwrap();
            let other = r
                .responses
                .iter()
                .find(|x| x.topic == Some((topic + 1) % 20))
                .unwrap();
            let s_same = cosine(&ctx, &embed(&same.text));
            let s_other = cosine(&ctx, &embed(&other.text));
            let s_generic = cosine(&ctx, &embed(GENERIC_RESPONSE));
            if !(s_same > s_other && s_other > s_generic) {
                violations += 1;
            }
        }
        assert!(violations < 10, "{violations}");
    }
}
