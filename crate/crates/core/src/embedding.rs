//! Static word embeddings in word2vec text format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Matrix;

pub const DEFAULT_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
    /// Mean of all vectors; used for out-of-vocabulary tokens.
    backoff: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        let mut words = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (w, v) in entries {
            if v.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "vector for {w:?} has dimension {} (expected {dim})",
                    v.len()
                )));
            }
            if index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), words.len());
            words.push(w);
            vectors.push(v);
        }
        let mut backoff = vec![0.0; dim];
        if !vectors.is_empty() {
            for v in &vectors {
                for (b, x) in backoff.iter_mut().zip(v) {
                    *b += x;
                }
            }
            let n = vectors.len() as f64;
            backoff.iter_mut().for_each(|b| *b /= n);
        }
        Ok(EmbeddingTable {
            dim,
            words,
            index,
            vectors,
            backoff,
        })
    }

    /// Seed-fixed standard-normal vectors for `words`.
    pub fn random<S: AsRef<str>>(words: &[S], dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = words
            .iter()
            .map(|w| {
                let v = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                (w.as_ref().to_string(), v)
            })
            .collect();
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn backoff(&self) -> &[f64] {
        &self.backoff
    }

    /// Vector for `token`, falling back to the mean vector.
    pub fn vector(&self, token: &str) -> &[f64] {
        match self.index.get(token) {
            Some(&i) => &self.vectors[i],
            None => &self.backoff,
        }
    }

    /// Mean of the token vectors.
    pub fn embed_utterance<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Empty("cannot embed an empty token sequence".into()));
        }
        let mut out = vec![0.0; self.dim];
        for t in tokens {
            for (o, x) in out.iter_mut().zip(self.vector(t.as_ref())) {
                *o += x;
            }
        }
        let n = tokens.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    /// Row `i` holds the vector for vocabulary id `i` (backoff for unknown words).
    pub fn lookup_matrix(&self, vocab: &Vocab) -> Matrix {
        let mut m = Matrix::zeros(vocab.len(), self.dim);
        for (i, tok) in vocab.tokens().iter().enumerate() {
            m.row_mut(i).copy_from_slice(self.vector(tok));
        }
        m
    }

    pub fn to_word2vec(&self) -> String {
        let mut s = format!("{} {}\n", self.words.len(), self.dim);
        for (w, v) in self.words.iter().zip(&self.vectors) {
            s.push_str(w);
            for x in v {
                let _ = write!(s, " {x}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, self.to_word2vec().as_bytes())
    }

    /// Parses word2vec text format: a `count dim` header, then `token v1 .. vd` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let schema = |line: usize, message: String| Error::Schema {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| schema(1, "missing header".into()))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| schema(1, "bad count in header".into()))?;
        let dim: usize = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| schema(1, "bad dimension in header".into()))?;
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap().to_string();
            let v: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let v = v.map_err(|e| schema(i + 2, e.to_string()))?;
            if v.len() != dim {
                return Err(schema(
                    i + 2,
                    format!("expected {dim} values, found {}", v.len()),
                ));
            }
            entries.push((word, v));
        }
        if entries.len() != count {
            return Err(schema(
                1,
                format!("header declares {count} vectors, found {}", entries.len()),
            ));
        }
        Self::new(dim, entries)
    }
}
