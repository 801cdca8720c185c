//! Context/response datasets, tokenisation and vocabularies.
//!
//! Datasets are line-delimited JSON records `{"context": [..turns..], "response": ".."}`.
//! A vocabulary file holds one token per line; the line number is the index and the
//! first four lines are the reserved tokens `<pad>`, `<unk>`, `<bos>`, `<eos>`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Default vocabulary cap.
pub const DEFAULT_VOCAB_CAP: usize = 40_000;
/// Default flattened-context truncation limit, in tokens.
pub const DEFAULT_MAX_CONTEXT_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub id: usize,
    pub context: Vec<String>,
    pub response: String,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    context: Option<Vec<String>>,
    response: Option<String>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    context: &'a [String],
    response: &'a str,
}

/// Loads a split. `split` only labels error messages.
pub fn load_dataset(path: &Path, split: &str) -> Result<Vec<DialoguePair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let schema = |line: usize, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message: format!("[{split}] {message}"),
    };
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| schema(i + 1, e.to_string()))?;
        let context = raw
            .context
            .ok_or_else(|| schema(i + 1, "missing field `context`".into()))?;
        let response = raw
            .response
            .ok_or_else(|| schema(i + 1, "missing field `response`".into()))?;
        if context.is_empty() {
            return Err(schema(i + 1, "context has no turns".into()));
        }
        if tokenize_text(&response).is_empty() {
            return Err(schema(i + 1, "response is empty after tokenization".into()));
        }
        pairs.push(DialoguePair {
            id: pairs.len(),
            context,
            response,
        });
    }
    Ok(pairs)
}

/// A split in its on-disk form.
pub fn dataset_bytes(pairs: &[DialoguePair]) -> Result<Vec<u8>> {
    let records: Vec<OutRecord> = pairs
        .iter()
        .map(|p| OutRecord {
            context: &p.context,
            response: &p.response,
        })
        .collect();
    io::to_jsonl(&records)
}

pub fn write_dataset(path: &Path, pairs: &[DialoguePair]) -> Result<()> {
    io::write_file(path, &dataset_bytes(pairs)?)
}

/// Lowercased whitespace tokenisation with `. , ? !` split off as their own tokens.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars().flat_map(char::to_lowercase) {
        if matches!(ch, '.' | ',' | '?' | '!') {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::InvalidArgument(format!(
                    "vocab index {i} must be reserved token {r}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocab token {t:?}"
                )));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// A vocabulary containing the reserved tokens followed by `words`.
    pub fn with_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Token strings for `ids`, stopping at the first EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.tokens[i].clone())
            .collect()
    }

    pub fn to_file_contents(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the serialized vocabulary file.
    pub fn hash(&self) -> String {
        io::sha256_hex(self.to_file_contents().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, self.to_file_contents().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Frequency-ranked vocabulary. Ties keep first-occurrence order; tokens seen fewer
/// than `min_freq` times are dropped; at most `cap` entries including reserved ones.
pub fn build_vocab(pairs: &[DialoguePair], cap: usize, min_freq: usize) -> Result<Vocab> {
    if pairs.is_empty() {
        return Err(Error::Empty(
            "cannot build a vocabulary from zero pairs".into(),
        ));
    }
    if cap <= RESERVED.len() {
        return Err(Error::InvalidArgument(format!(
            "vocab cap {cap} must exceed the {} reserved tokens",
            RESERVED.len()
        )));
    }
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    let mut see = |tok: String| {
        let e = counts.entry(tok).or_insert((0, order));
        e.0 += 1;
        order += 1;
    };
    for p in pairs {
        for turn in &p.context {
            tokenize_text(turn).into_iter().for_each(&mut see);
        }
        tokenize_text(&p.response).into_iter().for_each(&mut see);
    }
    let mut ranked: Vec<(String, usize, usize)> = counts
        .into_iter()
        .filter(|(t, (c, _))| *c >= min_freq.max(1) && !RESERVED.contains(&t.as_str()))
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(cap - RESERVED.len());
    let words: Vec<String> = ranked.into_iter().map(|(t, _, _)| t).collect();
    Vocab::with_words(&words)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub id: usize,
    /// Token ids per context turn, oldest first.
    pub turns: Vec<Vec<usize>>,
    /// Turns joined by the separator token and truncated from the oldest side.
    pub context: Vec<usize>,
    /// Response ids terminated by EOS.
    pub response: Vec<usize>,
}

/// Turns are separated by the EOS id in the flattened context.
pub const TURN_SEPARATOR: usize = EOS;

pub fn flatten_context(turns: &[Vec<usize>], max_len: usize) -> Vec<usize> {
    let mut flat = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if i > 0 {
            flat.push(TURN_SEPARATOR);
        }
        flat.extend_from_slice(t);
    }
    if flat.len() > max_len {
        flat.drain(..flat.len() - max_len);
    }
    if flat.is_empty() {
        flat.push(UNK);
    }
    flat
}

pub fn tokenize(
    pair: &DialoguePair,
    vocab: &Vocab,
    max_context_len: usize,
) -> Result<TokenizedPair> {
    let response_tokens = tokenize_text(&pair.response);
    if response_tokens.is_empty() {
        return Err(Error::Empty(format!(
            "pair {} has an empty response after tokenization",
            pair.id
        )));
    }
    let turns: Vec<Vec<usize>> = pair
        .context
        .iter()
        .map(|t| vocab.encode(&tokenize_text(t)))
        .collect();
    let context = flatten_context(&turns, max_context_len.max(1));
    let mut response = vocab.encode(&response_tokens);
    response.push(EOS);
    Ok(TokenizedPair {
        id: pair.id,
        turns,
        context,
        response,
    })
}

pub fn tokenize_all(
    pairs: &[DialoguePair],
    vocab: &Vocab,
    max_context_len: usize,
) -> Result<Vec<TokenizedPair>> {
    pairs
        .iter()
        .map(|p| tokenize(p, vocab, max_context_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn pair(id: usize, ctx: &[&str], resp: &str) -> DialoguePair {
        DialoguePair {
            id,
            context: ctx.iter().map(|s| s.to_string()).collect(),
            response: resp.to_string(),
        }
    }

    fn write_tmp(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_valid_lines_with_dense_ids() {
        let f = write_tmp(
            "{\"context\": [\"hi there\"], \"response\": \"hello\"}\n\
             {\"context\": [\"a\", \"b\"], \"response\": \"c\"}\n",
        );
        let pairs = load_dataset(f.path(), "train").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let f = write_tmp("");
        assert!(load_dataset(f.path(), "train").unwrap().is_empty());
    }

    #[test]
    fn missing_response_names_line() {
        let f = write_tmp("{\"context\": [\"x\"], \"response\": \"y\"}\n{\"context\": [\"x\"]}\n");
        match load_dataset(f.path(), "train") {
            Err(Error::Schema { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("response"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_dataset(Path::new("/nonexistent/data.jsonl"), "train").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn min_freq_filters_tokens() {
        let v = build_vocab(&[pair(0, &["a a"], "b")], 100, 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(4), "a");
    }

    #[test]
    fn cap_binds() {
        let v = build_vocab(&[pair(0, &["t0 t1 t2 t3 t4"], "t5 t6 t7 t8 t9")], 5, 1).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(4), "t0");
    }

    #[test]
    fn cap_not_binding_keeps_all() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let v = build_vocab(
            &[pair(0, &[&words[..10].join(" ")], &words[10..].join(" "))],
            40_000,
            1,
        )
        .unwrap();
        assert_eq!(v.len(), 24);
    }

    #[test]
    fn frequency_then_first_occurrence() {
        let v = build_vocab(&[pair(0, &["z y x y"], "x w")], 100, 1).unwrap();
        let words: Vec<&str> = v.tokens()[4..].iter().map(String::as_str).collect();
        assert_eq!(words, vec!["y", "x", "z", "w"]);
    }

    #[test]
    fn tokenize_response_and_oov() {
        let v = Vocab::with_words(&["hello", "world"]).unwrap();
        let t = tokenize(&pair(0, &["zzz hello"], "Hello World"), &v, 64).unwrap();
        assert_eq!(t.response, vec![4, 5, EOS]);
        assert_eq!(t.context, vec![UNK, 4]);
    }

    #[test]
    fn three_turns_get_two_separators() {
        let v = Vocab::with_words(&["a", "b", "c"]).unwrap();
        let t = tokenize(&pair(0, &["a", "b", "c"], "a"), &v, 64).unwrap();
        assert_eq!(t.context, vec![4, TURN_SEPARATOR, 5, TURN_SEPARATOR, 6]);
        assert_eq!(
            t.context.iter().filter(|&&x| x == TURN_SEPARATOR).count(),
            2
        );
    }

    #[test]
    fn truncation_drops_oldest_tokens() {
        let v = Vocab::with_words(&["a", "b", "c"]).unwrap();
        let t = tokenize(&pair(0, &["a a a", "b c"], "a"), &v, 3).unwrap();
        assert_eq!(t.context, vec![TURN_SEPARATOR, 5, 6]);
    }

    #[test]
    fn punctuation_is_detached() {
        assert_eq!(
            tokenize_text("What are your hobbies? I love to cook."),
            vec!["what", "are", "your", "hobbies", "?", "i", "love", "to", "cook", "."]
        );
    }

    #[test]
    fn empty_response_rejected() {
        let v = Vocab::with_words(&["a"]).unwrap();
        assert!(tokenize(&pair(0, &["a"], "   "), &v, 64).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab(&[pair(0, &["b a"], "c a")], 100, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(v, back);
        assert_eq!(&back.tokens()[..4], &RESERVED.map(String::from));
    }
}
