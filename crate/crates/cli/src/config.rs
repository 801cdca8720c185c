//! Run configuration: a TOML file plus `--set` overrides, deserialised with
//! field-path error reporting.

use std::path::{Path, PathBuf};

use groupcl::contrastive::{LossConfig, Variant};
use groupcl::corpus::{DEFAULT_MAX_CONTEXT_LEN, DEFAULT_VOCAB_CAP};
use groupcl::io::sha256_hex;
use groupcl::models::{DecodeConfig, ModelConfig, TrainConfig};
use groupcl::sampler::SamplerConfig;
use groupcl::synth::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Keys filled in from the top-level `seed`, `workers` and the vocabulary.
const DERIVED_KEYS: [(&str, &str); 8] = [
    ("synth", "seed"),
    ("model", "seed"),
    ("model", "vocab_size"),
    ("pretrain", "seed"),
    ("pretrain", "workers"),
    ("sampler", "seed"),
    ("train", "seed"),
    ("train", "workers"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `train.jsonl`, `valid.jsonl` and `test.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// word2vec-format text embeddings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub vocab_cap: usize,
    pub min_freq: usize,
    pub max_context_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            vocab_cap: DEFAULT_VOCAB_CAP,
            min_freq: 1,
            max_context_len: DEFAULT_MAX_CONTEXT_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    /// Epoch budget per variant; `None` uses `train.max_epochs`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    /// Rows to run, in table order.
    pub variants: Vec<Variant>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            max_epochs: None,
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    pub paths: Paths,
    /// When present, `prepare` generates a synthetic corpus instead of reading `paths.data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
}

fn one() -> usize {
    1
}

/// Sub-seed for `stage`, a fixed function of the run seed. Kept below 2^63 so
/// it fits a TOML integer.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let h = sha256_hex(format!("{seed}:{stage}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest") >> 1
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies one `dotted.key=value` override, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(assignment, "override must have the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(key, "empty key segment"));
    }
    let mut table = root;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_error(parts[..=i].join("."), "not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Command-line adjustments layered over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl RunConfig {
    /// Reads `path`, applies `overrides`, resolves relative paths against the
    /// file's directory and validates the result.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Core(groupcl::Error::io(path, e)))?;
        let parent = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = parent
            .canonicalize()
            .unwrap_or_else(|_| parent.to_path_buf());
        Self::from_toml_str(&text, overrides, &base)
    }

    pub fn from_toml_str(text: &str, overrides: &Overrides, base: &Path) -> Result<Self> {
        let mut root: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_error("<file>", e.message().to_string()))?;
        for s in &overrides.set {
            apply_override(&mut root, s)?;
        }
        if let Some(seed) = overrides.seed {
            root.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if let Some(w) = overrides.workers {
            root.insert("workers".into(), toml::Value::Integer(w as i64));
        }
        for (section, key) in DERIVED_KEYS {
            if root.get(section).and_then(|s| s.get(key)).is_some() {
                return Err(config_error(
                    format!("{section}.{key}"),
                    "set automatically from the top-level seed, workers and the vocabulary",
                ));
            }
        }
        let mut config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(root))
            .map_err(|e| {
                let path = e.path().to_string();
                config_error(
                    if path == "." { String::new() } else { path },
                    e.into_inner().to_string(),
                )
            })?;
        config.resolve_paths(base);
        config.derive();
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.paths.data.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.paths.embeddings.as_mut() {
            resolve(p);
        }
        resolve(&mut self.paths.workdir);
    }

    fn derive(&mut self) {
        let seed = self.seed;
        if let Some(s) = self.synth.as_mut() {
            s.seed = derive_seed(seed, "synth");
        }
        self.model.seed = derive_seed(seed, "model");
        self.pretrain.seed = derive_seed(seed, "pretrain");
        self.sampler.seed = derive_seed(seed, "sampler");
        self.train.seed = derive_seed(seed, "train");
        self.pretrain.workers = self.workers;
        self.train.workers = self.workers;
    }

    pub fn validate(&self) -> Result<()> {
        let core = |path: &str| {
            let path = path.to_string();
            move |e: groupcl::Error| config_error(path.clone(), e.to_string())
        };
        if self.workers == 0 {
            return Err(config_error("workers", "must be at least 1"));
        }
        match &self.synth {
            Some(spec) => {
                spec.validate().map_err(core("synth"))?;
                for (name, p) in [
                    ("paths.data", &self.paths.data),
                    ("paths.embeddings", &self.paths.embeddings),
                ] {
                    if p.is_some() {
                        return Err(config_error(
                            name,
                            "not used when [synth] generates the corpus; remove it",
                        ));
                    }
                }
            }
            None => {
                let data =
                    self.paths.data.as_ref().ok_or_else(|| {
                        config_error("paths.data", "required unless [synth] is set")
                    })?;
                for split in ["train", "valid", "test"] {
                    let f = data.join(format!("{split}.jsonl"));
                    if !f.is_file() {
                        return Err(config_error(
                            "paths.data",
                            format!("{} does not exist", f.display()),
                        ));
                    }
                }
                let emb = self.paths.embeddings.as_ref().ok_or_else(|| {
                    config_error("paths.embeddings", "required unless [synth] is set")
                })?;
                if !emb.is_file() {
                    return Err(config_error(
                        "paths.embeddings",
                        format!("{} does not exist", emb.display()),
                    ));
                }
            }
        }
        if self.corpus.vocab_cap == 0 || self.corpus.max_context_len == 0 {
            return Err(config_error(
                "corpus",
                "vocab_cap and max_context_len must be positive",
            ));
        }
        let mut model = self.model;
        model.vocab_size = groupcl::corpus::RESERVED.len() + 1;
        model.validate().map_err(core("model"))?;
        self.sampler.validate().map_err(core("sampler"))?;
        self.loss.validate().map_err(core("loss"))?;
        if self.loss.k != self.sampler.k {
            return Err(config_error(
                "loss.k",
                format!(
                    "{} differs from sampler.k = {}",
                    self.loss.k, self.sampler.k
                ),
            ));
        }
        self.decode.validate().map_err(core("decode"))?;
        if self.ablate.variants.is_empty() {
            return Err(config_error(
                "ablate.variants",
                "must name at least one variant",
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(v) = self.ablate.variants.iter().find(|v| !seen.insert(**v)) {
            return Err(config_error(
                "ablate.variants",
                format!("{} listed twice", v.label()),
            ));
        }
        if self.ablate.max_epochs == Some(0) {
            return Err(config_error("ablate.max_epochs", "must be positive"));
        }
        for (name, t) in [("pretrain", &self.pretrain), ("train", &self.train)] {
            if t.batch_size == 0 || t.validations_per_epoch == 0 || t.grad_chunk == 0 {
                return Err(config_error(
                    name,
                    "batch_size, validations_per_epoch and grad_chunk must be positive",
                ));
            }
            if t.optimizer.lr.is_nan() || t.optimizer.lr <= 0.0 {
                return Err(config_error(
                    format!("{name}.optimizer.lr"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serialises"))
    }

    /// The configuration as TOML, without the derived keys, so it can be read back.
    pub fn to_toml(&self) -> String {
        let mut value = toml::Value::try_from(self).expect("config serialises");
        if let Some(root) = value.as_table_mut() {
            for (section, key) in DERIVED_KEYS {
                if let Some(t) = root.get_mut(section).and_then(|s| s.as_table_mut()) {
                    t.remove(key);
                }
            }
        }
        toml::to_string_pretty(&value).expect("config serialises")
    }
}

/// The canonical schema: every key with its default value.
pub fn schema() -> String {
    let config = RunConfig {
        seed: 0,
        workers: 1,
        paths: Paths {
            data: Some("data".into()),
            embeddings: Some("embeddings.txt".into()),
            workdir: "work".into(),
        },
        synth: None,
        corpus: CorpusConfig::default(),
        model: ModelConfig::default(),
        pretrain: TrainConfig::default(),
        sampler: SamplerConfig::default(),
        loss: LossConfig::default(),
        train: TrainConfig::default(),
        decode: DecodeConfig::default(),
        ablate: AblateConfig::default(),
    };
    let synth = toml::to_string_pretty(
        &toml::Value::try_from(SynthSpec::default()).expect("spec serialises"),
    )
    .expect("spec serialises");
    let synth: String = synth
        .lines()
        .filter(|l| !l.starts_with("seed "))
        .map(|l| format!("# {l}\n"))
        .collect();
    format!(
        "# seed is mandatory; every sub-seed is derived from it.\n\
         # Replace [paths] data/embeddings with a [synth] table to generate a corpus:\n\
         # [synth]\n{synth}\n{}",
        config.to_toml()
    )
}
