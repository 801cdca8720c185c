//! Pipeline stages. Each stage reads earlier stages' artifacts from the work
//! directory, writes its own into `<workdir>/<stage>/`, and finishes by
//! recording a provenance file with the hashes of everything it read and wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use groupcl::contrastive::{train_contrastive, LossConfig, Variant};
use groupcl::corpus::{
    build_vocab, load_dataset, tokenize_all, tokenize_text, write_dataset, DialoguePair,
    TokenizedPair, Vocab,
};
use groupcl::embedding::EmbeddingTable;
use groupcl::eval::{score_hypotheses, write_report, EntropyModel, EvalReport, ManifestEntry};
use groupcl::io::{hash_file, read_jsonl, read_to_string, write_file, write_jsonl};
use groupcl::matcher::CosineMatcher;
use groupcl::models::{
    generate, load_checkpoint, save_checkpoint, snapshot_reference, train_mle, DialogueModel,
    ModelConfig, TrainConfig, TrainRecord, TrainingOutcome,
};
use groupcl::parallel::par_map;
use groupcl::sampler::{read_cache, sample_groups, write_cache, ContrastiveGroup, Indexes};
use groupcl::synth::generate_corpus;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const VERSION: &str = concat!("groupcl ", env!("CARGO_PKG_VERSION"));

const SPLITS: [&str; 3] = ["train", "valid", "test"];
const PROVENANCE: &str = "provenance.json";
const BEST: &str = "best";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Prepare,
    BuildIndex,
    Sample,
    Pretrain,
    Train,
    Generate,
    Evaluate,
    Ablate,
}

impl Stage {
    /// Every stage in dependency order.
    pub const ALL: [Stage; 8] = [
        Stage::Prepare,
        Stage::BuildIndex,
        Stage::Sample,
        Stage::Pretrain,
        Stage::Train,
        Stage::Generate,
        Stage::Evaluate,
        Stage::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::BuildIndex => "build-index",
            Stage::Sample => "sample",
            Stage::Pretrain => "pretrain",
            Stage::Train => "train",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
            Stage::Ablate => "ablate",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    /// Work-directory-relative path (or absolute path for external files) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Summary of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub validations: usize,
    pub best_validation: usize,
    pub best_validation_loss: f64,
    /// Loss of the last validation performed.
    pub final_validation_loss: f64,
    #[serde(
        rename = "final_mean_D_pos",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub final_mean_d_pos: Option<f64>,
    #[serde(
        rename = "final_mean_D_neg",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub final_mean_d_neg: Option<f64>,
    pub checkpoint: String,
}

impl TrainSummary {
    fn new(outcome: &TrainingOutcome, checkpoint: String) -> Self {
        let last = outcome.log.iter().rev().find(|r| r.split == "valid");
        TrainSummary {
            steps: outcome.steps,
            validations: outcome.validations,
            best_validation: outcome.best_validation,
            best_validation_loss: outcome.best_validation_loss,
            final_validation_loss: last.map_or(f64::NAN, |r| r.loss),
            final_mean_d_pos: last.and_then(|r| r.mean_d_pos),
            final_mean_d_neg: last.and_then(|r| r.mean_d_neg),
            checkpoint,
        }
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub best_validation_loss: f64,
    pub report: EvalReport,
}

/// Datasets, vocabulary and embeddings written by `prepare`.
pub struct Prepared {
    pub train: Vec<DialoguePair>,
    pub valid: Vec<DialoguePair>,
    pub test: Vec<DialoguePair>,
    pub vocab: Vocab,
    pub embeddings: EmbeddingTable,
    pub tok_train: Vec<TokenizedPair>,
    pub tok_valid: Vec<TokenizedPair>,
    pub tok_test: Vec<TokenizedPair>,
}

impl Prepared {
    fn tokenized(&self, split: &str) -> &[TokenizedPair] {
        match split {
            "train" => &self.tok_train,
            "valid" => &self.tok_valid,
            _ => &self.tok_test,
        }
    }
}

/// Tracks files read by a stage.
#[derive(Default)]
struct Inputs(Vec<PathBuf>);

impl Inputs {
    fn add(&mut self, p: impl Into<PathBuf>) {
        self.0.push(p.into());
    }
}

pub struct Pipeline {
    config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Self {
        Pipeline { config }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn workdir(&self) -> &Path {
        &self.config.paths.workdir
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.workdir().join(stage.name())
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        eprintln!("[{stage}] start");
        match stage {
            Stage::Prepare => self.prepare(),
            Stage::BuildIndex => self.build_index(),
            Stage::Sample => self.sample(),
            Stage::Pretrain => self.pretrain(),
            Stage::Train => self.train(),
            Stage::Generate => self.generate(),
            Stage::Evaluate => self.evaluate(),
            Stage::Ablate => self.ablate().map(|_| ()),
        }?;
        eprintln!("[{stage}] done: {}", self.stage_dir(stage).display());
        Ok(())
    }

    /// Runs `prepare` through `evaluate`.
    pub fn run_all(&self) -> Result<()> {
        for stage in &Stage::ALL[..7] {
            self.run(*stage)?;
        }
        Ok(())
    }

    /// Path of an artifact from an earlier stage, which must exist.
    fn need(&self, stage: Stage, from: Stage, file: &str) -> Result<PathBuf> {
        let p = self.stage_dir(from).join(file);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::MissingDependency {
                stage: stage.name(),
                missing: from.name(),
                artifact: p,
            })
        }
    }

    /// Empties and recreates the stage directory.
    fn fresh_dir(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| groupcl::Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| groupcl::Error::io(&dir, e))?;
        Ok(dir)
    }

    fn label(&self, path: &Path) -> String {
        match path.strip_prefix(self.workdir()) {
            Ok(rel) => rel.to_string_lossy().into_owned(),
            Err(_) => path.to_string_lossy().into_owned(),
        }
    }

    fn finish(&self, stage: Stage, inputs: Inputs) -> Result<Provenance> {
        let dir = self.stage_dir(stage);
        let mut hashed = BTreeMap::new();
        for p in inputs.0 {
            hashed.insert(self.label(&p), hash_file(&p)?);
        }
        let mut outputs = BTreeMap::new();
        for p in list_files(&dir)? {
            if p.file_name().is_some_and(|n| n == PROVENANCE) {
                continue;
            }
            outputs.insert(self.label(&p), hash_file(&p)?);
        }
        let prov = Provenance {
            stage: stage.name().into(),
            version: VERSION.into(),
            config_hash: self.config.hash(),
            inputs: hashed,
            outputs,
        };
        write_file(&dir.join(PROVENANCE), &serde_json::to_vec_pretty(&prov)?)?;
        Ok(prov)
    }

    pub fn read_provenance(&self, stage: Stage) -> Result<Provenance> {
        let p = self.stage_dir(stage).join(PROVENANCE);
        Ok(serde_json::from_str(&read_to_string(&p)?)?)
    }

    fn prepare(&self) -> Result<()> {
        let cfg = &self.config;
        let dir = self.fresh_dir(Stage::Prepare)?;
        let mut inputs = Inputs::default();
        let (train, valid, test) = match &cfg.synth {
            Some(spec) => {
                let c = generate_corpus(spec, &dir)?;
                (c.train, c.valid, c.test)
            }
            None => {
                let data = cfg.paths.data.as_ref().expect("validated");
                let mut splits = Vec::new();
                for split in SPLITS {
                    let src = data.join(format!("{split}.jsonl"));
                    let pairs = load_dataset(&src, split)?;
                    write_dataset(&dir.join(format!("{split}.jsonl")), &pairs)?;
                    inputs.add(src);
                    splits.push(pairs);
                }
                let emb_path = cfg.paths.embeddings.as_ref().expect("validated");
                EmbeddingTable::load(emb_path)?.save(&dir.join("embeddings.txt"))?;
                inputs.add(emb_path);
                let test = splits.pop().expect("three splits");
                let valid = splits.pop().expect("three splits");
                (splits.pop().expect("three splits"), valid, test)
            }
        };
        let vocab = build_vocab(&train, cfg.corpus.vocab_cap, cfg.corpus.min_freq)?;
        vocab.save(&dir.join("vocab.txt"))?;
        for (split, pairs) in [("train", &train), ("valid", &valid), ("test", &test)] {
            if pairs.is_empty() {
                return Err(groupcl::Error::Empty(format!("{split} split has no pairs")).into());
            }
            tokenize_all(pairs, &vocab, cfg.corpus.max_context_len)?;
        }
        let stats = serde_json::json!({
            "train": train.len(),
            "valid": valid.len(),
            "test": test.len(),
            "vocab": vocab.len(),
        });
        write_file(&dir.join("stats.json"), &serde_json::to_vec_pretty(&stats)?)?;
        self.finish(Stage::Prepare, inputs)?;
        Ok(())
    }

    /// Loads the `prepare` artifacts.
    pub fn prepared(&self) -> Result<Prepared> {
        self.load_prepared(Stage::Prepare, &mut Inputs::default())
    }

    /// Loads the `prepare` artifacts on behalf of `stage`.
    fn load_prepared(&self, stage: Stage, inputs: &mut Inputs) -> Result<Prepared> {
        let max_len = self.config.corpus.max_context_len;
        let vocab_path = self.need(stage, Stage::Prepare, "vocab.txt")?;
        let vocab = Vocab::load(&vocab_path)?;
        inputs.add(vocab_path);
        let mut splits = Vec::new();
        for split in SPLITS {
            let p = self.need(stage, Stage::Prepare, &format!("{split}.jsonl"))?;
            splits.push(load_dataset(&p, split)?);
            inputs.add(p);
        }
        let emb_path = self.need(stage, Stage::Prepare, "embeddings.txt")?;
        let embeddings = EmbeddingTable::load(&emb_path)?;
        inputs.add(emb_path);
        let test = splits.pop().expect("three splits");
        let valid = splits.pop().expect("three splits");
        let train = splits.pop().expect("three splits");
        Ok(Prepared {
            tok_train: tokenize_all(&train, &vocab, max_len)?,
            tok_valid: tokenize_all(&valid, &vocab, max_len)?,
            tok_test: tokenize_all(&test, &vocab, max_len)?,
            train,
            valid,
            test,
            vocab,
            embeddings,
        })
    }

    fn build_index(&self) -> Result<()> {
        let mut inputs = Inputs::default();
        let p = self.load_prepared(Stage::BuildIndex, &mut inputs)?;
        let dir = self.fresh_dir(Stage::BuildIndex)?;
        let s = &self.config.sampler;
        for split in ["train", "valid"] {
            let idx = Indexes::build(p.tokenized(split), s.k1, s.b);
            write_file(
                &dir.join(format!("{split}.index.json")),
                &serde_json::to_vec(&idx)?,
            )?;
        }
        self.finish(Stage::BuildIndex, inputs)?;
        Ok(())
    }

    fn sample(&self) -> Result<()> {
        let mut inputs = Inputs::default();
        let mut indexes = Vec::new();
        for split in ["train", "valid"] {
            let path = self.need(
                Stage::Sample,
                Stage::BuildIndex,
                &format!("{split}.index.json"),
            )?;
            let idx: Indexes = serde_json::from_str(&read_to_string(&path)?)?;
            inputs.add(path);
            indexes.push((split, idx));
        }
        let p = self.load_prepared(Stage::Sample, &mut inputs)?;
        let dir = self.fresh_dir(Stage::Sample)?;
        let matcher = CosineMatcher::new(&p.embeddings, &p.vocab);
        let cfg = &self.config;
        for (split, idx) in &indexes {
            let pairs = p.tokenized(split);
            let groups = sample_groups(pairs, idx, &matcher, &cfg.sampler, cfg.workers)?;
            for g in &groups {
                g.validate(cfg.sampler.k, pairs.len())?;
            }
            write_cache(&dir.join(format!("{split}.groups.jsonl")), &groups)?;
        }
        self.finish(Stage::Sample, inputs)?;
        Ok(())
    }

    /// The model named by `<stage>/best`.
    fn best_model(
        &self,
        stage: Stage,
        from: Stage,
        vocab: &Vocab,
        inputs: &mut Inputs,
    ) -> Result<DialogueModel> {
        let pointer = self.need(stage, from, BEST)?;
        let name = read_to_string(&pointer)?.trim().to_string();
        let ckpt = self.need(stage, from, &name)?;
        let model = load_checkpoint(&ckpt, &vocab.hash())?;
        inputs.add(pointer);
        inputs.add(ckpt);
        Ok(model)
    }

    /// Runs `train` with a validation hook that keeps `<stage>-<idx>.ckpt` for
    /// the best validation so far and points `best` at it.
    fn checkpointed<F>(
        &self,
        stage: Stage,
        dir: &Path,
        vocab: &Vocab,
        train: F,
    ) -> Result<(TrainingOutcome, String)>
    where
        F: FnOnce(&mut groupcl::models::ValidationHook) -> groupcl::Result<TrainingOutcome>,
    {
        let vocab_hash = vocab.hash();
        let mut current: Option<PathBuf> = None;
        let mut hook = |index: usize,
                        model: &DialogueModel,
                        loss: f64,
                        improved: bool|
         -> groupcl::Result<()> {
            eprintln!(
                "[{stage}] validation {index}: loss {loss:.6}{}",
                if improved { " (best)" } else { "" }
            );
            if improved {
                let name = format!("{}-{index}.ckpt", stage.name());
                let path = dir.join(&name);
                save_checkpoint(&path, model, &vocab_hash)?;
                write_file(&dir.join(BEST), format!("{name}\n").as_bytes())?;
                if let Some(old) = current.replace(path) {
                    std::fs::remove_file(&old).map_err(|e| groupcl::Error::io(&old, e))?;
                }
            }
            Ok(())
        };
        let outcome = train(&mut hook)?;
        let name = format!("{}-{}.ckpt", stage.name(), outcome.best_validation);
        if !dir.join(&name).exists() {
            // training ended before any in-loop validation
            save_checkpoint(&dir.join(&name), &outcome.model, &vocab_hash)?;
            write_file(&dir.join(BEST), format!("{name}\n").as_bytes())?;
        }
        Ok((outcome, name))
    }

    fn write_training(
        &self,
        dir: &Path,
        outcome: &TrainingOutcome,
        checkpoint: String,
    ) -> Result<TrainSummary> {
        write_jsonl(&dir.join("log.jsonl"), &outcome.log)?;
        let summary = TrainSummary::new(outcome, checkpoint);
        write_file(
            &dir.join("summary.json"),
            &serde_json::to_vec_pretty(&summary)?,
        )?;
        Ok(summary)
    }

    fn pretrain(&self) -> Result<()> {
        let mut inputs = Inputs::default();
        let p = self.load_prepared(Stage::Pretrain, &mut inputs)?;
        let dir = self.fresh_dir(Stage::Pretrain)?;
        let cfg = &self.config;
        let model = DialogueModel::new(ModelConfig {
            vocab_size: p.vocab.len(),
            ..cfg.model
        })?;
        let (outcome, name) = self.checkpointed(Stage::Pretrain, &dir, &p.vocab, |hook| {
            train_mle(model, &p.tok_train, &p.tok_valid, &cfg.pretrain, Some(hook))
        })?;
        self.write_training(&dir, &outcome, name)?;
        self.finish(Stage::Pretrain, inputs)?;
        Ok(())
    }

    fn load_groups(
        &self,
        stage: Stage,
        inputs: &mut Inputs,
    ) -> Result<(Vec<ContrastiveGroup>, Vec<ContrastiveGroup>)> {
        let train = self.need(stage, Stage::Sample, "train.groups.jsonl")?;
        let valid = self.need(stage, Stage::Sample, "valid.groups.jsonl")?;
        let groups = (read_cache(&train)?, read_cache(&valid)?);
        inputs.add(train);
        inputs.add(valid);
        Ok(groups)
    }

    /// Contrastive fine-tuning of the pretrained model under `loss`.
    #[allow(clippy::too_many_arguments)]
    fn contrastive(
        &self,
        stage: Stage,
        dir: &Path,
        p: &Prepared,
        init: &DialogueModel,
        groups: &(Vec<ContrastiveGroup>, Vec<ContrastiveGroup>),
        loss: &LossConfig,
        train: &TrainConfig,
    ) -> Result<(TrainingOutcome, String)> {
        let reference = snapshot_reference(init);
        self.checkpointed(stage, dir, &p.vocab, |hook| {
            train_contrastive(
                init.clone(),
                &reference,
                &p.tok_train,
                &groups.0,
                &p.tok_valid,
                &groups.1,
                loss,
                train,
                Some(hook),
            )
        })
    }

    fn train(&self) -> Result<()> {
        let mut inputs = Inputs::default();
        let p = self.load_prepared(Stage::Train, &mut inputs)?;
        let init = self.best_model(Stage::Train, Stage::Pretrain, &p.vocab, &mut inputs)?;
        let groups = self.load_groups(Stage::Train, &mut inputs)?;
        let dir = self.fresh_dir(Stage::Train)?;
        let cfg = &self.config;
        let (outcome, name) = self.contrastive(
            Stage::Train,
            &dir,
            &p,
            &init,
            &groups,
            &cfg.loss,
            &cfg.train,
        )?;
        self.write_training(&dir, &outcome, name)?;
        self.finish(Stage::Train, inputs)?;
        Ok(())
    }

    /// Decodes every test context.
    pub fn decode_test(&self, model: &DialogueModel, p: &Prepared) -> Result<Vec<ManifestEntry>> {
        let decode = &self.config.decode;
        let hyps = par_map(&p.tok_test, self.config.workers, |t| {
            generate(model, &t.context, decode).map(|ids| p.vocab.decode(&ids).join(" "))
        });
        p.test
            .iter()
            .zip(hyps)
            .map(|(pair, h)| {
                Ok(ManifestEntry {
                    context: pair.context.clone(),
                    reference: pair.response.clone(),
                    hypothesis: h?,
                })
            })
            .collect()
    }

    fn generate(&self) -> Result<()> {
        let mut inputs = Inputs::default();
        let p = self.load_prepared(Stage::Generate, &mut inputs)?;
        let mle = self.best_model(Stage::Generate, Stage::Pretrain, &p.vocab, &mut inputs)?;
        let cl = self.best_model(Stage::Generate, Stage::Train, &p.vocab, &mut inputs)?;
        let dir = self.fresh_dir(Stage::Generate)?;
        for (name, model) in [("mle", &mle), ("contrastive", &cl)] {
            write_jsonl(
                &dir.join(format!("{name}.jsonl")),
                &self.decode_test(model, &p)?,
            )?;
        }
        self.finish(Stage::Generate, inputs)?;
        Ok(())
    }

    /// Scores a manifest against the prepared test split.
    pub fn score(
        &self,
        p: &Prepared,
        entropy: &EntropyModel,
        manifest: &[ManifestEntry],
    ) -> Result<EvalReport> {
        if manifest.len() != p.test.len()
            || manifest
                .iter()
                .zip(&p.test)
                .any(|(m, t)| m.reference != t.response)
        {
            return Err(groupcl::Error::InvalidArgument(
                "generated responses do not match the test split".into(),
            )
            .into());
        }
        let hyps: Vec<Vec<String>> = manifest
            .iter()
            .map(|m| tokenize_text(&m.hypothesis))
            .collect();
        Ok(score_hypotheses(&p.test, &hyps, &p.embeddings, entropy)?)
    }

    fn evaluate(&self) -> Result<()> {
        let mut inputs = Inputs::default();
        let mut manifests = Vec::new();
        for name in ["mle", "contrastive"] {
            let path = self.need(Stage::Evaluate, Stage::Generate, &format!("{name}.jsonl"))?;
            manifests.push((name, read_jsonl::<ManifestEntry>(&path)?));
            inputs.add(path);
        }
        let p = self.load_prepared(Stage::Evaluate, &mut inputs)?;
        let dir = self.fresh_dir(Stage::Evaluate)?;
        let entropy = EntropyModel::fit(&p.train)?;
        let mut reports = Vec::new();
        for (name, manifest) in &manifests {
            let report = self.score(&p, &entropy, manifest)?;
            write_report(&dir.join(name), &report, manifest)?;
            reports.push((name.to_string(), report));
        }
        write_file(
            &dir.join("comparison.txt"),
            comparison_table(&reports).as_bytes(),
        )?;
        self.finish(Stage::Evaluate, inputs)?;
        Ok(())
    }

    /// Fine-tunes and scores one ablation variant, writing its artifacts under `dir`.
    pub fn run_variant(
        &self,
        variant: Variant,
        p: &Prepared,
        init: &DialogueModel,
        groups: &(Vec<ContrastiveGroup>, Vec<ContrastiveGroup>),
        dir: &Path,
    ) -> Result<(AblationRow, Vec<TrainRecord>)> {
        let cfg = &self.config;
        let loss = LossConfig {
            eps: cfg.loss.eps,
            mle_mix: cfg.loss.mle_mix,
            ..variant.config(cfg.loss.k)
        };
        let mut train = cfg.train;
        if let Some(e) = cfg.ablate.max_epochs {
            train.max_epochs = e;
        }
        eprintln!("[ablate] {}", variant.label());
        std::fs::create_dir_all(dir).map_err(|e| groupcl::Error::io(dir, e))?;
        let (outcome, name) =
            self.contrastive(Stage::Ablate, dir, p, init, groups, &loss, &train)?;
        self.write_training(dir, &outcome, name)?;
        let manifest = self.decode_test(&outcome.model, p)?;
        let entropy = EntropyModel::fit(&p.train)?;
        let report = self.score(p, &entropy, &manifest)?;
        write_report(dir, &report, &manifest)?;
        let row = AblationRow {
            variant,
            label: variant.label().into(),
            best_validation_loss: outcome.best_validation_loss,
            report,
        };
        Ok((row, outcome.log))
    }

    /// Runs the configured ablation variants from the same pretrained model and
    /// group cache.
    pub fn ablate(&self) -> Result<Vec<AblationRow>> {
        let mut inputs = Inputs::default();
        let p = self.load_prepared(Stage::Ablate, &mut inputs)?;
        let init = self.best_model(Stage::Ablate, Stage::Pretrain, &p.vocab, &mut inputs)?;
        let groups = self.load_groups(Stage::Ablate, &mut inputs)?;
        let dir = self.fresh_dir(Stage::Ablate)?;
        let mut rows = Vec::new();
        for &variant in &self.config.ablate.variants {
            let slug = serde_json::to_value(variant)?
                .as_str()
                .unwrap_or("variant")
                .to_string();
            let (row, _) = self.run_variant(variant, &p, &init, &groups, &dir.join(slug))?;
            rows.push(row);
        }
        write_file(&dir.join("table.json"), &serde_json::to_vec_pretty(&rows)?)?;
        write_file(&dir.join("table.txt"), ablation_table(&rows).as_bytes())?;
        self.finish(Stage::Ablate, inputs)?;
        Ok(rows)
    }
}

/// Files under `dir`, recursively, in sorted order.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| groupcl::Error::io(&d, e))? {
            let path = entry.map_err(|e| groupcl::Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Metric names down the side, one column per report.
pub fn comparison_table(reports: &[(String, EvalReport)]) -> String {
    let mut s = String::from(groupcl::eval::METRIC_NOTES);
    s.push_str(&format!("\n{:<12}", "metric"));
    for (name, _) in reports {
        s.push_str(&format!("{name:>14}"));
    }
    s.push('\n');
    let rows: Vec<Vec<(String, f64)>> = reports.iter().map(|(_, r)| r.rows()).collect();
    if let Some(first) = rows.first() {
        for (i, (metric, _)) in first.iter().enumerate() {
            s.push_str(&format!("{metric:<12}"));
            for r in &rows {
                s.push_str(&format!("{:>14.4}", r[i].1));
            }
            s.push('\n');
        }
    }
    s
}

/// One row per variant, one column per metric.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from(groupcl::eval::METRIC_NOTES);
    s.push_str(&format!("\n{:<40}", "variant"));
    if let Some(first) = rows.first() {
        for (metric, _) in first.report.rows() {
            s.push_str(&format!("{metric:>11}"));
        }
    }
    s.push('\n');
    for row in rows {
        s.push_str(&format!("{:<40}", row.label));
        for (_, v) in row.report.rows() {
            s.push_str(&format!("{v:>11.4}"));
        }
        s.push('\n');
    }
    s
}
