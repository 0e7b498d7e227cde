//! One-shot experiment runner: preprocess, BPE, train, fine-tune, ensemble,
//! translate and score, with one report row per enabled stage.
//!
//! Configuration is TOML:
//!
//! ```toml
//! seed = 1
//!
//! [data]
//! spec = "datasets.cfg"
//! train_set = "D"
//! dev_src = "dev.ar"
//! dev_tgt = "dev.en"
//! test_src = "test.ar"
//! test_refs = ["test.en0", "test.en1"]
//!
//! [preprocess]
//! enabled = true
//! max_len = 100
//!
//! [bpe]
//! merges = 300
//!
//! [train]          # any training config key
//! max_epochs = 4
//!
//! [finetune]       # enabled, set, then training config overrides
//! enabled = true
//! set = "A"
//! learning_rate = 1e-4
//!
//! [ensemble]
//! size = 3
//!
//! [decode]
//! beam = 5
//! alpha = 0.6
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{compose, DatasetSpec, ParallelCorpus};
use crate::decoding::{translate_lines, Combine, DecodeConfig, Ensemble};
use crate::error::{Error, Result};
use crate::eval::{corpus_bleu, sentence_stats, BleuStats};
use crate::model::ModelParams;
use crate::subword::{apply_bpe, learn_bpe, MergeTable, Vocabulary, DEFAULT_VOCAB_CAP};
use crate::textprep::{
    filter_pair, tokenize_english, AffixLexicon, ArabicPreprocessor, FilterDecision, NormalizationRuleSet,
    DEFAULT_MAX_LEN,
};
use crate::training::{finetune, model_dims, train, Checkpoint, EncodedCorpus, TrainConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    data: RawData,
    #[serde(default)]
    preprocess: RawPreprocess,
    #[serde(default)]
    bpe: RawBpe,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    finetune: toml::Table,
    #[serde(default)]
    ensemble: RawEnsemble,
    #[serde(default)]
    decode: RawDecode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    spec: PathBuf,
    train_set: String,
    dev_src: PathBuf,
    dev_tgt: PathBuf,
    test_src: PathBuf,
    test_refs: Vec<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPreprocess {
    enabled: bool,
    rules: Option<PathBuf>,
    affixes: Option<PathBuf>,
    max_len: usize,
}

impl Default for RawPreprocess {
    fn default() -> Self {
        RawPreprocess {
            enabled: true,
            rules: None,
            affixes: None,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawBpe {
    merges: usize,
    vocab_cap: usize,
}

impl Default for RawBpe {
    fn default() -> Self {
        RawBpe {
            merges: 1000,
            vocab_cap: DEFAULT_VOCAB_CAP,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawEnsemble {
    size: usize,
}

impl Default for RawEnsemble {
    fn default() -> Self {
        RawEnsemble { size: 1 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDecode {
    beam: usize,
    alpha: f64,
    max_len: Option<usize>,
    arithmetic_mean: bool,
}

impl Default for RawDecode {
    fn default() -> Self {
        let d = DecodeConfig::default();
        RawDecode {
            beam: d.beam_size,
            alpha: d.alpha,
            max_len: None,
            arithmetic_mean: false,
        }
    }
}

/// Validated pipeline settings.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub spec: PathBuf,
    pub train_set: String,
    pub dev_src: PathBuf,
    pub dev_tgt: PathBuf,
    pub test_src: PathBuf,
    pub test_refs: Vec<PathBuf>,
    pub preprocess: bool,
    pub rules: Option<PathBuf>,
    pub affixes: Option<PathBuf>,
    pub max_len: usize,
    pub bpe_merges: usize,
    pub vocab_cap: usize,
    pub train: TrainConfig,
    /// Fine-tuning set name and config, when tuning is enabled.
    pub finetune: Option<(String, TrainConfig)>,
    pub ensemble_size: usize,
    pub decode: DecodeConfig,
    /// SHA-256 of the config text.
    pub digest: String,
}

fn overlay(base: &TrainConfig, table: &toml::Table, skip: &[&str]) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    for (key, value) in table {
        if skip.contains(&key.as_str()) {
            continue;
        }
        let text = match value {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            other => return Err(Error::Config(format!("unsupported value for '{key}': {other}"))),
        };
        cfg.set(key, &text)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

impl PipelineConfig {
    /// Parses and validates; every referenced file must exist.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &Path| base.join(p);
        let train_cfg = overlay(
            &TrainConfig {
                seed: raw.seed,
                ..TrainConfig::default()
            },
            &raw.train,
            &[],
        )?;
        let tuning_enabled = match raw.finetune.get("enabled") {
            None => !raw.finetune.is_empty(),
            Some(toml::Value::Boolean(b)) => *b,
            Some(_) => return Err(Error::Config("finetune.enabled must be a boolean".into())),
        };
        let finetune = if tuning_enabled {
            let set = match raw.finetune.get("set") {
                Some(toml::Value::String(s)) => s.clone(),
                _ => return Err(Error::Config("tuning is enabled but finetune.set is missing".into())),
            };
            let tuned = overlay(
                &TrainConfig {
                    learning_rate: 1e-4,
                    ..train_cfg.clone()
                },
                &raw.finetune,
                &["enabled", "set"],
            )?;
            Some((set, tuned))
        } else {
            None
        };
        if raw.ensemble.size == 0 {
            return Err(Error::Config("ensemble.size must be at least 1".into()));
        }
        if raw.decode.beam == 0 {
            return Err(Error::Config("decode.beam must be at least 1".into()));
        }
        if raw.bpe.vocab_cap <= crate::subword::RESERVED_TOKENS.len() {
            return Err(Error::Config("bpe.vocab_cap is too small".into()));
        }
        if raw.data.test_refs.is_empty() {
            return Err(Error::Config("data.test_refs needs at least one reference".into()));
        }
        let cfg = PipelineConfig {
            seed: raw.seed,
            spec: resolve(&raw.data.spec),
            train_set: raw.data.train_set,
            dev_src: resolve(&raw.data.dev_src),
            dev_tgt: resolve(&raw.data.dev_tgt),
            test_src: resolve(&raw.data.test_src),
            test_refs: raw.data.test_refs.iter().map(|p| resolve(p)).collect(),
            preprocess: raw.preprocess.enabled,
            rules: raw.preprocess.rules.as_deref().map(resolve),
            affixes: raw.preprocess.affixes.as_deref().map(resolve),
            max_len: raw.preprocess.max_len,
            bpe_merges: raw.bpe.merges,
            vocab_cap: raw.bpe.vocab_cap,
            train: train_cfg,
            finetune,
            ensemble_size: raw.ensemble.size,
            decode: DecodeConfig {
                beam_size: raw.decode.beam,
                alpha: raw.decode.alpha,
                max_len: raw.decode.max_len,
                combine: if raw.decode.arithmetic_mean {
                    Combine::Average
                } else {
                    Combine::LogAverage
                },
            },
            digest: hex::encode(Sha256::digest(text.as_bytes())),
        };
        cfg.check_inputs()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Every input file the run reads, spec members included.
    pub fn input_files(&self) -> Result<Vec<PathBuf>> {
        let mut files = vec![self.spec.clone(), self.dev_src.clone(), self.dev_tgt.clone(), self.test_src.clone()];
        files.extend(self.test_refs.iter().cloned());
        files.extend(self.rules.iter().cloned());
        files.extend(self.affixes.iter().cloned());
        if self.spec.is_file() {
            let spec = DatasetSpec::load(&self.spec)?;
            let mut sets = vec![self.train_set.as_str()];
            if let Some((set, _)) = &self.finetune {
                sets.push(set);
            }
            for set in sets {
                for name in spec.members(set)? {
                    let (s, t) = spec.corpus_paths(&name).expect("members are registered");
                    files.push(s.to_path_buf());
                    files.push(t.to_path_buf());
                }
            }
        }
        files.sort();
        files.dedup();
        Ok(files)
    }

    fn check_inputs(&self) -> Result<()> {
        if !self.spec.is_file() {
            return Err(Error::Config(format!("dataset spec {} not found", self.spec.display())));
        }
        for f in self.input_files()? {
            if !f.is_file() {
                return Err(Error::Config(format!("input file {} not found", f.display())));
            }
        }
        Ok(())
    }
}

/// Per-stage seed: the first eight bytes of `sha256(seed || label)`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub dev_bleu: f64,
    pub test_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_digest: String,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

impl PipelineReport {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.system.chars().count()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$} | dev BLEU | test BLEU\n", "system");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$} | {:>8.2} | {:>9.2}", r.system, r.dev_bleu, r.test_bleu);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageTiming>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Reads a run's manifest.
pub fn version_manifest(run_dir: &Path) -> Result<Manifest> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Re-hashes the recorded inputs; returns the paths whose contents changed
/// or that disappeared.
pub fn validate_manifest(run_dir: &Path) -> Result<Vec<String>> {
    let manifest = version_manifest(run_dir)?;
    Ok(manifest
        .inputs
        .iter()
        .filter(|(path, hash)| file_sha256(Path::new(path)).ok().as_ref() != Some(hash))
        .map(|(path, _)| path.clone())
        .collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    write_text(path, &text)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn english(line: &str) -> String {
    tokenize_english(line, false).join(" ")
}

/// BLEU ×100 of tokenized lines; zero when nothing was produced.
fn bleu_percent(hyps: &[String], refs: &[Vec<String>]) -> Result<f64> {
    let mut total = BleuStats::default();
    for (i, h) in hyps.iter().enumerate() {
        let cand: Vec<&str> = h.split_whitespace().collect();
        let rs: Vec<Vec<&str>> = refs.iter().map(|set| set[i].split_whitespace().collect()).collect();
        total += sentence_stats(&cand, &rs)?;
    }
    if total.candidate_len == 0 {
        return Ok(0.0);
    }
    Ok(corpus_bleu(&total)?.percent())
}

/// Source preprocessing, BPE codes and vocabulary shared by one system's models.
struct System {
    dir: PathBuf,
    pre: ArabicPreprocessor,
    codes: MergeTable,
    vocab: Vocabulary,
    train: EncodedCorpus,
    dev: EncodedCorpus,
}

struct EvalData {
    dev_src: Vec<String>,
    dev_refs: Vec<Vec<String>>,
    test_src: Vec<String>,
    test_refs: Vec<Vec<String>>,
    dev_pairs: (Vec<String>, Vec<String>),
}

impl System {
    fn prepare_pairs(&self, corpus: &ParallelCorpus, max_len: usize) -> (Vec<String>, Vec<String>) {
        prepare(&self.pre, corpus, max_len)
    }

    fn encode(&self, src: &[String], tgt: &[String]) -> Result<EncodedCorpus> {
        let bpe = |lines: &[String]| -> Vec<String> {
            lines
                .iter()
                .map(|l| {
                    let words: Vec<&str> = l.split_whitespace().collect();
                    apply_bpe(&words, &self.codes).join(" ")
                })
                .collect()
        };
        EncodedCorpus::from_lines(&bpe(src), &bpe(tgt), &self.vocab)
    }

    fn translate(&self, members: &[Checkpoint], lines: &[String], decode: &DecodeConfig) -> Result<Vec<String>> {
        let ens = Ensemble::from_checkpoints(members, decode.combine)?;
        let prepared: Vec<String> = lines.iter().map(|l| self.pre.process(l).join(" ")).collect();
        let out = translate_lines(&prepared, &ens, &self.vocab, Some(&self.codes), decode)?;
        Ok(out.into_iter().map(|t| t.text).collect())
    }
}

fn prepare(pre: &ArabicPreprocessor, corpus: &ParallelCorpus, max_len: usize) -> (Vec<String>, Vec<String>) {
    let src_lines: Vec<String> = corpus.sources().map(str::to_string).collect();
    let processed = pre.process_lines(&src_lines);
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    for (s, t) in processed.into_iter().zip(corpus.targets()) {
        let t = tokenize_english(t, false);
        if filter_pair(s.len(), t.len(), max_len) == FilterDecision::Keep {
            src.push(s.join(" "));
            tgt.push(t.join(" "));
        }
    }
    (src, tgt)
}

fn build_system(
    dir: PathBuf,
    pre: ArabicPreprocessor,
    corpus: &ParallelCorpus,
    data: &EvalData,
    config: &PipelineConfig,
) -> Result<System> {
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (src, tgt) = prepare(&pre, corpus, config.max_len);
    if src.is_empty() {
        return Err(Error::Input("no training pairs survive preprocessing".into()));
    }
    write_lines(&dir.join("train.src"), &src)?;
    write_lines(&dir.join("train.tgt"), &tgt)?;
    let codes = learn_bpe(src.iter().chain(&tgt), config.bpe_merges, config.vocab_cap)?;
    codes.save(&dir.join("codes.bpe"))?;
    let pieces: Vec<String> = src
        .iter()
        .chain(&tgt)
        .map(|l| {
            let words: Vec<&str> = l.split_whitespace().collect();
            apply_bpe(&words, &codes).join(" ")
        })
        .collect();
    let vocab = Vocabulary::build(&pieces, config.vocab_cap)?;
    vocab.save(&dir.join("vocab.tsv"))?;
    let mut system = System {
        dir,
        pre,
        codes,
        vocab,
        train: EncodedCorpus::from_ids(Vec::new(), ""),
        dev: EncodedCorpus::from_ids(Vec::new(), ""),
    };
    system.train = system.encode(&src, &tgt)?;
    let dev_corpus = ParallelCorpus {
        pairs: data
            .dev_pairs
            .0
            .iter()
            .zip(&data.dev_pairs.1)
            .map(|(s, t)| crate::corpus::SentencePair {
                src: s.clone(),
                tgt: t.clone(),
                tag: "dev".into(),
            })
            .collect(),
    };
    let (dsrc, dtgt) = system.prepare_pairs(&dev_corpus, usize::MAX);
    system.dev = system.encode(&dsrc, &dtgt)?;
    Ok(system)
}

fn train_model(system: &System, config: &TrainConfig, seed: u64) -> Result<Checkpoint> {
    let cfg = TrainConfig { seed, ..config.clone() };
    let init = ModelParams::init(model_dims(system.vocab.len(), &cfg), seed);
    Ok(train(&system.train, Some(&system.dev), &cfg, init)?.best().clone())
}

fn tune_model(system: &System, base: &Checkpoint, data: &EncodedCorpus, config: &TrainConfig, seed: u64) -> Result<Checkpoint> {
    let cfg = TrainConfig { seed, ..config.clone() };
    Ok(finetune(base, data, Some(&system.dev), &cfg)?.best().clone())
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    run_dir: &'a Path,
    timings: Vec<StageTiming>,
    rows: Vec<ReportRow>,
}

impl Runner<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        let start = Instant::now();
        let out = f().map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        })?;
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn score_row(&mut self, label: &str, system: &System, members: &[Checkpoint], data: &EvalData, tag: &str) -> Result<()> {
        let decode = self.config.decode;
        let row = self.stage(&format!("translate {tag}"), || {
            let dev = system.translate(members, &data.dev_src, &decode)?;
            let test = system.translate(members, &data.test_src, &decode)?;
            write_lines(&system.dir.join(format!("{tag}.dev.hyp")), &dev)?;
            write_lines(&system.dir.join(format!("{tag}.test.hyp")), &test)?;
            Ok(ReportRow {
                system: label.to_string(),
                dev_bleu: bleu_percent(&dev, &data.dev_refs)?,
                test_bleu: bleu_percent(&test, &data.test_refs)?,
            })
        })?;
        self.rows.push(row);
        Ok(())
    }
}

fn preprocessor(config: &PipelineConfig) -> Result<ArabicPreprocessor> {
    let rules = match &config.rules {
        Some(p) => NormalizationRuleSet::load(p)?,
        None => NormalizationRuleSet::default(),
    };
    let affixes = match &config.affixes {
        Some(p) => AffixLexicon::load(p)?,
        None => AffixLexicon::default(),
    };
    Ok(ArabicPreprocessor::new(rules, affixes))
}

/// Runs every enabled stage under `run_dir` and writes `report.txt`,
/// `report.json` and the manifest there.
pub fn run_pipeline(config: &PipelineConfig, run_dir: &Path) -> Result<PipelineReport> {
    config.check_inputs()?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut runner = Runner {
        config,
        run_dir,
        timings: Vec::new(),
        rows: Vec::new(),
    };

    let (train_corpus, tune_corpus, data) = runner.stage("load", || {
        let spec = DatasetSpec::load(&config.spec)?;
        let train_corpus = compose(&spec, &config.train_set)?;
        let tune_corpus = match &config.finetune {
            Some((set, _)) => Some(compose(&spec, set)?),
            None => None,
        };
        let dev_src = read_lines(&config.dev_src)?;
        let dev_tgt = read_lines(&config.dev_tgt)?;
        if dev_src.len() != dev_tgt.len() {
            return Err(Error::Alignment(format!(
                "{} has {} lines but {} has {}",
                config.dev_src.display(),
                dev_src.len(),
                config.dev_tgt.display(),
                dev_tgt.len()
            )));
        }
        let test_src = read_lines(&config.test_src)?;
        let mut test_refs = Vec::new();
        for r in &config.test_refs {
            let lines = read_lines(r)?;
            if lines.len() != test_src.len() {
                return Err(Error::Alignment(format!(
                    "{} has {} lines but {} has {}",
                    config.test_src.display(),
                    test_src.len(),
                    r.display(),
                    lines.len()
                )));
            }
            test_refs.push(lines.iter().map(|l| english(l)).collect());
        }
        let data = EvalData {
            dev_refs: vec![dev_tgt.iter().map(|l| english(l)).collect()],
            dev_pairs: (dev_src.clone(), dev_tgt),
            dev_src,
            test_src,
            test_refs,
        };
        Ok((train_corpus, tune_corpus, data))
    })?;

    let baseline = runner.stage("baseline", || {
        let system = build_system(
            run_dir.join("baseline"),
            ArabicPreprocessor::passthrough(),
            &train_corpus,
            &data,
            config,
        )?;
        let ckpt = train_model(&system, &config.train, derive_seed(config.seed, "baseline"))?;
        ckpt.save(&system.dir.join("model.ckpt"))?;
        Ok((system, ckpt))
    })?;
    runner.score_row("baseline", &baseline.0, std::slice::from_ref(&baseline.1), &data, "model")?;

    let (system, mut current, base_label) = if config.preprocess {
        let pre = preprocessor(config)?;
        let prep = runner.stage("ar preprocessing", || {
            let system = build_system(run_dir.join("preprocessed"), pre, &train_corpus, &data, config)?;
            let ckpt = train_model(&system, &config.train, derive_seed(config.seed, "preprocessed"))?;
            ckpt.save(&system.dir.join("model.ckpt"))?;
            Ok((system, ckpt))
        })?;
        runner.score_row("+ ar preprocessing", &prep.0, std::slice::from_ref(&prep.1), &data, "model")?;
        (prep.0, prep.1, "preprocessed")
    } else {
        (baseline.0, baseline.1, "baseline")
    };

    let tune_data = match (&config.finetune, &tune_corpus) {
        (Some(_), Some(corpus)) => {
            let (s, t) = system.prepare_pairs(corpus, config.max_len);
            Some(system.encode(&s, &t)?)
        }
        _ => None,
    };
    if let (Some((_, tune_cfg)), Some(tune_data)) = (&config.finetune, &tune_data) {
        current = runner.stage("tuning", || {
            let tuned = tune_model(&system, &current, tune_data, tune_cfg, derive_seed(config.seed, "tuning"))?;
            tuned.save(&system.dir.join("tuned.ckpt"))?;
            Ok(tuned)
        })?;
        runner.score_row("+ tuning", &system, std::slice::from_ref(&current), &data, "tuned")?;
    }

    if config.ensemble_size > 1 {
        let k = config.ensemble_size;
        let members = runner.stage("ensemble", || {
            let dir = system.dir.join("ensemble");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut members = vec![current.clone()];
            for m in 1..k {
                let label = format!("{base_label}-member-{m}");
                let mut ckpt = train_model(&system, &config.train, derive_seed(config.seed, &label))?;
                if let (Some((_, tune_cfg)), Some(tune_data)) = (&config.finetune, &tune_data) {
                    ckpt = tune_model(&system, &ckpt, tune_data, tune_cfg, derive_seed(config.seed, &format!("{label}-tuning")))?;
                }
                members.push(ckpt);
            }
            for (i, c) in members.iter().enumerate() {
                c.save(&dir.join(format!("member-{i}.ckpt")))?;
            }
            Ok(members)
        })?;
        runner.score_row(&format!("+ ensemble of {k}"), &system, &members, &data, "ensemble")?;
    }

    let report = PipelineReport {
        config_digest: config.digest.clone(),
        seed: config.seed,
        rows: runner.rows,
    };
    write_text(&run_dir.join("report.txt"), &report.to_text())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&run_dir.join("report.json"), &(json + "\n"))?;

    let mut inputs = BTreeMap::new();
    for f in config.input_files()? {
        inputs.insert(f.display().to_string(), file_sha256(&f)?);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: config.digest.clone(),
        seed: config.seed,
        inputs,
        stages: runner.timings,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&runner.run_dir.join(MANIFEST_FILE), &(json + "\n"))?;
    Ok(report)
}
