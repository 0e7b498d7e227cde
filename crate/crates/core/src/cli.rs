//! Command-line front end. Data goes to `--out` files or stdout, logs to
//! stderr. Exit codes: 0 success, 1 usage or config, 2 data or format,
//! 3 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{compose, stats, DatasetSpec};
use crate::decoding::{translate_lines, Combine, DecodeConfig, Ensemble, DEFAULT_ALPHA, DEFAULT_BEAM};
use crate::error::{Error, Result};
use crate::eval::score_files;
use crate::model::ModelParams;
use crate::pipeline::{run_pipeline, validate_manifest, PipelineConfig};
use crate::subword::{apply_bpe_line, decode_bpe_line, learn_bpe, MergeTable, Vocabulary, DEFAULT_VOCAB_CAP};
use crate::textprep::{
    filter_pair, tokenize_english, AffixLexicon, ArabicPreprocessor, FilterDecision, NormalizationRuleSet,
    DEFAULT_MAX_LEN,
};
use crate::training::{finetune, load_checkpoint, model_dims, train, Checkpoint, EncodedCorpus, TrainConfig, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "arnmt", version, about = "Arabic-English attention NMT toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize, segment and length-filter Arabic text (and tokenize its English side).
    Preprocess(PreprocessArgs),
    /// Learn BPE merges from one or more tokenized files.
    BpeLearn(BpeLearnArgs),
    /// Apply (or undo) BPE on a tokenized file.
    BpeApply(BpeApplyArgs),
    /// Corpus statistics for a dataset set.
    Stats(StatsArgs),
    /// Train a model from BPE-applied parallel files.
    Train(TrainArgs),
    /// Continue training a checkpoint on in-domain data.
    Finetune(FinetuneArgs),
    /// Translate with one checkpoint or an ensemble.
    Translate(TranslateArgs),
    /// Corpus BLEU against one or more references.
    Score(ScoreArgs),
    /// Run the full experiment ladder from a TOML config.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// English side, filtered together with the source.
    #[arg(long, requires = "tgt_out")]
    pub tgt: Option<PathBuf>,
    #[arg(long, requires = "tgt")]
    pub tgt_out: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub affixes: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Only split punctuation (no normalization or segmentation).
    #[arg(long)]
    pub passthrough: bool,
    /// Lowercase the English side.
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BpeLearnArgs {
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub merges: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VOCAB_CAP)]
    pub vocab_cap: usize,
    /// Also write the joint vocabulary of the BPE-applied inputs.
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BpeApplyArgs {
    #[arg(long, required_unless_present = "decode")]
    pub codes: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Join subwords back into words instead.
    #[arg(long)]
    pub decode: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub set: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, requires = "valid_tgt")]
    pub valid_src: Option<PathBuf>,
    #[arg(long, requires = "valid_src")]
    pub valid_tgt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long)]
    pub max_updates: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long = "ckpt", required = true)]
    pub ckpts: Vec<PathBuf>,
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BEAM)]
    pub beam: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Average member probabilities instead of log-probabilities.
    #[arg(long)]
    pub arithmetic_mean: bool,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One log-probability per line.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref", required = true)]
    pub refs: Vec<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Only re-check the manifest of an existing run directory.
    #[arg(long)]
    pub verify: bool,
    #[arg(long)]
    pub json: bool,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Encoding(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_lines<S: AsRef<str>>(path: Option<&Path>, lines: &[S]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    let out = if json {
        serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))? + "\n"
    } else {
        text()
    };
    print!("{out}");
    Ok(())
}

#[derive(Serialize)]
struct PreprocessReport {
    read: usize,
    kept: usize,
    dropped: usize,
    dropped_lines: Vec<usize>,
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let pre = if a.passthrough {
        ArabicPreprocessor::passthrough()
    } else {
        let rules = match &a.rules {
            Some(p) => NormalizationRuleSet::load(p)?,
            None => NormalizationRuleSet::default(),
        };
        let affixes = match &a.affixes {
            Some(p) => AffixLexicon::load(p)?,
            None => AffixLexicon::default(),
        };
        ArabicPreprocessor::new(rules, affixes)
    };
    let src = read_lines(&a.src)?;
    let tgt = match &a.tgt {
        Some(p) => {
            let t = read_lines(p)?;
            if t.len() != src.len() {
                return Err(Error::Alignment(format!(
                    "{} has {} lines but {} has {}",
                    a.src.display(),
                    src.len(),
                    p.display(),
                    t.len()
                )));
            }
            Some(t)
        }
        None => None,
    };
    let processed = pre.process_lines(&src);
    let mut out_src = Vec::new();
    let mut out_tgt = Vec::new();
    let mut dropped = Vec::new();
    for (i, s) in processed.iter().enumerate() {
        let t = tgt.as_ref().map(|t| tokenize_english(&t[i], a.lowercase));
        // Without a target side only the source length is checked.
        let tgt_len = t.as_ref().map_or(1, Vec::len);
        if filter_pair(s.len(), tgt_len, a.max_len) == FilterDecision::Drop {
            dropped.push(i + 1);
            continue;
        }
        out_src.push(s.join(" "));
        if let Some(t) = t {
            out_tgt.push(t.join(" "));
        }
    }
    write_lines(Some(&a.out), &out_src)?;
    if let Some(p) = &a.tgt_out {
        write_lines(Some(p), &out_tgt)?;
    }
    if !dropped.is_empty() {
        log::warn!("dropped {} lines: {:?}", dropped.len(), dropped);
    }
    let report = PreprocessReport {
        read: src.len(),
        kept: out_src.len(),
        dropped: dropped.len(),
        dropped_lines: dropped,
    };
    emit(a.json, &report, || {
        format!("read {} kept {} dropped {}\n", report.read, report.kept, report.dropped)
    })
}

#[derive(Serialize)]
struct BpeReport {
    merges: usize,
    vocab_size: Option<usize>,
}

fn bpe_learn(a: &BpeLearnArgs) -> Result<()> {
    let mut lines = Vec::new();
    for p in &a.inputs {
        lines.extend(read_lines(p)?);
    }
    let table = learn_bpe(&lines, a.merges, a.vocab_cap)?;
    table.save(&a.out)?;
    let mut vocab_size = None;
    if let Some(vp) = &a.vocab_out {
        let pieces: Vec<String> = lines.iter().map(|l| apply_bpe_line(l, &table)).collect();
        let vocab = Vocabulary::build(&pieces, a.vocab_cap)?;
        vocab.save(vp)?;
        vocab_size = Some(vocab.len());
    }
    let report = BpeReport {
        merges: table.len(),
        vocab_size,
    };
    emit(a.json, &report, || match vocab_size {
        Some(v) => format!("learned {} merges, vocabulary {}\n", report.merges, v),
        None => format!("learned {} merges\n", report.merges),
    })
}

fn bpe_apply(a: &BpeApplyArgs) -> Result<()> {
    let lines = read_lines(&a.input)?;
    let out: Vec<String> = if a.decode {
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| decode_bpe_line(l).map_err(|e| e.at_line(i + 1)))
            .collect::<Result<_>>()?
    } else {
        let codes = a.codes.as_ref().expect("clap requires --codes");
        let table = MergeTable::load(codes)?;
        lines.iter().map(|l| apply_bpe_line(l, &table)).collect()
    };
    write_lines(a.out.as_deref(), &out)
}

fn stats_cmd(a: &StatsArgs) -> Result<()> {
    let spec = DatasetSpec::load(&a.spec)?;
    let report = stats(&compose(&spec, &a.set)?);
    emit(a.json, &report, || report.to_text())
}

fn load_data(d: &DataArgs, vocab: &Vocabulary) -> Result<(EncodedCorpus, Option<EncodedCorpus>)> {
    let train_set = EncodedCorpus::from_lines(&read_lines(&d.src)?, &read_lines(&d.tgt)?, vocab)?;
    let valid = match (&d.valid_src, &d.valid_tgt) {
        (Some(s), Some(t)) => Some(EncodedCorpus::from_lines(&read_lines(s)?, &read_lines(t)?, vocab)?),
        _ => None,
    };
    Ok((train_set, valid))
}

#[derive(Serialize)]
struct TrainSummary {
    updates: u64,
    checkpoints: Vec<String>,
    best: String,
    best_val_loss: f64,
    stop: String,
}

fn write_outcome(outcome: &TrainOutcome, dir: &Path, json: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for c in &outcome.checkpoints {
        let name = format!("ckpt-{:06}.ckpt", c.meta.updates);
        c.save(&dir.join(&name))?;
        names.push(name);
    }
    let best = outcome.best();
    best.save(&dir.join("best.ckpt"))?;
    let log: Vec<String> = outcome.log.iter().map(|r| r.to_string()).collect();
    write_lines(Some(&dir.join("train.log")), &log)?;
    let summary = TrainSummary {
        updates: outcome.checkpoints.last().map_or(0, |c| c.meta.updates),
        checkpoints: names,
        best: format!("ckpt-{:06}.ckpt", best.meta.updates),
        best_val_loss: best.meta.val_loss,
        stop: format!("{:?}", outcome.stop),
    };
    emit(json, &summary, || {
        let mut s = log.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s + &format!("best {} val_loss {:.6}\n", summary.best, summary.best_val_loss)
    })
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let vocab = Vocabulary::load(&a.data.vocab)?;
    let (train_set, valid) = load_data(&a.data, &vocab)?;
    let init = ModelParams::init(model_dims(vocab.len(), &config), config.seed);
    let outcome = train(&train_set, valid.as_ref(), &config, init)?;
    write_outcome(&outcome, &a.out, a.json)
}

fn finetune_cmd(a: &FinetuneArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.data.vocab)?;
    let base = load_checkpoint(&a.base, Some(&vocab))?;
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    config.learning_rate = a.lr;
    if a.max_updates.is_some() {
        config.max_updates = a.max_updates;
    }
    config.validate()?;
    let (data, valid) = load_data(&a.data, &vocab)?;
    let outcome = finetune(&base, &data, valid.as_ref(), &config)?;
    write_outcome(&outcome, &a.out, a.json)
}

fn translate_cmd(a: &TranslateArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let members = a
        .ckpts
        .iter()
        .map(|p| load_checkpoint(p, Some(&vocab)))
        .collect::<Result<Vec<Checkpoint>>>()?;
    let combine = if a.arithmetic_mean {
        Combine::Average
    } else {
        Combine::LogAverage
    };
    let ensemble = Ensemble::from_checkpoints(&members, combine)?;
    let codes = a.codes.as_deref().map(MergeTable::load).transpose()?;
    let config = DecodeConfig {
        beam_size: a.beam,
        alpha: a.alpha,
        max_len: a.max_len,
        combine,
    };
    if a.beam == 0 {
        return Err(Error::Input("--beam must be at least 1".into()));
    }
    let lines = read_lines(&a.input)?;
    let out = translate_lines(&lines, &ensemble, &vocab, codes.as_ref(), &config)?;
    let text: Vec<&str> = out.iter().map(|t| t.text.as_str()).collect();
    write_lines(a.out.as_deref(), &text)?;
    if let Some(p) = &a.scores {
        let scores: Vec<String> = out.iter().map(|t| format!("{:.6}", t.logprob)).collect();
        write_lines(Some(p), &scores)?;
    }
    Ok(())
}

fn score_cmd(a: &ScoreArgs) -> Result<()> {
    let report = score_files(&a.hyp, &a.refs)?;
    emit(a.json, &report, || report.to_text())
}

#[derive(Serialize)]
struct VerifyReport {
    changed_inputs: Vec<String>,
}

fn pipeline_cmd(a: &PipelineArgs) -> Result<()> {
    if a.verify {
        let changed = validate_manifest(&a.out)?;
        let report = VerifyReport { changed_inputs: changed };
        emit(a.json, &report, || {
            if report.changed_inputs.is_empty() {
                "all inputs match the manifest\n".to_string()
            } else {
                report.changed_inputs.iter().map(|p| format!("changed: {p}\n")).collect()
            }
        })?;
        if !report.changed_inputs.is_empty() {
            return Err(Error::Input(format!("{} input files changed", report.changed_inputs.len())));
        }
        return Ok(());
    }
    let config = PipelineConfig::load(&a.config)?;
    let report = run_pipeline(&config, &a.out)?;
    emit(a.json, &report, || report.to_text())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::BpeLearn(a) => bpe_learn(a),
        Command::BpeApply(a) => bpe_apply(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Translate(a) => translate_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
