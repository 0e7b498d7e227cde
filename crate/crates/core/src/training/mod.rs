//! Minibatch maximum-likelihood training, fine-tuning and checkpoint selection.

mod checkpoint;
mod config;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{OptimizerKind, TrainConfig};

use crate::error::{Error, Result};
use crate::model::{forced_stats, loss_and_grad, ForcedStats, ModelDims, ModelParams};
use crate::subword::{TokenId, Vocabulary, EOS_ID};

/// Batches are split into this many fixed shards whose gradients are summed
/// in shard order, so results do not depend on the thread count.
const GRAD_SHARDS: usize = 4;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// Keeps the validation split stream apart from the shuffle stream.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Id-encoded parallel data. Targets end with EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCorpus {
    pub pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
    pub vocab_hash: String,
}

impl EncodedCorpus {
    /// Encodes whitespace-tokenized lines and appends EOS to each target.
    pub fn from_lines<S: AsRef<str>>(src: &[S], tgt: &[S], vocab: &Vocabulary) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::Alignment(format!(
                "{} source lines vs {} target lines",
                src.len(),
                tgt.len()
            )));
        }
        let pairs = src
            .iter()
            .zip(tgt)
            .map(|(s, t)| {
                let s: Vec<&str> = s.as_ref().split_whitespace().collect();
                let t: Vec<&str> = t.as_ref().split_whitespace().collect();
                let mut t = vocab.encode(&t);
                t.push(EOS_ID);
                (vocab.encode(&s), t)
            })
            .collect();
        Ok(EncodedCorpus {
            pairs,
            vocab_hash: vocab.content_hash(),
        })
    }

    /// Wraps already encoded pairs, appending EOS to each target.
    pub fn from_ids(pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>, vocab_hash: impl Into<String>) -> Self {
        let pairs = pairs
            .into_iter()
            .map(|(s, mut t)| {
                t.push(EOS_ID);
                (s, t)
            })
            .collect();
        EncodedCorpus {
            pairs,
            vocab_hash: vocab_hash.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Holds out `fraction` of the pairs (at least one when the fraction is
    /// positive) chosen by a seeded shuffle. Returns `(train, valid)`.
    pub fn split(&self, fraction: f64, seed: u64) -> (EncodedCorpus, EncodedCorpus) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM));
        let mut n_valid = (self.len() as f64 * fraction).round() as usize;
        if fraction > 0.0 && n_valid == 0 && self.len() > 1 {
            n_valid = 1;
        }
        let mut held: Vec<usize> = order[..n_valid].to_vec();
        let mut kept: Vec<usize> = order[n_valid..].to_vec();
        held.sort_unstable();
        kept.sort_unstable();
        let take = |idx: &[usize]| EncodedCorpus {
            pairs: idx.iter().map(|&i| self.pairs[i].clone()).collect(),
            vocab_hash: self.vocab_hash.clone(),
        };
        (take(&kept), take(&held))
    }
}

/// Teacher-forced statistics over a corpus, summed in corpus order.
pub fn evaluate(corpus: &EncodedCorpus, params: &ModelParams) -> Result<ForcedStats> {
    let per_pair: Vec<ForcedStats> = corpus
        .pairs
        .par_iter()
        .map(|(s, t)| forced_stats(s, t, params))
        .collect::<Result<_>>()?;
    let mut total = ForcedStats::default();
    for s in per_pair {
        total.merge(s);
    }
    Ok(total)
}

/// Model dimensions implied by a vocabulary and a training config.
pub fn model_dims(vocab_size: usize, config: &TrainConfig) -> ModelDims {
    ModelDims::new(vocab_size, vocab_size).with_sizes(config.embed_dim, config.hidden_dim)
}

/// Summed NLL, token count and summed gradient of a batch.
fn batch_gradient(
    corpus: &EncodedCorpus,
    batch: &[usize],
    params: &ModelParams,
) -> Result<(f64, usize, ModelParams)> {
    let shard_len = batch.len().div_ceil(GRAD_SHARDS).max(1);
    let shards: Vec<(f64, usize, ModelParams)> = batch
        .par_chunks(shard_len)
        .map(|shard| {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            let mut tokens = 0;
            for &i in shard {
                let (src, tgt) = &corpus.pairs[i];
                loss += loss_and_grad(src, tgt, params, &mut grads)?;
                tokens += tgt.len();
            }
            Ok((loss, tokens, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = shards.into_iter();
    let (mut loss, mut tokens, mut grads) = iter.next().expect("non-empty batch");
    for (l, t, g) in iter {
        loss += l;
        tokens += t;
        for (a, b) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.1.as_slice()) {
                *x += y;
            }
        }
    }
    Ok((loss, tokens, grads))
}

enum Optimizer {
    Sgd,
    Adam {
        m: ModelParams,
        v: ModelParams,
        t: i32,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                m: params.zeros_like(),
                v: params.zeros_like(),
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        match self {
            Optimizer::Sgd => {
                if lr == 0.0 {
                    return;
                }
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (x, d) in p.as_mut_slice().iter_mut().zip(g.1.as_slice()) {
                        *x -= lr * d;
                    }
                }
            }
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut());
                for (((p, g), m), v) in tensors {
                    let (p, g) = (p.as_mut_slice(), g.1.as_slice());
                    let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        if lr != 0.0 {
                            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub update: u64,
    /// Mean per-token training loss since the previous record.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

impl fmt::Display for ValidationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "update {} train_loss {:.6} val_loss {:.6}",
            self.update, self.train_loss, self.val_loss
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    MaxUpdates,
    Patience,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// One checkpoint per validation, in order.
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<ValidationRecord>,
    pub params: ModelParams,
    pub stop: StopReason,
}

impl TrainOutcome {
    /// Lowest validation loss, later update on ties.
    pub fn best(&self) -> &Checkpoint {
        self.checkpoints
            .iter()
            .min_by(|a, b| rank(a, b))
            .expect("training always records a checkpoint")
    }
}

fn rank(a: &Checkpoint, b: &Checkpoint) -> std::cmp::Ordering {
    a.meta
        .val_loss
        .total_cmp(&b.meta.val_loss)
        .then(b.meta.updates.cmp(&a.meta.updates))
}

/// Trains from `init`. Without `valid`, a `valid_fraction` slice of the
/// corpus is held out (or the whole corpus is used when the fraction is 0).
pub fn train(
    corpus: &EncodedCorpus,
    valid: Option<&EncodedCorpus>,
    config: &TrainConfig,
    init: ModelParams,
) -> Result<TrainOutcome> {
    run(corpus, valid, config, init, 0)
}

fn run(
    corpus: &EncodedCorpus,
    valid: Option<&EncodedCorpus>,
    config: &TrainConfig,
    init: ModelParams,
    update_offset: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    init.validate()?;
    let split;
    let (train_set, valid_set) = match valid {
        Some(v) => (corpus, v),
        None if config.valid_fraction > 0.0 && corpus.len() > 1 => {
            split = corpus.split(config.valid_fraction, config.seed);
            (&split.0, &split.1)
        }
        None => (corpus, corpus),
    };
    if valid_set.vocab_hash != train_set.vocab_hash {
        return Err(Error::Compatibility("validation and training data use different vocabularies".into()));
    }

    let digest = config.digest();
    let mut params = init;
    let mut optimizer = Optimizer::new(config.optimizer, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut checkpoints = Vec::new();
    let mut log = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut updates: u64 = 0;
    let mut window = (0.0, 0usize);
    let mut epoch = 0;
    let limit = config.max_updates.map(|n| n as u64);

    let mut validate = |params: &ModelParams, epoch: usize, updates: u64, window: &mut (f64, usize)| -> Result<bool> {
        let stats = evaluate(valid_set, params)?;
        let record = ValidationRecord {
            epoch,
            update: updates + update_offset,
            train_loss: if window.1 == 0 { f64::NAN } else { window.0 / window.1 as f64 },
            val_loss: stats.mean_nll(),
            val_accuracy: stats.accuracy(),
        };
        log::info!("{record}");
        *window = (0.0, 0);
        checkpoints.push(Checkpoint {
            params: params.clone(),
            meta: CheckpointMeta {
                epoch,
                updates: record.update,
                val_loss: record.val_loss,
                vocab_hash: train_set.vocab_hash.clone(),
                config_digest: digest.clone(),
            },
        });
        let improved = record.val_loss < best;
        log.push(record);
        if improved {
            best = log.last().map(|r| r.val_loss).unwrap_or(best);
            stale = 0;
        } else {
            stale += 1;
        }
        Ok(stale >= config.patience)
    };

    let mut last_validated = None;
    let stop = 'outer: loop {
        if epoch == config.max_epochs {
            break StopReason::MaxEpochs;
        }
        epoch += 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if limit.is_some_and(|n| updates >= n) {
                break 'outer StopReason::MaxUpdates;
            }
            let (loss, tokens, mut grads) = batch_gradient(train_set, batch, &params)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at update {} (batch pairs {:?})",
                    updates + update_offset + 1,
                    batch
                )));
            }
            grads.scale(1.0 / tokens as f64);
            let norm = grads.sq_norm().sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at update {} (batch pairs {:?})",
                    updates + update_offset + 1,
                    batch
                )));
            }
            if norm > config.clip_norm {
                grads.scale(config.clip_norm / norm);
            }
            optimizer.step(&mut params, &grads, config.learning_rate);
            updates += 1;
            window.0 += loss;
            window.1 += tokens;
            if updates % config.valid_interval as u64 == 0 {
                last_validated = Some(updates);
                if validate(&params, epoch, updates, &mut window)? {
                    break 'outer StopReason::Patience;
                }
            }
        }
    };
    if last_validated != Some(updates) {
        validate(&params, epoch, updates, &mut window)?;
    }
    Ok(TrainOutcome {
        checkpoints,
        log,
        params,
        stop,
    })
}

/// Continues training `base` on in-domain data with fresh optimizer state.
/// Update counts in the emitted checkpoints continue from the base.
/// With `max_updates = Some(0)` the only checkpoint is the base itself.
pub fn finetune(
    base: &Checkpoint,
    corpus: &EncodedCorpus,
    valid: Option<&EncodedCorpus>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    for data in std::iter::once(corpus).chain(valid) {
        if data.vocab_hash != base.meta.vocab_hash {
            return Err(Error::Compatibility(
                "fine-tuning data is encoded with a different vocabulary than the base checkpoint".into(),
            ));
        }
    }
    if config.max_updates == Some(0) {
        config.validate()?;
        return Ok(TrainOutcome {
            checkpoints: vec![base.clone()],
            log: Vec::new(),
            params: base.params.clone(),
            stop: StopReason::MaxUpdates,
        });
    }
    run(corpus, valid, config, base.params.clone(), base.meta.updates)
}

/// The `k` checkpoints with the lowest validation loss, best first; ties go
/// to the later update.
pub fn select_best(checkpoints: &[Checkpoint], k: usize) -> Result<Vec<Checkpoint>> {
    if checkpoints.len() < k {
        return Err(Error::Input(format!(
            "asked for {k} checkpoints, only {} available",
            checkpoints.len()
        )));
    }
    let mut sorted: Vec<&Checkpoint> = checkpoints.iter().collect();
    sorted.sort_by(|a, b| rank(a, b));
    Ok(sorted.into_iter().take(k).cloned().collect())
}
