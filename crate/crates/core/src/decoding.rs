//! Greedy, beam and ensemble decoding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{decoder_step, ForcedStats, encode, floored_ln, init_decoder, DecoderState, EncoderStates, ModelParams};
use crate::subword::{apply_bpe, decode_bpe, MergeTable, TokenId, Vocabulary, EOS_ID};
use crate::training::Checkpoint;

pub const DEFAULT_BEAM: usize = 5;
pub const DEFAULT_ALPHA: f64 = 0.6;

/// `3 * source length + 5`.
pub fn default_max_len(src_len: usize) -> usize {
    3 * src_len + 5
}

/// How member distributions are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Combine {
    /// Renormalized geometric mean.
    #[default]
    LogAverage,
    /// Arithmetic mean.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub alpha: f64,
    /// Fixed output cap; `None` uses [`default_max_len`].
    pub max_len: Option<usize>,
    pub combine: Combine,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: DEFAULT_BEAM,
            alpha: DEFAULT_ALPHA,
            max_len: None,
            combine: Combine::LogAverage,
        }
    }
}

impl DecodeConfig {
    pub fn max_len_for(&self, src_len: usize) -> usize {
        self.max_len.unwrap_or_else(|| default_max_len(src_len))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    /// Emitted ids, ending with EOS when `finished`.
    pub ids: Vec<TokenId>,
    /// Summed `ln p` of the emitted ids.
    pub logprob: f64,
    pub finished: bool,
}

impl Translation {
    /// Ids without the trailing EOS.
    pub fn tokens(&self) -> &[TokenId] {
        match self.ids.last() {
            Some(&EOS_ID) => &self.ids[..self.ids.len() - 1],
            _ => &self.ids,
        }
    }

    pub fn normalized_score(&self, alpha: f64) -> f64 {
        length_normalized(self.logprob, self.ids.len(), alpha)
    }
}

fn length_normalized(logprob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        logprob
    } else {
        logprob / (len.max(1) as f64).powf(alpha)
    }
}

/// Advances every member one step and merges their distributions.
pub fn ensemble_step(
    states: &[DecoderState],
    encoded: &[EncoderStates],
    members: &[&ModelParams],
    combine: Combine,
) -> Result<(Vec<DecoderState>, Vec<f64>)> {
    if members.is_empty() || states.len() != members.len() || encoded.len() != members.len() {
        return Err(Error::Shape(format!(
            "{} states and {} encodings for {} models",
            states.len(),
            encoded.len(),
            members.len()
        )));
    }
    let vocab = members[0].dims.tgt_vocab;
    if members.iter().any(|m| m.dims.tgt_vocab != vocab) {
        return Err(Error::Compatibility("ensemble members have different target vocabularies".into()));
    }
    let mut next = Vec::with_capacity(members.len());
    let mut dists = Vec::with_capacity(members.len());
    for ((state, enc), params) in states.iter().zip(encoded).zip(members) {
        let (s, p) = decoder_step(state, enc, params)?;
        next.push(s);
        dists.push(p);
    }
    if dists.len() == 1 {
        return Ok((next, dists.pop().unwrap()));
    }
    Ok((next, combine_distributions(&dists, combine)?))
}

/// Merges member distributions over one vocabulary.
pub fn combine_distributions(dists: &[Vec<f64>], combine: Combine) -> Result<Vec<f64>> {
    let n = dists.len() as f64;
    let v = dists.first().map_or(0, Vec::len);
    if v == 0 || dists.iter().any(|d| d.len() != v) {
        return Err(Error::Shape("distributions differ in length or are empty".into()));
    }
    let mut out = vec![0.0; v];
    match combine {
        Combine::LogAverage => {
            for d in dists {
                for (o, p) in out.iter_mut().zip(d) {
                    *o += floored_ln(*p);
                }
            }
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / n;
            for o in &mut out {
                *o = (*o / n - max).exp();
            }
        }
        Combine::Average => {
            for d in dists {
                for (o, p) in out.iter_mut().zip(d) {
                    *o += p;
                }
            }
        }
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numeric("combined distribution cannot be normalized".into()));
    }
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// One or more models decoded in lockstep over a shared vocabulary.
#[derive(Debug, Clone)]
pub struct Ensemble<'a> {
    members: Vec<&'a ModelParams>,
    pub combine: Combine,
}

impl<'a> Ensemble<'a> {
    pub fn single(params: &'a ModelParams) -> Self {
        Ensemble {
            members: vec![params],
            combine: Combine::LogAverage,
        }
    }

    /// Requires every checkpoint to carry the same vocabulary hash.
    pub fn from_checkpoints(ckpts: &'a [Checkpoint], combine: Combine) -> Result<Self> {
        let first = ckpts
            .first()
            .ok_or_else(|| Error::Input("an ensemble needs at least one checkpoint".into()))?;
        if let Some(bad) = ckpts.iter().find(|c| c.meta.vocab_hash != first.meta.vocab_hash) {
            return Err(Error::Compatibility(format!(
                "checkpoint at update {} uses a different vocabulary",
                bad.meta.updates
            )));
        }
        Ok(Ensemble {
            members: ckpts.iter().map(|c| &c.params).collect(),
            combine,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn start(&self, src: &[TokenId]) -> Result<(Vec<EncoderStates>, Vec<DecoderState>)> {
        let mut encoded = Vec::with_capacity(self.members.len());
        let mut states = Vec::with_capacity(self.members.len());
        for p in &self.members {
            let h = encode(src, p)?;
            states.push(init_decoder(&h, p)?);
            encoded.push(h);
        }
        Ok((encoded, states))
    }

    fn step(&self, encoded: &[EncoderStates], states: &[DecoderState]) -> Result<(Vec<DecoderState>, Vec<f64>)> {
        ensemble_step(states, encoded, &self.members, self.combine)
    }

    pub fn greedy(&self, src: &[TokenId], max_len: usize) -> Result<Translation> {
        let (encoded, mut states) = self.start(src)?;
        let mut out = Translation {
            ids: Vec::new(),
            logprob: 0.0,
            finished: false,
        };
        while out.ids.len() < max_len {
            let (next, probs) = self.step(&encoded, &states)?;
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (k, &p) in probs.iter().enumerate() {
                let score = out.logprob + floored_ln(p);
                if score > best_score {
                    best = k;
                    best_score = score;
                }
            }
            out.ids.push(best as TokenId);
            out.logprob = best_score;
            states = advance(next, best as TokenId);
            if best as TokenId == EOS_ID {
                out.finished = true;
                break;
            }
        }
        Ok(out)
    }

    pub fn beam(&self, src: &[TokenId], beam_size: usize, max_len: usize, alpha: f64) -> Result<Translation> {
        if beam_size == 0 {
            return Err(Error::Input("beam size must be at least 1".into()));
        }
        let (encoded, states) = self.start(src)?;
        let mut live = vec![Hypothesis {
            ids: Vec::new(),
            logprob: 0.0,
            states,
        }];
        let mut finished: Vec<Translation> = Vec::new();
        for _ in 0..max_len {
            let width = beam_size - finished.len();
            if width == 0 || live.is_empty() {
                break;
            }
            let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
            let mut stepped = Vec::with_capacity(live.len());
            for (h, hyp) in live.iter().enumerate() {
                let (next, probs) = self.step(&encoded, &hyp.states)?;
                let mut ranked: Vec<(f64, usize, TokenId)> = probs
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| (hyp.logprob + floored_ln(p), h, k as TokenId))
                    .collect();
                ranked.sort_by(candidate_order);
                ranked.truncate(width);
                candidates.extend(ranked);
                stepped.push(next);
            }
            candidates.sort_by(candidate_order);
            candidates.truncate(width);
            let mut next_live = Vec::with_capacity(width);
            for (score, h, k) in candidates {
                let mut ids = live[h].ids.clone();
                ids.push(k);
                if k == EOS_ID {
                    finished.push(Translation {
                        ids,
                        logprob: score,
                        finished: true,
                    });
                } else {
                    next_live.push(Hypothesis {
                        ids,
                        logprob: score,
                        states: advance(stepped[h].clone(), k),
                    });
                }
            }
            live = next_live;
        }
        let pool = if finished.is_empty() {
            live.into_iter()
                .map(|h| Translation {
                    ids: h.ids,
                    logprob: h.logprob,
                    finished: false,
                })
                .collect()
        } else {
            finished
        };
        let mut best: Option<Translation> = None;
        for t in pool {
            let better = match &best {
                None => true,
                Some(b) => t.normalized_score(alpha) > b.normalized_score(alpha),
            };
            if better {
                best = Some(t);
            }
        }
        Ok(best.expect("beam keeps at least one hypothesis"))
    }

    /// Teacher-forced statistics under the combined distribution.
    pub fn forced_stats(&self, src: &[TokenId], tgt: &[TokenId]) -> Result<ForcedStats> {
        let (encoded, mut states) = self.start(src)?;
        let mut stats = ForcedStats::default();
        for &y in tgt {
            let (next, probs) = self.step(&encoded, &states)?;
            let p = *probs
                .get(y as usize)
                .ok_or_else(|| Error::Index(format!("target id {y} outside the vocabulary")))?;
            stats.nll -= floored_ln(p);
            stats.tokens += 1;
            if probs.iter().all(|&q| q <= p) {
                stats.correct += 1;
            }
            states = advance(next, y);
        }
        Ok(stats)
    }

    /// Corpus-level teacher-forced statistics, summed in corpus order.
    pub fn evaluate(&self, pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<ForcedStats> {
        let per_pair: Vec<ForcedStats> = pairs
            .par_iter()
            .map(|(s, t)| self.forced_stats(s, t))
            .collect::<Result<_>>()?;
        let mut total = ForcedStats::default();
        for s in per_pair {
            total.merge(s);
        }
        Ok(total)
    }

    /// Beam search with the config's width, or greedy search at width 1.
    pub fn translate_ids(&self, src: &[TokenId], config: &DecodeConfig) -> Result<Translation> {
        let max_len = config.max_len_for(src.len());
        if config.beam_size == 1 {
            self.greedy(src, max_len)
        } else {
            self.beam(src, config.beam_size, max_len, config.alpha)
        }
    }
}

struct Hypothesis {
    ids: Vec<TokenId>,
    logprob: f64,
    states: Vec<DecoderState>,
}

/// Higher score first, then earlier hypothesis, then lower token id.
fn candidate_order(a: &(f64, usize, TokenId), b: &(f64, usize, TokenId)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

fn advance(states: Vec<DecoderState>, token: TokenId) -> Vec<DecoderState> {
    states
        .into_iter()
        .map(|s| DecoderState { s: s.s, last_token: token })
        .collect()
}

pub fn greedy_decode(src: &[TokenId], params: &ModelParams, max_len: usize) -> Result<Translation> {
    Ensemble::single(params).greedy(src, max_len)
}

pub fn beam_search(
    src: &[TokenId],
    params: &ModelParams,
    beam_size: usize,
    max_len: usize,
    alpha: f64,
) -> Result<Translation> {
    Ensemble::single(params).beam(src, beam_size, max_len, alpha)
}

/// A decoded corpus line.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatedLine {
    pub text: String,
    /// Summed log-probability; 0 for empty input.
    pub logprob: f64,
}

/// Translates preprocessed lines: applies BPE (when `codes` is given), maps
/// unknown subwords to UNK, decodes and joins subwords back into words.
/// Output order matches input order.
pub fn translate_lines<S: AsRef<str> + Sync>(
    lines: &[S],
    ensemble: &Ensemble<'_>,
    vocab: &Vocabulary,
    codes: Option<&MergeTable>,
    config: &DecodeConfig,
) -> Result<Vec<TranslatedLine>> {
    lines
        .par_iter()
        .enumerate()
        .map(|(n, line)| translate_line(line.as_ref(), ensemble, vocab, codes, config).map_err(|e| e.at_line(n + 1)))
        .collect()
}

fn translate_line(
    line: &str,
    ensemble: &Ensemble<'_>,
    vocab: &Vocabulary,
    codes: Option<&MergeTable>,
    config: &DecodeConfig,
) -> Result<TranslatedLine> {
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.is_empty() {
        return Ok(TranslatedLine {
            text: String::new(),
            logprob: 0.0,
        });
    }
    let pieces = match codes {
        Some(table) => apply_bpe(&words, table),
        None => words.iter().map(|w| w.to_string()).collect(),
    };
    let ids = vocab.encode(&pieces);
    let t = ensemble.translate_ids(&ids, config)?;
    let mut out = vocab.decode(t.tokens())?;
    // A truncated hypothesis may stop inside a word; close it off.
    if let Some(last) = out.last_mut() {
        if let Some(stripped) = last.strip_suffix(crate::subword::CONTINUATION) {
            *last = stripped.to_string();
        }
    }
    out.retain(|t| !t.is_empty());
    let words = decode_bpe(&out)?;
    Ok(TranslatedLine {
        text: words.join(" "),
        logprob: t.logprob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sequence_logprob, ModelDims};
    use proptest::prelude::*;

    fn model(seed: u64, scale: f64) -> ModelParams {
        ModelParams::init_scaled(ModelDims::new(9, 9).with_sizes(4, 5), seed, scale)
    }

    fn uniform_model() -> ModelParams {
        // Zero output weights give a uniform distribution at every step.
        let mut p = model(1, 0.5);
        p.out_w.fill(0.0);
        p.out_b.fill(0.0);
        p
    }

    #[test]
    fn max_len_one_emits_one_token() {
        let t = greedy_decode(&[4, 5], &model(3, 1.0), 1).unwrap();
        assert_eq!(t.ids.len(), 1);
    }

    #[test]
    fn beam_one_matches_greedy_on_random_models() {
        for seed in 0..100 {
            let p = model(seed, 2.0);
            let src: Vec<TokenId> = (0..1 + seed as usize % 4).map(|i| 3 + ((seed as u32 + i as u32) % 6)).collect();
            let g = greedy_decode(&src, &p, 8).unwrap();
            let b = beam_search(&src, &p, 1, 8, 0.6).unwrap();
            assert_eq!(g, b, "seed {seed}");
        }
    }

    #[test]
    fn scores_match_rescoring() {
        for seed in 0..30 {
            let p = model(seed, 2.0);
            let src = [4, 5, 6];
            for t in [greedy_decode(&src, &p, 7).unwrap(), beam_search(&src, &p, 4, 7, 0.6).unwrap()] {
                let rescored = sequence_logprob(&src, &t.ids, &p).unwrap();
                assert_eq!(t.logprob, rescored);
                assert!(t.logprob <= 0.0);
                assert_eq!(t.finished, t.ids.last() == Some(&EOS_ID));
            }
        }
    }

    #[test]
    fn wider_beam_never_scores_worse_with_alpha_zero_on_finished() {
        for seed in 0..20 {
            let p = model(seed, 2.0);
            let a = beam_search(&[4, 7], &p, 1, 12, 0.0).unwrap();
            let b = beam_search(&[4, 7], &p, 6, 12, 0.0).unwrap();
            if a.finished && b.finished {
                assert!(b.logprob >= a.logprob - 1e-12);
            }
        }
    }

    #[test]
    fn identical_members_reproduce_the_single_model() {
        let p = model(5, 2.0);
        let ckpt = Checkpoint {
            params: p.clone(),
            meta: crate::training::CheckpointMeta {
                epoch: 0,
                updates: 0,
                val_loss: 0.0,
                vocab_hash: "h".into(),
                config_digest: String::new(),
            },
        };
        let members = vec![ckpt.clone(), ckpt.clone(), ckpt];
        let ens = Ensemble::from_checkpoints(&members, Combine::LogAverage).unwrap();
        let single = Ensemble::single(&p);
        let src = [4, 6, 8];
        let (enc, states) = ens.start(&src).unwrap();
        let (_, combined) = ens.step(&enc, &states).unwrap();
        let (enc1, states1) = single.start(&src).unwrap();
        let (_, alone) = single.step(&enc1, &states1).unwrap();
        for (a, b) in combined.iter().zip(&alone) {
            assert!((a - b).abs() < 1e-12);
        }
        let cfg = DecodeConfig::default();
        assert_eq!(ens.translate_ids(&src, &cfg).unwrap().ids, single.translate_ids(&src, &cfg).unwrap().ids);
    }

    #[test]
    fn uniform_member_gives_square_root() {
        let p = model(9, 2.0);
        let u = uniform_model();
        let src = [4, 5];
        let hp = encode(&src, &p).unwrap();
        let hu = encode(&src, &u).unwrap();
        let states = vec![init_decoder(&hp, &p).unwrap(), init_decoder(&hu, &u).unwrap()];
        let (_, combined) = ensemble_step(&states, &[hp.clone(), hu], &[&p, &u], Combine::LogAverage).unwrap();
        let (_, alone) = decoder_step(&states[0], &hp, &p).unwrap();
        let roots: Vec<f64> = alone.iter().map(|x| x.sqrt()).collect();
        let z: f64 = roots.iter().sum();
        for (c, r) in combined.iter().zip(&roots) {
            assert!((c - r / z).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_vocabularies_are_rejected() {
        let mk = |hash: &str| Checkpoint {
            params: model(1, 1.0),
            meta: crate::training::CheckpointMeta {
                epoch: 0,
                updates: 0,
                val_loss: 0.0,
                vocab_hash: hash.into(),
                config_digest: String::new(),
            },
        };
        let members = vec![mk("a"), mk("b")];
        assert!(matches!(Ensemble::from_checkpoints(&members, Combine::LogAverage), Err(Error::Compatibility(_))));
        let small = ModelParams::init(ModelDims::new(9, 7).with_sizes(4, 5), 1);
        let big = model(1, 1.0);
        let hs = encode(&[4], &small).unwrap();
        let hb = encode(&[4], &big).unwrap();
        let states = vec![init_decoder(&hs, &small).unwrap(), init_decoder(&hb, &big).unwrap()];
        assert!(matches!(
            ensemble_step(&states, &[hs, hb], &[&small, &big], Combine::LogAverage),
            Err(Error::Compatibility(_))
        ));
    }

    proptest! {
        #[test]
        fn combined_distribution_is_normalized(
            raw in prop::collection::vec(prop::collection::vec(1e-9f64..1.0, 6), 1..6),
            geometric in any::<bool>(),
        ) {
            let dists: Vec<Vec<f64>> = raw
                .iter()
                .map(|d| { let z: f64 = d.iter().sum(); d.iter().map(|x| x / z).collect() })
                .collect();
            let mode = if geometric { Combine::LogAverage } else { Combine::Average };
            let c = combine_distributions(&dists, mode).unwrap();
            prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(c.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn corpus_translation_preserves_lines() {
        let vocab = Vocabulary::build(["a b c d e"], 100).unwrap();
        let dims = ModelDims::new(vocab.len(), vocab.len()).with_sizes(3, 4);
        let p = ModelParams::init_scaled(dims, 2, 1.5);
        let ens = Ensemble::single(&p);
        let cfg = DecodeConfig {
            max_len: Some(6),
            ..Default::default()
        };
        let lines = ["a b", "", "c zzz", "e"];
        let out = translate_lines(&lines, &ens, &vocab, None, &cfg).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[1].text, "");
        assert!(out.iter().all(|l| !l.text.contains("@@")));
        assert!(translate_lines::<&str>(&[], &ens, &vocab, None, &cfg).unwrap().is_empty());
    }
}
