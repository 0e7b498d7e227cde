//! Corpus-level multi-reference BLEU-4.
//!
//! Sentence statistics are integer counts that sum across a corpus; the score
//! is computed once from the summed counts. Tokens are whitespace-separated and
//! case-sensitive, and the brevity penalty uses the closest reference length
//! (shorter wins ties).

use std::collections::HashMap;
use std::fs;
use std::ops::{Add, AddAssign};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    /// Clipped n-gram matches, index 0 = unigrams.
    pub matches: [u64; MAX_ORDER],
    /// Candidate n-gram totals.
    pub totals: [u64; MAX_ORDER],
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl Add for BleuStats {
    type Output = BleuStats;

    fn add(mut self, rhs: BleuStats) -> BleuStats {
        self += rhs;
        self
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, rhs: BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += rhs.matches[n];
            self.totals[n] += rhs.totals[n];
        }
        self.candidate_len += rhs.candidate_len;
        self.reference_len += rhs.reference_len;
    }
}

impl std::iter::Sum for BleuStats {
    fn sum<I: Iterator<Item = BleuStats>>(iter: I) -> BleuStats {
        iter.fold(BleuStats::default(), Add::add)
    }
}

fn ngram_counts<'a, S: AsRef<str>>(tokens: &'a [S], n: usize) -> HashMap<Vec<&'a str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram statistics of one candidate against its references.
pub fn sentence_stats<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R]) -> Result<BleuStats> {
    if references.is_empty() {
        return Err(Error::Input("at least one reference is required".into()));
    }
    let mut stats = BleuStats {
        candidate_len: candidate.len() as u64,
        ..Default::default()
    };
    let c = candidate.len() as i64;
    stats.reference_len = references
        .iter()
        .map(|r| r.as_ref().len() as i64)
        .min_by_key(|&r| ((r - c).abs(), r))
        .unwrap_or(0) as u64;

    for n in 1..=MAX_ORDER {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<Vec<&str>, u64> = HashMap::new();
        for r in references {
            for (gram, count) in ngram_counts(r.as_ref(), n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        stats.totals[n - 1] = candidate.len().saturating_sub(n - 1) as u64;
        stats.matches[n - 1] = cand
            .iter()
            .map(|(g, &count)| count.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    Ok(stats)
}

/// Components of a corpus BLEU score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In `[0, 1]`.
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub ratio: f64,
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl BleuScore {
    /// Score scaled to 0-100.
    pub fn percent(&self) -> f64 {
        self.score * 100.0
    }
}

/// BLEU from summed statistics: uniform-weight geometric mean of the clipped
/// precisions times `min(1, exp(1 - r/c))`.
pub fn corpus_bleu(stats: &BleuStats) -> Result<BleuScore> {
    if stats.candidate_len == 0 {
        return Err(Error::Input("candidate length is zero".into()));
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if stats.totals[n] > 0 {
            precisions[n] = stats.matches[n] as f64 / stats.totals[n] as f64;
        }
    }
    let c = stats.candidate_len as f64;
    let r = stats.reference_len as f64;
    let brevity_penalty = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        ratio: c / r.max(1.0),
        candidate_len: stats.candidate_len,
        reference_len: stats.reference_len,
    })
}

/// Scores tokenized hypothesis lines against one or more reference sets
/// (`references[k][i]` is reference `k` for line `i`).
pub fn corpus_bleu_lines<S: AsRef<str>>(hypotheses: &[S], references: &[Vec<S>]) -> Result<BleuScore> {
    let mut total = BleuStats::default();
    for (i, hyp) in hypotheses.iter().enumerate() {
        let cand: Vec<&str> = hyp.as_ref().split_whitespace().collect();
        let refs: Vec<Vec<&str>> = references
            .iter()
            .map(|set| {
                set.get(i)
                    .map(|r| r.as_ref().split_whitespace().collect())
                    .ok_or_else(|| Error::Alignment(format!("reference set lacks line {}", i + 1)))
            })
            .collect::<Result<_>>()?;
        total += sentence_stats(&cand, &refs)?;
    }
    corpus_bleu(&total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub hypothesis: PathBuf,
    pub references: Vec<PathBuf>,
    pub lines: usize,
    /// Score times 100.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub ratio: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuReport {
    pub fn to_text(&self) -> String {
        format!(
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})\n",
            self.bleu,
            self.precisions[0] * 100.0,
            self.precisions[1] * 100.0,
            self.precisions[2] * 100.0,
            self.precisions[3] * 100.0,
            self.brevity_penalty,
            self.ratio,
            self.hyp_len,
            self.ref_len
        )
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// File-level BLEU over a hypothesis file and `R` line-aligned reference files.
pub fn score_files(hyp: &Path, refs: &[PathBuf]) -> Result<BleuReport> {
    if refs.is_empty() {
        return Err(Error::Input("at least one reference file is required".into()));
    }
    let hyps = read_lines(hyp)?;
    let mut ref_sets = Vec::with_capacity(refs.len());
    for r in refs {
        let lines = read_lines(r)?;
        if lines.len() != hyps.len() {
            return Err(Error::Alignment(format!(
                "{} has {} lines but {} has {}",
                hyp.display(),
                hyps.len(),
                r.display(),
                lines.len()
            )));
        }
        ref_sets.push(lines);
    }
    let score = corpus_bleu_lines(&hyps, &ref_sets)?;
    Ok(BleuReport {
        hypothesis: hyp.to_path_buf(),
        references: refs.to_vec(),
        lines: hyps.len(),
        bleu: score.percent(),
        precisions: score.precisions,
        brevity_penalty: score.brevity_penalty,
        ratio: score.ratio,
        hyp_len: score.candidate_len,
        ref_len: score.reference_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn clipped_unigram_example() {
        let stats = sentence_stats(
            &toks("the the the the the the the"),
            &[toks("the cat is on the mat")],
        )
        .unwrap();
        assert_eq!(stats.matches[0], 2);
        assert_eq!(stats.totals[0], 7);
    }

    #[test]
    fn identical_candidate_matches_everything() {
        let s = toks("a b c d e f");
        let stats = sentence_stats(&s, &[s.clone()]).unwrap();
        assert_eq!(stats.matches, stats.totals);
        assert_eq!(corpus_bleu(&stats).unwrap().score, 1.0);
    }

    #[test]
    fn closest_reference_length_prefers_shorter() {
        let cand: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let r9: Vec<String> = (0..9).map(|i| format!("x{i}")).collect();
        let r11: Vec<String> = (0..11).map(|i| format!("y{i}")).collect();
        let stats = sentence_stats(&cand, &[r11, r9]).unwrap();
        assert_eq!(stats.reference_len, 9);
    }

    #[test]
    fn errors() {
        let none: [Vec<&str>; 0] = [];
        assert!(matches!(sentence_stats(&toks("a"), &none), Err(Error::Input(_))));
        let empty = sentence_stats::<&str, Vec<&str>>(&[], &[toks("a b")]).unwrap();
        assert_eq!(empty.totals, [0; 4]);
        assert!(matches!(corpus_bleu(&empty), Err(Error::Input(_))));
    }

    #[test]
    fn brevity_penalty_only_below_reference_length() {
        let stats = BleuStats {
            matches: [5, 4, 3, 2],
            totals: [5, 4, 3, 2],
            candidate_len: 5,
            reference_len: 5,
        };
        assert_eq!(corpus_bleu(&stats).unwrap().brevity_penalty, 1.0);
        let short = BleuStats { reference_len: 10, ..stats };
        let bp = corpus_bleu(&short).unwrap().brevity_penalty;
        assert!((bp - (1.0f64 - 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn report_text_layout() {
        let r = BleuReport {
            hypothesis: "h".into(),
            references: vec!["r".into()],
            lines: 1,
            bleu: 100.0,
            precisions: [1.0; 4],
            brevity_penalty: 1.0,
            ratio: 1.0,
            hyp_len: 3,
            ref_len: 3,
        };
        assert!(r.to_text().starts_with("BLEU = 100.00, 100.0/100.0/100.0/100.0"));
    }

    proptest! {
        #[test]
        fn stats_are_additive_and_order_free(
            lines in proptest::collection::vec(("[a-c ]{1,20}", "[a-c ]{1,20}", "[a-c ]{1,20}"), 1..12)
        ) {
            let per: Vec<BleuStats> = lines
                .iter()
                .map(|(h, r1, r2)| sentence_stats(&toks(h), &[toks(r1), toks(r2)]).unwrap())
                .collect();
            for s in &per {
                for n in 0..MAX_ORDER {
                    prop_assert!(s.matches[n] <= s.totals[n]);
                }
            }
            let forward: BleuStats = per.iter().copied().sum();
            let backward: BleuStats = per.iter().rev().copied().sum();
            prop_assert_eq!(forward, backward);
            // Adding a reference never lowers clipped matches.
            for (h, r1, r2) in &lines {
                let one = sentence_stats(&toks(h), &[toks(r1)]).unwrap();
                let two = sentence_stats(&toks(h), &[toks(r1), toks(r2)]).unwrap();
                for n in 0..MAX_ORDER {
                    prop_assert!(two.matches[n] >= one.matches[n]);
                }
            }
            if forward.candidate_len > 0 {
                let s = corpus_bleu(&forward).unwrap().score;
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }
    }
}
