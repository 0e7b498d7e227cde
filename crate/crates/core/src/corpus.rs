//! Parallel corpora loaded from line-aligned twin files, dataset sets composed
//! from named corpora, and Table-style statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub src: String,
    pub tgt: String,
    /// Name of the corpus the pair came from.
    pub tag: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.src.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.tgt.as_str())
    }

    pub fn extend(&mut self, other: ParallelCorpus) {
        self.pairs.extend(other.pairs);
    }

    /// Removes repeated `(src, tgt)` pairs, keeping first occurrences.
    pub fn dedup(&mut self) -> usize {
        let before = self.pairs.len();
        let mut seen = HashSet::new();
        self.pairs
            .retain(|p| seen.insert((p.src.clone(), p.tgt.clone())));
        before - self.pairs.len()
    }

    pub fn write(&self, src: &Path, tgt: &Path) -> Result<()> {
        let mut s = String::new();
        let mut t = String::new();
        for p in &self.pairs {
            s.push_str(&p.src);
            s.push('\n');
            t.push_str(&p.tgt);
            t.push('\n');
        }
        fs::write(src, s).map_err(|e| Error::io(src, e))?;
        fs::write(tgt, t).map_err(|e| Error::io(tgt, e))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub read: usize,
    pub dropped: usize,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Encoding(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Pairs line `i` of `src` with line `i` of `tgt`; pairs with an empty side
/// are dropped and counted.
pub fn load_pair_files(src: &Path, tgt: &Path, tag: &str) -> Result<(ParallelCorpus, LoadReport)> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        return Err(Error::Alignment(format!(
            "{} has {} lines but {} has {}",
            src.display(),
            s.len(),
            tgt.display(),
            t.len()
        )));
    }
    let mut report = LoadReport {
        read: s.len(),
        dropped: 0,
    };
    let mut pairs = Vec::with_capacity(s.len());
    for (a, b) in s.into_iter().zip(t) {
        if a.trim().is_empty() || b.trim().is_empty() {
            report.dropped += 1;
            continue;
        }
        pairs.push(SentencePair {
            src: a,
            tgt: b,
            tag: tag.to_string(),
        });
    }
    Ok((ParallelCorpus { pairs }, report))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum SetEntry {
    Include(String),
    Corpus(String),
}

/// Named sets of registered corpora.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSpec {
    corpora: BTreeMap<String, (PathBuf, PathBuf)>,
    sets: Vec<(String, Vec<SetEntry>)>,
}

impl DatasetSpec {
    /// Parses `[set]` sections holding `name = src_path, tgt_path` or
    /// `include = other_set` lines. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut spec = DatasetSpec::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if spec.sets.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Config(format!("set '{name}' defined twice")));
                }
                spec.sets.push((name, Vec::new()));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("dataset line {}: expected key = value", n + 1)))?;
            let Some((_, entries)) = spec.sets.last_mut() else {
                return Err(Error::Config(format!("dataset line {}: entry outside a [set]", n + 1)));
            };
            if key == "include" {
                entries.push(SetEntry::Include(value.to_string()));
                continue;
            }
            let (s, t) = value
                .split_once(',')
                .map(|(a, b)| (base.join(a.trim()), base.join(b.trim())))
                .ok_or_else(|| {
                    Error::Config(format!("dataset line {}: expected src_path, tgt_path", n + 1))
                })?;
            match spec.corpora.get(key) {
                Some(existing) if *existing != (s.clone(), t.clone()) => {
                    return Err(Error::Config(format!("corpus '{key}' registered with two path pairs")))
                }
                _ => {
                    spec.corpora.insert(key.to_string(), (s, t));
                }
            }
            entries.push(SetEntry::Corpus(key.to_string()));
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set_names(&self) -> Vec<&str> {
        self.sets.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn corpus_paths(&self, name: &str) -> Option<(&Path, &Path)> {
        self.corpora.get(name).map(|(s, t)| (s.as_path(), t.as_path()))
    }

    /// Member corpus names of `set` with includes expanded, in listed order.
    pub fn members(&self, set: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        self.expand(set, &mut Vec::new(), &mut out)?;
        Ok(out)
    }

    fn expand(&self, set: &str, stack: &mut Vec<String>, out: &mut Vec<String>) -> Result<()> {
        if stack.iter().any(|s| s == set) {
            return Err(Error::Config(format!("include cycle through set '{set}'")));
        }
        let entries = self
            .sets
            .iter()
            .find(|(n, _)| n == set)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Config(format!("unknown set '{set}'")))?;
        stack.push(set.to_string());
        for entry in entries {
            match entry {
                SetEntry::Include(other) => self.expand(other, stack, out)?,
                SetEntry::Corpus(name) => {
                    if !self.corpora.contains_key(name) {
                        return Err(Error::Config(format!("unknown corpus '{name}'")));
                    }
                    if out.contains(name) {
                        return Err(Error::Config(format!(
                            "corpus '{name}' appears twice in set '{}'",
                            stack[0]
                        )));
                    }
                    out.push(name.clone());
                }
            }
        }
        stack.pop();
        Ok(())
    }
}

/// Concatenates the member corpora of `set` in listed order.
pub fn compose(spec: &DatasetSpec, set: &str) -> Result<ParallelCorpus> {
    let mut corpus = ParallelCorpus::default();
    for name in spec.members(set)? {
        let (s, t) = spec.corpus_paths(&name).expect("members are registered");
        let (c, report) = load_pair_files(s, t, &name)?;
        if report.dropped > 0 {
            log::info!("{name}: dropped {} pairs with an empty side", report.dropped);
        }
        corpus.extend(c);
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub corpus: String,
    pub sentences: u64,
    pub source_words: u64,
    pub target_words: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub corpora: Vec<CorpusStats>,
    pub total: CorpusStats,
}

/// Per-corpus (by provenance tag, first-seen order) and total counts.
pub fn stats(corpus: &ParallelCorpus) -> StatsReport {
    let mut rows: Vec<CorpusStats> = Vec::new();
    let mut total = CorpusStats {
        corpus: "total".into(),
        ..Default::default()
    };
    for p in &corpus.pairs {
        let idx = match rows.iter().position(|r| r.corpus == p.tag) {
            Some(i) => i,
            None => {
                rows.push(CorpusStats {
                    corpus: p.tag.clone(),
                    ..Default::default()
                });
                rows.len() - 1
            }
        };
        let s = p.src.split_whitespace().count() as u64;
        let t = p.tgt.split_whitespace().count() as u64;
        for r in [&mut rows[idx], &mut total] {
            r.sentences += 1;
            r.source_words += s;
            r.target_words += t;
        }
    }
    StatsReport {
        corpora: rows,
        total,
    }
}

/// `k`/`m` units with one decimal at and above a thousand.
pub fn human_count(n: u64) -> String {
    if n < 1_000 {
        n.to_string()
    } else if n < 1_000_000 {
        format!("{:.1}k", n as f64 / 1e3)
    } else {
        format!("{:.1}m", n as f64 / 1e6)
    }
}

impl StatsReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("corpus | sentences | source words | target words\n");
        for r in self.corpora.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                out,
                "{} | {} | {} | {}",
                r.corpus,
                human_count(r.sentences),
                human_count(r.source_words),
                human_count(r.target_words)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn load_examples() {
        let dir = TempDir::new().unwrap();
        let s = write(dir.path(), "a.ar", "x\ny\nz\n");
        let t = write(dir.path(), "a.en", "1\n2\n3\n");
        let (c, r) = load_pair_files(&s, &t, "a").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(r.dropped, 0);

        let t4 = write(dir.path(), "b.en", "1\n2\n3\n4\n");
        assert!(matches!(load_pair_files(&s, &t4, "a"), Err(Error::Alignment(_))));

        let te = write(dir.path(), "c.en", "1\n\n3\n");
        let (c, r) = load_pair_files(&s, &te, "a").unwrap();
        assert_eq!((c.len(), r.dropped), (2, 1));
    }

    #[test]
    fn stats_counts_and_layout() {
        let dir = TempDir::new().unwrap();
        let s = write(dir.path(), "s", "a b c\nd e\nf g h i j\n");
        let t = write(dir.path(), "t", "1 2 3 4\n5 6 7\n8 9 10 11 12\n");
        let (c, _) = load_pair_files(&s, &t, "toy").unwrap();
        let report = stats(&c);
        assert_eq!(report.total.sentences, 3);
        assert_eq!((report.total.source_words, report.total.target_words), (10, 12));
        let text = report.to_text();
        assert!(text.starts_with("corpus | sentences | source words | target words"));
        assert!(text.contains("toy | 3 | 10 | 12"));
        assert_eq!(stats(&ParallelCorpus::default()).total.sentences, 0);
    }

    #[test]
    fn human_units() {
        assert_eq!(human_count(999), "999");
        assert_eq!(human_count(80_000), "80.0k");
        assert_eq!(human_count(2_300_000), "2.3m");
    }

    #[test]
    fn compose_order_and_errors() {
        let dir = TempDir::new().unwrap();
        write(dir.path(), "x.ar", "x1\nx2\n");
        write(dir.path(), "x.en", "X1\nX2\n");
        write(dir.path(), "y.ar", "y1\n");
        write(dir.path(), "y.en", "Y1\n");
        let spec = DatasetSpec::parse(
            "[one]\nx = x.ar, x.en\n[two]\ninclude = one\ny = y.ar, y.en\n[bad]\nz = z.ar, z.en\n[loop]\ninclude = loop\n[dup]\ninclude = one\ninclude = one\n",
            dir.path(),
        )
        .unwrap();
        let one = compose(&spec, "one").unwrap();
        assert_eq!(one.len(), 2);
        let two = compose(&spec, "two").unwrap();
        assert_eq!(two.len(), 3);
        assert_eq!(two.pairs[0].tag, "x");
        assert_eq!(two.pairs[2].src, "y1");
        assert!(matches!(compose(&spec, "nope"), Err(Error::Config(_))));
        assert!(matches!(compose(&spec, "loop"), Err(Error::Config(_))));
        assert!(matches!(compose(&spec, "dup"), Err(Error::Config(_))));
        assert!(matches!(compose(&spec, "bad"), Err(Error::Io { .. })));
        assert!(matches!(
            DatasetSpec::parse("[s]\ninclude = missing\n", dir.path()).unwrap().members("s"),
            Err(Error::Config(_))
        ));
        assert!(DatasetSpec::parse("x = a, b\n", dir.path()).is_err());
    }

    #[test]
    fn dedup_is_optional() {
        let mut c = ParallelCorpus::default();
        for _ in 0..3 {
            c.pairs.push(SentencePair {
                src: "a".into(),
                tgt: "b".into(),
                tag: "t".into(),
            });
        }
        assert_eq!(c.dedup(), 2);
        assert_eq!(c.len(), 1);
    }
}
