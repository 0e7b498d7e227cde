//! Byte-pair encoding over a joint source/target corpus, and the token
//! vocabulary built on top of it.
//!
//! Learning appends an end-of-word symbol `</w>` to every word, then greedily
//! merges the most frequent adjacent pair, breaking ties by the smallest
//! `(left, right)` pair. Applying the merges produces subwords where every
//! piece except the last one of a word carries the `@@` continuation suffix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Joint vocabulary cap used for the full-scale recipe.
pub const DEFAULT_VOCAB_CAP: usize = 90_000;

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";
const MERGE_HEADER: &str = "#version: 0.2";

type Pair = (String, String);

/// Ordered merge operations; a merge's priority is its index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeTable {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), i).is_some() {
                return Err(Error::Format(format!(
                    "duplicate merge '{} {}'",
                    pair.0, pair.1
                )));
            }
        }
        Ok(MergeTable { merges, ranks })
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.ranks.get(&(left.to_string(), right.to_string())).copied()
    }

    /// Symbols created by the merges, in merge order.
    pub fn merged_symbols(&self) -> impl Iterator<Item = String> + '_ {
        self.merges.iter().map(|(l, r)| format!("{l}{r}"))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MERGE_HEADER);
        out.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.starts_with("#version") => {}
            _ => return Err(Error::Format("merge file lacks a '#version' header".into())),
        }
        let mut merges = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Format(format!(
                        "merge line {}: expected 'LEFT RIGHT', got '{line}'",
                        n + 2
                    )))
                }
            }
        }
        MergeTable::new(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Word frequencies over whitespace-tokenized sentences, in sorted order.
pub fn word_counts<I, S>(sentences: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = BTreeMap::new();
    for line in sentences {
        for w in line.as_ref().split_whitespace() {
            *counts.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    symbols.push(END_OF_WORD.to_string());
    symbols
}

fn merge_word(symbols: &[String], pair: &Pair) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` merges from whitespace-tokenized sentences of
/// both languages.
///
/// Learning stops early when no adjacent pair is left or when the symbol
/// inventory (characters, merged symbols and the four reserved tokens) would
/// exceed `vocab_cap`.
pub fn learn_bpe<I, S>(sentences: I, num_merges: usize, vocab_cap: usize) -> Result<MergeTable>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let counts = word_counts(sentences);
    if counts.is_empty() {
        return Err(Error::Input("cannot learn BPE from an empty corpus".into()));
    }
    let mut words: Vec<(Vec<String>, u64)> = counts
        .iter()
        .map(|(w, &c)| (initial_symbols(w), c))
        .collect();

    let mut inventory: BTreeSet<String> = BTreeSet::new();
    for (symbols, _) in &words {
        inventory.extend(symbols.iter().cloned());
    }
    if inventory.len() + RESERVED_TOKENS.len() > vocab_cap {
        return Err(Error::Input(format!(
            "character inventory of {} already exceeds the vocabulary cap {vocab_cap}",
            inventory.len()
        )));
    }

    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut occurs: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (idx, (symbols, freq)) in words.iter().enumerate() {
        for w in symbols.windows(2) {
            let p = (w[0].clone(), w[1].clone());
            *pair_counts.entry(p.clone()).or_insert(0) += *freq as i64;
            occurs.entry(p).or_default().insert(idx);
        }
    }

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|(p, _)| p.clone());
        let Some(best) = best else { break };
        let merged = format!("{}{}", best.0, best.1);
        if !inventory.contains(&merged) && inventory.len() + 1 + RESERVED_TOKENS.len() > vocab_cap {
            break;
        }
        inventory.insert(merged);

        let affected: Vec<usize> = occurs.remove(&best).unwrap_or_default().into_iter().collect();
        for idx in affected {
            let (symbols, freq) = &words[idx];
            let freq = *freq as i64;
            for w in symbols.windows(2) {
                let p = (w[0].clone(), w[1].clone());
                if let Some(c) = pair_counts.get_mut(&p) {
                    *c -= freq;
                }
            }
            let updated = merge_word(symbols, &best);
            for w in updated.windows(2) {
                let p = (w[0].clone(), w[1].clone());
                *pair_counts.entry(p.clone()).or_insert(0) += freq;
                occurs.entry(p).or_default().insert(idx);
            }
            words[idx].0 = updated;
        }
        pair_counts.retain(|_, c| *c > 0);
        merges.push(best);
    }
    MergeTable::new(merges)
}

/// Segments one word into merged symbols (the last one may end in `</w>`).
fn segment_word(word: &str, table: &MergeTable) -> Vec<String> {
    let mut symbols = initial_symbols(word);
    loop {
        let best = symbols
            .windows(2)
            .filter_map(|w| table.rank(&w[0], &w[1]).map(|r| (r, (w[0].clone(), w[1].clone()))))
            .min_by_key(|(r, _)| *r);
        match best {
            Some((_, pair)) => symbols = merge_word(&symbols, &pair),
            None => return symbols,
        }
    }
}

/// Applies the merges to every word of a tokenized sentence.
pub fn apply_bpe<S: AsRef<str>>(tokens: &[S], table: &MergeTable) -> Vec<String> {
    let mut out = Vec::new();
    for token in tokens {
        let mut symbols = segment_word(token.as_ref(), table);
        if symbols.last().map(String::as_str) == Some(END_OF_WORD) {
            symbols.pop();
        } else if let Some(last) = symbols.last_mut() {
            let stripped = last.len() - END_OF_WORD.len();
            last.truncate(stripped);
        }
        let n = symbols.len();
        for (i, s) in symbols.into_iter().enumerate() {
            if i + 1 < n {
                out.push(format!("{s}{CONTINUATION}"));
            } else {
                out.push(s);
            }
        }
    }
    out
}

/// Applies BPE to a whitespace-separated line, returning a whitespace-joined line.
pub fn apply_bpe_line(line: &str, table: &MergeTable) -> String {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    apply_bpe(&tokens, table).join(" ")
}

/// Joins `@@`-continued subwords back into words.
pub fn decode_bpe<S: AsRef<str>>(subwords: &[S]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for piece in subwords {
        let piece = piece.as_ref();
        match piece.strip_suffix(CONTINUATION) {
            Some(stem) => pending.push_str(stem),
            None => {
                pending.push_str(piece);
                out.push(std::mem::take(&mut pending));
            }
        }
    }
    if subwords
        .last()
        .is_some_and(|p| p.as_ref().ends_with(CONTINUATION))
    {
        return Err(Error::Format(format!(
            "continuation marker on the final subword '{}'",
            subwords.last().map(|p| p.as_ref()).unwrap_or_default()
        )));
    }
    Ok(out)
}

pub fn decode_bpe_line(line: &str) -> Result<String> {
    let pieces: Vec<&str> = line.split_whitespace().collect();
    Ok(decode_bpe(&pieces)?.join(" "))
}

/// Bijective token/id map with reserved ids `0..4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token '{t}'")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// Builds a vocabulary ranked by frequency then lexicographically,
    /// truncated to `cap` entries including the reserved ones.
    pub fn build<I, S>(sentences: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if cap <= RESERVED_TOKENS.len() {
            return Err(Error::Input(format!(
                "vocabulary cap must exceed {}, got {cap}",
                RESERVED_TOKENS.len()
            )));
        }
        let counts = word_counts(sentences);
        let mut ranked: Vec<(&String, &u64)> = counts
            .iter()
            .filter(|(t, _)| !RESERVED_TOKENS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            ranked
                .into_iter()
                .take(cap - RESERVED_TOKENS.len())
                .map(|(t, _)| t.clone()),
        );
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Maps ids back to tokens; reserved ids render as their names.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Index(format!("id {id} outside vocabulary of size {}", self.len())))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("vocab line {}: expected TOKEN<TAB>ID", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Format(format!("vocab line {}: bad id '{id}'", n + 1)))?;
            if id != n {
                return Err(Error::Format(format!(
                    "vocab line {}: ids must be contiguous from 0, got {id}",
                    n + 1
                )));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens[..RESERVED_TOKENS.len()] != RESERVED_TOKENS.map(String::from)
        {
            return Err(Error::Format("vocab must start with the reserved tokens".into()));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
