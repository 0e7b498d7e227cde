//! Arabic-side normalization, ATB-style clitic segmentation, English
//! tokenization and length filtering.
//!
//! The normalization rules and the affix lexicon are plain-text data files;
//! the versions under `data/` are compiled in as defaults.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_RULES: &str = include_str!("../data/rules.tsv");
pub const DEFAULT_AFFIXES: &str = include_str!("../data/affixes.tsv");

/// Segments shorter than this (in characters) are never left as a stem.
pub const MIN_STEM_CHARS: usize = 3;
pub const JOIN_MARKER: char = '+';
pub const DEFAULT_MAX_LEN: usize = 100;

/// Ordered `pattern -> replacement` rules over code-point sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizationRuleSet {
    rules: Vec<(Vec<char>, String)>,
}

fn parse_code_points(field: &str, line: usize) -> Result<Vec<char>> {
    field
        .split_whitespace()
        .map(|cp| {
            let hex = cp
                .strip_prefix("U+")
                .or_else(|| cp.strip_prefix("u+"))
                .unwrap_or(cp);
            u32::from_str_radix(hex, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| Error::Format(format!("rules line {line}: bad code point '{cp}'")))
        })
        .collect()
}

impl NormalizationRuleSet {
    pub fn new(rules: Vec<(Vec<char>, String)>) -> Result<Self> {
        if let Some((p, _)) = rules.iter().find(|(p, _)| p.is_empty()) {
            return Err(Error::Format(format!("empty rule pattern {p:?}")));
        }
        // A replacement that contains a pattern would break idempotence.
        for (_, to) in &rules {
            for (pattern, _) in &rules {
                let pat: String = pattern.iter().collect();
                if to.contains(&pat) {
                    return Err(Error::Format(format!(
                        "replacement '{to}' re-introduces pattern '{pat}'"
                    )));
                }
            }
        }
        Ok(NormalizationRuleSet { rules })
    }

    /// Parses `FROM<TAB>TO` lines of `U+XXXX` code points. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("rules line {}: expected FROM<TAB>TO", n + 1)))?;
            let from = parse_code_points(from, n + 1)?;
            let to: String = parse_code_points(to, n + 1)?.into_iter().collect();
            rules.push((from, to));
        }
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Left-to-right rewrite; at each position the first matching rule wins.
    pub fn normalize(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        'outer: while i < chars.len() {
            for (pattern, replacement) in &self.rules {
                if chars[i..].starts_with(pattern) {
                    out.push_str(replacement);
                    i += pattern.len();
                    continue 'outer;
                }
            }
            out.push(chars[i]);
            i += 1;
        }
        out
    }

    /// Like [`NormalizationRuleSet::normalize`] but starting from raw bytes.
    pub fn normalize_bytes(&self, bytes: &[u8]) -> Result<String> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::Encoding(format!("invalid UTF-8: {e}")))?;
        Ok(self.normalize(text))
    }
}

impl Default for NormalizationRuleSet {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES).expect("shipped rule table parses")
    }
}

/// Normalizes with the default rule table.
pub fn normalize(text: &str) -> String {
    NormalizationRuleSet::default().normalize(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffixSide {
    Proclitic,
    Enclitic,
}

/// Clitic lexicon. Proclitics keep file order (each used at most once, in
/// order); enclitics are matched longest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffixLexicon {
    proclitics: Vec<String>,
    enclitics: Vec<String>,
}

impl AffixLexicon {
    pub fn new(proclitics: Vec<String>, mut enclitics: Vec<String>) -> Self {
        enclitics.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
        AffixLexicon {
            proclitics,
            enclitics,
        }
    }

    /// Parses `SIDE<TAB>AFFIX` lines with `P` or `E` as the side.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pro = Vec::new();
        let mut enc = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (side, affix) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("affix line {}: expected SIDE<TAB>AFFIX", n + 1)))?;
            let affix = affix.trim();
            if affix.is_empty() || affix.contains(JOIN_MARKER) {
                return Err(Error::Format(format!("affix line {}: bad affix '{affix}'", n + 1)));
            }
            match side.trim() {
                "P" => pro.push(affix.to_string()),
                "E" => enc.push(affix.to_string()),
                other => {
                    return Err(Error::Format(format!(
                        "affix line {}: side must be P or E, got '{other}'",
                        n + 1
                    )))
                }
            }
        }
        Ok(Self::new(pro, enc))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn affixes(&self, side: AffixSide) -> &[String] {
        match side {
            AffixSide::Proclitic => &self.proclitics,
            AffixSide::Enclitic => &self.enclitics,
        }
    }
}

impl Default for AffixLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_AFFIXES).expect("shipped affix lexicon parses")
    }
}

/// Whitespace-delimited tokens with clitics split off by `+` markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedSentence {
    pub tokens: Vec<String>,
}

impl SegmentedSentence {
    pub fn to_line(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn from_line(line: &str) -> Self {
        SegmentedSentence {
            tokens: line.split_whitespace().map(str::to_string).collect(),
        }
    }
}

pub fn is_arabic_letter(c: char) -> bool {
    matches!(c, '\u{0621}'..='\u{064A}' | '\u{0671}'..='\u{06D3}')
}

fn segment_word(word: &str, lexicon: &AffixLexicon, out: &mut Vec<String>) {
    if !word.chars().all(is_arabic_letter) {
        out.push(word.to_string());
        return;
    }
    let mut stem = word;
    for p in &lexicon.proclitics {
        if let Some(rest) = stem.strip_prefix(p.as_str()) {
            if rest.chars().count() >= MIN_STEM_CHARS {
                out.push(format!("{p}{JOIN_MARKER}"));
                stem = rest;
            }
        }
    }
    let enclitic = lexicon.enclitics.iter().find_map(|e| {
        stem.strip_suffix(e.as_str())
            .filter(|rest| rest.chars().count() >= MIN_STEM_CHARS)
            .map(|rest| (rest, e))
    });
    match enclitic {
        Some((rest, e)) => {
            out.push(rest.to_string());
            out.push(format!("{JOIN_MARKER}{e}"));
        }
        None => out.push(stem.to_string()),
    }
}

/// Splits listed clitics off every all-Arabic word; other words pass through.
pub fn segment(sentence: &str, lexicon: &AffixLexicon) -> SegmentedSentence {
    let mut tokens = Vec::new();
    for word in sentence.split_whitespace() {
        segment_word(word, lexicon, &mut tokens);
    }
    SegmentedSentence { tokens }
}

fn is_marker_token(t: &str) -> bool {
    t != "+" && t.chars().count() > 1
}

/// Re-attaches `X+` to the following token and `+Y` to the preceding one.
/// A bare `+` token is literal.
pub fn desegment(sentence: &SegmentedSentence) -> Result<String> {
    let tokens = &sentence.tokens;
    let mut words: Vec<String> = Vec::new();
    let mut glue_next = false;
    for (i, tok) in tokens.iter().enumerate() {
        if tok.is_empty() {
            return Err(Error::Format(format!("empty token at position {i}")));
        }
        let marked = is_marker_token(tok);
        let leading = marked && tok.starts_with(JOIN_MARKER);
        let trailing = marked && tok.ends_with(JOIN_MARKER);
        let mut body = tok.as_str();
        if leading {
            if i == 0 || glue_next {
                return Err(Error::Format(format!(
                    "dangling join marker on '{tok}' at position {i}"
                )));
            }
            body = &body[JOIN_MARKER.len_utf8()..];
        }
        if trailing {
            if i + 1 == tokens.len() {
                return Err(Error::Format(format!(
                    "dangling join marker on '{tok}' at the end of the sentence"
                )));
            }
            body = &body[..body.len() - JOIN_MARKER.len_utf8()];
        }
        if leading || glue_next {
            let last = words.last_mut().expect("position checked above");
            last.push_str(body);
        } else {
            words.push(body.to_string());
        }
        glue_next = trailing;
    }
    Ok(words.join(" "))
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{060C}' | '\u{061B}' | '\u{061F}' | '\u{066A}'..='\u{066D}' | '\u{06D4}'
                | '«' | '»' | '“' | '”' | '‘' | '’' | '…' | '–' | '—'
        )
}

/// Whitespace split with every punctuation character as its own token.
pub fn split_punctuation(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if is_punctuation(c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// English-side tokenization: punctuation split, optional lowercasing.
pub fn tokenize_english(text: &str, lowercase: bool) -> Vec<String> {
    let tokens = split_punctuation(text);
    if lowercase {
        tokens.into_iter().map(|t| t.to_lowercase()).collect()
    } else {
        tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop,
}

/// Drops a pair when either side is empty or longer than `max_len` tokens.
pub fn filter_pair(src_len: usize, tgt_len: usize, max_len: usize) -> FilterDecision {
    debug_assert!(max_len >= 1);
    if src_len == 0 || tgt_len == 0 || src_len > max_len || tgt_len > max_len {
        FilterDecision::Drop
    } else {
        FilterDecision::Keep
    }
}

/// Arabic preprocessing chain: normalize, split punctuation, segment.
/// The default uses the shipped rule table and lexicon.
#[derive(Debug, Clone)]
pub struct ArabicPreprocessor {
    pub rules: NormalizationRuleSet,
    pub lexicon: AffixLexicon,
    /// When false only punctuation splitting is applied.
    pub enabled: bool,
}

impl Default for ArabicPreprocessor {
    fn default() -> Self {
        ArabicPreprocessor::new(NormalizationRuleSet::default(), AffixLexicon::default())
    }
}

impl ArabicPreprocessor {
    pub fn new(rules: NormalizationRuleSet, lexicon: AffixLexicon) -> Self {
        ArabicPreprocessor {
            rules,
            lexicon,
            enabled: true,
        }
    }

    /// Whitespace and punctuation tokenization only.
    pub fn passthrough() -> Self {
        ArabicPreprocessor {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn process(&self, line: &str) -> Vec<String> {
        if !self.enabled {
            return split_punctuation(line);
        }
        let normalized = self.rules.normalize(line);
        let spaced = split_punctuation(&normalized).join(" ");
        segment(&spaced, &self.lexicon).tokens
    }

    /// Order-preserving parallel map over lines.
    pub fn process_lines(&self, lines: &[String]) -> Vec<Vec<String>> {
        lines.par_iter().map(|l| self.process(l)).collect()
    }
}
