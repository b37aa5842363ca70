//! Message cleaning: normalization, abbreviation expansion, lexicon-based
//! spelling correction and the length gate.
//!
//! Stopwords are kept and no lemmatization is applied; downstream responses
//! have to stay grammatical. Tokenization is whitespace splitting of the
//! normalized text.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::MessagePair;

#[derive(Debug, thiserror::Error)]
pub enum TextPrepError {
    #[error("abbreviation key {0:?} must be lowercase without whitespace")]
    BadAbbrevKey(String),
    #[error("expansion of {key:?} contains abbreviation {inner:?}")]
    CyclicAbbrev { key: String, inner: String },
    #[error("lexicon entry {0:?} has zero count")]
    ZeroCount(String),
    #[error("line {line}: expected two tab-separated columns")]
    MalformedTsv { line: usize },
    #[error("line {line}: bad count {value:?}")]
    BadCount { line: usize, value: String },
    #[error("max_words must be at least 1")]
    BadMaxWords,
    #[error("max_edit_distance must be 1 or 2, got {0}")]
    BadEditDistance(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

static URL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:https?://|ftp://|www\.)\S*").expect("static regex")
});

/// Lowercases, strips URLs, punctuation, control characters and line breaks,
/// and collapses whitespace. Apostrophes survive only between two
/// alphanumerics (`don't`).
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    let without_urls = URL_RE.replace_all(&lowered, " ");

    let chars: Vec<char> = without_urls.chars().collect();
    let mut kept = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            kept.push(c);
        } else if c == '\'' {
            let prev_ok = i > 0 && chars[i - 1].is_ascii_alphanumeric();
            let next_ok = chars.get(i + 1).is_some_and(|n| n.is_ascii_alphanumeric());
            kept.push(if prev_ok && next_ok { '\'' } else { ' ' });
        } else if c.is_whitespace() || c.is_ascii_punctuation() {
            kept.push(' ');
        }
        // anything else (emoji, non-ASCII letters, control chars) is dropped
    }
    tokenize(&kept).join(" ")
}

/// Whitespace tokenizer used everywhere after normalization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Abbreviation → long-form dictionary (`btw` → `by the way`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbbrevDict {
    entries: BTreeMap<String, Vec<String>>,
}

impl AbbrevDict {
    pub fn new<I, K, V>(pairs: I) -> Result<Self, TextPrepError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: AsRef<str>,
    {
        let mut entries = BTreeMap::new();
        for (k, v) in pairs {
            let key: String = k.into();
            if key.is_empty() || key.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return Err(TextPrepError::BadAbbrevKey(key));
            }
            entries.insert(key, tokenize(&normalize(v.as_ref())));
        }
        for (key, expansion) in &entries {
            if let Some(inner) = expansion.iter().find(|t| entries.contains_key(*t)) {
                return Err(TextPrepError::CyclicAbbrev {
                    key: key.clone(),
                    inner: inner.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Two-column TSV: abbreviation TAB expansion.
    pub fn from_tsv(content: &str) -> Result<Self, TextPrepError> {
        let mut pairs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or(TextPrepError::MalformedTsv { line: i + 1 })?;
            pairs.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Self::new(pairs)
    }

    pub fn load(path: &Path) -> Result<Self, TextPrepError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}\t{}\n", v.join(" ")))
            .collect()
    }

    pub fn get(&self, key: &str) -> Option<&[String]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn expansion_tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.values().flatten().map(String::as_str)
    }
}

/// Single left-to-right pass; keys are replaced by their expansion tokens.
pub fn expand_abbreviations(tokens: &[String], dict: &AbbrevDict) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        match dict.get(tok) {
            Some(expansion) => out.extend(expansion.iter().cloned()),
            None => out.push(tok.clone()),
        }
    }
    out
}

/// Valid-word side of the typo dictionary, with corpus frequencies used to
/// rank correction candidates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpellLexicon {
    frequency: BTreeMap<String, u64>,
}

impl SpellLexicon {
    pub fn new<I, S>(counts: I) -> Result<Self, TextPrepError>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut frequency = BTreeMap::new();
        for (w, c) in counts {
            let w = w.into();
            if c == 0 {
                return Err(TextPrepError::ZeroCount(w));
            }
            *frequency.entry(w).or_insert(0) += c;
        }
        Ok(Self { frequency })
    }

    /// Counts every token occurrence; tokens seen fewer than `min_count`
    /// times are left out.
    pub fn from_documents<'a, I>(docs: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut frequency: BTreeMap<String, u64> = BTreeMap::new();
        for doc in docs {
            for tok in doc {
                *frequency.entry(tok.clone()).or_insert(0) += 1;
            }
        }
        frequency.retain(|_, c| *c >= min_count.max(1));
        Self { frequency }
    }

    pub fn from_tsv(content: &str) -> Result<Self, TextPrepError> {
        let mut counts = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (w, c) = line
                .split_once('\t')
                .ok_or(TextPrepError::MalformedTsv { line: i + 1 })?;
            let count = c.trim().parse::<u64>().map_err(|_| TextPrepError::BadCount {
                line: i + 1,
                value: c.to_owned(),
            })?;
            counts.push((w.trim().to_owned(), count));
        }
        Self::new(counts)
    }

    pub fn load(path: &Path) -> Result<Self, TextPrepError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        self.frequency
            .iter()
            .map(|(w, c)| format!("{w}\t{c}\n"))
            .collect()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.frequency.contains_key(word)
    }

    pub fn frequency(&self, word: &str) -> Option<u64> {
        self.frequency.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.frequency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequency.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.frequency.keys().map(String::as_str)
    }

    fn insert_if_absent(&mut self, word: &str) {
        self.frequency.entry(word.to_owned()).or_insert(1);
    }

    fn remove(&mut self, word: &str) {
        self.frequency.remove(word);
    }

    /// Best in-lexicon replacement for `token`, if any lies within `max_ed`.
    pub fn best_candidate(&self, token: &str, max_ed: usize) -> Option<&str> {
        let target: Vec<char> = token.chars().collect();
        let mut best: Option<(&str, u64, usize)> = None;
        for (word, &freq) in &self.frequency {
            let len = word.chars().count();
            if len.abs_diff(target.len()) > max_ed {
                continue;
            }
            let Some(dist) = bounded_levenshtein(&target, word, max_ed) else {
                continue;
            };
            let better = match best {
                None => true,
                // higher frequency, then smaller distance; keys iterate in
                // lexicographic order so the first seen wins the final tie
                Some((_, bf, bd)) => freq > bf || (freq == bf && dist < bd),
            };
            if better {
                best = Some((word.as_str(), freq, dist));
            }
        }
        best.map(|(w, _, _)| w)
    }
}

/// Levenshtein distance with unit costs, or `None` once it exceeds `bound`.
pub fn bounded_levenshtein(a: &[char], b: &str, bound: usize) -> Option<usize> {
    let b: Vec<char> = b.chars().collect();
    if a.len().abs_diff(b.len()) > bound {
        return None;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        let mut row_min = cur[0];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
            row_min = row_min.min(cur[j + 1]);
        }
        if row_min > bound {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= bound).then_some(d)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    bounded_levenshtein(&a, b, usize::MAX / 2).expect("unbounded")
}

/// Replaces out-of-lexicon tokens by their best candidate. Tokens with
/// digits and tokens without any candidate pass through.
pub fn correct_spelling(tokens: &[String], lex: &SpellLexicon, max_ed: usize) -> Vec<String> {
    tokens
        .iter()
        .map(|tok| {
            if lex.contains(tok) || tok.chars().any(|c| c.is_ascii_digit()) {
                return tok.clone();
            }
            lex.best_candidate(tok, max_ed)
                .map_or_else(|| tok.clone(), str::to_owned)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanConfig {
    pub max_words: usize,
    pub expand_abbrev: bool,
    pub spell_correct: bool,
    pub max_edit_distance: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            max_words: 200,
            expand_abbrev: true,
            spell_correct: true,
            max_edit_distance: 2,
        }
    }
}

impl CleanConfig {
    pub fn validate(&self) -> Result<(), TextPrepError> {
        if self.max_words == 0 {
            return Err(TextPrepError::BadMaxWords);
        }
        if !(1..=2).contains(&self.max_edit_distance) {
            return Err(TextPrepError::BadEditDistance(self.max_edit_distance));
        }
        Ok(())
    }
}

/// The full cleaning pipeline bundled with its dictionaries.
///
/// Expansion tokens are added to the lexicon and abbreviation keys removed
/// from it, so every output token is a fixed point of a second pass.
#[derive(Debug, Clone)]
pub struct Cleaner {
    cfg: CleanConfig,
    abbrev: AbbrevDict,
    lexicon: SpellLexicon,
}

impl Cleaner {
    pub fn new(
        cfg: CleanConfig,
        abbrev: AbbrevDict,
        mut lexicon: SpellLexicon,
    ) -> Result<Self, TextPrepError> {
        cfg.validate()?;
        if cfg.expand_abbrev {
            let expansion: Vec<String> = abbrev.expansion_tokens().map(str::to_owned).collect();
            for tok in &expansion {
                lexicon.insert_if_absent(tok);
            }
            let keys: Vec<String> = abbrev.entries.keys().cloned().collect();
            for key in &keys {
                lexicon.remove(key);
            }
        }
        Ok(Self { cfg, abbrev, lexicon })
    }

    /// Normalization only.
    pub fn passthrough(max_words: usize) -> Self {
        Self {
            cfg: CleanConfig {
                max_words,
                expand_abbrev: false,
                spell_correct: false,
                max_edit_distance: 2,
            },
            abbrev: AbbrevDict::default(),
            lexicon: SpellLexicon::default(),
        }
    }

    pub fn config(&self) -> &CleanConfig {
        &self.cfg
    }

    pub fn lexicon(&self) -> &SpellLexicon {
        &self.lexicon
    }

    pub fn abbrev(&self) -> &AbbrevDict {
        &self.abbrev
    }

    /// normalize → expand → correct, returning tokens.
    pub fn clean_tokens(&self, text: &str) -> Vec<String> {
        let mut tokens = tokenize(&normalize(text));
        if self.cfg.expand_abbrev {
            tokens = expand_abbreviations(&tokens, &self.abbrev);
        }
        if self.cfg.spell_correct && !self.lexicon.is_empty() {
            tokens = correct_spelling(&tokens, &self.lexicon, self.cfg.max_edit_distance);
        }
        tokens
    }

    pub fn clean_text(&self, text: &str) -> String {
        self.clean_tokens(text).join(" ")
    }

    pub fn too_long(&self, tokens: &[String]) -> bool {
        tokens.len() > self.cfg.max_words
    }

    /// Cleans both sides of a pair, or drops it when either side exceeds
    /// `max_words` after cleaning.
    pub fn clean_pair(&self, pair: &MessagePair) -> Option<MessagePair> {
        let patient = self.clean_tokens(&pair.patient_text);
        if patient.is_empty() || self.too_long(&patient) {
            return None;
        }
        let doctor = match &pair.raw_doctor_text {
            Some(d) => {
                let toks = self.clean_tokens(d);
                if self.too_long(&toks) {
                    return None;
                }
                Some(toks.join(" "))
            }
            None => None,
        };
        Some(MessagePair {
            patient_text: patient.join(" "),
            raw_doctor_text: doctor,
            ..pair.clone()
        })
    }
}

/// Free-function form of [`Cleaner::clean_pair`].
pub fn clean_pair(
    pair: &MessagePair,
    cfg: CleanConfig,
    abbrev: &AbbrevDict,
    lexicon: &SpellLexicon,
) -> Result<Option<MessagePair>, TextPrepError> {
    Ok(Cleaner::new(cfg, abbrev.clone(), lexicon.clone())?.clean_pair(pair))
}
