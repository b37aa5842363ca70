//! Word vectors, TF-IDF statistics and TF-IDF-weighted sentence vectors.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("line {line}: expected {expected} values, found {found}")]
    DimMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: malformed vector")]
    MalformedVector { line: usize },
    #[error("cannot fit TF-IDF statistics on an empty corpus")]
    EmptyCorpus,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token → dense vector lookup, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        Self {
            dim,
            index: HashMap::new(),
            tokens: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Adds a row; returns false (and keeps the old row) for a duplicate token.
    pub fn insert(&mut self, token: impl Into<String>, vector: &[f64]) -> Result<bool, EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::LengthMismatch(self.dim, vector.len()));
        }
        let token = token.into();
        if self.index.contains_key(&token) {
            return Ok(false);
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(t, v)| (t.as_str(), v))
    }

    /// word2vec text format with a "V D" header.
    pub fn to_word2vec(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (tok, v) in self.iter() {
            out.push_str(tok);
            for x in v {
                out.push(' ');
                out.push_str(&format!("{x:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, EmbedError> {
    read_embeddings(std::fs::File::open(path)?)
}

/// Parses word2vec text format. The optional "V D" header is recognised as
/// a first line of exactly two integers; otherwise the dimension comes from
/// the first row. Duplicate tokens keep their first row.
pub fn read_embeddings<R: Read>(reader: R) -> Result<EmbeddingTable, EmbedError> {
    let mut table: Option<EmbeddingTable> = None;
    let mut declared_dim: Option<usize> = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                declared_dim = Some(d);
                continue;
            }
        }
        let values = rest
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or(EmbedError::MalformedVector { line: line_no })?;
        if values.is_empty() {
            return Err(EmbedError::MalformedVector { line: line_no });
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(declared_dim.unwrap_or(values.len())));
        if values.len() != t.dim {
            return Err(EmbedError::DimMismatch {
                line: line_no,
                expected: t.dim,
                found: values.len(),
            });
        }
        t.insert(token, &values)?;
    }
    Ok(table.unwrap_or_else(|| EmbeddingTable::new(declared_dim.unwrap_or(1).max(1))))
}

/// Corpus-level document frequencies; one document is one message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TfIdfParts")]
pub struct TfIdfStats {
    n_docs: u64,
    doc_freq: BTreeMap<String, u64>,
    #[serde(skip)]
    term_ids: HashMap<String, u32>,
}

#[derive(Deserialize)]
struct TfIdfParts {
    n_docs: u64,
    doc_freq: BTreeMap<String, u64>,
}

impl From<TfIdfParts> for TfIdfStats {
    fn from(p: TfIdfParts) -> Self {
        Self::from_parts(p.n_docs, p.doc_freq)
    }
}

impl TfIdfStats {
    fn from_parts(n_docs: u64, doc_freq: BTreeMap<String, u64>) -> Self {
        let term_ids = doc_freq
            .keys()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { n_docs, doc_freq, term_ids }
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn doc_freq(&self, token: &str) -> u64 {
        self.doc_freq.get(token).copied().unwrap_or(0)
    }

    pub fn vocab_len(&self) -> usize {
        self.doc_freq.len()
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.doc_freq.keys().map(String::as_str)
    }

    pub fn term_id(&self, token: &str) -> Option<u32> {
        self.term_ids.get(token).copied()
    }

    /// Smoothed inverse document frequency, `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, token: &str) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq(token) as f64)).ln() + 1.0
    }
}

pub fn fit_tfidf<D: AsRef<[String]>>(docs: &[D]) -> Result<TfIdfStats, EmbedError> {
    if docs.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut doc_freq: BTreeMap<String, u64> = BTreeMap::new();
    for doc in docs {
        let mut distinct: Vec<&String> = doc.as_ref().iter().collect();
        distinct.sort_unstable();
        distinct.dedup();
        for t in distinct {
            *doc_freq.entry(t.clone()).or_insert(0) += 1;
        }
    }
    Ok(TfIdfStats::from_parts(docs.len() as u64, doc_freq))
}

/// `count × idf(token)`; unseen tokens get `df = 0`.
pub fn tfidf_weight(token: &str, count_in_doc: u64, stats: &TfIdfStats) -> f64 {
    count_in_doc as f64 * stats.idf(token)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceVector {
    pub values: Vec<f64>,
    pub coverage: f64,
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, u64> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// TF-IDF-weighted mean of the in-table word vectors. Out-of-table tokens
/// are ignored; with none left the result is the zero vector.
pub fn embed_sentence(tokens: &[String], table: &EmbeddingTable, stats: &TfIdfStats) -> SentenceVector {
    let mut values = vec![0.0; table.dim()];
    if tokens.is_empty() {
        return SentenceVector { values, coverage: 0.0 };
    }
    let covered = tokens.iter().filter(|t| table.contains(t)).count();
    let mut total_weight = 0.0;
    for (tok, count) in term_counts(tokens) {
        let Some(e) = table.get(tok) else { continue };
        let w = tfidf_weight(tok, count, stats);
        total_weight += w;
        for (acc, x) in values.iter_mut().zip(e) {
            *acc += w * x;
        }
    }
    if total_weight > 0.0 {
        for v in &mut values {
            *v /= total_weight;
        }
    }
    SentenceVector {
        values,
        coverage: covered as f64 / tokens.len() as f64,
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::LengthMismatch(u.len(), v.len()));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Sparse TF-IDF vector over the fitted vocabulary. Terms outside the
/// vocabulary only contribute to the norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub entries: Vec<(u32, f64)>,
    pub norm: f64,
}

impl SparseVector {
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        (acc / (self.norm * other.norm)).clamp(-1.0, 1.0)
    }
}

pub fn tfidf_vector(tokens: &[String], stats: &TfIdfStats) -> SparseVector {
    let mut entries = Vec::new();
    let mut sq = 0.0;
    for (tok, count) in term_counts(tokens) {
        let w = tfidf_weight(tok, count, stats);
        sq += w * w;
        if let Some(id) = stats.term_id(tok) {
            entries.push((id, w));
        }
    }
    entries.sort_unstable_by_key(|e| e.0);
    SparseVector { entries, norm: sq.sqrt() }
}

/// Shared text representation for one training split: the word vectors plus
/// TF-IDF statistics fitted on that split.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    table: Arc<EmbeddingTable>,
    stats: TfIdfStats,
}

impl TextEncoder {
    pub fn new(table: Arc<EmbeddingTable>, stats: TfIdfStats) -> Self {
        Self { table, stats }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn table_arc(&self) -> &Arc<EmbeddingTable> {
        &self.table
    }

    pub fn stats(&self) -> &TfIdfStats {
        &self.stats
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn embed(&self, tokens: &[String]) -> SentenceVector {
        embed_sentence(tokens, &self.table, &self.stats)
    }

    pub fn sparse(&self, tokens: &[String]) -> SparseVector {
        tfidf_vector(tokens, &self.stats)
    }
}
