//! End-to-end flow: clean, trigger at threshold, rank, diversify, top-k.
//! Also trains serving artifacts and runs cross-validated experiments.

mod experiment;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::canned::{
    build_from_labeled, dedupe_topk, CannedBuild, CannedError, CannedSet, DiversityRule, RankedResponse,
    DEFAULT_DENSITY_THRESHOLD,
};
use crate::corpus::{stratified_kfold, CorpusError, Dataset, MessagePair};
use crate::embed::{fit_tfidf, load_embeddings, EmbedError, EmbeddingTable, TextEncoder, TfIdfStats};
use crate::eval::EvalError;
use crate::io::{atomic_write, fingerprint, write_json};
use crate::models::{
    fit_response, fit_trigger, ModelArtifact, ModelError, Query, ResponseKind, ResponseModel, TrainConfig,
    TrainingExample, TriggerKind, TriggerModel,
};
use crate::textprep::{normalize, tokenize, AbbrevDict, CleanConfig, Cleaner, SpellLexicon, TextPrepError};

pub use experiment::{
    evaluate_artifacts, prepare_fold, run_experiment, write_experiment, write_report, ExperimentOutput, FoldArtifacts,
    FoldData,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("artifacts missing: {0}")]
    ArtifactsMissing(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Canned(#[from] CannedError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    TextPrep(#[from] TextPrepError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Files an operator points the pipeline at. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactPaths {
    pub embeddings: Option<PathBuf>,
    pub canned_set: Option<PathBuf>,
    pub abbreviations: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Diversity rules (JSON list) attached to the canned set.
    pub rules: Option<PathBuf>,
    /// Precomputed scores used by the `external` model kinds.
    pub external_scores: Option<PathBuf>,
}

impl ArtifactPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.embeddings,
            &mut self.canned_set,
            &mut self.abbreviations,
            &mut self.lexicon,
            &mut self.rules,
            &mut self.external_scores,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub trigger_kind: TriggerKind,
    pub response_kind: ResponseKind,
    pub threshold_p: f64,
    pub k: usize,
    pub max_words: usize,
    pub seed: u64,
    pub expand_abbreviations: bool,
    pub spell_correct: bool,
    pub max_edit_distance: usize,
    /// Training-split tokens seen fewer times are left out of the spelling lexicon.
    pub lexicon_min_count: u64,
    pub folds: usize,
    pub validation_fraction: f64,
    pub density_threshold: f64,
    pub trigger_training: TrainConfig,
    pub response_training: TrainConfig,
    /// Models compared in experiments; the configured pair is always included.
    pub trigger_grid: Vec<TriggerKind>,
    pub response_grid: Vec<ResponseKind>,
    pub paths: ArtifactPaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            trigger_kind: TriggerKind::LinearLogistic,
            response_kind: ResponseKind::SoftmaxLinear,
            threshold_p: 0.5,
            k: 3,
            max_words: 200,
            seed: 42,
            expand_abbreviations: true,
            spell_correct: true,
            max_edit_distance: 2,
            lexicon_min_count: 2,
            folds: 5,
            validation_fraction: 0.2,
            density_threshold: DEFAULT_DENSITY_THRESHOLD,
            trigger_training: TrainConfig::trigger_default(),
            response_training: TrainConfig::response_default(),
            trigger_grid: vec![
                TriggerKind::LinearLogistic,
                TriggerKind::KnnTfidf,
                TriggerKind::KnnWeighted,
                TriggerKind::Frequency,
            ],
            response_grid: vec![
                ResponseKind::SoftmaxLinear,
                ResponseKind::KnnTfidf,
                ResponseKind::KnnWeighted,
                ResponseKind::Frequency,
            ],
            paths: ArtifactPaths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(0.0..=1.0).contains(&self.threshold_p) {
            return bad(format!("threshold_p must lie in [0, 1], got {}", self.threshold_p));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        if !(0.0..=1.0).contains(&self.density_threshold) {
            return bad(format!("density_threshold must lie in [0, 1], got {}", self.density_threshold));
        }
        self.clean_config().validate()?;
        self.trigger_training.validate()?;
        self.response_training.validate()?;
        Ok(())
    }

    pub fn clean_config(&self) -> CleanConfig {
        CleanConfig {
            max_words: self.max_words,
            expand_abbrev: self.expand_abbreviations,
            spell_correct: self.spell_correct,
            max_edit_distance: self.max_edit_distance,
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        if let Some(dir) = path.parent() {
            cfg.paths.resolve(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub(crate) fn trigger_kinds(&self) -> Vec<TriggerKind> {
        let mut kinds = self.trigger_grid.clone();
        if !kinds.contains(&self.trigger_kind) {
            kinds.insert(0, self.trigger_kind);
        }
        kinds
    }

    pub(crate) fn response_kinds(&self) -> Vec<ResponseKind> {
        let mut kinds = self.response_grid.clone();
        if !kinds.contains(&self.response_kind) {
            kinds.insert(0, self.response_kind);
        }
        kinds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionItem {
    pub response_id: String,
    pub display_text: String,
    pub score: f64,
    pub rank: usize,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub triggered: bool,
    pub trigger_score: f64,
    pub items: Vec<SuggestionItem>,
    pub latency_ms: f64,
}

/// Per-request knobs; everything else comes from the artifacts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuggestOptions {
    pub threshold_p: f64,
    pub k: usize,
}

impl Default for SuggestOptions {
    fn default() -> Self {
        Self { threshold_p: 0.5, k: 3 }
    }
}

/// Settings stored next to trained artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub clean: CleanConfig,
    pub trigger_kind: TriggerKind,
    pub response_kind: ResponseKind,
    pub threshold_p: f64,
    pub k: usize,
}

/// Everything `suggest` needs, immutable once built.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub manifest: Manifest,
    pub cleaner: Cleaner,
    pub encoder: TextEncoder,
    pub trigger: TriggerModel,
    pub response: ResponseModel,
    pub canned: CannedSet,
    /// Canned-set position of each response-model label.
    label_to_canned: Vec<Option<usize>>,
    /// SHA-256 of each artifact, keyed by file name.
    pub fingerprints: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const TFIDF_FILE: &str = "tfidf.json";
pub const ABBREVIATIONS_FILE: &str = "abbreviations.tsv";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const CANNED_FILE: &str = "canned_set.json";
pub const TRIGGER_FILE: &str = "trigger.json";
pub const RESPONSE_FILE: &str = "response.json";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::ArtifactsMissing(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

impl Artifacts {
    pub fn new(
        manifest: Manifest,
        cleaner: Cleaner,
        encoder: TextEncoder,
        trigger: TriggerModel,
        response: ResponseModel,
        canned: CannedSet,
    ) -> Result<Self, PipelineError> {
        let label_to_canned: Vec<Option<usize>> = response
            .label_space()
            .iter()
            .map(|id| canned.position(id))
            .collect();
        if label_to_canned.iter().all(Option::is_none) {
            return Err(PipelineError::Config(
                "no response-model label matches a canned response".into(),
            ));
        }
        Ok(Self {
            manifest,
            cleaner,
            encoder,
            trigger,
            response,
            canned,
            label_to_canned,
            fingerprints: BTreeMap::new(),
        })
    }

    pub fn options(&self) -> SuggestOptions {
        SuggestOptions {
            threshold_p: self.manifest.threshold_p,
            k: self.manifest.k,
        }
    }

    /// Loads the files written by [`Artifacts::save`].
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        if !dir.is_dir() {
            return Err(PipelineError::ArtifactsMissing(format!("{} is not a directory", dir.display())));
        }
        let path = |name: &str| dir.join(name);
        let manifest: Manifest = read_json(&path(MANIFEST_FILE))?;
        let table = load_embeddings(&path(EMBEDDINGS_FILE))
            .map_err(|e| PipelineError::ArtifactsMissing(format!("{EMBEDDINGS_FILE}: {e}")))?;
        let stats: TfIdfStats = read_json(&path(TFIDF_FILE))?;
        let abbrev = AbbrevDict::load(&path(ABBREVIATIONS_FILE))?;
        let lexicon = SpellLexicon::load(&path(LEXICON_FILE))?;
        let canned = CannedSet::load(&path(CANNED_FILE))?;
        let trigger: ModelArtifact<TriggerModel> = read_json(&path(TRIGGER_FILE))?;
        let response: ModelArtifact<ResponseModel> = read_json(&path(RESPONSE_FILE))?;
        let cleaner = Cleaner::new(manifest.clean, abbrev, lexicon)?;
        let encoder = TextEncoder::new(Arc::new(table), stats);
        let mut art = Self::new(manifest, cleaner, encoder, trigger.model, response.model, canned)?;
        for name in [
            MANIFEST_FILE,
            EMBEDDINGS_FILE,
            TFIDF_FILE,
            ABBREVIATIONS_FILE,
            LEXICON_FILE,
            CANNED_FILE,
            TRIGGER_FILE,
            RESPONSE_FILE,
        ] {
            art.fingerprints.insert(name.to_owned(), fingerprint(&std::fs::read(path(name))?));
        }
        Ok(art)
    }

    /// Writes every artifact into `dir` and records their fingerprints.
    pub fn save(&mut self, dir: &Path, train_fingerprint: &str, cfg: &PipelineConfig) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)?;
        atomic_write(&dir.join(EMBEDDINGS_FILE), self.encoder.table().to_word2vec().as_bytes())?;
        write_json(&dir.join(TFIDF_FILE), self.encoder.stats())?;
        atomic_write(&dir.join(ABBREVIATIONS_FILE), self.cleaner.abbrev().to_tsv().as_bytes())?;
        atomic_write(&dir.join(LEXICON_FILE), self.cleaner.lexicon().to_tsv().as_bytes())?;
        atomic_write(&dir.join(CANNED_FILE), self.canned.to_json().as_bytes())?;
        write_json(
            &dir.join(TRIGGER_FILE),
            &ModelArtifact {
                train_fingerprint: train_fingerprint.to_owned(),
                config: Some(cfg.trigger_training.clone()),
                model: self.trigger.clone(),
            },
        )?;
        write_json(
            &dir.join(RESPONSE_FILE),
            &ModelArtifact {
                train_fingerprint: train_fingerprint.to_owned(),
                config: Some(cfg.response_training.clone()),
                model: self.response.clone(),
            },
        )?;
        self.fingerprints.clear();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                let name = entry.file_name().to_string_lossy().into_owned();
                self.fingerprints.insert(name, fingerprint(&std::fs::read(entry.path())?));
            }
        }
        Ok(())
    }

    /// Cleaned text and model query for a raw message, or `None` when it is
    /// over the length limit.
    pub fn encode(&self, raw_patient_text: &str) -> Option<Query> {
        let tokens = self.cleaner.clean_tokens(raw_patient_text);
        if self.cleaner.too_long(&tokens) {
            return None;
        }
        Some(Query::encode(&tokens.join(" "), &self.encoder))
    }
}

/// Clean, gate on length and trigger score, rank, keep one response per
/// cluster, and apply diversity rules.
pub fn suggest(raw_patient_text: &str, opts: SuggestOptions, art: &Artifacts) -> Result<Suggestion, PipelineError> {
    let start = Instant::now();
    let done = |triggered: bool, trigger_score: f64, items: Vec<SuggestionItem>| Suggestion {
        triggered,
        trigger_score,
        items,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    let Some(query) = art.encode(raw_patient_text) else {
        return Ok(done(false, 0.0, Vec::new()));
    };
    if query.word_count == 0 {
        return Ok(done(false, 0.0, Vec::new()));
    }
    let trigger_score = art.trigger.predict(&query)?;
    if trigger_score < opts.threshold_p {
        return Ok(done(false, trigger_score, Vec::new()));
    }
    let candidates: Vec<RankedResponse> = art
        .response
        .rank(&query)?
        .into_iter()
        .filter_map(|(label, score)| {
            art.label_to_canned[label].map(|c| {
                let r = &art.canned.responses[c];
                RankedResponse {
                    response_id: r.id.clone(),
                    cluster_id: r.cluster_id,
                    score,
                }
            })
        })
        .collect();
    let available = art.canned.cluster_count();
    let top = dedupe_topk(&candidates, opts.k.min(available))?;
    let items = top
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let response = art.canned.get(&r.response_id).expect("ranked ids come from the canned set");
            SuggestionItem {
                display_text: art.canned.display_text(response, raw_patient_text),
                response_id: r.response_id,
                score: r.score,
                rank: i + 1,
                cluster_id: r.cluster_id,
            }
        })
        .collect();
    Ok(done(true, trigger_score, items))
}

/// Attaches response ids from an unlabeled clustering build: pairs whose
/// doctor reply landed in a kept cluster become feasible with that id, the
/// rest infeasible.
pub fn label_pairs(pairs: &[MessagePair], build: &CannedBuild) -> Vec<MessagePair> {
    let mut with_reply = 0;
    pairs
        .iter()
        .map(|p| {
            let id = if p.raw_doctor_text.is_some() {
                let id = build.assignments.get(with_reply).cloned().flatten();
                with_reply += 1;
                id
            } else {
                None
            };
            MessagePair {
                doctor_response_id: id.clone(),
                feasible: id.is_some(),
                ..p.clone()
            }
        })
        .collect()
}

/// Builds the cleaner for a training split: the lexicon comes from the
/// split's own normalized, abbreviation-expanded tokens.
pub fn fit_cleaner(train: &[MessagePair], abbrev: &AbbrevDict, cfg: &PipelineConfig) -> Result<Cleaner, PipelineError> {
    let docs: Vec<Vec<String>> = train
        .iter()
        .flat_map(|p| std::iter::once(&p.patient_text).chain(p.raw_doctor_text.as_ref()))
        .map(|t| crate::textprep::expand_abbreviations(&tokenize(&normalize(t)), abbrev))
        .collect();
    let lexicon = SpellLexicon::from_documents(docs.iter().map(Vec::as_slice), cfg.lexicon_min_count);
    Ok(Cleaner::new(cfg.clean_config(), abbrev.clone(), lexicon)?)
}

pub(crate) fn encode_pairs(pairs: &[MessagePair], encoder: &TextEncoder) -> Vec<TrainingExample> {
    pairs
        .iter()
        .map(|p| TrainingExample {
            query: Query::encode(&p.patient_text, encoder),
            feasible: p.feasible,
            response: p.doctor_response_id.clone(),
        })
        .collect()
}

pub(crate) fn patient_encoder(train: &[MessagePair], table: &Arc<EmbeddingTable>) -> Result<TextEncoder, PipelineError> {
    let docs: Vec<Vec<String>> = train.iter().map(|p| tokenize(&p.patient_text)).collect();
    Ok(TextEncoder::new(Arc::clone(table), fit_tfidf(&docs)?))
}

pub(crate) fn doctor_encoder(train: &[MessagePair], table: &Arc<EmbeddingTable>) -> Result<TextEncoder, PipelineError> {
    let docs: Vec<Vec<String>> = train
        .iter()
        .filter_map(|p| p.raw_doctor_text.as_deref())
        .map(tokenize)
        .collect();
    if docs.is_empty() {
        return patient_encoder(train, table);
    }
    Ok(TextEncoder::new(Arc::clone(table), fit_tfidf(&docs)?))
}

pub fn load_rules(path: Option<&Path>) -> Result<Vec<DiversityRule>, PipelineError> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => read_json(p),
    }
}

/// Trains serving artifacts on a whole labeled dataset. Early stopping uses
/// the validation part of the first cross-validation fold.
pub fn train_artifacts(
    ds: &Dataset,
    table: Arc<EmbeddingTable>,
    abbrev: &AbbrevDict,
    rules: Vec<DiversityRule>,
    cfg: &PipelineConfig,
) -> Result<Artifacts, PipelineError> {
    cfg.validate()?;
    let folds = stratified_kfold(ds, cfg.folds, cfg.validation_fraction, cfg.seed)?;
    let val_idx = &folds[0].validation;
    let mut train_idx: Vec<usize> = folds[0].train.iter().chain(&folds[0].test).copied().collect();
    train_idx.sort_unstable();

    let raw_train = ds.subset(&train_idx).into_pairs();
    let cleaner = fit_cleaner(&raw_train, abbrev, cfg)?;
    let clean = |pairs: Vec<MessagePair>| -> Vec<MessagePair> {
        pairs.iter().filter_map(|p| cleaner.clean_pair(p)).collect()
    };
    let train = clean(raw_train);
    let validation = clean(ds.subset(val_idx).into_pairs());
    let all: Vec<MessagePair> = train.iter().chain(&validation).cloned().collect();
    if train.is_empty() {
        return Err(PipelineError::Model(ModelError::EmptyDataset));
    }

    let canned = build_from_labeled(&all, &doctor_encoder(&all, &table)?, cfg.density_threshold)?.with_rules(rules)?;
    let label_space: Vec<String> = canned.responses.iter().map(|r| r.id.clone()).collect();
    let encoder = patient_encoder(&train, &table)?;
    let train_ex = encode_pairs(&train, &encoder);
    let val_ex = encode_pairs(&validation, &encoder);
    let trigger = fit_trigger(cfg.trigger_kind, &train_ex, &val_ex, &label_space, &cfg.trigger_training)?;
    let response = fit_response(cfg.response_kind, &train_ex, &val_ex, &label_space, &cfg.response_training)?;
    let manifest = Manifest {
        clean: cfg.clean_config(),
        trigger_kind: cfg.trigger_kind,
        response_kind: cfg.response_kind,
        threshold_p: cfg.threshold_p,
        k: cfg.k,
    };
    Artifacts::new(manifest, cleaner, encoder, trigger, response, canned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canned::closing_rules;

    /// Three intents with their own vocabulary, plus unanswerable chatter.
    fn toy() -> (Dataset, Arc<EmbeddingTable>) {
        let mut table = EmbeddingTable::new(4);
        let words: &[(&str, [f64; 4])] = &[
            ("thanks", [1.0, 0.0, 0.0, 0.0]),
            ("thank", [0.9, 0.1, 0.0, 0.0]),
            ("bye", [0.8, 0.0, 0.2, 0.0]),
            ("doctor", [0.3, 0.3, 0.3, 0.3]),
            ("welcome", [1.0, 0.1, 0.0, 0.0]),
            ("fever", [0.0, 1.0, 0.0, 0.0]),
            ("temperature", [0.0, 0.9, 0.1, 0.0]),
            ("hot", [0.1, 0.8, 0.0, 0.0]),
            ("paracetamol", [0.0, 1.0, 0.1, 0.0]),
            ("rash", [0.0, 0.0, 1.0, 0.0]),
            ("itchy", [0.0, 0.1, 0.9, 0.0]),
            ("skin", [0.0, 0.0, 0.8, 0.2]),
            ("cream", [0.0, 0.0, 1.0, 0.1]),
            ("weather", [0.0, 0.0, 0.0, 1.0]),
            ("football", [0.0, 0.1, 0.0, 0.9]),
        ];
        for (w, v) in words {
            table.insert(*w, v).unwrap();
        }
        let mut pairs = Vec::new();
        for i in 0..12 {
            let closing = ["thanks doctor bye", "thank you doctor", "thanks a lot bye"][i % 3];
            pairs.push(MessagePair::labeled(closing, "welcome").with_doctor_text("you are welcome"));
            let fever = ["i have a fever", "high temperature and hot", "fever again doctor"][i % 3];
            pairs.push(MessagePair::labeled(fever, "fever").with_doctor_text("take paracetamol for the fever"));
            let rash = ["itchy rash on skin", "my skin has a rash", "rash is itchy"][i % 3];
            pairs.push(MessagePair::labeled(rash, "rash").with_doctor_text("apply the cream to the rash"));
            let chat = ["what about the weather", "did you watch football", "weather is nice football"][i % 3];
            pairs.push(MessagePair::infeasible(chat).with_doctor_text("i will call you"));
        }
        (Dataset::new(pairs).unwrap(), Arc::new(table))
    }

    fn toy_artifacts() -> Artifacts {
        let (ds, table) = toy();
        let cfg = PipelineConfig {
            folds: 3,
            ..PipelineConfig::default()
        };
        train_artifacts(&ds, table, &AbbrevDict::default(), closing_rules("welcome"), &cfg).unwrap()
    }

    #[test]
    fn closing_message_gets_the_goodbye_variant() {
        let art = toy_artifacts();
        let s = suggest("Thanks doctor, bye!", art.options(), &art).unwrap();
        assert!(s.triggered, "{s:?}");
        assert_eq!(s.items[0].response_id, "welcome");
        assert_eq!(s.items[0].display_text, "You are welcome. Take care. Bye.");
        let ranks: Vec<usize> = s.items.iter().map(|i| i.rank).collect();
        assert_eq!(ranks, vec![1, 2, 3]);
    }

    #[test]
    fn long_messages_do_not_trigger() {
        let art = toy_artifacts();
        let long = vec!["fever"; 250].join(" ");
        let s = suggest(&long, art.options(), &art).unwrap();
        assert!(!s.triggered);
        assert!(s.items.is_empty());
    }

    #[test]
    fn threshold_gate() {
        let art = toy_artifacts();
        let q = art.encode("what about the weather").unwrap();
        let score = art.trigger.predict(&q).unwrap();
        let s = suggest("what about the weather", SuggestOptions { threshold_p: score + 1e-9, k: 3 }, &art).unwrap();
        assert!(!s.triggered && s.items.is_empty());
        let s = suggest("what about the weather", SuggestOptions { threshold_p: score, k: 3 }, &art).unwrap();
        assert!(s.triggered);
    }

    #[test]
    fn items_have_distinct_clusters() {
        let art = toy_artifacts();
        for text in ["i have a fever", "rash", "thanks", "doctor"] {
            let s = suggest(text, SuggestOptions { threshold_p: 0.0, k: 5 }, &art).unwrap();
            let mut clusters: Vec<usize> = s.items.iter().map(|i| i.cluster_id).collect();
            let n = clusters.len();
            clusters.sort_unstable();
            clusters.dedup();
            assert_eq!(clusters.len(), n);
            assert!(n <= 5);
        }
    }

    #[test]
    fn artifacts_round_trip_through_disk() {
        let mut art = toy_artifacts();
        let dir = tempfile::tempdir().unwrap();
        art.save(dir.path(), "fp", &PipelineConfig::default()).unwrap();
        let loaded = Artifacts::load(dir.path()).unwrap();
        for text in ["thanks doctor bye", "itchy skin", "football tonight"] {
            let mut a = suggest(text, art.options(), &art).unwrap();
            let mut b = suggest(text, loaded.options(), &loaded).unwrap();
            a.latency_ms = 0.0;
            b.latency_ms = 0.0;
            assert_eq!(a, b);
        }
        assert_eq!(loaded.fingerprints.len(), 8);
        assert!(matches!(
            Artifacts::load(&dir.path().join("missing")),
            Err(PipelineError::ArtifactsMissing(_))
        ));
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(PipelineConfig { threshold_p: 1.5, ..cfg.clone() }.validate().is_err());
        assert!(PipelineConfig { k: 0, ..cfg.clone() }.validate().is_err());
        let partial: PipelineConfig = toml::from_str("threshold_p = 0.7\ntrigger_kind = \"knn_tfidf\"").unwrap();
        assert_eq!(partial.threshold_p, 0.7);
        assert_eq!(partial.trigger_kind, TriggerKind::KnnTfidf);
        assert!(toml::from_str::<PipelineConfig>("bogus = 1").is_err());
    }
}
