//! Trigger (binary) and response (multi-class) predictors behind one
//! interface: gradient-trained linear models, nearest-neighbour and
//! frequency baselines, and replayed external scores.

mod external;
mod frequency;
mod knn;
mod linear;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{embed_sentence, EmbeddingTable, SparseVector, TextEncoder, TfIdfStats};
use crate::textprep::tokenize;

pub use external::{ExternalRecord, ExternalScores};
pub use frequency::FrequencyModel;
pub use knn::{KnnIndex, KnnPrediction, Similarity};
pub use linear::{logistic_loss_grad, sigmoid, softmax, softmax_loss_grad, LogisticModel, SoftmaxModel, Standardizer};

/// Messages are capped at this many words, so `words / LENGTH_SCALE` lies in
/// [0, 1] for anything that reaches a model.
pub const LENGTH_SCALE: f64 = 200.0;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("no feasible pairs to train a response model on")]
    EmptyFeasible,
    #[error("nearest-neighbour index is empty")]
    EmptyIndex,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature length {found} does not match model dimension {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("no external score for message {0:?}")]
    UnknownInstance(String),
    #[error("response id {0:?} is not in the label space")]
    UnknownLabel(String),
    #[error("score {0} is out of range")]
    BadScore(f64),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("unknown model kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} cannot be trained here; load it from a score file")]
    NotTrainable { kind: String },
    #[error("malformed score file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub include_length_feature: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 50,
            l2: 1e-4,
            early_stop_patience: 5,
            seed: 42,
            include_length_feature: false,
        }
    }
}

impl TrainConfig {
    /// Trigger models see the message length as an extra feature.
    pub fn trigger_default() -> Self {
        Self {
            include_length_feature: true,
            ..Self::default()
        }
    }

    pub fn response_default() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(ModelError::InvalidConfig(format!("l2 must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }
}

macro_rules! kind_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let norm = s.trim().to_ascii_lowercase().replace('-', "_");
                match norm.as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(ModelError::UnknownKind(s.to_owned())),
                }
            }
        }
    };
}

kind_enum!(TriggerKind {
    LinearLogistic => "linear_logistic",
    KnnTfidf => "knn_tfidf",
    KnnWeighted => "knn_weighted",
    Frequency => "frequency",
    External => "external",
});

kind_enum!(ResponseKind {
    SoftmaxLinear => "softmax_linear",
    KnnTfidf => "knn_tfidf",
    KnnWeighted => "knn_weighted",
    Frequency => "frequency",
    External => "external",
});

/// A cleaned message with every representation the models consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub text: String,
    pub word_count: usize,
    pub embedding: Vec<f64>,
    pub sparse: SparseVector,
}

impl Query {
    pub fn encode(cleaned_text: &str, encoder: &TextEncoder) -> Self {
        let tokens = tokenize(cleaned_text);
        Self {
            text: cleaned_text.to_owned(),
            word_count: tokens.len(),
            embedding: encoder.embed(&tokens).values,
            sparse: encoder.sparse(&tokens),
        }
    }

    pub fn features(&self, include_length: bool) -> Vec<f64> {
        let mut x = self.embedding.clone();
        if include_length {
            x.push(self.word_count as f64 / LENGTH_SCALE);
        }
        x
    }
}

/// Sentence embedding, optionally followed by `words / 200`.
pub fn featurize(cleaned_text: &str, table: &EmbeddingTable, stats: &TfIdfStats, include_length: bool) -> Vec<f64> {
    let tokens = tokenize(cleaned_text);
    let mut x = embed_sentence(&tokens, table, stats).values;
    if include_length {
        x.push(tokens.len() as f64 / LENGTH_SCALE);
    }
    x
}

/// One encoded training pair. `response` is `None` for infeasible pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query: Query,
    pub feasible: bool,
    pub response: Option<String>,
}

pub(crate) fn label_index(label_space: &[String], id: &str) -> Result<usize, ModelError> {
    label_space
        .iter()
        .position(|l| l == id)
        .ok_or_else(|| ModelError::UnknownLabel(id.to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerModel {
    LinearLogistic(LogisticModel),
    KnnTfidf(KnnIndex),
    KnnWeighted(KnnIndex),
    Frequency(FrequencyModel),
    External(ExternalScores),
}

impl TriggerModel {
    pub fn kind(&self) -> TriggerKind {
        match self {
            Self::LinearLogistic(_) => TriggerKind::LinearLogistic,
            Self::KnnTfidf(_) => TriggerKind::KnnTfidf,
            Self::KnnWeighted(_) => TriggerKind::KnnWeighted,
            Self::Frequency(_) => TriggerKind::Frequency,
            Self::External(_) => TriggerKind::External,
        }
    }

    /// Probability that the message deserves a suggestion.
    pub fn predict(&self, query: &Query) -> Result<f64, ModelError> {
        match self {
            Self::LinearLogistic(m) => m.predict(&query.features(m.include_length)),
            Self::KnnTfidf(m) | Self::KnnWeighted(m) => Ok(m.predict(query).trigger_score),
            Self::Frequency(m) => Ok(m.trigger_score(&query.text)),
            Self::External(m) => m.trigger_score(&query.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseModel {
    SoftmaxLinear(SoftmaxModel),
    KnnTfidf(KnnIndex),
    KnnWeighted(KnnIndex),
    Frequency(FrequencyModel),
    External(ExternalScores),
}

/// Indices sorted by score descending; equal scores keep label-space order,
/// which is sorted by id.
fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

impl ResponseModel {
    pub fn kind(&self) -> ResponseKind {
        match self {
            Self::SoftmaxLinear(_) => ResponseKind::SoftmaxLinear,
            Self::KnnTfidf(_) => ResponseKind::KnnTfidf,
            Self::KnnWeighted(_) => ResponseKind::KnnWeighted,
            Self::Frequency(_) => ResponseKind::Frequency,
            Self::External(_) => ResponseKind::External,
        }
    }

    pub fn label_space(&self) -> &[String] {
        match self {
            Self::SoftmaxLinear(m) => &m.label_space,
            Self::KnnTfidf(m) | Self::KnnWeighted(m) => &m.label_space,
            Self::Frequency(m) => &m.label_space,
            Self::External(m) => &m.label_space,
        }
    }

    /// Full ranking over the label space as `(label index, score)`, where
    /// scores form a probability distribution.
    pub fn rank(&self, query: &Query) -> Result<Vec<(usize, f64)>, ModelError> {
        let (order, dist) = match self {
            Self::SoftmaxLinear(m) => {
                let dist = m.distribution(&query.features(m.include_length))?;
                (order_by_score(&dist), dist)
            }
            Self::KnnTfidf(m) | Self::KnnWeighted(m) => {
                let pred = m.predict(query);
                (m.rank_labels(&pred.label_scores), knn::similarity_distribution(&pred.label_scores))
            }
            Self::Frequency(m) => (m.rank_labels(&query.text), m.label_probs.clone()),
            Self::External(m) => {
                let dist = m.distribution(&query.text)?;
                (order_by_score(&dist), dist)
            }
        };
        Ok(order.into_iter().map(|i| (i, dist[i])).collect())
    }

    pub fn distribution(&self, query: &Query) -> Result<Vec<f64>, ModelError> {
        let mut dist = vec![0.0; self.label_space().len()];
        for (i, s) in self.rank(query)? {
            dist[i] = s;
        }
        Ok(dist)
    }

    /// The first `k` entries of the full ranking as `(response id, score)`.
    pub fn predict_topk(&self, query: &Query, k: usize) -> Result<Vec<(String, f64)>, ModelError> {
        let labels = self.label_space();
        Ok(self
            .rank(query)?
            .into_iter()
            .take(k)
            .map(|(i, s)| (labels[i].clone(), s))
            .collect())
    }
}

fn split_xy(examples: &[TrainingExample], include_length: bool) -> (Vec<Vec<f64>>, Vec<bool>) {
    examples
        .iter()
        .map(|e| (e.query.features(include_length), e.feasible))
        .unzip()
}

/// Logistic trigger model with validation early stopping.
pub fn train_trigger(
    train: &[TrainingExample],
    validation: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<LogisticModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let (x, y) = split_xy(train, cfg.include_length_feature);
    let (vx, vy) = split_xy(validation, cfg.include_length_feature);
    LogisticModel::fit(&x, &y, &vx, &vy, cfg)
}

fn feasible_xy(
    examples: &[TrainingExample],
    label_space: &[String],
    include_length: bool,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), ModelError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for e in examples {
        if let (true, Some(r)) = (e.feasible, e.response.as_deref()) {
            x.push(e.query.features(include_length));
            y.push(label_index(label_space, r)?);
        }
    }
    Ok((x, y))
}

/// Softmax response model over `label_space`, trained on feasible pairs only.
pub fn train_response(
    train: &[TrainingExample],
    validation: &[TrainingExample],
    label_space: &[String],
    cfg: &TrainConfig,
) -> Result<SoftmaxModel, ModelError> {
    let (x, y) = feasible_xy(train, label_space, cfg.include_length_feature)?;
    if x.is_empty() {
        return Err(ModelError::EmptyFeasible);
    }
    let (vx, vy) = feasible_xy(validation, label_space, cfg.include_length_feature)?;
    SoftmaxModel::fit(&x, &y, &vx, &vy, label_space.to_vec(), cfg)
}

/// Feasible fraction and empirical label frequencies of the training split.
pub fn frequency_baseline(train: &[TrainingExample], label_space: &[String]) -> Result<FrequencyModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut counts = vec![0usize; label_space.len()];
    let mut labeled = 0usize;
    for e in train {
        if let (true, Some(r)) = (e.feasible, e.response.as_deref()) {
            counts[label_index(label_space, r)?] += 1;
            labeled += 1;
        }
    }
    let label_probs = if labeled == 0 {
        vec![1.0 / label_space.len().max(1) as f64; label_space.len()]
    } else {
        counts.iter().map(|&c| c as f64 / labeled as f64).collect()
    };
    Ok(FrequencyModel {
        positive_rate: train.iter().filter(|e| e.feasible).count() as f64 / train.len() as f64,
        label_space: label_space.to_vec(),
        label_probs,
        sampling_seed: None,
    })
}

/// Trains a trigger model of the given kind. External scores have to be
/// loaded from a file instead.
pub fn fit_trigger(
    kind: TriggerKind,
    train: &[TrainingExample],
    validation: &[TrainingExample],
    label_space: &[String],
    cfg: &TrainConfig,
) -> Result<TriggerModel, ModelError> {
    Ok(match kind {
        TriggerKind::LinearLogistic => TriggerModel::LinearLogistic(train_trigger(train, validation, cfg)?),
        TriggerKind::KnnTfidf => TriggerModel::KnnTfidf(KnnIndex::build(Similarity::Tfidf, train, label_space)?),
        TriggerKind::KnnWeighted => {
            TriggerModel::KnnWeighted(KnnIndex::build(Similarity::Weighted, train, label_space)?)
        }
        TriggerKind::Frequency => TriggerModel::Frequency(frequency_baseline(train, label_space)?),
        TriggerKind::External => {
            return Err(ModelError::NotTrainable {
                kind: kind.to_string(),
            })
        }
    })
}

/// Trains a response model of the given kind over `label_space`.
pub fn fit_response(
    kind: ResponseKind,
    train: &[TrainingExample],
    validation: &[TrainingExample],
    label_space: &[String],
    cfg: &TrainConfig,
) -> Result<ResponseModel, ModelError> {
    let feasible: Vec<TrainingExample> = train.iter().filter(|e| e.feasible).cloned().collect();
    Ok(match kind {
        ResponseKind::SoftmaxLinear => {
            ResponseModel::SoftmaxLinear(train_response(train, validation, label_space, cfg)?)
        }
        ResponseKind::KnnTfidf => {
            ResponseModel::KnnTfidf(KnnIndex::build(Similarity::Tfidf, &feasible, label_space)?)
        }
        ResponseKind::KnnWeighted => {
            ResponseModel::KnnWeighted(KnnIndex::build(Similarity::Weighted, &feasible, label_space)?)
        }
        ResponseKind::Frequency => ResponseModel::Frequency(frequency_baseline(&feasible, label_space)?),
        ResponseKind::External => {
            return Err(ModelError::NotTrainable {
                kind: kind.to_string(),
            })
        }
    })
}

/// A model as written to disk, with the configuration and training-data
/// fingerprint it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact<M> {
    pub train_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    #[serde(flatten)]
    pub model: M,
}
