//! Nearest-neighbour baselines over sparse TF-IDF vectors or TF-IDF-weighted
//! embeddings.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{label_index, ModelError, Query, TrainingExample};
use crate::embed::{dot, norm, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Cosine between sparse TF-IDF vectors.
    Tfidf,
    /// Cosine between TF-IDF-weighted average word vectors.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnIndex {
    pub similarity: Similarity,
    pub label_space: Vec<String>,
    feasible: Vec<bool>,
    labels: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    dense: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    dense_norms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sparse: Vec<SparseVector>,
    /// Position of each label in descending training-frequency order.
    frequency_rank: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnPrediction {
    /// Feasibility label of the single most similar training instance.
    pub trigger_score: f64,
    pub nearest: usize,
    /// Best similarity per label (−1 for labels without training instances).
    pub label_scores: Vec<f64>,
}

impl KnnIndex {
    pub fn build(
        similarity: Similarity,
        train: &[TrainingExample],
        label_space: &[String],
    ) -> Result<Self, ModelError> {
        if train.is_empty() {
            return Err(ModelError::EmptyIndex);
        }
        let labels: Vec<Option<usize>> = train
            .iter()
            .map(|e| e.response.as_deref().map(|r| label_index(label_space, r)).transpose())
            .collect::<Result<_, _>>()?;
        let mut counts = vec![0usize; label_space.len()];
        for l in labels.iter().flatten() {
            counts[*l] += 1;
        }
        let mut order: Vec<usize> = (0..label_space.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut frequency_rank = vec![0; label_space.len()];
        for (pos, &l) in order.iter().enumerate() {
            frequency_rank[l] = pos;
        }

        let (mut dense, mut dense_norms, mut sparse) = (Vec::new(), Vec::new(), Vec::new());
        match similarity {
            Similarity::Weighted => {
                dense = train.iter().map(|e| e.query.embedding.clone()).collect();
                dense_norms = dense.iter().map(|v| norm(v)).collect();
            }
            Similarity::Tfidf => sparse = train.iter().map(|e| e.query.sparse.clone()).collect(),
        }
        Ok(Self {
            similarity,
            label_space: label_space.to_vec(),
            feasible: train.iter().map(|e| e.feasible).collect(),
            labels,
            dense,
            dense_norms,
            sparse,
            frequency_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.feasible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feasible.is_empty()
    }

    fn similarities(&self, query: &Query) -> Vec<f64> {
        match self.similarity {
            Similarity::Tfidf => self.sparse.iter().map(|s| query.sparse.cosine(s)).collect(),
            Similarity::Weighted => {
                let qn = norm(&query.embedding);
                self.dense
                    .iter()
                    .zip(&self.dense_norms)
                    .map(|(v, &vn)| {
                        if qn == 0.0 || vn == 0.0 {
                            0.0
                        } else {
                            (dot(&query.embedding, v) / (qn * vn)).clamp(-1.0, 1.0)
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn predict(&self, query: &Query) -> KnnPrediction {
        let sims = self.similarities(query);
        let mut nearest = 0;
        for (i, &s) in sims.iter().enumerate() {
            if s > sims[nearest] {
                nearest = i;
            }
        }
        let mut label_scores = vec![-1.0; self.label_space.len()];
        for (s, l) in sims.iter().zip(&self.labels) {
            if let Some(l) = l {
                if *s > label_scores[*l] {
                    label_scores[*l] = *s;
                }
            }
        }
        KnnPrediction {
            trigger_score: if self.feasible[nearest] { 1.0 } else { 0.0 },
            nearest,
            label_scores,
        }
    }

    /// Labels by best-instance similarity, ties broken by training frequency.
    pub fn rank_labels(&self, label_scores: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.label_space.len()).collect();
        order.sort_by(|&a, &b| {
            label_scores[b]
                .partial_cmp(&label_scores[a])
                .unwrap_or(Ordering::Equal)
                .then(self.frequency_rank[a].cmp(&self.frequency_rank[b]))
        });
        order
    }
}

/// Turns best-instance similarities into a distribution that preserves their
/// order exactly.
pub(crate) fn similarity_distribution(label_scores: &[f64]) -> Vec<f64> {
    const TEMPERATURE: f64 = 0.05;
    let max = label_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = label_scores.iter().map(|s| ((s - max) / TEMPERATURE).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
