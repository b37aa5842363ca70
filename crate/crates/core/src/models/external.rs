//! Scores produced outside this crate (for example by a fine-tuned
//! transformer), replayed per message.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// One line of an external-scores file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub patient_text: String,
    pub trigger_score: f64,
    #[serde(default)]
    pub response_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub label_space: Vec<String>,
    rows: BTreeMap<String, (f64, Vec<f64>)>,
}

impl ExternalScores {
    /// Label space is the sorted union of ids across records unless given.
    pub fn from_records(records: Vec<ExternalRecord>, label_space: Option<Vec<String>>) -> Result<Self, ModelError> {
        let label_space = label_space.unwrap_or_else(|| {
            records
                .iter()
                .flat_map(|r| r.response_scores.keys().cloned())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        });
        let pos: HashMap<&str, usize> = label_space.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut rows = BTreeMap::new();
        for r in records {
            if !(0.0..=1.0).contains(&r.trigger_score) {
                return Err(ModelError::BadScore(r.trigger_score));
            }
            let mut scores = vec![0.0; label_space.len()];
            for (id, s) in &r.response_scores {
                let i = *pos.get(id.as_str()).ok_or_else(|| ModelError::UnknownLabel(id.clone()))?;
                if !s.is_finite() {
                    return Err(ModelError::BadScore(*s));
                }
                scores[i] = *s;
            }
            rows.insert(r.patient_text, (r.trigger_score, scores));
        }
        Ok(Self { label_space, rows })
    }

    pub fn read<R: Read>(reader: R, label_space: Option<Vec<String>>) -> Result<Self, ModelError> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExternalRecord =
                serde_json::from_str(&line).map_err(|e| ModelError::Malformed(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Self::from_records(records, label_space)
    }

    pub fn load(path: &Path, label_space: Option<Vec<String>>) -> Result<Self, ModelError> {
        Self::read(std::fs::File::open(path)?, label_space)
    }

    fn row(&self, text: &str) -> Result<&(f64, Vec<f64>), ModelError> {
        self.rows.get(text).ok_or_else(|| ModelError::UnknownInstance(text.to_owned()))
    }

    pub fn trigger_score(&self, text: &str) -> Result<f64, ModelError> {
        Ok(self.row(text)?.0)
    }

    /// Negative scores clamp to zero; an all-zero row becomes uniform.
    pub fn distribution(&self, text: &str) -> Result<Vec<f64>, ModelError> {
        let clamped: Vec<f64> = self.row(text)?.1.iter().map(|s| s.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        let n = clamped.len().max(1) as f64;
        Ok(if total > 0.0 {
            clamped.into_iter().map(|s| s / total).collect()
        } else {
            vec![1.0 / n; clamped.len()]
        })
    }
}
