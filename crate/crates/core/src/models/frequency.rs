//! Content-independent baseline driven by training label frequencies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyModel {
    /// Fraction of training pairs that are feasible.
    pub positive_rate: f64,
    pub label_space: Vec<String>,
    /// Empirical label distribution over feasible training pairs.
    pub label_probs: Vec<f64>,
    /// `Some(seed)` switches to sampling mode: triggers and rankings are
    /// drawn at random per message instead of returning expected values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_seed: Option<u64>,
}

/// FNV-1a over the text, mixed with the seed; gives every message its own
/// reproducible random stream.
fn message_rng(seed: u64, text: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h ^ seed.rotate_left(17))
}

impl FrequencyModel {
    pub fn sampling(mut self, seed: u64) -> Self {
        self.sampling_seed = Some(seed);
        self
    }

    /// The positive rate itself, or a 0/1 draw with that probability.
    pub fn trigger_score(&self, text: &str) -> f64 {
        match self.sampling_seed {
            None => self.positive_rate,
            Some(seed) => {
                let u: f64 = message_rng(seed, text).random();
                if u < self.positive_rate {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Label order: most frequent first (ties by id order), or a draw
    /// without replacement proportional to frequency in sampling mode.
    pub fn rank_labels(&self, text: &str) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.label_space.len()).collect();
        match self.sampling_seed {
            None => order.sort_by(|&a, &b| {
                self.label_probs[b]
                    .partial_cmp(&self.label_probs[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            }),
            Some(seed) => {
                // Gumbel-max keys give sequential sampling without replacement
                let mut rng = message_rng(seed ^ 0x5eed, text);
                let keys: Vec<f64> = self
                    .label_probs
                    .iter()
                    .map(|&p| {
                        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                        if p > 0.0 {
                            p.ln() - (-u.ln()).ln()
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                order.sort_by(|&a, &b| keys[b].partial_cmp(&keys[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
            }
        }
        order
    }
}
