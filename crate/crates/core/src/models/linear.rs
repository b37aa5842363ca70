//! Logistic and softmax regression trained by full-batch gradient descent
//! with L2 regularisation and validation early stopping.

use serde::{Deserialize, Serialize};

use super::{ModelError, TrainConfig};
use crate::eval::auc_roc;

/// Per-feature z-scoring fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean logistic loss plus `l2/2 · ‖w‖²`, and its gradient.
pub fn logistic_loss_grad(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = dot(w, x) + b;
        // -y ln σ(z) - (1-y) ln(1-σ(z)) = softplus(z) - y z
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
        gb += r;
    }
    loss = loss / n + 0.5 * l2 * dot(w, w);
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    (loss, gw, gb / n)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy plus `l2/2 · ‖W‖²` for row-major `weights`
/// (`n_classes × dim`), and its gradient.
pub fn softmax_loss_grad(
    weights: &[f64],
    bias: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let c = bias.len();
    let dim = weights.len().checked_div(c).unwrap_or(0);
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; c];
    let mut logits = vec![0.0; c];
    for (x, &y) in xs.iter().zip(ys) {
        for k in 0..c {
            logits[k] = dot(&weights[k * dim..(k + 1) * dim], x) + bias[k];
        }
        let logp = log_softmax(&logits);
        loss -= logp[y];
        for k in 0..c {
            let r = logp[k].exp() - f64::from(u8::from(k == y));
            gb[k] += r;
            for (g, xi) in gw[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                *g += r * xi;
            }
        }
    }
    loss = loss / n + 0.5 * l2 * dot(weights, weights);
    for (g, wi) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * wi;
    }
    gb.iter_mut().for_each(|g| *g /= n);
    (loss, gw, gb)
}

/// Tracks the best checkpoint and the patience counter. Scores compare
/// lexicographically: primary metric, then a tie-breaker.
struct EarlyStop<T> {
    best_score: (f64, f64),
    best: T,
    best_epoch: usize,
    since: usize,
    patience: usize,
}

impl<T: Clone> EarlyStop<T> {
    fn new(score: (f64, f64), initial: T, patience: usize) -> Self {
        Self {
            best_score: score,
            best: initial,
            best_epoch: 0,
            since: 0,
            patience,
        }
    }

    /// Returns false once training should stop.
    fn observe(&mut self, epoch: usize, score: (f64, f64), params: &T) -> bool {
        let (p, s) = score;
        let (bp, bs) = self.best_score;
        let improved = p > bp + 1e-12 || ((p - bp).abs() <= 1e-12 && s > bs + 1e-12);
        if improved {
            self.best_score = score;
            self.best = params.clone();
            self.best_epoch = epoch;
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since == 0 || self.since < self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub include_length: bool,
    /// Epoch of the retained checkpoint (0 = initial zero weights).
    pub best_epoch: usize,
    pub best_validation_auc: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize, include_length: bool) -> Self {
        Self {
            dim,
            weights: vec![0.0; dim],
            bias: 0.0,
            standardizer: Standardizer::identity(dim),
            include_length,
            best_epoch: 0,
            best_validation_auc: 0.5,
        }
    }

    /// Trains on `(x, y)`; the checkpoint with the best validation AUC is kept
    /// (training AUC when the validation split has a single class).
    pub fn fit(
        x: &[Vec<f64>],
        y: &[bool],
        val_x: &[Vec<f64>],
        val_y: &[bool],
        cfg: &TrainConfig,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        if !(y.iter().any(|&v| v) && y.iter().any(|&v| !v)) {
            return Err(ModelError::SingleClass);
        }
        let dim = x[0].len();
        let standardizer = Standardizer::fit(x);
        let xs: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
        let ys: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();
        let use_val = val_y.iter().any(|&v| v) && val_y.iter().any(|&v| !v);
        let (mon_x, mon_y): (Vec<Vec<f64>>, &[bool]) = if use_val {
            (val_x.iter().map(|r| standardizer.apply(r)).collect(), val_y)
        } else {
            (xs.clone(), y)
        };
        let mon_t: Vec<f64> = mon_y.iter().map(|&v| f64::from(u8::from(v))).collect();
        // validation AUC, ties broken by validation log-loss
        let monitor = |w: &[f64], b: f64| -> (f64, f64) {
            let scores: Vec<f64> = mon_x.iter().map(|r| sigmoid(dot(w, r) + b)).collect();
            let (loss, _, _) = logistic_loss_grad(w, b, &mon_x, &mon_t, 0.0);
            (auc_roc(&scores, mon_y).unwrap_or(0.5), -loss)
        };

        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut stop = EarlyStop::new(monitor(&w, b), (w.clone(), b), cfg.early_stop_patience);
        for epoch in 1..=cfg.epochs {
            let (_, gw, gb) = logistic_loss_grad(&w, b, &xs, &ys, cfg.l2);
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= cfg.learning_rate * g;
            }
            b -= cfg.learning_rate * gb;
            if !stop.observe(epoch, monitor(&w, b), &(w.clone(), b)) {
                break;
            }
        }
        let (weights, bias) = stop.best;
        Ok(Self {
            dim,
            weights,
            bias,
            standardizer,
            include_length: cfg.include_length_feature,
            best_epoch: stop.best_epoch,
            best_validation_auc: stop.best_score.0,
        })
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != self.dim {
            return Err(ModelError::DimMismatch {
                expected: self.dim,
                found: features.len(),
            });
        }
        let x = self.standardizer.apply(features);
        Ok(sigmoid(dot(&self.weights, &x) + self.bias))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub dim: usize,
    pub label_space: Vec<String>,
    /// Row-major, `label_space.len() × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub standardizer: Standardizer,
    pub include_length: bool,
    pub best_epoch: usize,
    pub best_validation_log_likelihood: f64,
}

impl SoftmaxModel {
    /// Trains multinomial regression over `label_space`; `y` holds label
    /// indices. The checkpoint with the best validation mean log-likelihood
    /// is kept (training log-likelihood without a validation split).
    pub fn fit(
        x: &[Vec<f64>],
        y: &[usize],
        val_x: &[Vec<f64>],
        val_y: &[usize],
        label_space: Vec<String>,
        cfg: &TrainConfig,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        if x.is_empty() {
            return Err(ModelError::EmptyFeasible);
        }
        let mut distinct = y.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(ModelError::SingleClass);
        }
        let c = label_space.len();
        let dim = x[0].len();
        let standardizer = Standardizer::fit(x);
        let xs: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
        let (mon_x, mon_y): (Vec<Vec<f64>>, &[usize]) = if val_x.is_empty() {
            (xs.clone(), y)
        } else {
            (val_x.iter().map(|r| standardizer.apply(r)).collect(), val_y)
        };
        let monitor = |w: &[f64], b: &[f64]| -> (f64, f64) {
            let (loss, _, _) = softmax_loss_grad(w, b, &mon_x, mon_y, 0.0);
            (-loss, 0.0)
        };

        let mut w = vec![0.0; c * dim];
        let mut b = vec![0.0; c];
        let mut stop = EarlyStop::new(monitor(&w, &b), (w.clone(), b.clone()), cfg.early_stop_patience);
        for epoch in 1..=cfg.epochs {
            let (_, gw, gb) = softmax_loss_grad(&w, &b, &xs, y, cfg.l2);
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= cfg.learning_rate * g;
            }
            for (bi, g) in b.iter_mut().zip(&gb) {
                *bi -= cfg.learning_rate * g;
            }
            if !stop.observe(epoch, monitor(&w, &b), &(w.clone(), b.clone())) {
                break;
            }
        }
        let (weights, bias) = stop.best;
        Ok(Self {
            dim,
            label_space,
            weights,
            bias,
            standardizer,
            include_length: cfg.include_length_feature,
            best_epoch: stop.best_epoch,
            best_validation_log_likelihood: stop.best_score.0,
        })
    }

    pub fn distribution(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        if features.len() != self.dim {
            return Err(ModelError::DimMismatch {
                expected: self.dim,
                found: features.len(),
            });
        }
        let x = self.standardizer.apply(features);
        let logits: Vec<f64> = self
            .weights
            .chunks_exact(self.dim.max(1))
            .zip(&self.bias)
            .map(|(row, b)| dot(row, &x) + b)
            .collect();
        Ok(softmax(&logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.5,
            epochs,
            l2: 0.0,
            early_stop_patience: epochs,
            seed: 0,
            include_length_feature: false,
        }
    }

    /// Perceptron run to convergence: certifies linear separability of the
    /// toy set independently of the logistic trainer.
    fn perceptron_separates(x: &[Vec<f64>], y: &[bool]) -> bool {
        let dim = x[0].len();
        let (mut w, mut b) = (vec![0.0; dim], 0.0);
        for _ in 0..1000 {
            let mut mistakes = 0;
            for (r, &l) in x.iter().zip(y) {
                let s = if l { 1.0 } else { -1.0 };
                if s * (dot(&w, r) + b) <= 0.0 {
                    w.iter_mut().zip(r).for_each(|(wi, xi)| *wi += s * xi);
                    b += s;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    fn separable() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..60 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            if (a + 0.5 * b).abs() < 0.1 {
                continue;
            }
            x.push(vec![a, b, rng.random_range(-0.1..0.1)]);
            y.push(a + 0.5 * b > 0.0);
        }
        (x, y)
    }

    #[test]
    fn separable_set_reaches_full_accuracy() {
        let (x, y) = separable();
        assert!(perceptron_separates(&x, &y));
        let m = LogisticModel::fit(&x, &y, &[], &[], &cfg(200)).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(r, &l)| (m.predict(r).unwrap() >= 0.5) == l)
            .count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn checkpoint_is_never_worse_than_start() {
        let (x, y) = separable();
        let (vx, vy) = (x[..20].to_vec(), y[..20].to_vec());
        let m = LogisticModel::fit(&x[20..], &y[20..], &vx, &vy, &cfg(30)).unwrap();
        assert!(m.best_validation_auc >= 0.5);
    }

    #[test]
    fn single_class_and_dim_errors() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            LogisticModel::fit(&x, &[true, true], &[], &[], &cfg(5)),
            Err(ModelError::SingleClass)
        ));
        let m = LogisticModel::zeros(2, false);
        assert_eq!(m.predict(&[0.3, -4.0]).unwrap(), 0.5);
        assert!(matches!(m.predict(&[1.0]), Err(ModelError::DimMismatch { expected: 2, found: 1 })));
    }

    #[test]
    fn no_improvement_keeps_initial_weights() {
        // validation labels are the opposite of training labels, so every
        // step lowers validation AUC / likelihood
        let (x, y) = separable();
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let m = LogisticModel::fit(&x, &y, &x, &flipped, &cfg(20)).unwrap();
        assert_eq!(m.best_epoch, 0);
        assert!(m.weights.iter().all(|&w| w == 0.0) && m.bias == 0.0);

        let labels: Vec<usize> = y.iter().map(|&v| usize::from(v)).collect();
        let wrong: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        let s = SoftmaxModel::fit(&x, &labels, &x, &wrong, vec!["a".into(), "b".into()], &cfg(20)).unwrap();
        assert_eq!(s.best_epoch, 0);
        assert!(s.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn softmax_distribution_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = 5;
        let dim = 4;
        let m = SoftmaxModel {
            dim,
            label_space: (0..c).map(|i| format!("l{i}")).collect(),
            weights: (0..c * dim).map(|_| rng.random_range(-5.0..5.0)).collect(),
            bias: (0..c).map(|_| rng.random_range(-5.0..5.0)).collect(),
            standardizer: Standardizer::identity(dim),
            include_length: false,
            best_epoch: 0,
            best_validation_log_likelihood: 0.0,
        };
        for _ in 0..100 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
            let p = m.distribution(&x).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let s = Standardizer::fit(&[vec![1.0, 2.0], vec![1.0, 4.0]]);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.apply(&[1.0, 3.0]), vec![0.0, 0.0]);
    }
}
