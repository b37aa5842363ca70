//! Ranking and classification metrics, the trigger-threshold decomposition,
//! and report rendering (JSON, aligned text, CSV).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no instances to evaluate")]
    EmptyInput,
    #[error("both classes are required")]
    SingleClass,
    #[error("k must be at least 1")]
    BadK,
    #[error("rank must be at least 1, got {0}")]
    BadRank(usize),
    #[error("threshold {0} is outside [0, 1]")]
    BadThreshold(String),
}

fn same_len(a: usize, b: usize) -> Result<(), EvalError> {
    if a == b {
        Ok(())
    } else {
        Err(EvalError::LengthMismatch(a, b))
    }
}

/// 1-based position of `truth` in `ranking`.
pub fn rank_of<T: PartialEq>(ranking: &[T], truth: &T) -> Option<usize> {
    ranking.iter().position(|r| r == truth).map(|p| p + 1)
}

/// Fraction of instances whose truth is among the first `k` ranked ids.
pub fn precision_at_k<T: PartialEq>(rankings: &[Vec<T>], truths: &[T], k: usize) -> Result<f64, EvalError> {
    same_len(rankings.len(), truths.len())?;
    if k == 0 {
        return Err(EvalError::BadK);
    }
    if rankings.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(r, t)| r.iter().take(k).any(|x| x == *t))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// Precision@k from 1-based ranks (`None` = truth not ranked).
pub fn precision_from_ranks(ranks: &[Option<usize>], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::BadK);
    }
    if ranks.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut total = 0.0;
    for &r in ranks {
        if r == 0 {
            return Err(EvalError::BadRank(r));
        }
        total += 1.0 / r as f64;
    }
    Ok(total / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl ClassMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub n: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub feasible: ClassMetrics,
    pub infeasible: ClassMetrics,
}

/// Predicts feasible iff `score >= threshold`; labels are `true` for feasible.
pub fn binary_report(scores: &[f64], labels: &[bool], threshold: f64) -> Result<BinaryReport, EvalError> {
    same_len(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(BinaryReport {
        n: scores.len(),
        threshold,
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        feasible: ClassMetrics::from_counts(tp, fp, fn_),
        infeasible: ClassMetrics::from_counts(tn, fn_, fp),
    })
}

/// Rank-statistic AUC: the probability that a random positive outscores a
/// random negative, counting ties as one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    same_len(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // twice the Mann-Whitney U statistic, kept integral
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (mut pos, mut neg) = (0u128, 0u128);
        for &idx in &order[i..j] {
            if labels[idx] {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub tn_rate: f64,
    pub correct_top3_rate: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub miss_rate: f64,
}

impl SweepPoint {
    /// End-to-end precision@3: correct silences plus correct suggestions.
    pub fn pipeline_precision_at_3(&self) -> f64 {
        self.tn_rate + self.correct_top3_rate
    }

    pub fn total(&self) -> f64 {
        self.tn_rate + self.correct_top3_rate + self.fp_rate + self.fn_rate + self.miss_rate
    }
}

/// `0.00, 0.05, ..., 1.00`.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

/// Five-way decomposition at one threshold. `hit3[i]` says whether the
/// truth of instance `i` is in its top three.
pub fn sweep_point(scores: &[f64], feasible: &[bool], hit3: &[bool], threshold: f64) -> Result<SweepPoint, EvalError> {
    same_len(scores.len(), feasible.len())?;
    same_len(scores.len(), hit3.len())?;
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut tn, mut fp, mut fn_, mut ok, mut miss) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for i in 0..scores.len() {
        let fires = scores[i] >= threshold;
        match (feasible[i], fires) {
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (true, true) if hit3[i] => ok += 1,
            (true, true) => miss += 1,
        }
    }
    let n = scores.len() as f64;
    Ok(SweepPoint {
        threshold,
        tn_rate: tn as f64 / n,
        correct_top3_rate: ok as f64 / n,
        fp_rate: fp as f64 / n,
        fn_rate: fn_ as f64 / n,
        miss_rate: miss as f64 / n,
    })
}

/// Threshold sensitivity of the full pipeline. `truths[i]` is `None` for
/// infeasible instances.
pub fn threshold_sweep<T: PartialEq>(
    trigger_scores: &[f64],
    feasible: &[bool],
    rankings: &[Vec<T>],
    truths: &[Option<T>],
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>, EvalError> {
    same_len(trigger_scores.len(), rankings.len())?;
    same_len(trigger_scores.len(), truths.len())?;
    for &t in thresholds {
        if !(0.0..=1.0).contains(&t) {
            return Err(EvalError::BadThreshold(t.to_string()));
        }
    }
    let hit3: Vec<bool> = rankings
        .iter()
        .zip(truths)
        .map(|(r, t)| t.as_ref().is_some_and(|t| r.iter().take(3).any(|x| x == t)))
        .collect();
    thresholds
        .iter()
        .map(|&t| sweep_point(trigger_scores, feasible, &hit3, t))
        .collect()
}

/// Mean and sample standard deviation over folds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }

    /// Percentages with two decimals, e.g. `85.42 ± 0.67`.
    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.sd)
    }

    pub fn plain(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationCell {
    pub trigger_kind: String,
    pub response_kind: String,
    pub precision_at_3: MeanSd,
}

/// Pipeline precision@3 for every trigger × responder pair, averaged over
/// folds. Indexing: `trigger_scores[t][fold][i]`, `top3_hits[r][fold][i]`,
/// `feasible[fold][i]`.
pub fn combination_matrix(
    trigger_kinds: &[String],
    trigger_scores: &[Vec<Vec<f64>>],
    response_kinds: &[String],
    top3_hits: &[Vec<Vec<bool>>],
    feasible: &[Vec<bool>],
    threshold: f64,
) -> Result<Vec<Vec<CombinationCell>>, EvalError> {
    same_len(trigger_kinds.len(), trigger_scores.len())?;
    same_len(response_kinds.len(), top3_hits.len())?;
    let mut matrix = Vec::with_capacity(trigger_kinds.len());
    for (tk, ts) in trigger_kinds.iter().zip(trigger_scores) {
        same_len(ts.len(), feasible.len())?;
        let mut row = Vec::with_capacity(response_kinds.len());
        for (rk, hs) in response_kinds.iter().zip(top3_hits) {
            same_len(hs.len(), feasible.len())?;
            let per_fold = (0..feasible.len())
                .map(|f| sweep_point(&ts[f], &feasible[f], &hs[f], threshold).map(|p| p.pipeline_precision_at_3()))
                .collect::<Result<Vec<_>, _>>()?;
            row.push(CombinationCell {
                trigger_kind: tk.clone(),
                response_kind: rk.clone(),
                precision_at_3: MeanSd::from_samples(&per_fold),
            });
        }
        matrix.push(row);
    }
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
}

impl ClassSummary {
    fn from_folds(xs: &[ClassMetrics]) -> Self {
        let col = |f: fn(&ClassMetrics) -> f64| MeanSd::from_samples(&xs.iter().map(f).collect::<Vec<_>>());
        Self {
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            f1: col(|m| m.f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSummary {
    pub kind: String,
    pub accuracy: MeanSd,
    pub feasible: ClassSummary,
    pub infeasible: ClassSummary,
    pub auc_roc: MeanSd,
    pub folds: Vec<TriggerFold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerFold {
    #[serde(flatten)]
    pub report: BinaryReport,
    pub auc_roc: f64,
}

impl TriggerSummary {
    pub fn from_folds(kind: impl Into<String>, folds: Vec<TriggerFold>) -> Self {
        let reports: Vec<BinaryReport> = folds.iter().map(|f| f.report).collect();
        let feas: Vec<ClassMetrics> = reports.iter().map(|r| r.feasible).collect();
        let infeas: Vec<ClassMetrics> = reports.iter().map(|r| r.infeasible).collect();
        Self {
            kind: kind.into(),
            accuracy: MeanSd::from_samples(&reports.iter().map(|r| r.accuracy).collect::<Vec<_>>()),
            feasible: ClassSummary::from_folds(&feas),
            infeasible: ClassSummary::from_folds(&infeas),
            auc_roc: MeanSd::from_samples(&folds.iter().map(|f| f.auc_roc).collect::<Vec<_>>()),
            folds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFold {
    pub n: usize,
    /// Keyed by k as a string so the JSON object is stable.
    pub precision_at: BTreeMap<String, f64>,
    pub mrr: f64,
}

impl ResponseFold {
    /// Metrics from the 1-based rank of each truth in its full ranking.
    pub fn from_ranks(ranks: &[usize]) -> Result<Self, EvalError> {
        let opt: Vec<Option<usize>> = ranks.iter().map(|&r| Some(r)).collect();
        let mut precision_at = BTreeMap::new();
        for k in [1, 3, 5] {
            precision_at.insert(k.to_string(), precision_from_ranks(&opt, k)?);
        }
        Ok(Self {
            n: ranks.len(),
            precision_at,
            mrr: mrr(ranks)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSummary {
    pub kind: String,
    pub precision_at: BTreeMap<String, MeanSd>,
    pub mrr: MeanSd,
    pub folds: Vec<ResponseFold>,
}

impl ResponseSummary {
    pub fn from_folds(kind: impl Into<String>, folds: Vec<ResponseFold>) -> Self {
        let mut precision_at = BTreeMap::new();
        if let Some(first) = folds.first() {
            for k in first.precision_at.keys() {
                let xs: Vec<f64> = folds.iter().map(|f| f.precision_at[k]).collect();
                precision_at.insert(k.clone(), MeanSd::from_samples(&xs));
            }
        }
        Self {
            kind: kind.into(),
            precision_at,
            mrr: MeanSd::from_samples(&folds.iter().map(|f| f.mrr).collect::<Vec<_>>()),
            folds,
        }
    }

    pub fn p_at(&self, k: usize) -> MeanSd {
        self.precision_at.get(&k.to_string()).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub trigger_kind: String,
    pub response_kind: String,
    pub threshold: f64,
    pub precision_at_3: MeanSd,
    /// Over instances that passed the trigger and are feasible.
    pub mrr: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_instances: usize,
    pub n_folds: usize,
    pub seed: u64,
    pub threshold: f64,
    pub canned_responses: MeanSd,
    pub trigger: Vec<TriggerSummary>,
    pub response: Vec<ResponseSummary>,
    pub pipeline: PipelineSummary,
    /// Fold-averaged sweep for the configured pipeline.
    pub sweep: Vec<SweepPoint>,
    pub matrix: Vec<Vec<CombinationCell>>,
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_owned()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(rule.iter().map(String::as_str).collect()));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned tables: trigger metrics, response metrics, pipeline matrix.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "instances: {}  folds: {}  seed: {}  threshold: {:.2}  canned responses: {}\n",
            self.n_instances,
            self.n_folds,
            self.seed,
            self.threshold,
            self.canned_responses.plain()
        );
        out.push_str("Trigger models (%)\n");
        let rows: Vec<Vec<String>> = self
            .trigger
            .iter()
            .map(|t| {
                vec![
                    t.kind.clone(),
                    t.accuracy.percent(),
                    t.feasible.precision.percent(),
                    t.feasible.recall.percent(),
                    t.feasible.f1.percent(),
                    t.infeasible.precision.percent(),
                    t.infeasible.recall.percent(),
                    t.infeasible.f1.percent(),
                    t.auc_roc.percent(),
                ]
            })
            .collect();
        out.push_str(&table(
            &[
                "method",
                "accuracy",
                "precision (feasible)",
                "recall (feasible)",
                "f1 (feasible)",
                "precision (infeasible)",
                "recall (infeasible)",
                "f1 (infeasible)",
                "auc-roc",
            ],
            &rows,
        ));
        out.push_str("\nResponse models\n");
        let rows: Vec<Vec<String>> = self
            .response
            .iter()
            .map(|r| {
                vec![
                    r.kind.clone(),
                    r.p_at(1).percent(),
                    r.p_at(3).percent(),
                    r.p_at(5).percent(),
                    r.mrr.plain(),
                ]
            })
            .collect();
        out.push_str(&table(&["method", "precision@1 (%)", "precision@3 (%)", "precision@5 (%)", "MRR"], &rows));
        let _ = writeln!(
            out,
            "\nPipeline {} + {}: precision@3 {} %, MRR {}",
            self.pipeline.trigger_kind,
            self.pipeline.response_kind,
            self.pipeline.precision_at_3.percent(),
            self.pipeline.mrr.plain()
        );
        out.push_str("\nPipeline precision@3 by trigger (rows) and responder (columns), %\n");
        if let Some(first) = self.matrix.first() {
            let mut header = vec!["trigger"];
            header.extend(first.iter().map(|c| c.response_kind.as_str()));
            let rows: Vec<Vec<String>> = self
                .matrix
                .iter()
                .map(|row| {
                    let mut r = vec![row[0].trigger_kind.clone()];
                    r.extend(row.iter().map(|c| c.precision_at_3.percent()));
                    r
                })
                .collect();
            out.push_str(&table(&header, &rows));
        }
        out
    }

    /// `threshold,tn_rate,correct_top3_rate,fp_rate,fn_rate,miss_rate`.
    pub fn sweep_csv(&self) -> String {
        sweep_csv(&self.sweep)
    }

    /// One row per cell: `trigger,response,p3_mean,p3_sd`.
    pub fn matrix_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trigger", "response", "precision_at_3_mean", "precision_at_3_sd"])
            .expect("in-memory write");
        for c in self.matrix.iter().flatten() {
            w.write_record([
                c.trigger_kind.clone(),
                c.response_kind.clone(),
                format!("{:.6}", c.precision_at_3.mean),
                format!("{:.6}", c.precision_at_3.sd),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "tn_rate", "correct_top3_rate", "fp_rate", "fn_rate", "miss_rate"])
        .expect("in-memory write");
    for p in points {
        w.write_record(
            [p.threshold, p.tn_rate, p.correct_top3_rate, p.fp_rate, p.fn_rate, p.miss_rate].map(|v| format!("{v:.6}")),
        )
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn precision_examples() {
        let rankings = vec![vec![1, 2, 3, 4, 5], vec![9, 2, 3, 4, 5], vec![7, 8, 9, 3, 5]];
        let truths = vec![1, 2, 3];
        assert_abs_diff_eq!(precision_at_k(&rankings, &truths, 1).unwrap(), 1.0 / 3.0);
        assert_abs_diff_eq!(precision_at_k(&rankings, &truths, 3).unwrap(), 2.0 / 3.0);
        assert_abs_diff_eq!(precision_at_k(&rankings, &truths, 5).unwrap(), 1.0);
        let empty: Vec<Vec<i32>> = vec![vec![], vec![1]];
        assert_eq!(precision_at_k(&empty, &[1, 1], 3).unwrap(), 0.5);
        assert_eq!(precision_at_k(&rankings, &truths[..2], 1), Err(EvalError::LengthMismatch(3, 2)));
        assert_eq!(precision_at_k(&rankings, &truths, 0), Err(EvalError::BadK));
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 1.0);
        assert_abs_diff_eq!(mrr(&[1, 2, 4]).unwrap(), 0.583333, epsilon = 1e-6);
        assert_eq!(mrr(&[10]).unwrap(), 0.1);
        assert_eq!(mrr(&[]), Err(EvalError::EmptyInput));
        assert_eq!(mrr(&[0]), Err(EvalError::BadRank(0)));
    }

    #[test]
    fn binary_report_examples() {
        let r = binary_report(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false], 0.5).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.feasible.f1, 1.0);
        assert_eq!(r.infeasible.precision, 1.0);
        let r = binary_report(&[1.0; 4], &[true, false, true, false], 0.5).unwrap();
        assert_eq!(r.feasible.recall, 1.0);
        assert_eq!(r.feasible.precision, 0.5);
        assert_eq!(r.infeasible.precision, 0.0);
        let r = binary_report(&[0.0, 0.3], &[true, false], 0.0).unwrap();
        assert_eq!(r.feasible.recall, 1.0);
        assert_eq!(r.infeasible.recall, 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.9, 0.4, 0.5, 0.1], &[true, true, false, false]).unwrap(), 0.75);
        assert_eq!(auc_roc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.3; 6], &[true, false, true, false, true, true]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.3, 0.2], &[true, true]), Err(EvalError::SingleClass));
    }

    #[test]
    fn sweep_hand_table() {
        // (score, feasible, hit3) → class at t = 0.5
        let scores = [0.2, 0.7, 0.4, 0.9, 0.6];
        let feasible = [false, false, true, true, true];
        let rankings = vec![vec!["a"], vec!["a"], vec!["b"], vec!["x", "y", "c"], vec!["x", "y", "z", "d"]];
        let truths = vec![None, None, Some("b"), Some("c"), Some("d")];
        let pts = threshold_sweep(&scores, &feasible, &rankings, &truths, &[0.0, 0.5, 1.0]).unwrap();
        let mid = pts[1];
        assert_eq!(
            (mid.tn_rate, mid.fp_rate, mid.fn_rate, mid.correct_top3_rate, mid.miss_rate),
            (0.2, 0.2, 0.2, 0.2, 0.2)
        );
        assert_eq!((pts[0].tn_rate, pts[0].fn_rate), (0.0, 0.0));
        assert_eq!((pts[2].fp_rate, pts[2].correct_top3_rate, pts[2].miss_rate), (0.0, 0.0, 0.0));
        assert!(threshold_sweep(&scores, &feasible, &rankings, &truths, &[1.5]).is_err());
    }

    #[test]
    fn matrix_shape_and_perfect_cell() {
        let feasible = vec![vec![true, false, true]];
        let perfect = vec![vec![1.0, 0.0, 1.0]];
        let hits = vec![vec![true, false, true]];
        let m = combination_matrix(
            &["t1".into(), "t2".into()],
            &[perfect.clone(), vec![vec![1.0; 3]]],
            &["r1".into(), "r2".into(), "r3".into()],
            &[hits.clone(), hits.clone(), vec![vec![false; 3]]],
            &feasible,
            0.5,
        )
        .unwrap();
        assert_eq!((m.len(), m[0].len()), (2, 3));
        assert_eq!(m[0][0].precision_at_3.mean, 1.0);
        assert_abs_diff_eq!(m[1][0].precision_at_3.mean, 2.0 / 3.0);
    }

    #[test]
    fn mean_sd() {
        let m = MeanSd::from_samples(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.sd, 1.0);
        assert_eq!(MeanSd::from_samples(&[0.5]).sd, 0.0);
        assert_eq!(MeanSd { mean: 0.8542, sd: 0.0067 }.percent(), "85.42 ± 0.67");
    }

    #[test]
    fn csv_layout() {
        let p = SweepPoint {
            threshold: 0.5,
            tn_rate: 0.1,
            correct_top3_rate: 0.6,
            fp_rate: 0.1,
            fn_rate: 0.1,
            miss_rate: 0.1,
        };
        let csv = sweep_csv(&[p]);
        assert_eq!(
            csv,
            "threshold,tn_rate,correct_top3_rate,fp_rate,fn_rate,miss_rate\n\
             0.500000,0.100000,0.600000,0.100000,0.100000,0.100000\n"
        );
    }

    proptest! {
        #[test]
        fn auc_matches_pairs(raw in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| f64::from(*s) / 5.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, y)| *y).collect();
            match auc_roc(&scores, &labels) {
                Ok(a) => prop_assert!((a - brute_auc(&scores, &labels)).abs() <= 1e-12),
                Err(e) => prop_assert_eq!(e, EvalError::SingleClass),
            }
        }

        #[test]
        fn auc_invariant_under_monotone_transform(raw in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..40)) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc_roc(&scores, &labels).ok(), auc_roc(&warped, &labels).ok());
        }

        #[test]
        fn precision_monotone_in_k(ranks in prop::collection::vec(1usize..12, 1..50)) {
            let opt: Vec<Option<usize>> = ranks.iter().map(|&r| Some(r)).collect();
            let mut prev = 0.0;
            for k in 1..12 {
                let p = precision_from_ranks(&opt, k).unwrap();
                prop_assert!(p >= prev);
                prev = p;
            }
            let m = mrr(&ranks).unwrap();
            prop_assert!(m > 0.0 && m <= 1.0);
            prop_assert_eq!(m == 1.0, ranks.iter().all(|&r| r == 1));
        }

        #[test]
        fn sweep_partitions(raw in prop::collection::vec((0.0f64..1.0, any::<bool>(), any::<bool>()), 1..60)) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let feasible: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let hits: Vec<bool> = raw.iter().map(|r| r.2).collect();
            let mut prev: Option<SweepPoint> = None;
            for t in default_threshold_grid() {
                let p = sweep_point(&scores, &feasible, &hits, t).unwrap();
                prop_assert!((p.total() - 1.0).abs() <= 1e-9);
                if let Some(q) = prev {
                    prop_assert!(p.tn_rate >= q.tn_rate && p.fn_rate >= q.fn_rate);
                    prop_assert!(p.fp_rate <= q.fp_rate && p.correct_top3_rate <= q.correct_top3_rate && p.miss_rate <= q.miss_rate);
                }
                prev = Some(p);
            }
        }
    }
}
