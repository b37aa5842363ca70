//! Cross-validated experiments: per fold, everything derived from data is
//! rebuilt from the training split, every model in the grid is trained, and
//! the test split is scored.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::{doctor_encoder, encode_pairs, fit_cleaner, patient_encoder, Artifacts, PipelineConfig, PipelineError};
use crate::canned::{build_from_labeled, CannedSet};
use crate::corpus::{pairs_to_jsonl, stratified_kfold, Dataset, Fold, MessagePair};
use crate::embed::{EmbeddingTable, TextEncoder, TfIdfStats};
use crate::eval::{
    auc_roc, binary_report, combination_matrix, default_threshold_grid, sweep_point, CombinationCell, EvalReport,
    MeanSd, PipelineSummary, ResponseFold, ResponseSummary, SweepPoint, TriggerFold, TriggerSummary,
};
use crate::io::{atomic_write, fingerprint, write_json};
use crate::models::{
    fit_response, fit_trigger, ExternalScores, ModelArtifact, Query, ResponseKind, ResponseModel, TriggerKind,
    TriggerModel,
};
use crate::textprep::AbbrevDict;

/// One fold with every training-derived resource already built.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: Vec<MessagePair>,
    pub validation: Vec<MessagePair>,
    /// Cleaned test pairs; over-long ones are kept and flagged.
    pub test: Vec<MessagePair>,
    pub test_too_long: Vec<bool>,
    pub canned: CannedSet,
    pub label_space: Vec<String>,
    pub encoder: TextEncoder,
}

/// Cleans the fold and builds its lexicon, TF-IDF statistics and canned set
/// from the training split alone.
pub fn prepare_fold(
    ds: &Dataset,
    fold: &Fold,
    table: &Arc<EmbeddingTable>,
    abbrev: &AbbrevDict,
    cfg: &PipelineConfig,
) -> Result<FoldData, PipelineError> {
    let raw_train = ds.subset(&fold.train).into_pairs();
    let cleaner = fit_cleaner(&raw_train, abbrev, cfg)?;
    let train: Vec<MessagePair> = raw_train.iter().filter_map(|p| cleaner.clean_pair(p)).collect();
    let validation: Vec<MessagePair> = ds
        .subset(&fold.validation)
        .pairs()
        .iter()
        .filter_map(|p| cleaner.clean_pair(p))
        .collect();
    let mut test = Vec::with_capacity(fold.test.len());
    let mut test_too_long = Vec::with_capacity(fold.test.len());
    for &i in &fold.test {
        let p = &ds.pairs()[i];
        let tokens = cleaner.clean_tokens(&p.patient_text);
        test_too_long.push(cleaner.too_long(&tokens));
        test.push(MessagePair {
            patient_text: tokens.join(" "),
            ..p.clone()
        });
    }
    let canned = build_from_labeled(&train, &doctor_encoder(&train, table)?, cfg.density_threshold)?;
    let label_space = canned.responses.iter().map(|r| r.id.clone()).collect();
    let encoder = patient_encoder(&train, table)?;
    Ok(FoldData {
        train,
        validation,
        test,
        test_too_long,
        canned,
        label_space,
        encoder,
    })
}

/// Models and derived resources of one fold, as written under `models/`.
#[derive(Debug, Clone)]
pub struct FoldArtifacts {
    pub canned: CannedSet,
    pub stats: TfIdfStats,
    pub triggers: Vec<ModelArtifact<TriggerModel>>,
    pub responses: Vec<ModelArtifact<ResponseModel>>,
}

struct FoldResult {
    trigger_scores: Vec<Vec<f64>>,
    trigger_folds: Vec<TriggerFold>,
    response_folds: Vec<ResponseFold>,
    hits3: Vec<Vec<bool>>,
    /// Rank of the truth per response kind and test instance (feasible only).
    ranks: Vec<Vec<Option<usize>>>,
    feasible: Vec<bool>,
    canned_size: usize,
    artifacts: FoldArtifacts,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub folds: Vec<FoldArtifacts>,
}

/// 1-based rank of `truth` in the model's full ranking; labels the model
/// does not know rank after every known label.
fn truth_rank(model: &ResponseModel, query: &Query, truth: &str) -> Result<usize, PipelineError> {
    let labels = model.label_space();
    let ranking = model.rank(query)?;
    Ok(ranking
        .iter()
        .position(|(i, _)| labels[*i] == truth)
        .map_or(labels.len() + 1, |p| p + 1))
}

fn run_fold(
    ds: &Dataset,
    fold: &Fold,
    table: &Arc<EmbeddingTable>,
    abbrev: &AbbrevDict,
    external: Option<&ExternalScores>,
    cfg: &PipelineConfig,
) -> Result<FoldResult, PipelineError> {
    let data = prepare_fold(ds, fold, table, abbrev, cfg)?;
    let train_ex = encode_pairs(&data.train, &data.encoder);
    let val_ex = encode_pairs(&data.validation, &data.encoder);
    let test_q: Vec<Query> = data
        .test
        .iter()
        .map(|p| Query::encode(&p.patient_text, &data.encoder))
        .collect();
    let feasible: Vec<bool> = data.test.iter().map(|p| p.feasible).collect();
    let train_fp = fingerprint(pairs_to_jsonl(&data.train).as_bytes());

    let mut triggers = Vec::new();
    for kind in cfg.trigger_kinds() {
        let model = match (kind, external) {
            (TriggerKind::External, Some(ext)) => TriggerModel::External(ext.clone()),
            (TriggerKind::External, None) => continue,
            _ => fit_trigger(kind, &train_ex, &val_ex, &data.label_space, &cfg.trigger_training)?,
        };
        triggers.push(model);
    }
    let mut responses = Vec::new();
    for kind in cfg.response_kinds() {
        let model = match (kind, external) {
            (ResponseKind::External, Some(ext)) => ResponseModel::External(ext.clone()),
            (ResponseKind::External, None) => continue,
            _ => fit_response(kind, &train_ex, &val_ex, &data.label_space, &cfg.response_training)?,
        };
        responses.push(model);
    }

    let mut trigger_scores = Vec::with_capacity(triggers.len());
    let mut trigger_folds = Vec::with_capacity(triggers.len());
    for m in &triggers {
        let scores = test_q
            .iter()
            .zip(&data.test_too_long)
            .map(|(q, &long)| if long { Ok(0.0) } else { m.predict(q) })
            .collect::<Result<Vec<f64>, _>>()?;
        let report = binary_report(&scores, &feasible, cfg.threshold_p)?;
        let auc = auc_roc(&scores, &feasible).unwrap_or(0.5);
        trigger_folds.push(TriggerFold { report, auc_roc: auc });
        trigger_scores.push(scores);
    }

    let mut response_folds = Vec::with_capacity(responses.len());
    let mut hits3 = Vec::with_capacity(responses.len());
    let mut ranks = Vec::with_capacity(responses.len());
    for m in &responses {
        let r = data
            .test
            .iter()
            .zip(&test_q)
            .map(|(p, q)| match (p.feasible, p.doctor_response_id.as_deref()) {
                (true, Some(truth)) => truth_rank(m, q, truth).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<Vec<Option<usize>>, PipelineError>>()?;
        let feasible_ranks: Vec<usize> = r.iter().flatten().copied().collect();
        response_folds.push(ResponseFold::from_ranks(&feasible_ranks)?);
        hits3.push(r.iter().map(|x| matches!(x, Some(k) if *k <= 3)).collect());
        ranks.push(r);
    }

    let config_of = |t: bool| Some(if t { cfg.trigger_training.clone() } else { cfg.response_training.clone() });
    let artifacts = FoldArtifacts {
        canned: data.canned.clone(),
        stats: data.encoder.stats().clone(),
        triggers: triggers
            .into_iter()
            .map(|model| ModelArtifact {
                train_fingerprint: train_fp.clone(),
                config: config_of(true),
                model,
            })
            .collect(),
        responses: responses
            .into_iter()
            .map(|model| ModelArtifact {
                train_fingerprint: train_fp.clone(),
                config: config_of(false),
                model,
            })
            .collect(),
    };
    Ok(FoldResult {
        trigger_scores,
        trigger_folds,
        response_folds,
        hits3,
        ranks,
        feasible,
        canned_size: data.canned.len(),
        artifacts,
    })
}

/// Runs `cfg.folds`-fold cross-validation over the model grid. Folds run in
/// parallel; results do not depend on the thread count.
pub fn run_experiment(
    ds: &Dataset,
    table: Arc<EmbeddingTable>,
    abbrev: &AbbrevDict,
    cfg: &PipelineConfig,
) -> Result<ExperimentOutput, PipelineError> {
    cfg.validate()?;
    let external = match &cfg.paths.external_scores {
        Some(p) => Some(ExternalScores::load(p, None)?),
        None => None,
    };
    let folds = stratified_kfold(ds, cfg.folds, cfg.validation_fraction, cfg.seed)?;
    let results: Vec<FoldResult> = folds
        .par_iter()
        .map(|f| run_fold(ds, f, &table, abbrev, external.as_ref(), cfg))
        .collect::<Result<_, _>>()?;

    let trigger_names: Vec<String> = results[0]
        .artifacts
        .triggers
        .iter()
        .map(|a| a.model.kind().to_string())
        .collect();
    let response_names: Vec<String> = results[0]
        .artifacts
        .responses
        .iter()
        .map(|a| a.model.kind().to_string())
        .collect();

    let trigger = trigger_names
        .iter()
        .enumerate()
        .map(|(t, name)| TriggerSummary::from_folds(name, results.iter().map(|r| r.trigger_folds[t].clone()).collect()))
        .collect();
    let response = response_names
        .iter()
        .enumerate()
        .map(|(m, name)| {
            ResponseSummary::from_folds(name, results.iter().map(|r| r.response_folds[m].clone()).collect())
        })
        .collect();

    let feasible: Vec<Vec<bool>> = results.iter().map(|r| r.feasible.clone()).collect();
    let per_trigger: Vec<Vec<Vec<f64>>> = (0..trigger_names.len())
        .map(|t| results.iter().map(|r| r.trigger_scores[t].clone()).collect())
        .collect();
    let per_response: Vec<Vec<Vec<bool>>> = (0..response_names.len())
        .map(|m| results.iter().map(|r| r.hits3[m].clone()).collect())
        .collect();
    let matrix: Vec<Vec<CombinationCell>> = combination_matrix(
        &trigger_names,
        &per_trigger,
        &response_names,
        &per_response,
        &feasible,
        cfg.threshold_p,
    )?;

    let ti = trigger_names
        .iter()
        .position(|n| n == cfg.trigger_kind.as_str())
        .ok_or_else(|| PipelineError::Config(format!("no scores for trigger {}", cfg.trigger_kind)))?;
    let ri = response_names
        .iter()
        .position(|n| n == cfg.response_kind.as_str())
        .ok_or_else(|| PipelineError::Config(format!("no scores for responder {}", cfg.response_kind)))?;

    let grid = default_threshold_grid();
    let mut per_fold_sweeps = Vec::with_capacity(results.len());
    let mut pipeline_p3 = Vec::with_capacity(results.len());
    let mut pipeline_mrr = Vec::with_capacity(results.len());
    for r in &results {
        let scores = &r.trigger_scores[ti];
        let sweep = grid
            .iter()
            .map(|&t| sweep_point(scores, &r.feasible, &r.hits3[ri], t))
            .collect::<Result<Vec<_>, _>>()?;
        per_fold_sweeps.push(sweep);
        pipeline_p3.push(sweep_point(scores, &r.feasible, &r.hits3[ri], cfg.threshold_p)?.pipeline_precision_at_3());
        let passed: Vec<f64> = r.ranks[ri]
            .iter()
            .zip(scores)
            .filter_map(|(rank, &s)| rank.filter(|_| s >= cfg.threshold_p))
            .map(|k| 1.0 / k as f64)
            .collect();
        if !passed.is_empty() {
            pipeline_mrr.push(passed.iter().sum::<f64>() / passed.len() as f64);
        }
    }
    let sweep: Vec<SweepPoint> = grid
        .iter()
        .enumerate()
        .map(|(g, &threshold)| {
            let mean = |f: fn(&SweepPoint) -> f64| {
                per_fold_sweeps.iter().map(|s| f(&s[g])).sum::<f64>() / per_fold_sweeps.len() as f64
            };
            SweepPoint {
                threshold,
                tn_rate: mean(|p| p.tn_rate),
                correct_top3_rate: mean(|p| p.correct_top3_rate),
                fp_rate: mean(|p| p.fp_rate),
                fn_rate: mean(|p| p.fn_rate),
                miss_rate: mean(|p| p.miss_rate),
            }
        })
        .collect();

    let report = EvalReport {
        n_instances: ds.len(),
        n_folds: folds.len(),
        seed: cfg.seed,
        threshold: cfg.threshold_p,
        canned_responses: MeanSd::from_samples(&results.iter().map(|r| r.canned_size as f64).collect::<Vec<_>>()),
        trigger,
        response,
        pipeline: PipelineSummary {
            trigger_kind: cfg.trigger_kind.to_string(),
            response_kind: cfg.response_kind.to_string(),
            threshold: cfg.threshold_p,
            precision_at_3: MeanSd::from_samples(&pipeline_p3),
            mrr: MeanSd::from_samples(&pipeline_mrr),
        },
        sweep,
        matrix,
    };
    Ok(ExperimentOutput {
        report,
        folds: results.into_iter().map(|r| r.artifacts).collect(),
    })
}

/// Scores trained artifacts on held-out pairs. The report has the
/// cross-validation layout with a single fold, so standard deviations are 0.
pub fn evaluate_artifacts(art: &Artifacts, pairs: &[MessagePair], seed: u64) -> Result<EvalReport, PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::Model(crate::models::ModelError::EmptyDataset));
    }
    let threshold = art.manifest.threshold_p;
    let mut scores = Vec::with_capacity(pairs.len());
    let mut ranks = Vec::with_capacity(pairs.len());
    for p in pairs {
        let tokens = art.cleaner.clean_tokens(&p.patient_text);
        let query = Query::encode(&tokens.join(" "), &art.encoder);
        scores.push(if art.cleaner.too_long(&tokens) {
            0.0
        } else {
            art.trigger.predict(&query)?
        });
        ranks.push(match (p.feasible, p.doctor_response_id.as_deref()) {
            (true, Some(truth)) => Some(truth_rank(&art.response, &query, truth)?),
            _ => None,
        });
    }
    let feasible: Vec<bool> = pairs.iter().map(|p| p.feasible).collect();
    let hits3: Vec<bool> = ranks.iter().map(|r| matches!(r, Some(k) if *k <= 3)).collect();
    let trigger_name = art.trigger.kind().to_string();
    let response_name = art.response.kind().to_string();

    let trigger_fold = TriggerFold {
        report: binary_report(&scores, &feasible, threshold)?,
        auc_roc: auc_roc(&scores, &feasible).unwrap_or(0.5),
    };
    let feasible_ranks: Vec<usize> = ranks.iter().flatten().copied().collect();
    let response_fold = ResponseFold::from_ranks(&feasible_ranks)?;
    let matrix = combination_matrix(
        std::slice::from_ref(&trigger_name),
        &[vec![scores.clone()]],
        std::slice::from_ref(&response_name),
        &[vec![hits3.clone()]],
        std::slice::from_ref(&feasible),
        threshold,
    )?;
    let sweep = default_threshold_grid()
        .into_iter()
        .map(|t| sweep_point(&scores, &feasible, &hits3, t))
        .collect::<Result<Vec<_>, _>>()?;
    let passed: Vec<f64> = ranks
        .iter()
        .zip(&scores)
        .filter_map(|(rank, &s)| rank.filter(|_| s >= threshold))
        .map(|k| 1.0 / k as f64)
        .collect();
    let p3 = sweep_point(&scores, &feasible, &hits3, threshold)?.pipeline_precision_at_3();
    Ok(EvalReport {
        n_instances: pairs.len(),
        n_folds: 1,
        seed,
        threshold,
        canned_responses: MeanSd::from_samples(&[art.canned.len() as f64]),
        trigger: vec![TriggerSummary::from_folds(&trigger_name, vec![trigger_fold])],
        response: vec![ResponseSummary::from_folds(&response_name, vec![response_fold])],
        pipeline: PipelineSummary {
            trigger_kind: trigger_name,
            response_kind: response_name,
            threshold,
            precision_at_3: MeanSd::from_samples(&[p3]),
            mrr: MeanSd::from_samples(&[if passed.is_empty() {
                0.0
            } else {
                passed.iter().sum::<f64>() / passed.len() as f64
            }]),
        },
        sweep,
        matrix,
    })
}

/// Writes `report.json`, `report.txt`, `sweep.csv` and `matrix.csv` under `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join("report.json"), report.to_json().as_bytes())?;
    atomic_write(&dir.join("report.txt"), report.to_text().as_bytes())?;
    atomic_write(&dir.join("sweep.csv"), report.sweep_csv().as_bytes())?;
    atomic_write(&dir.join("matrix.csv"), report.matrix_csv().as_bytes())?;
    Ok(())
}

/// Writes the report files (see [`write_report`]) plus
/// `models/fold_i/*.json` under `dir`.
pub fn write_experiment(dir: &Path, out: &ExperimentOutput) -> Result<(), PipelineError> {
    write_report(dir, &out.report)?;
    for (i, fold) in out.folds.iter().enumerate() {
        let fdir = dir.join("models").join(format!("fold_{i}"));
        std::fs::create_dir_all(&fdir)?;
        atomic_write(&fdir.join("canned_set.json"), fold.canned.to_json().as_bytes())?;
        write_json(&fdir.join("tfidf.json"), &fold.stats)?;
        for t in &fold.triggers {
            write_json(&fdir.join(format!("trigger_{}.json", t.model.kind())), t)?;
        }
        for r in &fold.responses {
            write_json(&fdir.join(format!("response_{}.json", r.model.kind())), r)?;
        }
    }
    Ok(())
}
