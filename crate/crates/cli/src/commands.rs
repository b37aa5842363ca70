//! Subcommand implementations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use medreply_core::canned::{build_canned_set, CannedBuildConfig};
use medreply_core::corpus::{
    chats_to_jsonl, load_chats, load_pairs, pair_messages, pairs_to_jsonl, synth_generate, Dataset, SynthSpec,
};
use medreply_core::embed::{fit_tfidf, load_embeddings, EmbeddingTable, TextEncoder};
use medreply_core::io::{atomic_write, fingerprint, write_json};
use medreply_core::pipeline::{
    evaluate_artifacts, fit_cleaner, label_pairs, load_rules, run_experiment, suggest, train_artifacts,
    write_experiment, write_report, ArtifactPaths, Artifacts, PipelineConfig, SuggestOptions,
};
use medreply_core::textprep::{tokenize, AbbrevDict};
use medreply_service::ServiceConfig;

use crate::{Cli, Command, EvalArgs, Global, ARTIFACT_DIR_ENV};

/// Bad flags or flag combinations; reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if let Some(p) = g.threshold {
        if !(0.0..=1.0).contains(&p) {
            return Err(usage(format!("--threshold must lie in [0, 1], got {p}")));
        }
    }
    if g.k == Some(0) {
        return Err(usage("--k must be at least 1"));
    }
    if g.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    if let (Some(n), false) = (g.jobs, matches!(cli.command, Command::Serve { .. })) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Clean { chats, max_lookback } => clean(&g, &chats, max_lookback),
        Command::BuildCanned {
            pairs,
            embeddings,
            k_max,
            min_cluster_size,
        } => build_canned(&g, &pairs, embeddings, k_max, min_cluster_size),
        Command::Train { pairs, embeddings } => train(&g, &pairs, embeddings),
        Command::Evaluate(args) => evaluate(&g, &args, Output::Report),
        Command::Sweep(args) => evaluate(&g, &args, Output::Sweep),
        Command::Matrix { pairs, embeddings } => matrix(&g, &pairs, embeddings),
        Command::Synth {
            intents,
            pairs,
            infeasible_fraction,
            typo_rate,
            dim,
        } => synth(&g, intents, pairs, infeasible_fraction, typo_rate, dim),
        Command::Serve {
            artifacts,
            bind,
            request_log,
            selection_log,
            max_body_bytes,
        } => {
            let mut cfg = match &g.config {
                Some(p) => ServiceConfig::load(p)?,
                None => ServiceConfig::default(),
            }
            .with_env();
            if let Some(dir) = artifacts {
                cfg.artifact_dir = dir;
            }
            if let Some(b) = bind {
                cfg.bind = b;
            }
            cfg.request_log = request_log.or(cfg.request_log);
            cfg.selection_log = selection_log.or(cfg.selection_log);
            cfg.max_body_bytes = max_body_bytes.unwrap_or(cfg.max_body_bytes);
            cfg.threshold_p = g.threshold.or(cfg.threshold_p);
            cfg.k = g.k.or(cfg.k);
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            serve(cfg, g.jobs)
        }
        Command::Suggest { text, artifacts, json } => one_shot(&g, &text, artifacts, json),
    }
}

fn pipeline_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.trigger_training.seed = seed;
        cfg.response_training.seed = seed;
    }
    cfg.threshold_p = g.threshold.unwrap_or(cfg.threshold_p);
    cfg.k = g.k.unwrap_or(cfg.k);
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn artifact_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(ARTIFACT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("artifacts"))
}

fn embeddings(cfg: &PipelineConfig, flag: Option<PathBuf>) -> Result<Arc<EmbeddingTable>> {
    let path = flag
        .or_else(|| cfg.paths.embeddings.clone())
        .ok_or_else(|| usage("no embeddings: pass --embeddings or set paths.embeddings in the config"))?;
    let table = load_embeddings(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Arc::new(table))
}

fn abbreviations(cfg: &PipelineConfig) -> Result<AbbrevDict> {
    match &cfg.paths.abbreviations {
        Some(p) => AbbrevDict::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(AbbrevDict::default()),
    }
}

fn dataset(path: &Path) -> Result<Dataset> {
    let pairs = load_pairs(path).with_context(|| format!("reading {}", path.display()))?;
    Dataset::new(pairs).with_context(|| format!("{} is not a labeled pair set", path.display()))
}

fn write(path: &Path, content: &str) -> Result<()> {
    atomic_write(path, content.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn clean(g: &Global, chats: &Path, max_lookback: usize) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let convs = load_chats(chats).with_context(|| format!("reading {}", chats.display()))?;
    let pairs: Vec<_> = convs.iter().flat_map(|c| pair_messages(c, max_lookback)).collect();
    let cleaner = fit_cleaner(&pairs, &abbreviations(&cfg)?, &cfg)?;
    let cleaned: Vec<_> = pairs.iter().filter_map(|p| cleaner.clean_pair(p)).collect();
    let out = out_dir(g);
    write(&out.join("pairs.jsonl"), &pairs_to_jsonl(&cleaned))?;
    write(&out.join("lexicon.tsv"), &cleaner.lexicon().to_tsv())?;
    println!(
        "{} chats, {} pairs, {} kept after cleaning -> {}",
        convs.len(),
        pairs.len(),
        cleaned.len(),
        out.join("pairs.jsonl").display()
    );
    Ok(())
}

fn build_canned(
    g: &Global,
    pairs_path: &Path,
    embeddings_flag: Option<PathBuf>,
    k_max: Option<usize>,
    min_cluster_size: usize,
) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let table = embeddings(&cfg, embeddings_flag)?;
    let pairs = load_pairs(pairs_path).with_context(|| format!("reading {}", pairs_path.display()))?;
    let texts: Vec<String> = pairs.iter().filter_map(|p| p.raw_doctor_text.clone()).collect();
    let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let encoder = TextEncoder::new(table, fit_tfidf(&docs)?);
    let build_cfg = CannedBuildConfig {
        k_max,
        density_threshold: cfg.density_threshold,
        min_cluster_size,
        ..CannedBuildConfig::default()
    };
    let mut build = build_canned_set(&texts, &encoder, &build_cfg)?;
    build.set = build.set.clone().with_rules(load_rules(cfg.paths.rules.as_deref())?)?;
    let labeled = label_pairs(&pairs, &build);

    let out = out_dir(g);
    write(&out.join("canned_set.json"), &build.set.to_json())?;
    write(&out.join("labeled_pairs.jsonl"), &pairs_to_jsonl(&labeled))?;
    println!(
        "k_selected {} (silhouette {:.4}); kept {} of {} clusters",
        build.selection.k,
        build.selection.score,
        build.set.len(),
        build.clusters.len()
    );
    println!("cluster  size  density  kept");
    let kept: std::collections::BTreeSet<usize> = build.set.responses.iter().map(|r| r.cluster_id).collect();
    for c in &build.clusters {
        println!("{:>7}  {:>4}  {:>7.4}  {}", c.id, c.len(), c.density, kept.contains(&c.id));
    }
    Ok(())
}

fn train(g: &Global, pairs_path: &Path, embeddings_flag: Option<PathBuf>) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let table = embeddings(&cfg, embeddings_flag)?;
    let ds = dataset(pairs_path)?;
    let rules = load_rules(cfg.paths.rules.as_deref())?;
    let mut art = train_artifacts(&ds, table, &abbreviations(&cfg)?, rules, &cfg)?;
    let train_fp = fingerprint(&std::fs::read(pairs_path)?);
    let out = g.out.clone().unwrap_or_else(|| artifact_dir(None));
    art.save(&out, &train_fp, &cfg)?;
    println!(
        "trained {} + {} on {} pairs, {} canned responses -> {}",
        art.manifest.trigger_kind,
        art.manifest.response_kind,
        ds.len(),
        art.canned.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Output {
    Report,
    Sweep,
}

fn evaluate(g: &Global, args: &EvalArgs, output: Output) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let out = out_dir(g);
    let (report, folds) = match &args.artifacts {
        Some(dir) => {
            let mut art = Artifacts::load(dir)?;
            if let Some(p) = g.threshold {
                art.manifest.threshold_p = p;
            }
            let pairs = load_pairs(&args.pairs).with_context(|| format!("reading {}", args.pairs.display()))?;
            (evaluate_artifacts(&art, &pairs, cfg.seed)?, None)
        }
        None => {
            let table = embeddings(&cfg, args.embeddings.clone())?;
            let ds = dataset(&args.pairs)?;
            let result = run_experiment(&ds, table, &abbreviations(&cfg)?, &cfg)?;
            (result.report.clone(), Some(result))
        }
    };
    match output {
        Output::Report => {
            match &folds {
                Some(result) => write_experiment(&out, result)?,
                None => write_report(&out, &report)?,
            }
            print!("{}", report.to_text());
        }
        Output::Sweep => {
            let csv = report.sweep_csv();
            write(&out.join("sweep.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn matrix(g: &Global, pairs: &Path, embeddings_flag: Option<PathBuf>) -> Result<()> {
    let cfg = pipeline_config(g)?;
    let table = embeddings(&cfg, embeddings_flag)?;
    let ds = dataset(pairs)?;
    let report = run_experiment(&ds, table, &abbreviations(&cfg)?, &cfg)?.report;
    let csv = report.matrix_csv();
    write(&out_dir(g).join("matrix.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn synth(g: &Global, intents: usize, pairs: usize, infeasible_fraction: f64, typo_rate: f64, dim: usize) -> Result<()> {
    if intents == 0 || pairs < intents || !pairs.is_multiple_of(intents) {
        return Err(usage(format!(
            "--pairs ({pairs}) must be a positive multiple of --intents ({intents})"
        )));
    }
    let spec = SynthSpec {
        n_intents: intents,
        pairs_per_intent: pairs / intents,
        infeasible_fraction,
        typo_rate,
        dim,
        seed: g.seed.unwrap_or(42),
        ..SynthSpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = synth_generate(&spec)?;
    let out = out_dir(g);
    write(&out.join("chats.jsonl"), &chats_to_jsonl(&corpus.chats))?;
    write(&out.join("pairs.jsonl"), &pairs_to_jsonl(corpus.dataset.pairs()))?;
    write(&out.join("embeddings.txt"), &corpus.embeddings.to_word2vec())?;
    write(&out.join("abbreviations.tsv"), &corpus.abbreviations.to_tsv())?;
    write(&out.join("lexicon.tsv"), &corpus.lexicon.to_tsv())?;
    write_json(&out.join("ground_truth.json"), &corpus.truth)?;
    write_json(&out.join("spec.json"), &spec)?;
    // a config next to the corpus so later commands only need --config
    let mut cfg = PipelineConfig {
        seed: spec.seed,
        paths: ArtifactPaths {
            embeddings: Some("embeddings.txt".into()),
            abbreviations: Some("abbreviations.tsv".into()),
            ..ArtifactPaths::default()
        },
        ..PipelineConfig::default()
    };
    cfg.trigger_training.seed = spec.seed;
    cfg.response_training.seed = spec.seed;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    println!(
        "{} pairs ({} infeasible), {} intents, {} chats -> {}",
        corpus.dataset.len(),
        corpus.dataset.n_infeasible(),
        intents,
        corpus.chats.len(),
        out.display()
    );
    Ok(())
}

fn serve(cfg: ServiceConfig, jobs: Option<usize>) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = jobs {
        rt.worker_threads(n);
    }
    rt.enable_all().build()?.block_on(medreply_service::serve(cfg))?;
    Ok(())
}

fn one_shot(g: &Global, text: &str, artifacts: Option<PathBuf>, json: bool) -> Result<()> {
    let art = Artifacts::load(&artifact_dir(artifacts))?;
    let base = art.options();
    let opts = SuggestOptions {
        threshold_p: g.threshold.unwrap_or(base.threshold_p),
        k: g.k.unwrap_or(base.k),
    };
    let s = suggest(text, opts, &art)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else if !s.triggered {
        println!("no suggestion (trigger score {:.4} < {})", s.trigger_score, opts.threshold_p);
    } else {
        println!("trigger score {:.4}", s.trigger_score);
        for item in &s.items {
            println!("{}. [{}] {} ({:.4})", item.rank, item.response_id, item.display_text, item.score);
        }
    }
    Ok(())
}
