//! The `reid` command line.
//!
//! Every verb reads an optional TOML config (`--config`), applies its flag
//! overrides and prints one JSON object on stdout. Failures print a single
//! JSON error line on stderr; usage and config errors exit with 2, runtime
//! errors with 1.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use reid_core::evaluate::{evaluate, naive_baseline, sphere_demo_export, write_rank_curve, SimilarityMetric};
use reid_core::ingest::{load_manifest, split_by_flank, Manifest, Split};
use reid_core::preprocess::{load_detections, load_rgb, Detection, Planes, Preprocessor};
use reid_core::synth::{generate, SynthConfig};
use reid_core::trainer::{embed_all, train, CacheDir, LossKind, MemoryStore};
use reid_core::{Checkpoint, EmbeddingSet, Error};

use crate::config::{require, RunConfig};
use crate::state::Session;

#[derive(Debug, Parser)]
#[command(name = "reid", version, about = "Individual re-identification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop, edge-detect and cache 4-channel inputs for every manifest record.
    Preprocess(PreprocessArgs),
    /// Train an encoder on the train split and save the best checkpoint.
    Train(TrainArgs),
    /// Embed a manifest shard with a checkpoint.
    Embed(EmbedArgs),
    /// Rank metrics for an embedding file.
    Evaluate(EvaluateArgs),
    /// Run the review server.
    Serve(ServeArgs),
    /// Train a low-dimensional model and export its embeddings as CSV.
    SphereDemo(SphereArgs),
    /// Write a synthetic spotted-coat dataset.
    Synth(SynthArgs),
    /// Assign train/test splits by flank.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub images_dir: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub metrics_log: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output embedding file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict to one split (`train` or `test`).
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// `cosine` or `euclidean`; defaults from whether the embeddings are normalized.
    #[arg(long)]
    pub metric: Option<SimilarityMetric>,
    /// Also write the `k,tkrmd` curve as CSV.
    #[arg(long)]
    pub rank_curve: Option<PathBuf>,
    /// Include the random-embedding chance baseline.
    #[arg(long)]
    pub naive: bool,
    /// Drop per-query diagnostics from the output.
    #[arg(long)]
    pub summary: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
}

#[derive(Debug, Args)]
pub struct SphereArgs {
    #[command(flatten)]
    pub common: Common,
    /// Inputs for `--manifest`; without a manifest a synthetic dataset is used.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.3)]
    pub margin: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Synthetic classes when no manifest is given.
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub individuals: usize,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed verb: exit code plus error kind.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn line(&self) -> String {
        json!({"error": self.kind, "message": self.message}).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Config(_) => (2, "config"),
            Error::Parse { .. } => (1, "parse"),
            Error::Io(_) => (1, "io"),
            Error::MissingInputs(_) => (1, "missing_inputs"),
            Error::NonFiniteLoss { .. } => (1, "non_finite_loss"),
            Error::NoEligibleQueries => (1, "no_eligible_queries"),
            _ => (1, "runtime"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn config_of(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &common.manifest {
        cfg.paths.manifest = Some(m.clone());
    }
    Ok(cfg)
}

fn parse_split(s: &str) -> Result<Split, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown split `{s}`"))
}

fn set<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = Some(v.clone());
    }
}

/// Parses `args` (including the program name), runs the verb and returns the exit code.
pub fn run<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            eprintln!(
                "{}",
                Failure {
                    code: 2,
                    kind: "usage",
                    message: e.kind().to_string(),
                }
                .line()
            );
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code)
        }
    }
}

pub fn execute(command: Command) -> Result<Value, Failure> {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train_cmd(a),
        Command::Embed(a) => embed(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Serve(a) => serve(a),
        Command::SphereDemo(a) => sphere(a),
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
    }
}

fn detections_at(path: Option<&Path>) -> reid_core::Result<HashMap<String, Detection>> {
    match path {
        Some(p) => load_detections(p),
        None => Ok(HashMap::new()),
    }
}

fn preprocess(a: PreprocessArgs) -> Result<Value, Failure> {
    let mut cfg = config_of(&a.common)?;
    set(&mut cfg.paths.images_dir, &a.images_dir);
    set(&mut cfg.paths.detections, &a.detections);
    set(&mut cfg.paths.cache_dir, &a.cache_dir);
    let manifest = load_manifest(require(&cfg.paths.manifest, "paths.manifest")?)?;
    let images = require(&cfg.paths.images_dir, "paths.images_dir")?.to_path_buf();
    let cache = CacheDir::new(require(&cfg.paths.cache_dir, "paths.cache_dir")?.to_path_buf());
    std::fs::create_dir_all(cache.dir()).map_err(Error::from)?;
    let detections = detections_at(cfg.paths.detections.as_deref())?;
    let have_detections = cfg.paths.detections.is_some();
    let pre = Preprocessor::new(cfg.preprocess.clone())?;

    let results: Vec<(String, reid_core::Result<&'static str>)> = manifest
        .records()
        .par_iter()
        .map(|r| {
            let outcome = (|| {
                let bbox = detections.get(&r.image_id).and_then(Detection::best_box);
                if have_detections && bbox.is_none() {
                    return Ok("no_box");
                }
                let img: Planes<f32> = load_rgb(&images.join(&r.uri))?;
                let prepared = pre.prepare(&img, bbox.as_ref())?;
                cache.store(&r.image_id, &prepared.input)?;
                Ok(if prepared.flagged { "flagged" } else { "ok" })
            })();
            (r.image_id.clone(), outcome)
        })
        .collect();
    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
    let mut failed = Vec::new();
    for (id, outcome) in results {
        match outcome {
            Ok(status) => *counts.entry(status).or_default() += 1,
            Err(e) => {
                log::warn!("{id}: {e}");
                failed.push(json!({"image_id": id, "error": e.to_string()}));
            }
        }
    }
    Ok(json!({"cached": counts.get("ok").copied().unwrap_or(0) + counts.get("flagged").copied().unwrap_or(0),
              "flagged_empty_mask": counts.get("flagged").copied().unwrap_or(0),
              "skipped_no_box": counts.get("no_box").copied().unwrap_or(0),
              "failed": failed}))
}

fn train_cmd(a: TrainArgs) -> Result<Value, Failure> {
    let mut cfg = config_of(&a.common)?;
    set(&mut cfg.paths.cache_dir, &a.cache_dir);
    set(&mut cfg.paths.checkpoint, &a.checkpoint);
    set(&mut cfg.paths.metrics_log, &a.metrics_log);
    if let Some(loss) = a.loss {
        cfg.train.loss = loss;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = a.margin {
        cfg.train.m = m;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let manifest = load_manifest(require(&cfg.paths.manifest, "paths.manifest")?)?;
    let store = CacheDir::new(require(&cfg.paths.cache_dir, "paths.cache_dir")?.to_path_buf());
    let out_path = require(&cfg.paths.checkpoint, "paths.checkpoint")?.to_path_buf();
    let outcome = train::<f32>(
        &manifest,
        &store,
        &cfg.preprocess,
        &cfg.encoder,
        &cfg.train,
        cfg.paths.metrics_log.as_deref(),
    )?;
    outcome.checkpoint.save(&out_path)?;
    Ok(json!({
        "checkpoint": out_path,
        "epoch": outcome.checkpoint.epoch,
        "validation": outcome.checkpoint.validation,
        "fingerprint": outcome.checkpoint.fingerprint,
        "epochs_run": outcome.history.len(),
    }))
}

fn embed(a: EmbedArgs) -> Result<Value, Failure> {
    let mut cfg = config_of(&a.common)?;
    set(&mut cfg.paths.cache_dir, &a.cache_dir);
    set(&mut cfg.paths.checkpoint, &a.checkpoint);
    set(&mut cfg.paths.embeddings, &a.out);
    let mut manifest = load_manifest(require(&cfg.paths.manifest, "paths.manifest")?)?;
    if let Some(s) = a.split {
        manifest = manifest.with_split(s);
    }
    let checkpoint = Checkpoint::load(require(&cfg.paths.checkpoint, "paths.checkpoint")?)?;
    let store = CacheDir::new(require(&cfg.paths.cache_dir, "paths.cache_dir")?.to_path_buf());
    let out = require(&cfg.paths.embeddings, "paths.embeddings")?.to_path_buf();
    let set = embed_all(&checkpoint, &manifest, &store)?;
    set.save(&out)?;
    Ok(json!({"embeddings": out, "count": set.len(), "dim": set.dim(), "normalized": set.is_normalized()}))
}

/// Labels of the embedded ids, looked up in the manifest.
fn labels_for(set: &EmbeddingSet, manifest: &Manifest) -> reid_core::Result<Vec<String>> {
    set.ids()
        .iter()
        .map(|id| {
            manifest
                .get(id)
                .map(|r| r.flank_id())
                .ok_or_else(|| Error::UnknownImage(id.clone()))
        })
        .collect()
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<Value, Failure> {
    let mut cfg = config_of(&a.common)?;
    set(&mut cfg.paths.embeddings, &a.embeddings);
    let manifest = load_manifest(require(&cfg.paths.manifest, "paths.manifest")?)?;
    let set = EmbeddingSet::load(require(&cfg.paths.embeddings, "paths.embeddings")?)?;
    let labels = labels_for(&set, &manifest)?;
    let metric = a.metric.unwrap_or(if set.is_normalized() {
        SimilarityMetric::CosineSimilarity
    } else {
        SimilarityMetric::NegativeEuclidean
    });
    let mut report = evaluate(&set, &labels, metric, a.k)?;
    if let Some(p) = &a.rank_curve {
        write_rank_curve(&report, p)?;
    }
    if a.summary {
        report.queries.clear();
    }
    let mut out = serde_json::to_value(&report).map_err(Error::from)?;
    if a.naive {
        let shard = manifest.filter(|r| set.position(&r.image_id).is_some());
        let naive = naive_baseline(&shard, set.dim().max(1), a.k, cfg.train.seed)?;
        out["naive_baseline"] = json!({"dtkap": naive.dtkap, "tkrmd": naive.tkrmd});
    }
    Ok(out)
}

fn serve(a: ServeArgs) -> Result<Value, Failure> {
    let mut cfg = config_of(&a.common)?;
    set(&mut cfg.paths.checkpoint, &a.checkpoint);
    set(&mut cfg.paths.data_dir, &a.data_dir);
    set(&mut cfg.paths.detections, &a.detections);
    if let Some(addr) = &a.addr {
        cfg.serve.addr = addr.clone();
    }
    let checkpoint = Checkpoint::load(require(&cfg.paths.checkpoint, "paths.checkpoint")?)?;
    let pre = Preprocessor::new(checkpoint.preprocess.clone().without_augmentation())?;
    let detections = detections_at(cfg.paths.detections.as_deref())?;
    let data_dir = require(&cfg.paths.data_dir, "paths.data_dir")?.to_path_buf();
    let session = Session::open(checkpoint, pre, detections, &data_dir)?.with_serving(cfg.serve.top_k, &cfg.serve.reviewer);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Error::from)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.serve.addr)
            .await
            .map_err(|e| Error::Config(format!("cannot bind {}: {e}", cfg.serve.addr)))?;
        log::info!("listening on {}", cfg.serve.addr);
        axum::serve(listener, crate::api::router(Arc::new(session)))
            .await
            .map_err(Error::from)?;
        Ok::<_, Failure>(json!({"stopped": true}))
    })
}

fn sphere(a: SphereArgs) -> Result<Value, Failure> {
    let mut cfg = config_of(&a.common)?;
    set(&mut cfg.paths.cache_dir, &a.cache_dir);
    cfg.encoder.embedding_dim = a.dim;
    cfg.train.m = a.margin;
    cfg.train.epochs = a.epochs;
    cfg.train.seed = a.seed;
    cfg.train.validation_fraction = 0.0;
    if !cfg.train.loss.is_angular() {
        cfg.train.loss = LossKind::ModifiedCosface;
    }
    let (manifest, set) = if let Some(path) = &cfg.paths.manifest {
        let manifest = load_manifest(path)?;
        let store = CacheDir::new(require(&cfg.paths.cache_dir, "paths.cache_dir")?.to_path_buf());
        let out = train::<f32>(&manifest, &store, &cfg.preprocess, &cfg.encoder, &cfg.train, None)?;
        let set = embed_all(&out.checkpoint, &manifest.with_split(Split::Train), &store)?;
        (manifest, set)
    } else {
        cfg.preprocess.height = 32;
        cfg.preprocess.width = 64;
        cfg.train.batch_size = 4 * a.classes.min(5);
        cfg.train.epoch_passes = 4;
        let data = generate(&SynthConfig {
            individuals: a.classes,
            height: 32,
            width: 64,
            seed: a.seed,
            ..Default::default()
        })?;
        let manifest = Manifest::new(
            data.manifest
                .records()
                .iter()
                .cloned()
                .map(|mut r| {
                    r.split = Split::Train;
                    r
                })
                .collect(),
        )?;
        let store = MemoryStore::prepare(&manifest, &data.images, &Preprocessor::new(cfg.preprocess.clone())?)?;
        let out = train::<f32>(&manifest, &store, &cfg.preprocess, &cfg.encoder, &cfg.train, None)?;
        let set = embed_all(&out.checkpoint, &manifest, &store)?;
        (manifest, set)
    };
    let labels = labels_for(&set, &manifest)?;
    sphere_demo_export(&set, &labels, &a.out)?;
    Ok(json!({
        "out": a.out,
        "margin": a.margin,
        "points": set.len(),
        "ccdr": reid_core::evaluate::ccdr(&set, &labels).ok(),
    }))
}

fn synth(a: SynthArgs) -> Result<Value, Failure> {
    let data = generate(&SynthConfig {
        individuals: a.individuals,
        views: a.views,
        seed: a.seed,
        ..Default::default()
    })?;
    data.write_to_dir(&a.out)?;
    Ok(json!({"out": a.out, "images": data.manifest.len(), "manifest": a.out.join("manifest.jsonl")}))
}

fn split(a: SplitArgs) -> Result<Value, Failure> {
    let cfg = config_of(&a.common)?;
    let manifest = load_manifest(require(&cfg.paths.manifest, "paths.manifest")?)?;
    let out = split_by_flank(&manifest, a.test_fraction, a.seed)?;
    out.save(&a.out)?;
    Ok(json!({
        "out": a.out,
        "train": out.with_split(Split::Train).len(),
        "test": out.with_split(Split::Test).len(),
    }))
}
