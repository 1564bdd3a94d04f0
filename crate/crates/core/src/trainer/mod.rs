//! Training loop, checkpoints and batch embedding.
//!
//! Each epoch runs `epoch_passes` sampler passes over the training flanks.
//! Every batch is augmented, normalized, embedded, scored by the configured
//! loss and followed by one Adam step over encoder and head parameters.
//! After each epoch a held-out shard of training flanks is evaluated and the
//! checkpoint with the best validation DT5AP is kept.

mod checkpoint;
mod config;
mod store;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{config_fingerprint, Checkpoint, ValidationMetrics};
pub use config::{LossKind, LrSchedule, TrainConfig};
pub use store::{CacheDir, InputStore, MemoryStore};

pub use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, SimilarityMetric};
use crate::ingest::{Manifest, Side, Split};
use crate::losses::{angular_loss, mine_batch_triplets, triplet_batch_loss, AngularHead, BatchLabels, LossGrad, NegativeSource};
use crate::nn::{build_encoder, Adam, Encoder, EncoderConfig};
use crate::preprocess::{normalize, AugmentParams, PreprocessConfig, StackedInput};
use crate::sampler::epoch_plan;
use crate::scalar::Scalar;

/// Outcome of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub loss: f64,
    pub random_negatives: usize,
    pub semi_hard_negatives: usize,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub steps: usize,
    pub dtkap: Option<f64>,
    pub tkrmd: Option<f64>,
    pub ccdr: Option<f64>,
    /// Triplet runs only: "random negatives" or "semi-hard negatives".
    pub mining: Option<String>,
    pub random_negatives: usize,
    pub semi_hard_negatives: usize,
}

/// Encoder, head and optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub encoder: Encoder<T>,
    pub head: Option<AngularHead<T>>,
    pub cfg: TrainConfig,
    pub lr: f64,
    adam: Adam<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh encoder, plus a random head over `classes` for angular losses.
    pub fn new(encoder: &EncoderConfig, cfg: &TrainConfig, classes: usize) -> Result<Self> {
        cfg.validate()?;
        let encoder: Encoder<T> = build_encoder(encoder)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_4ead);
        let head = if cfg.loss.is_angular() {
            if classes == 0 {
                return Err(Error::Empty("no training classes".into()));
            }
            Some(AngularHead::random(
                classes,
                encoder.embedding_dim(),
                T::lit(cfg.s),
                T::lit(cfg.m),
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            head,
            cfg: cfg.clone(),
            lr: cfg.lr,
            adam: Adam::new(cfg.adam),
            rng,
        })
    }

    fn loss_grad(&mut self, embeddings: &[T], labels: &[usize], epoch: usize) -> Result<(LossGrad<T>, StepReport)> {
        let batch = BatchLabels::new(embeddings, self.encoder.embedding_dim(), labels)?;
        let mut report = StepReport::default();
        let grad = match (&self.head, self.cfg.loss.margin_kind()) {
            (Some(head), Some(kind)) => angular_loss(&batch, head, kind)?,
            _ => {
                let triplets = mine_batch_triplets(&batch, &self.cfg.triplet, epoch, &mut self.rng);
                for t in &triplets {
                    match t.source {
                        NegativeSource::Random => report.random_negatives += 1,
                        NegativeSource::SemiHard => report.semi_hard_negatives += 1,
                    }
                }
                triplet_batch_loss(&batch, &triplets, T::lit(self.cfg.triplet.margin))?
            }
        };
        report.loss = grad.loss.as_f64();
        Ok((grad, report))
    }

    /// Loss of a prepared batch without updating anything.
    pub fn batch_loss(&self, inputs: &[StackedInput<T>], labels: &[usize], epoch: usize) -> Result<f64> {
        let embeddings: Vec<T> = self.encoder.embed_batch(inputs)?.concat();
        let mut scratch = self.clone();
        Ok(scratch.loss_grad(&embeddings, labels, epoch)?.1.loss)
    }

    /// One Adam step on a prepared (augmented, normalized) batch.
    pub fn step(&mut self, inputs: &[StackedInput<T>], labels: &[usize], epoch: usize) -> Result<StepReport> {
        let forward: Vec<(Vec<T>, _)> = inputs
            .par_iter()
            .map(|x| self.encoder.forward_train(x))
            .collect::<Result<_>>()?;
        let (rows, tapes): (Vec<Vec<T>>, Vec<_>) = forward.into_iter().unzip();
        let embeddings = rows.concat();
        let (grad, report) = self.loss_grad(&embeddings, labels, epoch)?;
        let non_finite = || Error::NonFiniteLoss {
            epoch,
            lr: self.lr,
            batch_ids: Vec::new(),
        };
        if !report.loss.is_finite() {
            return Err(non_finite());
        }
        let mut grads = self.encoder.backward_batch(&tapes, &grad.embeddings);
        // ReLU maps NaN to 0, so a bad input can leave the loss finite.
        let finite = |g: &[T]| g.iter().all(|v| v.as_f64().is_finite());
        if !grads.iter().all(|g| finite(g)) || !finite(&grad.weights) {
            return Err(non_finite());
        }
        let mut params = self.encoder.params_mut();
        if let Some(head) = &mut self.head {
            params.push(&mut head.weights);
            grads.push(grad.weights);
        }
        self.adam.step(&mut params, &grads, self.lr);
        Ok(report)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub history: Vec<EpochMetrics>,
}

/// Splits training flanks into (train, validation) by a seeded shuffle.
pub fn validation_split(manifest: &Manifest, fraction: f64, min_flanks: usize, seed: u64) -> (Manifest, Option<Manifest>) {
    if fraction <= 0.0 {
        return (manifest.clone(), None);
    }
    let mut flanks: Vec<String> = manifest.class_index().keys().cloned().collect();
    let n_val = ((fraction * flanks.len() as f64).round() as usize).max(min_flanks);
    if n_val >= flanks.len() {
        return (manifest.clone(), None);
    }
    flanks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val: std::collections::HashSet<&String> = flanks[..n_val].iter().collect();
    let train = manifest.filter(|r| !val.contains(&r.flank_id()));
    let valid = manifest.filter(|r| val.contains(&r.flank_id()));
    (train, Some(valid))
}

fn check_trainable(manifest: &Manifest, cfg: &TrainConfig) -> Result<()> {
    if manifest.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let unknown: Vec<&str> = manifest
        .records()
        .iter()
        .filter(|r| r.side == Side::Unknown)
        .map(|r| r.image_id.as_str())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "side=unknown is not trainable: {}",
            unknown.join(",")
        )));
    }
    if cfg.loss.is_angular() {
        let singles: Vec<String> = manifest
            .flank_counts()
            .into_iter()
            .filter(|(_, n)| *n == 1)
            .map(|(f, _)| f)
            .collect();
        if !singles.is_empty() {
            return Err(Error::Config(format!(
                "angular losses need singleton flanks dropped first: {}",
                singles.join(",")
            )));
        }
    }
    Ok(())
}

fn prepare_eval<T: Scalar>(inputs: Vec<StackedInput<T>>, pre: &PreprocessConfig) -> Result<Vec<StackedInput<T>>> {
    inputs.par_iter().map(|x| normalize(x, pre)).collect()
}

fn validate_epoch<T: Scalar>(
    encoder: &Encoder<T>,
    cfg: &TrainConfig,
    ids: &[String],
    labels: &[String],
    inputs: &[StackedInput<T>],
) -> Result<ValidationMetrics> {
    let rows = encoder.embed_batch(inputs)?;
    let set = EmbeddingSet::from_rows(
        encoder.embedding_dim(),
        cfg.loss.is_angular(),
        ids.iter().cloned().zip(rows),
    )?;
    let metric = if cfg.loss.is_angular() {
        SimilarityMetric::CosineSimilarity
    } else {
        SimilarityMetric::NegativeEuclidean
    };
    let report = evaluate(&set, labels, metric, cfg.k_max)?;
    Ok(ValidationMetrics {
        dtkap: report.dtkap,
        tkrmd: report.tkrmd[cfg.k_max - 1],
        ccdr: report.ccdr,
    })
}

/// Trains on the `train` split of `manifest`, writing one JSON line per
/// epoch to `metrics_log` when given.
pub fn train<T: Scalar>(
    manifest: &Manifest,
    store: &dyn InputStore<T>,
    preprocess: &PreprocessConfig,
    encoder_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    metrics_log: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    encoder_cfg.validate()?;
    preprocess.validate()?;
    let train_split = manifest.with_split(Split::Train);
    check_trainable(&train_split, cfg)?;
    let (train_m, val_m) = validation_split(&train_split, cfg.validation_fraction, cfg.min_validation_flanks, cfg.seed);

    let val = match &val_m {
        Some(v) => {
            let ids: Vec<String> = v.records().iter().map(|r| r.image_id.clone()).collect();
            let inputs = prepare_eval(store.load_all(&ids)?, preprocess)?;
            Some((ids, v.flank_ids(), inputs))
        }
        None => None,
    };

    let mut state = TrainState::<T>::new(encoder_cfg, cfg, train_m.num_classes())?;
    let sampler = cfg.sampler();
    let mut sample_rng = sampler.rng();
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let fingerprint = config_fingerprint(encoder_cfg, cfg, preprocess);
    let mut log = match metrics_log {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint<T>> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut steps, mut random, mut semi) = (0.0, 0usize, 0usize, 0usize);
        for _ in 0..cfg.epoch_passes {
            for batch in epoch_plan(&train_m, &sampler, &mut sample_rng)? {
                let ids = batch.image_ids();
                let raw = store.load_all(&ids)?;
                let params: Vec<Option<AugmentParams>> = raw
                    .iter()
                    .map(|_| cfg.augment.then(|| AugmentParams::draw(preprocess, &mut augment_rng)))
                    .collect();
                let inputs: Vec<StackedInput<T>> = raw
                    .par_iter()
                    .zip(&params)
                    .map(|(x, p)| match p {
                        Some(p) => normalize(&p.apply(x), preprocess),
                        None => normalize(x, preprocess),
                    })
                    .collect::<Result<_>>()?;
                let report = state.step(&inputs, &batch.labels(), epoch).map_err(|e| match e {
                    Error::NonFiniteLoss { epoch, lr, .. } => Error::NonFiniteLoss {
                        epoch,
                        lr,
                        batch_ids: ids.clone(),
                    },
                    other => other,
                })?;
                loss_sum += report.loss;
                steps += 1;
                random += report.random_negatives;
                semi += report.semi_hard_negatives;
            }
        }

        let validation = match &val {
            Some((ids, labels, inputs)) => Some(validate_epoch(&state.encoder, cfg, ids, labels, inputs)?),
            None => None,
        };
        let metrics = EpochMetrics {
            epoch,
            loss: loss_sum / steps.max(1) as f64,
            lr: state.lr,
            steps,
            dtkap: validation.map(|v| v.dtkap),
            tkrmd: validation.map(|v| v.tkrmd),
            ccdr: validation.and_then(|v| v.ccdr),
            mining: (cfg.loss == LossKind::Triplet).then(|| {
                if semi > 0 { "semi-hard negatives" } else { "random negatives" }.to_string()
            }),
            random_negatives: random,
            semi_hard_negatives: semi,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} lr {:.2e} val DT{k}AP {:?}",
            metrics.loss,
            metrics.lr,
            metrics.dtkap,
            k = cfg.k_max
        );
        if let Some(w) = &mut log {
            serde_json::to_writer(&mut *w, &metrics)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        history.push(metrics);

        // Ties go to the later epoch; only strict gains reset the plateau counter.
        let (keep, improved) = match (&best, validation) {
            (None, _) | (Some(_), None) => (true, true),
            (Some(b), Some(v)) => match b.validation {
                None => (true, true),
                Some(bv) => (v.dtkap >= bv.dtkap, v.dtkap > bv.dtkap),
            },
        };
        if keep {
            best = Some(Checkpoint {
                encoder: state.encoder.clone(),
                head: state.head.clone(),
                epoch,
                validation,
                train: cfg.clone(),
                preprocess: preprocess.clone(),
                fingerprint: fingerprint.clone(),
            });
        }
        if improved {
            since_best = 0;
        } else {
            since_best += 1;
            if let LrSchedule::Plateau { factor, patience } = cfg.schedule {
                if since_best >= patience {
                    state.lr *= factor;
                    since_best = 0;
                }
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        history,
    })
}

/// Embeds every record of `manifest` with `checkpoint`, in record order.
pub fn embed_all<T: Scalar>(checkpoint: &Checkpoint<T>, manifest: &Manifest, store: &dyn InputStore<T>) -> Result<EmbeddingSet<T>> {
    let ids: Vec<String> = manifest.records().iter().map(|r| r.image_id.clone()).collect();
    let inputs = prepare_eval(store.load_all(&ids)?, &checkpoint.preprocess)?;
    let rows = checkpoint.encoder.embed_batch(&inputs)?;
    EmbeddingSet::from_rows(
        checkpoint.encoder.embedding_dim(),
        checkpoint.normalizes(),
        ids.into_iter().zip(rows),
    )
}
