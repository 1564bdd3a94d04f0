use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{LossKind, TrainConfig};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::AngularHead;
use crate::nn::{build_encoder, Encoder, EncoderConfig};
use crate::preprocess::PreprocessConfig;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"RIDCKPT1";

/// Validation-shard metrics of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub dtkap: f64,
    pub tkrmd: f64,
    pub ccdr: Option<f64>,
}

/// Trained encoder (plus head for angular losses) and the configuration
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub encoder: Encoder<T>,
    pub head: Option<AngularHead<T>>,
    pub epoch: usize,
    pub validation: Option<ValidationMetrics>,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub fingerprint: String,
}

/// SHA-256 over the canonical JSON of the three configurations.
pub fn config_fingerprint(encoder: &EncoderConfig, train: &TrainConfig, preprocess: &PreprocessConfig) -> String {
    let json = serde_json::to_vec(&(encoder, train, preprocess)).expect("configs serialize");
    hex::encode(Sha256::digest(&json))
}

#[derive(Serialize, Deserialize)]
struct HeadShape {
    classes: usize,
    dim: usize,
    scale: f64,
    margin: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: u8,
    epoch: usize,
    validation: Option<ValidationMetrics>,
    encoder: EncoderConfig,
    train: TrainConfig,
    preprocess: PreprocessConfig,
    fingerprint: String,
    param_lengths: Vec<usize>,
    head: Option<HeadShape>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn loss(&self) -> LossKind {
        self.train.loss
    }

    /// Embeddings are L2-normalized for the angular loss family.
    pub fn normalizes(&self) -> bool {
        self.train.loss.is_angular()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.encoder.params();
        let header = Header {
            dtype: T::DTYPE_CODE,
            epoch: self.epoch,
            validation: self.validation,
            encoder: self.encoder.config.clone(),
            train: self.train.clone(),
            preprocess: self.preprocess.clone(),
            fingerprint: self.fingerprint.clone(),
            param_lengths: params.iter().map(|p| p.len()).collect(),
            head: self.head.as_ref().map(|h| HeadShape {
                classes: h.classes,
                dim: h.dim,
                scale: h.scale.as_f64(),
                margin: h.margin.as_f64(),
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in params {
            p.iter().for_each(|&v| v.write_le(&mut out));
        }
        if let Some(h) = &self.head {
            h.weights.iter().for_each(|&v| v.write_le(&mut out));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |message: String| Error::Corrupt {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = bytes.get(12..12 + len).ok_or_else(|| corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(e.to_string()))?;
        if header.dtype != T::DTYPE_CODE {
            return Err(corrupt(format!(
                "stored dtype code {} does not match requested {}",
                header.dtype,
                T::DTYPE_CODE
            )));
        }
        let expected = config_fingerprint(&header.encoder, &header.train, &header.preprocess);
        if expected != header.fingerprint {
            return Err(corrupt("config fingerprint does not match stored configuration".into()));
        }

        let mut encoder: Encoder<T> = build_encoder(&header.encoder)?;
        let mut data = &bytes[12 + len..];
        let mut take = |n: usize| -> Result<Vec<T>> {
            let width = n * T::BYTES;
            if data.len() < width {
                return Err(corrupt("truncated parameters".into()));
            }
            let out = data[..width].chunks_exact(T::BYTES).map(T::read_le).collect();
            data = &data[width..];
            Ok(out)
        };
        {
            let mut params = encoder.params_mut();
            if params.len() != header.param_lengths.len() {
                return Err(corrupt("parameter tensor count differs from the encoder".into()));
            }
            for (p, &n) in params.iter_mut().zip(&header.param_lengths) {
                if p.len() != n {
                    return Err(corrupt("parameter tensor size differs from the encoder".into()));
                }
                p.copy_from_slice(&take(n)?);
            }
        }
        let head = match &header.head {
            Some(h) => Some(AngularHead::new(
                take(h.classes * h.dim)?,
                h.classes,
                h.dim,
                T::lit(h.scale),
                T::lit(h.margin),
            )?),
            None => None,
        };
        if !data.is_empty() {
            return Err(corrupt("trailing bytes after parameters".into()));
        }
        Ok(Self {
            encoder,
            head,
            epoch: header.epoch,
            validation: header.validation,
            train: header.train,
            preprocess: header.preprocess,
            fingerprint: header.fingerprint,
        })
    }

    /// Atomic write.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}
