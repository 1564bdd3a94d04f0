//! TOML run configuration shared by the CLI verbs and the server.
//!
//! ```toml
//! [paths]
//! manifest = "data/manifest.jsonl"
//! images_dir = "data/images"
//! cache_dir = "work/cache"
//! checkpoint = "work/model.ckpt"
//! metrics_log = "work/metrics.jsonl"
//! data_dir = "work/serve"
//!
//! [preprocess]
//! height = 256
//! width = 512
//!
//! [encoder]
//! backbone = "small_cnn"
//! embedding_dim = 1028
//!
//! [train]
//! loss = "modified_cosface"
//! epochs = 30
//!
//! [serve]
//! addr = "127.0.0.1:8080"
//! ```
//!
//! Every section and key is optional; missing keys take library defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reid_core::nn::EncoderConfig;
use reid_core::preprocess::PreprocessConfig;
use reid_core::trainer::TrainConfig;
use reid_core::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics_log: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Server state: gallery, thumbnails, embedding cache, match graph.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub top_k: usize,
    pub reviewer: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            top_k: 5,
            reviewer: "anonymous".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub serve: ServeConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.resolve(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        if self.serve.top_k == 0 {
            return Err(Error::Config("serve.top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.images_dir,
            &mut self.detections,
            &mut self.cache_dir,
            &mut self.checkpoint,
            &mut self.metrics_log,
            &mut self.embeddings,
            &mut self.data_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Returns `value` or a config error naming the missing key.
pub fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("missing `{key}` (flag or [paths] entry)")))
}
