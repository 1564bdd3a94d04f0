use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{MarginKind, TripletConfig};
use crate::nn::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Triplet,
    NormalizedSoftmax,
    Cosface,
    ModifiedCosface,
}

impl LossKind {
    pub fn is_angular(self) -> bool {
        !matches!(self, LossKind::Triplet)
    }

    pub fn margin_kind(self) -> Option<MarginKind> {
        match self {
            LossKind::Triplet => None,
            LossKind::NormalizedSoftmax => Some(MarginKind::None),
            LossKind::Cosface => Some(MarginKind::Fixed),
            LossKind::ModifiedCosface => Some(MarginKind::Adaptive),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(Self::Triplet),
            "normalized_softmax" => Ok(Self::NormalizedSoftmax),
            "cosface" => Ok(Self::Cosface),
            "modified_cosface" => Ok(Self::ModifiedCosface),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Fixed,
    /// Multiply by `factor` after `patience` epochs without a better validation DT5AP.
    Plateau { factor: f64, patience: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub exemplars_per_id: usize,
    pub epochs: usize,
    /// Sampler passes over the training flanks per epoch.
    pub epoch_passes: usize,
    pub s: f64,
    pub m: f64,
    pub triplet: TripletConfig,
    pub adam: AdamConfig,
    /// Share of training flanks held out for checkpoint selection.
    pub validation_fraction: f64,
    pub min_validation_flanks: usize,
    pub k_max: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::modified_cosface()
    }
}

impl TrainConfig {
    pub fn modified_cosface() -> Self {
        Self {
            loss: LossKind::ModifiedCosface,
            lr: 0.001,
            schedule: LrSchedule::Plateau {
                factor: 0.5,
                patience: 5,
            },
            batch_size: 64,
            exemplars_per_id: 4,
            epochs: 30,
            epoch_passes: 1,
            s: 64.0,
            m: 0.28,
            triplet: TripletConfig::default(),
            adam: AdamConfig::default(),
            validation_fraction: 0.1,
            min_validation_flanks: 2,
            k_max: 5,
            augment: true,
            seed: 0,
        }
    }

    pub fn cosface() -> Self {
        Self {
            loss: LossKind::Cosface,
            ..Self::modified_cosface()
        }
    }

    pub fn triplet() -> Self {
        Self {
            loss: LossKind::Triplet,
            lr: 0.0008,
            schedule: LrSchedule::Fixed,
            batch_size: 32,
            ..Self::modified_cosface()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.epochs == 0 || self.epoch_passes == 0 {
            return bad("epochs and epoch_passes must be at least 1".into());
        }
        if self.s <= 0.0 || self.m < 0.0 {
            return bad(format!("need s > 0 and m >= 0, got s={} m={}", self.s, self.m));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1".into());
        }
        if let LrSchedule::Plateau { factor, patience } = self.schedule {
            if !(factor > 0.0 && factor <= 1.0) || patience == 0 {
                return bad(format!("plateau factor {factor} / patience {patience} invalid"));
            }
        }
        if self.loss == LossKind::Triplet && self.triplet.margin <= 0.0 {
            return bad(format!("triplet margin {} must be positive", self.triplet.margin));
        }
        self.sampler().validate()
    }

    pub fn sampler(&self) -> crate::sampler::SamplerConfig {
        crate::sampler::SamplerConfig {
            exemplars_per_id: self.exemplars_per_id,
            batch_size: self.batch_size,
            include_singletons: false,
            seed: self.seed,
        }
    }
}
