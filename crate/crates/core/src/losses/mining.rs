//! Batch semi-hard negative mining.
//!
//! Every ordered positive pair `(a, p)` gets one negative. Before the mining
//! start epoch, or when no semi-hard negative exists, the negative is drawn
//! uniformly from all negatives of `a`. Otherwise it is drawn from
//! `{n : d(a,p) < d(a,n) < d(a,p) + window}` with weight `1 / (d(a,n) + eps)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::triplet::euclidean;
use super::BatchLabels;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletConfig {
    /// Euclidean triplet margin.
    pub margin: f64,
    /// Semi-hard window; the margin when unset.
    pub semi_hard_window: Option<f64>,
    /// First 1-based epoch that mines semi-hard negatives.
    pub mining_start_epoch: usize,
    pub weighting_epsilon: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 10.0,
            semi_hard_window: None,
            mining_start_epoch: 4,
            weighting_epsilon: 1e-8,
        }
    }
}

impl TripletConfig {
    pub fn window(&self) -> f64 {
        self.semi_hard_window.unwrap_or(self.margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    Random,
    SemiHard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub source: NegativeSource,
}

/// Selects one negative per ordered positive pair. Returns an empty list
/// when the batch has no positive pair.
pub fn mine_batch_triplets<T: Scalar, R: Rng + ?Sized>(
    batch: &BatchLabels<'_, T>,
    cfg: &TripletConfig,
    epoch: usize,
    rng: &mut R,
) -> Vec<Triplet> {
    let n = batch.len();
    let dist: Vec<f64> = (0..n * n)
        .map(|k| euclidean(batch.row(k / n), batch.row(k % n)).as_f64())
        .collect();
    let mining = epoch >= cfg.mining_start_epoch;
    let window = cfg.window();
    let mut out = Vec::new();
    for a in 0..n {
        let label = batch.label(a);
        let positives: Vec<usize> = (0..n).filter(|&p| p != a && batch.label(p) == label).collect();
        let negatives: Vec<usize> = (0..n).filter(|&q| batch.label(q) != label).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        for &p in &positives {
            let d_ap = dist[a * n + p];
            let semi_hard: Vec<usize> = if mining {
                negatives
                    .iter()
                    .copied()
                    .filter(|&q| {
                        let d_an = dist[a * n + q];
                        d_an > d_ap && d_an < d_ap + window
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let (negative, source) = if semi_hard.is_empty() {
                (negatives[rng.random_range(0..negatives.len())], NegativeSource::Random)
            } else {
                let weights = semi_hard
                    .iter()
                    .map(|&q| 1.0 / (dist[a * n + q] + cfg.weighting_epsilon));
                let pick = WeightedIndex::new(weights).expect("positive finite weights");
                (semi_hard[pick.sample(rng)], NegativeSource::SemiHard)
            };
            out.push(Triplet {
                anchor: a,
                positive: p,
                negative,
                source,
            });
        }
    }
    out
}
