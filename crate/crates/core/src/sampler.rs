//! ID-grouped batch construction.
//!
//! Each batch holds `batch_size / N` distinct flanks with `N` exemplars each.
//! Flanks with fewer than `N` images (but at least two) are topped up with
//! duplicates drawn with replacement; singleton flanks, when admitted,
//! contribute their single image and serve only as negatives.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Manifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub exemplars_per_id: usize,
    pub batch_size: usize,
    pub include_singletons: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            exemplars_per_id: 4,
            batch_size: 64,
            include_singletons: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exemplars_per_id < 2 {
            return Err(Error::Config(format!(
                "exemplars_per_id {} must be at least 2",
                self.exemplars_per_id
            )));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.exemplars_per_id) {
            return Err(Error::Config(format!(
                "batch_size {} is not a positive multiple of {}",
                self.batch_size, self.exemplars_per_id
            )));
        }
        Ok(())
    }

    pub fn flanks_per_batch(&self) -> usize {
        self.batch_size / self.exemplars_per_id
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    /// Index into the manifest's records.
    pub record: usize,
    pub image_id: String,
    /// Class index in the manifest.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.image_id.clone()).collect()
    }
}

struct Groups {
    by_class: Vec<Vec<usize>>,
    eligible: Vec<usize>,
}

fn groups(manifest: &Manifest, cfg: &SamplerConfig) -> Result<Groups> {
    cfg.validate()?;
    let by_class = manifest.indices_by_class();
    let eligible: Vec<usize> = (0..by_class.len())
        .filter(|&c| by_class[c].len() >= 2 || (cfg.include_singletons && by_class[c].len() == 1))
        .collect();
    let needed = cfg.flanks_per_batch();
    if eligible.len() < needed {
        return Err(Error::TooFewFlanks {
            needed,
            available: eligible.len(),
        });
    }
    Ok(Groups { by_class, eligible })
}

fn exemplars<R: Rng + ?Sized>(images: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
    match images.len() {
        1 => images.to_vec(),
        len if len >= n => index::sample(rng, len, n).into_iter().map(|i| images[i]).collect(),
        len => {
            let mut out = images.to_vec();
            out.shuffle(rng);
            out.extend((len..n).map(|_| images[rng.random_range(0..len)]));
            out
        }
    }
}

fn assemble<R: Rng + ?Sized>(manifest: &Manifest, g: &Groups, classes: &[usize], n: usize, rng: &mut R) -> Batch {
    let records = manifest.records();
    let items = classes
        .iter()
        .flat_map(|&c| exemplars(&g.by_class[c], n, rng).into_iter().map(move |r| (c, r)))
        .map(|(c, r)| BatchItem {
            record: r,
            image_id: records[r].image_id.clone(),
            label: c,
        })
        .collect();
    Batch { items }
}

/// One batch of randomly chosen flanks.
pub fn next_batch<R: Rng + ?Sized>(manifest: &Manifest, cfg: &SamplerConfig, rng: &mut R) -> Result<Batch> {
    let g = groups(manifest, cfg)?;
    let chosen: Vec<usize> = index::sample(rng, g.eligible.len(), cfg.flanks_per_batch())
        .into_iter()
        .map(|i| g.eligible[i])
        .collect();
    Ok(assemble(manifest, &g, &chosen, cfg.exemplars_per_id, rng))
}

/// A full epoch: `ceil(eligible / flanks_per_batch)` batches covering every
/// eligible flank. The last batch is topped up with flanks drawn from the
/// rest of the epoch.
pub fn epoch_plan<R: Rng + ?Sized>(manifest: &Manifest, cfg: &SamplerConfig, rng: &mut R) -> Result<Vec<Batch>> {
    let g = groups(manifest, cfg)?;
    let k = cfg.flanks_per_batch();
    let mut order = g.eligible.clone();
    order.shuffle(rng);
    let mut plan = Vec::with_capacity(order.len().div_ceil(k));
    for chunk in order.chunks(k) {
        let mut classes = chunk.to_vec();
        if classes.len() < k {
            let mut fill: Vec<usize> = order.iter().copied().filter(|c| !classes.contains(c)).collect();
            fill.shuffle(rng);
            classes.extend(fill.into_iter().take(k - classes.len()));
        }
        plan.push(assemble(manifest, &g, &classes, cfg.exemplars_per_id, rng));
    }
    Ok(plan)
}
