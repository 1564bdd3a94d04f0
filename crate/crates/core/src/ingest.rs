//! Labeled image manifests.
//!
//! A manifest is a JSONL file with one [`ImageRecord`] per line. The class
//! unit is the *flank*: an individual's left and right sides carry independent
//! coat patterns and are labeled as separate classes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Unknown,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Unknown => "unknown",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(Side::Left),
            "right" => Some(Side::Right),
            "unknown" => Some(Side::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }
}

/// One photograph of one flank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub individual_id: String,
    pub side: Side,
    pub uri: String,
    #[serde(default)]
    pub split: Split,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        individual_id: impl Into<String>,
        side: Side,
        uri: impl Into<String>,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            individual_id: individual_id.into(),
            side,
            uri: uri.into(),
            split: Split::Unassigned,
        }
    }

    /// Class label: individual plus side.
    pub fn flank_id(&self) -> String {
        flank_id(&self.individual_id, self.side)
    }
}

pub fn flank_id(individual_id: &str, side: Side) -> String {
    format!("{individual_id}_{side}")
}

// Raw line shape; enum fields are validated by hand to report the offending value.
#[derive(Deserialize)]
struct RawRecord {
    image_id: String,
    individual_id: String,
    side: String,
    uri: String,
    #[serde(default)]
    split: Option<String>,
}

/// Ordered records plus a contiguous flank-id → class index map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<ImageRecord>,
    class_index: BTreeMap<String, usize>,
}

impl Manifest {
    /// Builds a manifest, rejecting duplicate image ids.
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImage(r.image_id.clone()));
            }
        }
        let class_index = build_class_index(&records);
        Ok(Self {
            records,
            class_index,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of classes `C`.
    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn class_index(&self) -> &BTreeMap<String, usize> {
        &self.class_index
    }

    pub fn class_of(&self, flank_id: &str) -> Option<usize> {
        self.class_index.get(flank_id).copied()
    }

    /// Class index of every record, in record order.
    pub fn labels(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| self.class_index[&r.flank_id()])
            .collect()
    }

    pub fn flank_ids(&self) -> Vec<String> {
        self.records.iter().map(ImageRecord::flank_id).collect()
    }

    /// Images per flank id.
    pub fn flank_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.flank_id()).or_insert(0) += 1;
        }
        counts
    }

    /// Record indices grouped by class index.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes()];
        for (i, r) in self.records.iter().enumerate() {
            groups[self.class_index[&r.flank_id()]].push(i);
        }
        groups
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Keeps the records matching `keep`, rebuilding the class index.
    pub fn filter(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Manifest {
        let records: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let class_index = build_class_index(&records);
        Manifest {
            records,
            class_index,
        }
    }

    pub fn with_split(&self, split: Split) -> Manifest {
        self.filter(|r| r.split == split)
    }

    /// Records without a readable file behind their uri, relative to `base`.
    pub fn missing_uris(&self, base: &Path) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| r.split != Split::Unassigned)
            .filter(|r| std::fs::File::open(base.join(&r.uri)).is_err())
            .map(|r| r.image_id.clone())
            .collect()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }
}

fn build_class_index(records: &[ImageRecord]) -> BTreeMap<String, usize> {
    let mut index: BTreeMap<String, usize> = records.iter().map(|r| (r.flank_id(), 0)).collect();
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    index
}

/// Reads a JSONL manifest from disk.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path)?;
    parse_manifest(file, &path.display().to_string())
}

/// Parses JSONL manifest content; `source` names the input in error messages.
pub fn parse_manifest(reader: impl Read, source: &str) -> Result<Manifest> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: source.to_string(),
            line: lineno,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        let side = Side::parse(&raw.side)
            .ok_or_else(|| perr(format!("unknown side value `{}`", raw.side)))?;
        let split = match raw.split.as_deref() {
            None => Split::Unassigned,
            Some(s) => Split::parse(s).ok_or_else(|| perr(format!("unknown split value `{s}`")))?,
        };
        if split != Split::Unassigned && raw.uri.trim().is_empty() {
            return Err(perr(format!("image `{}` has an empty uri", raw.image_id)));
        }
        if !seen.insert(raw.image_id.clone()) {
            return Err(Error::DuplicateImage(raw.image_id));
        }
        records.push(ImageRecord {
            image_id: raw.image_id,
            individual_id: raw.individual_id,
            side,
            uri: raw.uri,
            split,
        });
    }
    Manifest::new(records)
}

/// Assigns whole flanks to train or test.
///
/// `round(test_fraction * flanks)` flanks go to test, chosen by a seeded
/// shuffle of the sorted flank ids.
pub fn split_by_flank(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<Manifest> {
    if manifest.is_empty() {
        return Err(Error::Empty("cannot split an empty manifest".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test_fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut flanks: Vec<&String> = manifest.class_index.keys().collect();
    let total = flanks.len();
    let n_test = (test_fraction * total as f64).round() as usize;
    if n_test == 0 {
        return Err(Error::InvalidInput(format!(
            "test_fraction {test_fraction} selects 0 of {total} flanks"
        )));
    }
    if n_test == total {
        return Err(Error::InvalidInput(format!(
            "test_fraction {test_fraction} selects all {total} flanks, leaving no training flanks"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    flanks.shuffle(&mut rng);
    let test: HashSet<&str> = flanks[..n_test].iter().map(|s| s.as_str()).collect();
    let records = manifest
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.split = if test.contains(r.flank_id().as_str()) {
                Split::Test
            } else {
                Split::Train
            };
            r
        })
        .collect();
    Ok(Manifest {
        records,
        class_index: manifest.class_index.clone(),
    })
}

/// Removes flanks with exactly one image.
pub fn drop_singletons(manifest: &Manifest) -> Manifest {
    let counts = manifest.flank_counts();
    manifest.filter(|r| counts[&r.flank_id()] != 1)
}
