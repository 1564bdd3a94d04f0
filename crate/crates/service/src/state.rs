//! Server session: loaded checkpoint, gallery embeddings, thumbnails and
//! the match graph.
//!
//! Layout of the data directory:
//!
//! * `originals/<id>.png`, `thumbs/<id>.png`: uploaded image and preprocessed crop;
//! * `gallery.jsonl`: one `{image_id, box}` line per upload;
//! * `embeddings/<fingerprint>.emb`: gallery embeddings for one checkpoint;
//! * `matchdb/`: the verdict store.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use reid_core::evaluate::SimilarityMetric;
use reid_core::matchdb::MatchGraph;
use reid_core::preprocess::{load_rgb, normalize, BoundingBox, Detection, Planes, Preprocessor};
use reid_core::scalar::normalized;
use reid_core::{Checkpoint, EmbeddingSet, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: Option<[i64; 4]>,
}

pub struct Session {
    pub checkpoint: Checkpoint,
    pub preprocessor: Preprocessor,
    pub detections: HashMap<String, Detection>,
    pub top_k: usize,
    pub reviewer: String,
    data_dir: PathBuf,
    /// Readers share; uploads take the write lock to insert.
    pub gallery: RwLock<EmbeddingSet>,
    /// Single writer for all verdicts.
    pub graph: RwLock<MatchGraph>,
    upload_lock: Mutex<()>,
}

fn dir(base: &Path, name: &str) -> Result<PathBuf> {
    let d = base.join(name);
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

impl Session {
    /// Opens `data_dir`, re-embedding any gallery image missing from this
    /// checkpoint's embedding cache.
    pub fn open(
        checkpoint: Checkpoint,
        preprocessor: Preprocessor,
        detections: HashMap<String, Detection>,
        data_dir: &Path,
    ) -> Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let graph = MatchGraph::open(&data_dir.join("matchdb"))?;
        let mut session = Self {
            checkpoint,
            preprocessor,
            detections,
            top_k: 5,
            reviewer: "anonymous".into(),
            data_dir: data_dir.to_path_buf(),
            gallery: RwLock::new(EmbeddingSet::new(0, true)),
            graph: RwLock::new(graph),
            upload_lock: Mutex::new(()),
        };
        let cache_path = session.embedding_cache_path();
        let mut cached = if cache_path.exists() {
            EmbeddingSet::load(&cache_path)?
        } else {
            EmbeddingSet::new(session.checkpoint.encoder.embedding_dim(), session.checkpoint.normalizes())
        };
        let mut changed = false;
        for entry in session.entries()? {
            if cached.position(&entry.image_id).is_some() {
                continue;
            }
            let img: Planes<f32> = load_rgb(&session.original_path(&entry.image_id))?;
            let bbox = entry.bbox.map(BoundingBox::from_array);
            let (vector, _, _) = session.embed_image(&img, bbox.as_ref())?;
            cached.push(entry.image_id.clone(), vector)?;
            changed = true;
        }
        if changed {
            dir(&session.data_dir, "embeddings")?;
            cached.save(&cache_path)?;
        }
        session.gallery = RwLock::new(cached);
        Ok(session)
    }

    pub fn with_serving(mut self, top_k: usize, reviewer: &str) -> Self {
        self.top_k = top_k;
        self.reviewer = reviewer.to_string();
        self
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn metric(&self) -> SimilarityMetric {
        if self.checkpoint.normalizes() {
            SimilarityMetric::CosineSimilarity
        } else {
            SimilarityMetric::NegativeEuclidean
        }
    }

    fn embedding_cache_path(&self) -> PathBuf {
        self.data_dir
            .join("embeddings")
            .join(format!("{}.emb", &self.checkpoint.fingerprint[..16]))
    }

    pub fn original_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("originals").join(format!("{id}.png"))
    }

    pub fn thumbnail_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("thumbs").join(format!("{id}.png"))
    }

    fn entries(&self) -> Result<Vec<GalleryEntry>> {
        let path = self.data_dir.join("gallery.jsonl");
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for (n, line) in BufReader::new(std::fs::File::open(&path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Ok(out)
    }

    /// Box for an upload: the supplied one, else the best detection.
    pub fn resolve_box(&self, id: &str, supplied: Option<[i64; 4]>) -> Option<BoundingBox> {
        match supplied {
            Some(b) => Some(BoundingBox::from_array(b)),
            None => self.detections.get(id).and_then(Detection::best_box),
        }
    }

    /// Preprocesses and embeds one image; returns the vector, the crop and the matting flag.
    pub fn embed_image(&self, img: &Planes<f32>, bbox: Option<&BoundingBox>) -> Result<(Vec<f32>, Planes<f32>, bool)> {
        let prepared = self.preprocessor.prepare(img, bbox)?;
        let input = normalize(&prepared.input, &self.checkpoint.preprocess)?;
        let mut v = self.checkpoint.encoder.embed(&input)?;
        if self.checkpoint.normalizes() {
            v = normalized(&v);
        }
        Ok((v, prepared.crop, prepared.flagged))
    }

    /// Adds a new image to the gallery and the match graph.
    pub async fn add_image(&self, id: &str, img: &Planes<f32>, bbox: Option<[i64; 4]>) -> Result<bool> {
        let _guard = self.upload_lock.lock().await;
        if self.gallery.read().await.position(id).is_some() {
            return Err(Error::DuplicateImage(id.to_string()));
        }
        let resolved = bbox.map(BoundingBox::from_array);
        let (vector, crop, flagged) = self.embed_image(img, resolved.as_ref())?;

        dir(&self.data_dir, "originals")?;
        dir(&self.data_dir, "thumbs")?;
        dir(&self.data_dir, "embeddings")?;
        img.to_rgb8().save(self.original_path(id))?;
        crop.to_rgb8().save(self.thumbnail_path(id))?;
        let mut line = serde_json::to_vec(&GalleryEntry {
            image_id: id.to_string(),
            bbox,
        })?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.data_dir.join("gallery.jsonl"))?;
        f.write_all(&line)?;
        f.sync_data()?;

        {
            let mut gallery = self.gallery.write().await;
            gallery.push(id.to_string(), vector)?;
            gallery.save(&self.embedding_cache_path())?;
        }
        self.graph.write().await.add_node(id)?;
        Ok(flagged)
    }

    /// Scores of `id` against every other gallery image.
    pub async fn scores(&self, id: &str) -> Option<Vec<(String, f64)>> {
        let gallery = self.gallery.read().await;
        let q = gallery.get(id)?;
        let metric = self.metric();
        Some(
            gallery
                .iter()
                .filter(|(other, _)| *other != id)
                .map(|(other, v)| {
                    let s = match metric {
                        SimilarityMetric::CosineSimilarity => {
                            q.iter().zip(v).map(|(a, b)| (*a as f64) * (*b as f64)).sum::<f64>()
                        }
                        SimilarityMetric::NegativeEuclidean => -q
                            .iter()
                            .zip(v)
                            .map(|(a, b)| ((*a - *b) as f64).powi(2))
                            .sum::<f64>()
                            .sqrt(),
                    };
                    (other.to_string(), s)
                })
                .collect(),
        )
    }
}
