use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::Manifest;
use crate::preprocess::{Planes, Preprocessor, StackedInput};
use crate::scalar::Scalar;

/// Source of preprocessed (un-augmented, un-normalized) inputs.
pub trait InputStore<T>: Sync {
    fn load(&self, image_id: &str) -> Result<Option<StackedInput<T>>>;

    /// Loads every id, failing with the full list of missing ones.
    fn load_all(&self, ids: &[String]) -> Result<Vec<StackedInput<T>>> {
        let mut out = Vec::with_capacity(ids.len());
        let mut missing = Vec::new();
        for id in ids {
            match self.load(id)? {
                Some(x) => out.push(x),
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingInputs(missing));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore<T> {
    inputs: HashMap<String, StackedInput<T>>,
}

impl<T: Scalar> MemoryStore<T> {
    pub fn new() -> Self {
        Self { inputs: HashMap::new() }
    }

    pub fn insert(&mut self, image_id: impl Into<String>, input: StackedInput<T>) {
        self.inputs.insert(image_id.into(), input);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Runs `pre` over `images`, given in manifest record order.
    pub fn prepare(manifest: &Manifest, images: &[Planes<T>], pre: &Preprocessor) -> Result<Self> {
        if images.len() != manifest.len() {
            return Err(Error::Shape(format!("{} images for {} records", images.len(), manifest.len())));
        }
        let mut store = Self::new();
        for (r, img) in manifest.records().iter().zip(images) {
            store.insert(r.image_id.clone(), pre.prepare(img, None)?.input);
        }
        Ok(store)
    }
}

impl<T: Scalar> InputStore<T> for MemoryStore<T> {
    fn load(&self, image_id: &str) -> Result<Option<StackedInput<T>>> {
        Ok(self.inputs.get(image_id).cloned())
    }
}

/// Inputs cached as `<dir>/<image_id>.rid4`.
#[derive(Debug, Clone)]
pub struct CacheDir {
    dir: PathBuf,
}

impl CacheDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, image_id: &str) -> PathBuf {
        self.dir.join(format!("{image_id}.rid4"))
    }

    pub fn store<T: Scalar>(&self, image_id: &str, input: &StackedInput<T>) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        input.save(&self.path_for(image_id))
    }
}

impl<T: Scalar> InputStore<T> for CacheDir {
    fn load(&self, image_id: &str) -> Result<Option<StackedInput<T>>> {
        let path = self.path_for(image_id);
        if !path.exists() {
            return Ok(None);
        }
        StackedInput::load(&path).map(Some)
    }
}
