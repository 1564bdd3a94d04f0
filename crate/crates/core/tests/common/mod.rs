#![allow(dead_code)]

pub mod oracle;

use reid_core::ingest::{Manifest, Split};
use reid_core::preprocess::{Planes, PreprocessConfig, Preprocessor};
use reid_core::synth::{generate, SynthConfig};
use reid_core::trainer::MemoryStore;
use reid_core::Scalar;

pub struct Toy<T> {
    pub manifest: Manifest,
    pub store: MemoryStore<T>,
    pub preprocess: PreprocessConfig,
}

pub fn cast<T: Scalar>(p: &Planes<f32>) -> Planes<T> {
    let (c, h, w) = (p.channels, p.height, p.width);
    let data = (0..c).flat_map(|k| p.plane(k).iter().map(|v| T::lit(*v as f64))).collect();
    Planes::from_vec(c, h, w, data).unwrap()
}

/// Synthetic coats at `height x 2*height`, every record in the train split.
pub fn toy<T: Scalar>(individuals: usize, views: usize, height: usize, seed: u64) -> Toy<T> {
    let data = generate(&SynthConfig {
        individuals,
        views,
        height,
        width: 2 * height,
        seed,
        ..Default::default()
    })
    .unwrap();
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
    )
    .unwrap();
    let preprocess = PreprocessConfig {
        height,
        width: 2 * height,
        ..Default::default()
    };
    let images: Vec<Planes<T>> = data.images.iter().map(cast).collect();
    let store = MemoryStore::prepare(&manifest, &images, &Preprocessor::new(preprocess.clone()).unwrap()).unwrap();
    Toy {
        manifest,
        store,
        preprocess,
    }
}
