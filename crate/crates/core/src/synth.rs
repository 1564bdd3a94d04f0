//! Synthetic rosette-coat dataset for smoke tests and the toy benchmark.
//!
//! Each individual has its own coat tint, rosette density, rosette size,
//! ring-versus-solid mix and rosette layout. Each view re-renders the coat
//! under a random rotation, scale, shift, illumination and background,
//! with pixel noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{ImageRecord, Manifest, Side};
use crate::preprocess::Planes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub individuals: usize,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub max_rotation_deg: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            individuals: 40,
            views: 8,
            height: 64,
            width: 128,
            max_rotation_deg: 8.0,
            noise_std: 0.03,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Rosette {
    u: f64,
    v: f64,
    radius: f64,
    ring: bool,
}

/// Identity-defining coat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Coat {
    tint: [f64; 3],
    spot: [f64; 3],
    rosettes: Vec<Rosette>,
}

impl Coat {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let tint = [
            rng.random_range(0.55..0.95),
            rng.random_range(0.40..0.80),
            rng.random_range(0.15..0.50),
        ];
        let darkness = rng.random_range(0.05..0.30);
        let spot = [darkness, darkness * 0.8, darkness * 0.6];
        let count = rng.random_range(6..=36);
        let base_radius = rng.random_range(0.04..0.12);
        let ring_fraction: f64 = rng.random();
        let rosettes = (0..count)
            .map(|_| Rosette {
                u: rng.random_range(-0.9..0.9),
                v: rng.random_range(-0.45..0.45),
                radius: base_radius * rng.random_range(0.7..1.3),
                ring: rng.random::<f64>() < ring_fraction,
            })
            .collect();
        Self { tint, spot, rosettes }
    }

    /// Coat colour at body coordinates, `None` outside the body.
    fn colour(&self, u: f64, v: f64) -> Option<[f64; 3]> {
        if u * u + (v / 0.5).powi(2) > 1.0 {
            return None;
        }
        for r in &self.rosettes {
            let d = ((u - r.u).powi(2) + (v - r.v).powi(2)).sqrt();
            if d < r.radius && (!r.ring || d > 0.55 * r.radius) {
                return Some(self.spot);
            }
        }
        Some(self.tint)
    }
}

/// Renders one view of `coat`.
pub fn render_view<R: Rng + ?Sized>(coat: &Coat, cfg: &SynthConfig, rng: &mut R) -> Planes<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let angle = if cfg.max_rotation_deg > 0.0 {
        rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg).to_radians()
    } else {
        0.0
    };
    let scale = rng.random_range(0.9..1.1);
    let (dx, dy) = (rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08));
    let gain = rng.random_range(0.8..1.15);
    let background = [
        rng.random_range(0.1..0.4),
        rng.random_range(0.2..0.5),
        rng.random_range(0.1..0.3),
    ];
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite std");
    let (sin, cos) = angle.sin_cos();
    let mut out = Planes::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            // Pixel to body frame: the body spans about 85% of the width.
            let unit = 0.85 * w as f64 / 2.0;
            let px = (x as f64 + 0.5 - w as f64 / 2.0) / unit - dx;
            let py = (y as f64 + 0.5 - h as f64 / 2.0) / unit - dy;
            let u = (cos * px + sin * py) / scale;
            let v = (-sin * px + cos * py) / scale;
            let base = coat.colour(u, v).unwrap_or(background);
            for c in 0..3 {
                let value = base[c] * gain + noise.sample(rng);
                out.set(c, y, x, value.clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

/// A generated dataset: one left flank per individual.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: Manifest,
    pub images: Vec<Planes<f32>>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.individuals * cfg.views);
    let mut images = Vec::with_capacity(cfg.individuals * cfg.views);
    for i in 0..cfg.individuals {
        let coat = Coat::random(&mut rng);
        for v in 0..cfg.views {
            let id = format!("ind{i:03}_v{v}");
            records.push(ImageRecord::new(&id, format!("ind{i:03}"), Side::Left, format!("{id}.png")));
            images.push(render_view(&coat, cfg, &mut rng));
        }
    }
    Ok(SynthDataset {
        manifest: Manifest::new(records)?,
        images,
    })
}

impl SynthDataset {
    /// Writes `<uri>` PNGs and `manifest.jsonl` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (r, img) in self.manifest.records().iter().zip(&self.images) {
            img.to_rgb8().save(dir.join(&r.uri))?;
        }
        self.manifest.save(&dir.join("manifest.jsonl"))
    }

    pub fn image(&self, image_id: &str) -> Option<&Planes<f32>> {
        self.manifest
            .records()
            .iter()
            .position(|r| r.image_id == image_id)
            .map(|i| &self.images[i])
    }
}
