//! Raw image + bounding box → normalized 4-channel encoder input.
//!
//! Default path: crop to the detection box, compute the edge channel from the
//! cropped RGB (grayscale, histogram equalization, Gaussian blur, Canny),
//! stack `[R, G, B, Edge]`, resize to the target size. Training adds
//! augmentation before normalization.

mod background;
mod detections;
mod filters;
mod geometry;
mod planes;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use background::{apply_matte, remove_background, BackgroundRemover, ExternalMatting, Matted};
pub use detections::{load_detections, Detection};
pub use filters::{canny, equalize_adaptive, equalize_global, gaussian_blur, grayscale, Gray8};
pub use geometry::{crop, resize_bilinear, BoundingBox, Warp};
pub use planes::{EdgeMap, Planes};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const EDGE_CHANNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equalization {
    Global,
    Adaptive,
}

/// Which image the edge channel is computed from when matting is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSource {
    Cropped,
    BackgroundRemoved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub height: usize,
    pub width: usize,
    pub use_background_removal: bool,
    /// Command line of the external matting stage.
    pub background_command: Vec<String>,
    pub edge_source: EdgeSource,
    pub equalization: Equalization,
    pub clahe_grid: usize,
    pub clahe_clip_limit: f64,
    pub gaussian_kernel: usize,
    pub gaussian_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub rotation_max_deg: f64,
    pub crop_max_fraction: f64,
    pub color_jitter: ColorJitter,
    pub channel_means: [f64; 4],
    pub channel_stds: [f64; 4],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 512,
            use_background_removal: false,
            background_command: Vec::new(),
            edge_source: EdgeSource::Cropped,
            equalization: Equalization::Global,
            clahe_grid: 8,
            clahe_clip_limit: 2.0,
            gaussian_kernel: 5,
            gaussian_sigma: 1.0,
            canny_low: 50.0,
            canny_high: 150.0,
            rotation_max_deg: 10.0,
            crop_max_fraction: 0.1,
            color_jitter: ColorJitter::default(),
            channel_means: [0.485, 0.456, 0.406, 0.5],
            channel_stds: [0.229, 0.224, 0.225, 0.5],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 {
            return bad(format!("target size {}x{} is empty", self.height, self.width));
        }
        if self.canny_low >= self.canny_high {
            return bad(format!("canny_low {} must be below canny_high {}", self.canny_low, self.canny_high));
        }
        if self.gaussian_kernel.is_multiple_of(2) {
            return bad(format!("gaussian_kernel {} must be odd", self.gaussian_kernel));
        }
        if self.gaussian_sigma <= 0.0 {
            return bad(format!("gaussian_sigma {} must be positive", self.gaussian_sigma));
        }
        if self.rotation_max_deg < 0.0 {
            return bad(format!("rotation_max_deg {} is negative", self.rotation_max_deg));
        }
        if !(0.0..0.5).contains(&self.crop_max_fraction) {
            return bad(format!("crop_max_fraction {} outside [0, 0.5)", self.crop_max_fraction));
        }
        if let Some(c) = self.channel_stds.iter().position(|&s| s == 0.0) {
            return bad(format!("channel_stds[{c}] is zero"));
        }
        Ok(())
    }

    /// Disables every random augmentation.
    pub fn without_augmentation(mut self) -> Self {
        self.rotation_max_deg = 0.0;
        self.crop_max_fraction = 0.0;
        self.color_jitter = ColorJitter {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
        };
        self
    }
}

/// 4 x H x W encoder input, channels `[R, G, B, Edge]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedInput<T> {
    pub planes: Planes<T>,
}

impl<T: Scalar> StackedInput<T> {
    pub fn new(planes: Planes<T>) -> Result<Self> {
        if planes.channels != 4 {
            return Err(Error::Shape(format!("stacked input needs 4 channels, got {}", planes.channels)));
        }
        Ok(Self { planes })
    }

    pub fn height(&self) -> usize {
        self.planes.height
    }

    pub fn width(&self) -> usize {
        self.planes.width
    }

    pub fn edge(&self) -> &[T] {
        self.planes.plane(EDGE_CHANNEL)
    }

    pub fn data(&self) -> &[T] {
        &self.planes.data
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let p = &self.planes;
        crate::io::write_atomic(path, &crate::io::encode_array(&[4, p.height, p.width], &p.data))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let (shape, data) = crate::io::decode_array(&bytes, path)?;
        if shape.len() != 3 || shape[0] != 4 {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("expected shape [4, H, W], found {shape:?}"),
            });
        }
        Self::new(Planes::from_vec(4, shape[1], shape[2], data)?)
    }
}

/// Binary edge map of `rgb`: grayscale, equalization, blur, Canny.
pub fn edge_channel<T: Scalar>(rgb: &Planes<T>, cfg: &PreprocessConfig) -> EdgeMap {
    let gray = grayscale(rgb);
    let eq = match cfg.equalization {
        Equalization::Global => equalize_global(&gray),
        Equalization::Adaptive => equalize_adaptive(&gray, cfg.clahe_grid, cfg.clahe_clip_limit),
    };
    let blurred = gaussian_blur(&eq, cfg.gaussian_kernel, cfg.gaussian_sigma);
    canny(&blurred, eq.height, eq.width, cfg.canny_low, cfg.canny_high)
}

fn rebinarize<T: Scalar>(planes: &mut Planes<T>) {
    let half = T::lit(0.5);
    for v in planes.plane_mut(EDGE_CHANNEL) {
        *v = if *v >= half { T::one() } else { T::zero() };
    }
}

/// Stacks RGB with the edge map and resizes all four channels to the
/// configured size, re-thresholding the edge channel at 0.5.
pub fn stack_and_resize<T: Scalar>(rgb: &Planes<T>, edge: &EdgeMap, cfg: &PreprocessConfig) -> Result<StackedInput<T>> {
    if rgb.channels != 3 {
        return Err(Error::Shape(format!("expected 3 colour channels, got {}", rgb.channels)));
    }
    if rgb.height != edge.height || rgb.width != edge.width {
        return Err(Error::Shape(format!(
            "rgb is {}x{}, edge map is {}x{}",
            rgb.height, rgb.width, edge.height, edge.width
        )));
    }
    let n = rgb.height * rgb.width;
    let mut data = Vec::with_capacity(4 * n);
    data.extend_from_slice(&rgb.data[..3 * n]);
    data.extend(edge.data.iter().map(|&e| if e != 0 { T::one() } else { T::zero() }));
    let stacked = Planes::from_vec(4, rgb.height, rgb.width, data)?;
    let mut resized = resize_bilinear(&stacked, cfg.height, cfg.width);
    rebinarize(&mut resized);
    StackedInput::new(resized)
}

/// Random draw of one augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub warp: Warp,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl AugmentParams {
    pub fn draw<R: Rng + ?Sized>(cfg: &PreprocessConfig, rng: &mut R) -> Self {
        let mut sym = |max: f64| if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
        let angle_deg = sym(cfg.rotation_max_deg);
        let j = cfg.color_jitter;
        let brightness = 1.0 + sym(j.brightness);
        let contrast = 1.0 + sym(j.contrast);
        let saturation = 1.0 + sym(j.saturation);
        let mut crop = [0.0; 4];
        if cfg.crop_max_fraction > 0.0 {
            for c in &mut crop {
                *c = rng.random_range(0.0..=cfg.crop_max_fraction);
            }
        }
        Self {
            warp: Warp { angle_deg, crop },
            brightness,
            contrast,
            saturation,
        }
    }

    pub fn apply<T: Scalar>(&self, input: &StackedInput<T>) -> StackedInput<T> {
        let (h, w) = (input.height(), input.width());
        let mut planes = if self.warp.is_identity() {
            input.planes.clone()
        } else {
            let mut p = self.warp.apply(&input.planes, h, w);
            rebinarize(&mut p);
            p
        };
        jitter(&mut planes, self.brightness, self.contrast, self.saturation);
        StackedInput { planes }
    }
}

fn jitter<T: Scalar>(p: &mut Planes<T>, brightness: f64, contrast: f64, saturation: f64) {
    let n = p.height * p.width;
    let clamp01 = |v: T| v.max(T::zero()).min(T::one());
    let (wr, wg, wb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
    if brightness != 1.0 {
        let b = T::lit(brightness);
        p.data[..3 * n].iter_mut().for_each(|v| *v = clamp01(*v * b));
    }
    if contrast != 1.0 {
        let c = T::lit(contrast);
        let mean = (0..n)
            .map(|i| wr * p.data[i] + wg * p.data[n + i] + wb * p.data[2 * n + i])
            .fold(T::zero(), |a, b| a + b)
            / T::lit(n.max(1) as f64);
        p.data[..3 * n].iter_mut().for_each(|v| *v = clamp01((*v - mean) * c + mean));
    }
    if saturation != 1.0 {
        let s = T::lit(saturation);
        for i in 0..n {
            let gray = wr * p.data[i] + wg * p.data[n + i] + wb * p.data[2 * n + i];
            for c in 0..3 {
                let v = &mut p.data[c * n + i];
                *v = clamp01((*v - gray) * s + gray);
            }
        }
    }
}

/// Training-time augmentation: one rotation + crop shared by all channels,
/// colour jitter on RGB only, edge channel kept binary.
pub fn augment<T: Scalar, R: Rng + ?Sized>(input: &StackedInput<T>, cfg: &PreprocessConfig, rng: &mut R) -> StackedInput<T> {
    AugmentParams::draw(cfg, rng).apply(input)
}

/// Per-channel `(x - mean) / std`.
pub fn normalize<T: Scalar>(input: &StackedInput<T>, cfg: &PreprocessConfig) -> Result<StackedInput<T>> {
    if let Some(c) = cfg.channel_stds.iter().position(|&s| s == 0.0) {
        return Err(Error::Config(format!("channel_stds[{c}] is zero")));
    }
    let mut planes = input.planes.clone();
    for c in 0..4 {
        let (mean, std) = (T::lit(cfg.channel_means[c]), T::lit(cfg.channel_stds[c]));
        planes.plane_mut(c).iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    Ok(StackedInput { planes })
}

/// Output of the deterministic part of the pipeline.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    /// Un-normalized, un-augmented stacked input at target size.
    pub input: StackedInput<T>,
    /// The cropped (and possibly matted) RGB, for thumbnails.
    pub crop: Planes<T>,
    /// Matting produced an empty mask.
    pub flagged: bool,
}

/// Crop, optional background removal, edge channel and stacking.
pub struct Preprocessor {
    cfg: PreprocessConfig,
    remover: Option<Box<dyn BackgroundRemover>>,
}

impl Preprocessor {
    pub fn new(cfg: PreprocessConfig) -> Result<Self> {
        cfg.validate()?;
        let remover: Option<Box<dyn BackgroundRemover>> = if cfg.use_background_removal {
            Some(Box::new(ExternalMatting::from_command(&cfg.background_command)?))
        } else {
            None
        };
        Ok(Self { cfg, remover })
    }

    pub fn with_remover(cfg: PreprocessConfig, remover: Box<dyn BackgroundRemover>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            remover: Some(remover),
        })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.cfg
    }

    pub fn prepare<T: Scalar>(&self, image: &Planes<T>, bbox: Option<&BoundingBox>) -> Result<Prepared<T>> {
        let full = BoundingBox::full(image.height, image.width);
        let cropped = crop(image, bbox.unwrap_or(&full))?;
        let (rgb, flagged, matted) = match &self.remover {
            Some(r) => {
                let m = remove_background(&cropped, r.as_ref())?;
                (m.rgb(), m.flagged, true)
            }
            None => (cropped.clone(), false, false),
        };
        let edge_from = if matted && self.cfg.edge_source == EdgeSource::Cropped {
            &cropped
        } else {
            &rgb
        };
        let edge = edge_channel(edge_from, &self.cfg);
        let input = stack_and_resize(&rgb, &edge, &self.cfg)?;
        Ok(Prepared {
            input,
            crop: rgb,
            flagged,
        })
    }
}

pub fn load_rgb<T: Scalar>(path: &Path) -> Result<Planes<T>> {
    Ok(Planes::from_rgb8(&image::open(path)?.to_rgb8()))
}
