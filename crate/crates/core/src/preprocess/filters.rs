//! Grayscale conversion, histogram equalization, Gaussian blur and Canny.
//!
//! These run on 8-bit-scale `f32` buffers regardless of the pipeline scalar,
//! so Canny thresholds keep their usual 0..255 meaning.

use std::collections::VecDeque;

use super::planes::{to_u8, EdgeMap, Planes};
use crate::scalar::Scalar;

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

/// Rec. 601 luma of the first three channels, quantized to 8 bits.
pub fn grayscale<T: Scalar>(rgb: &Planes<T>) -> Gray8 {
    let (r, g, b) = (rgb.plane(0), rgb.plane(1), rgb.plane(2));
    let (wr, wg, wb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
    let data = (0..r.len())
        .map(|i| to_u8(wr * r[i] + wg * g[i] + wb * b[i]))
        .collect();
    Gray8 {
        height: rgb.height,
        width: rgb.width,
        data,
    }
}

fn histogram(values: impl Iterator<Item = u8>) -> [u32; 256] {
    let mut hist = [0u32; 256];
    for v in values {
        hist[v as usize] += 1;
    }
    hist
}

/// Maps a histogram to an equalizing lookup table. A single-level histogram
/// yields the identity table.
fn equalizing_lut(hist: &[u32; 256]) -> [u8; 256] {
    let total: u32 = hist.iter().sum();
    let mut lut = [0u8; 256];
    let cdf_min = hist.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if total == cdf_min {
        for (i, v) in lut.iter_mut().enumerate() {
            *v = i as u8;
        }
        return lut;
    }
    let denom = (total - cdf_min) as f64;
    let mut cdf = 0u32;
    for (i, &h) in hist.iter().enumerate() {
        cdf += h;
        lut[i] = if cdf <= cdf_min {
            0
        } else {
            (((cdf - cdf_min) as f64 / denom) * 255.0).round() as u8
        };
    }
    lut
}

pub fn equalize_global(img: &Gray8) -> Gray8 {
    let lut = equalizing_lut(&histogram(img.data.iter().copied()));
    Gray8 {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| lut[v as usize]).collect(),
    }
}

/// Contrast-limited adaptive equalization over a `grid x grid` tiling with
/// bilinear blending of neighbouring tile tables.
pub fn equalize_adaptive(img: &Gray8, grid: usize, clip_limit: f64) -> Gray8 {
    let (h, w) = (img.height, img.width);
    if h == 0 || w == 0 {
        return img.clone();
    }
    let ty = grid.clamp(1, h);
    let tx = grid.clamp(1, w);
    let mut luts = vec![[0u8; 256]; ty * tx];
    for j in 0..ty {
        for i in 0..tx {
            let (y0, y1) = (j * h / ty, (j + 1) * h / ty);
            let (x0, x1) = (i * w / tx, (i + 1) * w / tx);
            let mut hist = histogram(
                (y0..y1).flat_map(|y| img.data[y * w + x0..y * w + x1].iter().copied()),
            );
            let area = ((y1 - y0) * (x1 - x0)) as f64;
            let limit = ((clip_limit * area / 256.0).ceil() as u32).max(1);
            let mut excess = 0u32;
            for c in hist.iter_mut() {
                if *c > limit {
                    excess += *c - limit;
                    *c = limit;
                }
            }
            let share = excess / 256;
            let rest = (excess % 256) as usize;
            for (k, c) in hist.iter_mut().enumerate() {
                *c += share + u32::from(k < rest);
            }
            // Full-range mapping of the clipped CDF, not the min-shifted variant.
            let total: u32 = hist.iter().sum();
            let lut = &mut luts[j * tx + i];
            let mut cdf = 0u32;
            for (k, &c) in hist.iter().enumerate() {
                cdf += c;
                lut[k] = ((cdf as f64 / total as f64) * 255.0).round() as u8;
            }
        }
    }
    // Tile centres in pixel coordinates.
    let cy = |j: usize| ((j * h / ty + (j + 1) * h / ty) as f64 - 1.0) / 2.0;
    let cx = |i: usize| ((i * w / tx + (i + 1) * w / tx) as f64 - 1.0) / 2.0;
    let locate = |p: f64, n: usize, centre: &dyn Fn(usize) -> f64| -> (usize, usize, f64) {
        if p <= centre(0) {
            return (0, 0, 0.0);
        }
        if p >= centre(n - 1) {
            return (n - 1, n - 1, 0.0);
        }
        let mut k = 0;
        while centre(k + 1) < p {
            k += 1;
        }
        let t = (p - centre(k)) / (centre(k + 1) - centre(k));
        (k, k + 1, t)
    };
    let mut data = vec![0u8; h * w];
    for y in 0..h {
        let (j0, j1, fy) = locate(y as f64, ty, &cy);
        for x in 0..w {
            let (i0, i1, fx) = locate(x as f64, tx, &cx);
            let v = img.data[y * w + x] as usize;
            let g = |j: usize, i: usize| luts[j * tx + i][v] as f64;
            let top = g(j0, i0) * (1.0 - fx) + g(j0, i1) * fx;
            let bottom = g(j1, i0) * (1.0 - fx) + g(j1, i1) * fx;
            data[y * w + x] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    Gray8 {
        height: h,
        width: w,
        data,
    }
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f32> {
    let r = (size / 2) as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Gray8, size: usize, sigma: f64) -> Vec<f32> {
    let (h, w) = (img.height, img.width);
    let src: Vec<f32> = img.data.iter().map(|&v| v as f32).collect();
    if size <= 1 {
        return src;
    }
    let k = gaussian_kernel(size, sigma);
    let r = (size / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(t, &kv)| kv * src[y * w + clampi(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(t, &kv)| kv * tmp[clampi(y as isize + t as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny edge detection on an already-smoothed image.
///
/// Sobel gradients, non-maximum suppression along the quantized gradient
/// direction, then hysteresis from `high` seeds through 8-connected pixels
/// above `low`. The one-pixel border never carries edges.
pub fn canny(smoothed: &[f32], height: usize, width: usize, low: f64, high: f64) -> EdgeMap {
    let (h, w) = (height, width);
    let mut edges = EdgeMap::zeros(h, w);
    if h < 3 || w < 3 {
        return edges;
    }
    let px = |y: usize, x: usize| smoothed[y * w + x];
    let mut mag = vec![0f32; h * w];
    let mut dir = vec![0u8; h * w];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1))
                - (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
            let gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1))
                - (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
            mag[y * w + x] = (gx * gx + gy * gy).sqrt();
            let angle = gy.atan2(gx).to_degrees();
            let a = if angle < 0.0 { angle + 180.0 } else { angle };
            dir[y * w + x] = if !(22.5..157.5).contains(&a) {
                0
            } else if a < 67.5 {
                1
            } else if a < 112.5 {
                2
            } else {
                3
            };
        }
    }
    // Neighbour offsets (before, after) along each quantized direction.
    let offsets: [((isize, isize), (isize, isize)); 4] = [
        ((0, -1), (0, 1)),
        ((-1, -1), (1, 1)),
        ((-1, 0), (1, 0)),
        ((-1, 1), (1, -1)),
    ];
    let mut thin = vec![0f32; h * w];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let ((by, bx), (ay, ax)) = offsets[dir[i] as usize];
            let before = mag[(y as isize + by) as usize * w + (x as isize + bx) as usize];
            let after = mag[(y as isize + ay) as usize * w + (x as isize + ax) as usize];
            // Asymmetric comparison keeps exactly one pixel of a plateau pair.
            if m >= before && m > after {
                thin[i] = m;
            }
        }
    }
    let (low, high) = (low as f32, high as f32);
    let mut queue = VecDeque::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high {
            edges.data[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 1 || nx < 1 || ny >= h as isize - 1 || nx >= w as isize - 1 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if edges.data[j] == 0 && thin[j] >= low {
                    edges.data[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    edges
}
