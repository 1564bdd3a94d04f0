use serde::{Deserialize, Serialize};

use super::planes::Planes;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pixel box in source-image coordinates; `x_max`/`y_max` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BoundingBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_array(b: [i64; 4]) -> Self {
        Self::new(b[0], b[1], b[2], b[3])
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, width as i64, height as i64)
    }

    /// Clamps to `[0, width] x [0, height]`; errors if nothing is left.
    pub fn clamped(&self, height: usize, width: usize) -> Result<BoundingBox> {
        let c = BoundingBox {
            x_min: self.x_min.clamp(0, width as i64),
            y_min: self.y_min.clamp(0, height as i64),
            x_max: self.x_max.clamp(0, width as i64),
            y_max: self.y_max.clamp(0, height as i64),
        };
        if c.x_min >= c.x_max || c.y_min >= c.y_max {
            return Err(Error::DegenerateBox([self.x_min, self.y_min, self.x_max, self.y_max]));
        }
        Ok(c)
    }
}

/// Extracts the boxed region without resampling.
pub fn crop<T: Scalar>(image: &Planes<T>, bbox: &BoundingBox) -> Result<Planes<T>> {
    let b = bbox.clamped(image.height, image.width)?;
    let (y0, x0) = (b.y_min as usize, b.x_min as usize);
    let (h, w) = ((b.y_max - b.y_min) as usize, (b.x_max - b.x_min) as usize);
    let mut out = Planes::zeros(image.channels, h, w);
    for c in 0..image.channels {
        for y in 0..h {
            let src = image.idx(c, y0 + y, x0);
            let dst = out.idx(c, y, 0);
            out.data[dst..dst + w].copy_from_slice(&image.data[src..src + w]);
        }
    }
    Ok(out)
}

/// Bilinear sample at a fractional position; `None` outside the image.
#[inline]
fn sample<T: Scalar>(img: &Planes<T>, c: usize, y: T, x: T, clamp_edges: bool) -> Option<T> {
    let (h, w) = (T::lit(img.height as f64), T::lit(img.width as f64));
    let (mut y, mut x) = (y, x);
    if clamp_edges {
        y = y.max(T::zero()).min(h - T::one());
        x = x.max(T::zero()).min(w - T::one());
    } else if y < -T::one() + T::lit(1e-9) || x < -T::one() + T::lit(1e-9) || y > h - T::lit(1e-9) || x > w - T::lit(1e-9) {
        return None;
    }
    let y0f = y.floor();
    let x0f = x.floor();
    let (fy, fx) = (y - y0f, x - x0f);
    let y0 = y0f.to_i64().unwrap_or(0);
    let x0 = x0f.to_i64().unwrap_or(0);
    let get = |yy: i64, xx: i64| -> T {
        if yy < 0 || xx < 0 || yy >= img.height as i64 || xx >= img.width as i64 {
            T::zero()
        } else {
            img.at(c, yy as usize, xx as usize)
        }
    };
    if fy == T::zero() && fx == T::zero() {
        return Some(get(y0, x0));
    }
    let top = get(y0, x0) * (T::one() - fx) + get(y0, x0 + 1) * fx;
    let bottom = get(y0 + 1, x0) * (T::one() - fx) + get(y0 + 1, x0 + 1) * fx;
    Some(top * (T::one() - fy) + bottom * fy)
}

/// Bilinear resize with half-pixel centres and replicated borders.
pub fn resize_bilinear<T: Scalar>(img: &Planes<T>, height: usize, width: usize) -> Planes<T> {
    if img.height == height && img.width == width {
        return img.clone();
    }
    let sy = T::lit(img.height as f64 / height as f64);
    let sx = T::lit(img.width as f64 / width as f64);
    let half = T::lit(0.5);
    let mut out = Planes::zeros(img.channels, height, width);
    for c in 0..img.channels {
        for y in 0..height {
            let src_y = (T::lit(y as f64) + half) * sy - half;
            for x in 0..width {
                let src_x = (T::lit(x as f64) + half) * sx - half;
                out.set(c, y, x, sample(img, c, src_y, src_x, true).unwrap());
            }
        }
    }
    out
}

/// Rotation about the image centre followed by a crop window, resampled to
/// `height x width` in one bilinear pass. Pixels mapped from outside the
/// source are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub angle_deg: f64,
    /// Fractions cut from the left, top, right and bottom sides.
    pub crop: [f64; 4],
}

impl Warp {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            crop: [0.0; 4],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.crop.iter().all(|&c| c == 0.0)
    }

    pub fn apply<T: Scalar>(&self, img: &Planes<T>, height: usize, width: usize) -> Planes<T> {
        if self.is_identity() {
            return resize_bilinear(img, height, width);
        }
        let (h, w) = (img.height as f64, img.width as f64);
        let [left, top, right, bottom] = self.crop;
        let (x0, y0) = (left * w, top * h);
        let (cw, ch) = (w * (1.0 - left - right), h * (1.0 - top - bottom));
        let (sx, sy) = (cw / width as f64, ch / height as f64);
        let (cy, cx) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
        let theta = self.angle_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let mut out = Planes::zeros(img.channels, height, width);
        for y in 0..height {
            for x in 0..width {
                // Position inside the rotated frame, then inverse-rotate into the source.
                let u = x0 + (x as f64 + 0.5) * sx - 0.5;
                let v = y0 + (y as f64 + 0.5) * sy - 0.5;
                let (du, dv) = (u - cx, v - cy);
                let src_x = cos * du + sin * dv + cx;
                let src_y = -sin * du + cos * dv + cy;
                for c in 0..img.channels {
                    let val = sample(img, c, T::lit(src_y), T::lit(src_x), false).unwrap_or(T::zero());
                    out.set(c, y, x, val);
                }
            }
        }
        out
    }
}
