use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BatchLabels, LossGrad};
use crate::error::{Error, Result};
use crate::scalar::{dot, l2_norm, Scalar};

/// Cosines are clamped to `[-1 + COSINE_CLAMP, 1 - COSINE_CLAMP]`.
pub const COSINE_CLAMP: f64 = 1e-7;

/// Adaptive margin multiplier `((1 - c^2)^4 + 0.1) / 1.1`.
///
/// Equals 1 for orthogonal vectors and 1/11 for (anti-)parallel ones.
pub fn margin_h<T: Scalar>(cos_theta: T) -> T {
    let c = cos_theta.max(-T::one()).min(T::one());
    let s = T::one() - c * c;
    let s2 = s * s;
    (s2 * s2 + T::lit(0.1)) / T::lit(1.1)
}

/// `d h / d cos = -8 c (1 - c^2)^3 / 1.1`.
pub fn margin_h_derivative<T: Scalar>(cos_theta: T) -> T {
    let c = cos_theta.max(-T::one()).min(T::one());
    let s = T::one() - c * c;
    -T::lit(8.0) * c * s * s * s / T::lit(1.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    /// Margin ignored: normalized softmax.
    None,
    /// Additive cosine margin `m` (CosFace).
    Fixed,
    /// Per-sample margin `m * h(cos theta_y)`, differentiated through `h`.
    Adaptive,
}

/// Class-weight head for angular losses; the bias is fixed at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularHead<T> {
    /// `classes x dim`, row-major. Rows are normalized on use, not in place.
    pub weights: Vec<T>,
    pub classes: usize,
    pub dim: usize,
    pub scale: T,
    pub margin: T,
}

impl<T: Scalar> AngularHead<T> {
    pub fn new(weights: Vec<T>, classes: usize, dim: usize, scale: T, margin: T) -> Result<Self> {
        if weights.len() != classes * dim {
            return Err(Error::Shape(format!("{} weights for {classes}x{dim} head", weights.len())));
        }
        if scale <= T::zero() {
            return Err(Error::Config(format!("scale {scale} must be positive")));
        }
        if margin < T::zero() {
            return Err(Error::Config(format!("margin {margin} must be non-negative")));
        }
        Ok(Self {
            weights,
            classes,
            dim,
            scale,
            margin,
        })
    }

    /// Normal initialization with std `1/sqrt(dim)`, so rows start near unit norm.
    pub fn random<R: Rng + ?Sized>(classes: usize, dim: usize, scale: T, margin: T, rng: &mut R) -> Result<Self> {
        let std = 1.0 / (dim.max(1) as f64).sqrt();
        let weights = (0..classes * dim)
            .map(|_| T::lit(std * Distribution::<f64>::sample(&StandardNormal, rng)))
            .collect();
        Self::new(weights, classes, dim, scale, margin)
    }

    pub fn row(&self, j: usize) -> &[T] {
        &self.weights[j * self.dim..(j + 1) * self.dim]
    }
}

/// Mean over the batch of `-log softmax` at the target class, with the
/// target logit `s (cos theta_y - margin_i)` and other logits `s cos theta_j`.
///
/// Returns gradients with respect to the raw embeddings and the raw head
/// weights, i.e. through both L2 normalizations.
pub fn angular_loss<T: Scalar>(batch: &BatchLabels<'_, T>, head: &AngularHead<T>, kind: MarginKind) -> Result<LossGrad<T>> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    if batch.dim() != head.dim {
        return Err(Error::Shape(format!(
            "embedding dimension {} vs head dimension {}",
            batch.dim(),
            head.dim
        )));
    }
    if let Some(&label) = batch.labels().iter().find(|&&l| l >= head.classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: head.classes,
        });
    }
    let (c, d) = (head.classes, head.dim);
    let lo = -T::one() + T::lit(COSINE_CLAMP);
    let hi = T::one() - T::lit(COSINE_CLAMP);
    let eps = T::lit(1e-12);

    let w_norms: Vec<T> = (0..c).map(|j| l2_norm(head.row(j)).max(eps)).collect();
    let w_hat: Vec<T> = (0..c * d).map(|k| head.weights[k] / w_norms[k / d]).collect();

    let inv_n = T::one() / T::lit(n as f64);
    let mut total = T::zero();
    let mut grad_x = vec![T::zero(); n * d];
    let mut grad_w_hat = vec![T::zero(); c * d];
    let s = head.scale;
    let m = head.margin;

    let mut cos = vec![T::zero(); c];
    let mut in_range = vec![true; c];
    let mut logits = vec![T::zero(); c];
    for i in 0..n {
        let x = batch.row(i);
        let y = batch.label(i);
        let x_norm = l2_norm(x).max(eps);
        let x_hat: Vec<T> = x.iter().map(|&v| v / x_norm).collect();
        for j in 0..c {
            let raw = dot(&x_hat, &w_hat[j * d..(j + 1) * d]);
            cos[j] = raw.max(lo).min(hi);
            in_range[j] = raw > lo && raw < hi;
        }
        let (target_margin, target_slope) = match kind {
            MarginKind::None => (T::zero(), T::one()),
            MarginKind::Fixed => (m, T::one()),
            MarginKind::Adaptive => (m * margin_h(cos[y]), T::one() - m * margin_h_derivative(cos[y])),
        };
        for j in 0..c {
            logits[j] = s * cos[j];
        }
        logits[y] = s * (cos[y] - target_margin);
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total = total + (lse - logits[y]);

        // dL/dcos_j for this sample.
        let x_grad = &mut grad_x[i * d..(i + 1) * d];
        for j in 0..c {
            let p = (logits[j] - lse).exp();
            let dz = if j == y { p - T::one() } else { p };
            let slope = if j == y { target_slope } else { T::one() };
            if !in_range[j] {
                continue;
            }
            let g = dz * s * slope * inv_n;
            if g == T::zero() {
                continue;
            }
            let w = &w_hat[j * d..(j + 1) * d];
            let gw = &mut grad_w_hat[j * d..(j + 1) * d];
            for k in 0..d {
                // d cos / d x_hat = w_hat, d cos / d w_hat = x_hat.
                x_grad[k] = x_grad[k] + g * w[k];
                gw[k] = gw[k] + g * x_hat[k];
            }
        }
        // Back through x_hat = x / |x|: (g - (g . x_hat) x_hat) / |x|.
        let proj = dot(x_grad, &x_hat);
        for k in 0..d {
            x_grad[k] = (x_grad[k] - proj * x_hat[k]) / x_norm;
        }
    }
    let mut grad_w = vec![T::zero(); c * d];
    for j in 0..c {
        let gw = &grad_w_hat[j * d..(j + 1) * d];
        let w = &w_hat[j * d..(j + 1) * d];
        let proj = dot(gw, w);
        for k in 0..d {
            grad_w[j * d + k] = (gw[k] - proj * w[k]) / w_norms[j];
        }
    }
    Ok(LossGrad {
        loss: total * inv_n,
        embeddings: grad_x,
        weights: grad_w,
    })
}

pub fn normalized_softmax_loss<T: Scalar>(batch: &BatchLabels<'_, T>, head: &AngularHead<T>) -> Result<T> {
    Ok(angular_loss(batch, head, MarginKind::None)?.loss)
}

pub fn cosface_loss<T: Scalar>(batch: &BatchLabels<'_, T>, head: &AngularHead<T>) -> Result<T> {
    Ok(angular_loss(batch, head, MarginKind::Fixed)?.loss)
}

pub fn modified_cosface_loss<T: Scalar>(batch: &BatchLabels<'_, T>, head: &AngularHead<T>) -> Result<T> {
    Ok(angular_loss(batch, head, MarginKind::Adaptive)?.loss)
}
