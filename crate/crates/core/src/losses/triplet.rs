use super::mining::Triplet;
use super::{BatchLabels, LossGrad};
use crate::error::Result;
use crate::scalar::Scalar;

/// `max(d_ap - d_an + alpha, 0)`.
pub fn triplet_loss<T: Scalar>(d_ap: T, d_an: T, alpha: T) -> T {
    (d_ap - d_an + alpha).max(T::zero())
}

pub fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// Mean hinge over `triplets` with its gradient on the batch embeddings.
/// An empty triplet list gives zero loss and zero gradient.
pub fn triplet_batch_loss<T: Scalar>(batch: &BatchLabels<'_, T>, triplets: &[Triplet], alpha: T) -> Result<LossGrad<T>> {
    let d = batch.dim();
    let mut grad = vec![T::zero(); batch.len() * d];
    if triplets.is_empty() {
        return Ok(LossGrad {
            loss: T::zero(),
            embeddings: grad,
            weights: Vec::new(),
        });
    }
    let inv = T::one() / T::lit(triplets.len() as f64);
    let mut total = T::zero();
    for t in triplets {
        let (a, p, n) = (batch.row(t.anchor), batch.row(t.positive), batch.row(t.negative));
        let d_ap = euclidean(a, p);
        let d_an = euclidean(a, n);
        let l = triplet_loss(d_ap, d_an, alpha);
        total = total + l;
        if l <= T::zero() {
            continue;
        }
        // d|a - p| / da = (a - p) / |a - p|; zero distance contributes no direction.
        for k in 0..d {
            let gp = if d_ap > T::zero() { (a[k] - p[k]) / d_ap * inv } else { T::zero() };
            let gn = if d_an > T::zero() { (a[k] - n[k]) / d_an * inv } else { T::zero() };
            grad[t.anchor * d + k] = grad[t.anchor * d + k] + gp - gn;
            grad[t.positive * d + k] = grad[t.positive * d + k] - gp;
            grad[t.negative * d + k] = grad[t.negative * d + k] + gn;
        }
    }
    Ok(LossGrad {
        loss: total * inv,
        embeddings: grad,
        weights: Vec::new(),
    })
}
