//! Training objectives.
//!
//! Angular losses (normalized softmax, CosFace, adaptive-margin CosFace)
//! operate on the cosines between L2-normalized embeddings and L2-normalized
//! class weight rows. The triplet loss works on raw Euclidean distances with
//! negatives drawn by batch semi-hard mining. Every loss returns analytic
//! gradients with respect to the raw (un-normalized) inputs.

mod angular;
mod mining;
mod triplet;

pub use angular::{
    angular_loss, cosface_loss, margin_h, margin_h_derivative, modified_cosface_loss, normalized_softmax_loss,
    AngularHead, MarginKind, COSINE_CLAMP,
};
pub use mining::{mine_batch_triplets, NegativeSource, Triplet, TripletConfig};
pub use triplet::{euclidean, triplet_batch_loss, triplet_loss};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Borrowed `N x D` embedding matrix with one class label per row.
#[derive(Debug, Clone, Copy)]
pub struct BatchLabels<'a, T> {
    embeddings: &'a [T],
    dim: usize,
    labels: &'a [usize],
}

impl<'a, T: Scalar> BatchLabels<'a, T> {
    pub fn new(embeddings: &'a [T], dim: usize, labels: &'a [usize]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding dimension is zero".into()));
        }
        if embeddings.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} values for {} rows of dimension {dim}",
                embeddings.len(),
                labels.len()
            )));
        }
        Ok(Self {
            embeddings,
            dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [T] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }
}

/// Loss value with gradients for the batch embeddings (`N x D`) and, for
/// angular losses, the head weights (`C x D`; empty otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub embeddings: Vec<T>,
    pub weights: Vec<T>,
}
