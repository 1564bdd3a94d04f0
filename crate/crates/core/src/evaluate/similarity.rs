use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::scalar::{dot, l2_norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    CosineSimilarity,
    /// Negated Euclidean distance, so higher is more similar.
    NegativeEuclidean,
}

impl std::str::FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cosine_similarity" => Ok(Self::CosineSimilarity),
            "euclidean" | "negative_euclidean" => Ok(Self::NegativeEuclidean),
            other => Err(Error::Config(format!("unknown similarity metric `{other}`"))),
        }
    }
}

/// Pairwise scores over a labeled gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    scores: Vec<T>,
    ids: Vec<String>,
    labels: Vec<String>,
    metric: SimilarityMetric,
}

impl<T: Scalar> SimilarityMatrix<T> {
    /// Wraps precomputed scores (`n x n`, row-major).
    pub fn from_scores(scores: Vec<T>, ids: Vec<String>, labels: Vec<String>, metric: SimilarityMetric) -> Result<Self> {
        let n = ids.len();
        if labels.len() != n || scores.len() != n * n {
            return Err(Error::Shape(format!(
                "{} scores, {} ids, {} labels",
                scores.len(),
                n,
                labels.len()
            )));
        }
        Ok(Self {
            scores,
            ids,
            labels,
            metric,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn score(&self, i: usize, j: usize) -> T {
        self.scores[i * self.len() + j]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn metric(&self) -> SimilarityMetric {
        self.metric
    }

    /// Other items ordered by descending score, then ascending image id.
    pub fn ranked(&self, query: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).filter(|&j| j != query).collect();
        order.sort_by(|&a, &b| {
            self.score(query, b)
                .partial_cmp(&self.score(query, a))
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        order
    }

    /// Same matrix with every score shifted by `delta`.
    pub fn shifted(&self, delta: T) -> Self {
        let mut out = self.clone();
        out.scores.iter_mut().for_each(|s| *s = *s + delta);
        out
    }

    pub fn with_labels(&self, labels: Vec<String>) -> Result<Self> {
        Self::from_scores(self.scores.clone(), self.ids.clone(), labels, self.metric)
    }
}

/// Full pairwise similarity; rows are computed in parallel.
pub fn similarity_matrix<T: Scalar>(
    embeddings: &EmbeddingSet<T>,
    labels: &[String],
    metric: SimilarityMetric,
) -> Result<SimilarityMatrix<T>> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 embeddings, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    let norms: Vec<T> = (0..n).map(|i| l2_norm(embeddings.row(i))).collect();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = embeddings.row(i);
            (0..n)
                .map(|j| {
                    let b = embeddings.row(j);
                    match metric {
                        SimilarityMetric::CosineSimilarity => {
                            let denom = norms[i] * norms[j];
                            if denom > T::zero() {
                                (dot(a, b) / denom).max(-T::one()).min(T::one())
                            } else {
                                T::zero()
                            }
                        }
                        SimilarityMetric::NegativeEuclidean => -a
                            .iter()
                            .zip(b)
                            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
                            .sqrt(),
                    }
                })
                .collect()
        })
        .collect();
    // Mirror the upper triangle so the matrix is exactly symmetric.
    let mut scores: Vec<T> = rows.into_iter().flatten().collect();
    for i in 0..n {
        for j in 0..i {
            scores[i * n + j] = scores[j * n + i];
        }
    }
    SimilarityMatrix::from_scores(scores, embeddings.ids().to_vec(), labels.to_vec(), metric)
}
