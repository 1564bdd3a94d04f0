use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;

use super::similarity::SimilarityMatrix;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of items carrying each item's label.
pub fn class_sizes(labels: &[String]) -> Vec<usize> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for l in labels {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    labels.iter().map(|l| counts[l.as_str()]).collect()
}

/// Ranked hit flags of one eligible query.
pub(crate) struct QueryHits {
    pub query: usize,
    pub class_size: usize,
    pub ranked: Vec<usize>,
    pub hits: Vec<bool>,
}

pub(crate) fn eligible_hits<T: Scalar>(sim: &SimilarityMatrix<T>) -> Result<Vec<QueryHits>> {
    let labels = sim.labels();
    let sizes = class_sizes(labels);
    let out: Vec<QueryHits> = (0..sim.len())
        .into_par_iter()
        .filter(|&q| sizes[q] >= 2)
        .map(|q| {
            let ranked = sim.ranked(q);
            let hits = ranked.iter().map(|&j| labels[j] == labels[q]).collect();
            QueryHits {
                query: q,
                class_size: sizes[q],
                ranked,
                hits,
            }
        })
        .collect();
    if out.is_empty() {
        return Err(Error::NoEligibleQueries);
    }
    Ok(out)
}

fn ratio(n: usize, d: usize) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub(crate) fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub(crate) fn query_hit_within(q: &QueryHits, k: usize) -> bool {
    q.hits.iter().take(k).any(|&h| h)
}

pub(crate) fn query_dtkap(q: &QueryHits, k_max: usize) -> BigRational {
    let k_i = (q.class_size - 1).min(k_max);
    let mut found = 0;
    let mut sum = BigRational::zero();
    for j in 1..=k_i {
        if q.hits[j - 1] {
            found += 1;
        }
        sum += ratio(found, j);
    }
    sum / BigInt::from(k_i)
}

pub(crate) fn tkrmd_of(queries: &[QueryHits], k: usize) -> BigRational {
    let found = queries.iter().filter(|q| query_hit_within(q, k)).count();
    ratio(found, queries.len())
}

pub(crate) fn dtkap_of(queries: &[QueryHits], k_max: usize) -> BigRational {
    let total = queries
        .iter()
        .fold(BigRational::zero(), |acc, q| acc + query_dtkap(q, k_max));
    total / BigInt::from(queries.len())
}

/// Exact top-k rank match detection.
pub fn tkrmd_exact<T: Scalar>(sim: &SimilarityMatrix<T>, k: usize) -> Result<BigRational> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    Ok(tkrmd_of(&eligible_hits(sim)?, k))
}

pub fn tkrmd<T: Scalar>(sim: &SimilarityMatrix<T>, k: usize) -> Result<f64> {
    tkrmd_exact(sim, k).map(|r| to_f64(&r))
}

/// Exact dynamic top-k average precision.
pub fn dtkap_exact<T: Scalar>(sim: &SimilarityMatrix<T>, k_max: usize) -> Result<BigRational> {
    if k_max == 0 {
        return Err(Error::InvalidInput("k_max must be at least 1".into()));
    }
    Ok(dtkap_of(&eligible_hits(sim)?, k_max))
}

pub fn dtkap<T: Scalar>(sim: &SimilarityMatrix<T>, k_max: usize) -> Result<f64> {
    dtkap_exact(sim, k_max).map(|r| to_f64(&r))
}

/// Class cosine distance ratio, global mean over unordered pairs.
pub fn ccdr<T: Scalar>(embeddings: &EmbeddingSet<T>, labels: &[String]) -> Result<f64> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let v: Vec<f64> = embeddings.row(i).iter().map(|x| x.as_f64()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter().map(|x| x / norm).collect()
            } else {
                v
            }
        })
        .collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0f64, 0usize, 0.0f64, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let cos: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let d = 1.0 - cos;
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        return Err(Error::InvalidInput(
            "ccdr needs at least two classes and one class with two members".into(),
        ));
    }
    let inter_mean = inter / n_inter as f64;
    if inter_mean.abs() < 1e-12 {
        return Err(Error::DegenerateCollapse);
    }
    Ok((intra / n_intra as f64) / inter_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::SimilarityMetric;

    /// Query 0 scored against candidates in the given rank order.
    fn single_query(hit_ranks: &[usize], others: usize) -> SimilarityMatrix<f64> {
        let n = others + 1;
        let mut scores = vec![0.0; n * n];
        for r in 1..=others {
            let s = 1.0 - r as f64 * 0.01;
            scores[r] = s;
            scores[r * n] = s;
        }
        let ids: Vec<String> = (0..n).map(|i| format!("img{i:03}")).collect();
        // Non-hits get unique labels so only the query's class is eligible.
        let mut labels: Vec<String> = (0..n).map(|i| format!("other{i}")).collect();
        labels[0] = "q".into();
        for &r in hit_ranks {
            labels[r] = "q".into();
        }
        SimilarityMatrix::from_scores(scores, ids, labels, SimilarityMetric::CosineSimilarity).unwrap()
    }

    fn query_only(sim: &SimilarityMatrix<f64>, k: usize, class_size: usize) -> BigRational {
        let hits = eligible_hits(sim).unwrap();
        let q = hits.into_iter().find(|q| q.query == 0).unwrap();
        let q = QueryHits { class_size, ..q };
        query_dtkap(&q, k)
    }

    #[test]
    fn worked_example_is_nine_hundredths() {
        let sim = single_query(&[4], 8);
        assert_eq!(query_only(&sim, 5, 6), ratio(9, 100));
    }

    #[test]
    fn matches_at_one_and_three() {
        let sim = single_query(&[1, 3], 6);
        assert_eq!(query_only(&sim, 5, 4), ratio(13, 18));
    }

    #[test]
    fn full_credit_when_all_hits() {
        let sim = single_query(&[1, 2, 3], 6);
        assert_eq!(dtkap_exact(&sim, 5).unwrap(), ratio(1, 1));
    }

    #[test]
    fn tkrmd_rank_four() {
        let sim = single_query(&[4], 6);
        let hits = eligible_hits(&sim).unwrap();
        let q = hits.iter().find(|q| q.query == 0).unwrap();
        assert!(query_hit_within(q, 5));
        assert!(!query_hit_within(q, 3));
    }

    #[test]
    fn no_eligible_queries() {
        let sim = single_query(&[], 3);
        assert!(matches!(tkrmd(&sim, 1), Err(Error::NoEligibleQueries)));
        assert!(matches!(dtkap(&sim, 5), Err(Error::NoEligibleQueries)));
        assert!(tkrmd(&single_query(&[1], 3), 0).is_err());
    }

    fn set(rows: Vec<Vec<f64>>) -> EmbeddingSet<f64> {
        EmbeddingSet::from_rows(
            rows[0].len(),
            false,
            rows.into_iter().enumerate().map(|(i, v)| (format!("i{i}"), v)),
        )
        .unwrap()
    }

    #[test]
    fn ccdr_examples() {
        let labels: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let s = set(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(ccdr(&s, &labels).unwrap(), 0.0);
        let s = set(vec![vec![0.3, 0.4]; 4]);
        assert!(matches!(ccdr(&s, &labels), Err(Error::DegenerateCollapse)));
        let one: Vec<String> = vec!["a".into(); 4];
        assert!(ccdr(&s, &one).is_err());
    }
}
