use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::metrics::{ccdr, dtkap_of, eligible_hits, query_dtkap, tkrmd_of, to_f64};
use super::similarity::{similarity_matrix, SimilarityMetric};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::ingest::Manifest;
use crate::io::write_atomic;
use crate::scalar::{normalized, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMatch {
    pub image_id: String,
    pub score: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDiagnostics {
    pub query_id: String,
    pub label: String,
    pub class_size: usize,
    pub k_i: usize,
    /// The top `k_max` candidates.
    pub ranked: Vec<RankMatch>,
    /// 1-based ranks of every true match in the full ranking.
    pub hit_ranks: Vec<usize>,
    pub dtkap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: SimilarityMetric,
    pub k_max: usize,
    pub dtkap: f64,
    /// `tkrmd[k - 1]` is TkRMD for `k` in `1..=k_max`.
    pub tkrmd: Vec<f64>,
    /// `None` when the gallery has a single class.
    pub ccdr: Option<f64>,
    pub num_images: usize,
    pub eligible_queries: usize,
    pub queries: Vec<QueryDiagnostics>,
}

impl EvalReport {
    pub fn tkrmd_at(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.tkrmd.get(i)).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One-vs-all evaluation of a labeled embedding set.
pub fn evaluate<T: Scalar>(
    embeddings: &EmbeddingSet<T>,
    labels: &[String],
    metric: SimilarityMetric,
    k_max: usize,
) -> Result<EvalReport> {
    if k_max == 0 {
        return Err(Error::InvalidInput("k_max must be at least 1".into()));
    }
    let sim = similarity_matrix(embeddings, labels, metric)?;
    let hits = eligible_hits(&sim)?;
    let tkrmd = (1..=k_max).map(|k| to_f64(&tkrmd_of(&hits, k))).collect();
    let dtkap = to_f64(&dtkap_of(&hits, k_max));
    let ids = sim.ids();
    let queries = hits
        .iter()
        .map(|q| QueryDiagnostics {
            query_id: ids[q.query].clone(),
            label: labels[q.query].clone(),
            class_size: q.class_size,
            k_i: (q.class_size - 1).min(k_max),
            ranked: q
                .ranked
                .iter()
                .zip(&q.hits)
                .take(k_max)
                .map(|(&j, &hit)| RankMatch {
                    image_id: ids[j].clone(),
                    score: sim.score(q.query, j).as_f64(),
                    hit,
                })
                .collect(),
            hit_ranks: q
                .hits
                .iter()
                .enumerate()
                .filter(|(_, &h)| h)
                .map(|(r, _)| r + 1)
                .collect(),
            dtkap: to_f64(&query_dtkap(q, k_max)),
        })
        .collect();
    let ccdr = ccdr(embeddings, labels).ok();
    Ok(EvalReport {
        metric,
        k_max,
        dtkap,
        tkrmd,
        ccdr,
        num_images: sim.len(),
        eligible_queries: hits.len(),
        queries,
    })
}

/// Evaluates independent random unit vectors as the chance floor.
pub fn naive_baseline(manifest: &Manifest, dim: usize, k_max: usize, seed: u64) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Empty("manifest shard".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = EmbeddingSet::<f64>::new(dim, true);
    for r in manifest.records() {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        set.push(r.image_id.clone(), v)?;
    }
    evaluate(&set, &manifest.flank_ids(), SimilarityMetric::CosineSimilarity, k_max)
}

/// Writes `k,tkrmd` rows.
pub fn write_rank_curve(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "k,tkrmd")?;
    for (i, v) in report.tkrmd.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v)?;
    }
    write_atomic(path, &out)
}

/// Writes `image_id,label,x,y,z` with every point projected onto the unit sphere.
pub fn sphere_demo_export<T: Scalar>(embeddings: &EmbeddingSet<T>, labels: &[String], path: &Path) -> Result<()> {
    if embeddings.dim() != 3 {
        return Err(Error::Shape(format!("sphere export needs D=3, got {}", embeddings.dim())));
    }
    if labels.len() != embeddings.len() {
        return Err(Error::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "label", "x", "y", "z"])
        .map_err(csv_err)?;
    for ((id, v), label) in embeddings.iter().zip(labels) {
        let v: Vec<f64> = normalized(&v.iter().map(|x| x.as_f64()).collect::<Vec<_>>());
        w.write_record([id.to_string(), label.clone(), v[0].to_string(), v[1].to_string(), v[2].to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_atomic(path, &bytes)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ImageRecord, Side};

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_clusters() {
        let set = EmbeddingSet::<f64>::from_rows(
            2,
            true,
            [
                ("a1", vec![1.0, 0.0]),
                ("a2", vec![0.99, 0.1]),
                ("b1", vec![0.0, 1.0]),
                ("b2", vec![0.1, 0.99]),
            ]
            .map(|(i, v)| (i.to_string(), v)),
        )
        .unwrap();
        let r = evaluate(&set, &labels(&["a", "a", "b", "b"]), SimilarityMetric::CosineSimilarity, 5).unwrap();
        assert_eq!(r.dtkap, 1.0);
        assert_eq!(r.tkrmd, vec![1.0; 5]);
        assert_eq!(r.eligible_queries, 4);
        assert_eq!(r.queries[0].hit_ranks, vec![1]);
        assert_eq!(r.queries[0].k_i, 1);
        assert!(r.ccdr.unwrap() < 0.1);
        assert_eq!(r.tkrmd_at(5), Some(1.0));
        assert_eq!(r.tkrmd_at(0), None);
        let json = r.to_json().unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn naive_two_images_one_class() {
        let records = vec![
            ImageRecord::new("x1", "x", Side::Left, "x1.png"),
            ImageRecord::new("x2", "x", Side::Left, "x2.png"),
        ];
        let m = Manifest::new(records).unwrap();
        let r = naive_baseline(&m, 8, 1, 3).unwrap();
        assert_eq!(r.tkrmd, vec![1.0]);
        assert!(r.ccdr.is_none());
        assert!(matches!(naive_baseline(&Manifest::new(vec![]).unwrap(), 8, 5, 0), Err(Error::Empty(_))));
    }

    #[test]
    fn sphere_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let set = EmbeddingSet::<f32>::from_rows(
            3,
            false,
            (0..4).map(|i| (format!("i{i}"), vec![i as f32 + 1.0, 2.0, -3.0])),
        )
        .unwrap();
        sphere_demo_export(&set, &labels(&["a", "a", "b", "b"]), &path).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4);
        for row in rows {
            let n: f64 = (2..5).map(|c| row[c].parse::<f64>().unwrap().powi(2)).sum();
            assert!((n - 1.0).abs() < 1e-6);
        }

        let empty = EmbeddingSet::<f32>::new(3, false);
        sphere_demo_export(&empty, &[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), "image_id,label,x,y,z");

        let flat = EmbeddingSet::<f32>::new(2, false);
        assert!(sphere_demo_export(&flat, &[], &path).is_err());
    }

    #[test]
    fn rank_curve_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let report = EvalReport {
            metric: SimilarityMetric::CosineSimilarity,
            k_max: 2,
            dtkap: 0.5,
            tkrmd: vec![0.5, 0.75],
            ccdr: None,
            num_images: 4,
            eligible_queries: 4,
            queries: vec![],
        };
        write_rank_curve(&report, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "k,tkrmd\n1,0.5\n2,0.75\n");
    }
}
