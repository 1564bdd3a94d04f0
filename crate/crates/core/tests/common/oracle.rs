//! Brute-force reference implementations, written without the library.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_bigint::BigInt;
use num_rational::BigRational;

fn frac(n: usize, d: usize) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Other items ordered by score descending, then id ascending.
pub fn ranking(scores: &[Vec<f64>], ids: &[String], q: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..scores.len()).filter(|&j| j != q).collect();
    others.sort_by(|&a, &b| {
        scores[q][b]
            .partial_cmp(&scores[q][a])
            .unwrap()
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    others
}

fn size_of(labels: &[String], q: usize) -> usize {
    labels.iter().filter(|l| **l == labels[q]).count()
}

pub fn tkrmd(scores: &[Vec<f64>], ids: &[String], labels: &[String], k: usize) -> Option<BigRational> {
    let mut hits = 0;
    let mut eligible = 0;
    for q in 0..scores.len() {
        if size_of(labels, q) < 2 {
            continue;
        }
        eligible += 1;
        let r = ranking(scores, ids, q);
        if r.iter().take(k).any(|&j| labels[j] == labels[q]) {
            hits += 1;
        }
    }
    (eligible > 0).then(|| frac(hits, eligible))
}

pub fn dtkap(scores: &[Vec<f64>], ids: &[String], labels: &[String], k_max: usize) -> Option<BigRational> {
    let mut total = BigRational::from_integer(BigInt::from(0));
    let mut eligible = 0;
    for q in 0..scores.len() {
        let size = size_of(labels, q);
        if size < 2 {
            continue;
        }
        eligible += 1;
        let k_i = (size - 1).min(k_max);
        let r = ranking(scores, ids, q);
        let mut per_query = BigRational::from_integer(BigInt::from(0));
        for j in 1..=k_i {
            let found = r[..j].iter().filter(|&&x| labels[x] == labels[q]).count();
            per_query += frac(found, j);
        }
        total += per_query / BigRational::from_integer(BigInt::from(k_i));
    }
    (eligible > 0).then(|| total / BigRational::from_integer(BigInt::from(eligible)))
}

/// Mean within-class over mean across-class cosine distance, all pairs i < j.
pub fn ccdr(vectors: &[Vec<f64>], labels: &[String]) -> Option<f64> {
    let unit: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            if labels[i] == labels[j] {
                intra += 1.0 - cos;
                ni += 1;
            } else {
                inter += 1.0 - cos;
                nx += 1;
            }
        }
    }
    if ni == 0 || nx == 0 || inter / (nx as f64) < 1e-12 {
        return None;
    }
    Some((intra / ni as f64) / (inter / nx as f64))
}

fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Expected TkRMD under uniformly random rankings: per eligible query,
/// `1 - C(N-c, k) / C(N-1, k)` with `c` its class size.
pub fn chance_tkrmd(class_sizes: &[usize], k: usize) -> f64 {
    let n: usize = class_sizes.iter().sum();
    let (mut sum, mut eligible) = (0.0, 0usize);
    for &c in class_sizes.iter().filter(|&&c| c >= 2) {
        sum += c as f64 * (1.0 - choose(n - c, k) / choose(n - 1, k));
        eligible += c;
    }
    sum / eligible as f64
}

/// Reference match graph: current verdict per unordered pair, closure by BFS.
#[derive(Default)]
pub struct PairGraph {
    pub current: BTreeMap<(String, String), bool>,
}

impl PairGraph {
    fn key(a: &str, b: &str) -> (String, String) {
        if a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    pub fn set(&mut self, a: &str, b: &str, confirmed: bool) {
        self.current.insert(Self::key(a, b), confirmed);
    }

    pub fn component(&self, anchor: &str) -> BTreeSet<String> {
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for ((a, b), &c) in &self.current {
            if c {
                adj.entry(a).or_default().push(b);
                adj.entry(b).or_default().push(a);
            }
        }
        let mut seen = BTreeSet::from([anchor.to_string()]);
        let mut queue = VecDeque::from([anchor]);
        while let Some(x) = queue.pop_front() {
            for &y in adj.get(x).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(y.to_string()) {
                    queue.push_back(y);
                }
            }
        }
        seen
    }

    pub fn exclusion(&self, anchor: &str) -> BTreeSet<String> {
        let mut out = self.component(anchor);
        out.remove(anchor);
        for ((a, b), &c) in &self.current {
            if !c {
                if a == anchor {
                    out.insert(b.clone());
                } else if b == anchor {
                    out.insert(a.clone());
                }
            }
        }
        out
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over components.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
