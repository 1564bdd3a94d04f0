//! One-vs-all evaluation.
//!
//! Every image is a query against all others. Candidates are ranked by
//! descending similarity, ties broken by ascending image id, the query itself
//! excluded. Queries whose class has a single member are not eligible.
//!
//! * **TkRMD**: fraction of eligible queries with at least one true match in
//!   the top `k`.
//! * **DTkAP**: with `k_i = min(|C_i| - 1, k_max)`, the mean over eligible
//!   queries of `(1/k_i) * sum_{j=1..k_i} P(j)`, `P(j)` being precision at
//!   rank `j`.
//! * **CCDR**: mean intra-class cosine distance over mean inter-class cosine
//!   distance, both averaged over all unordered pairs.
//!
//! Rank metrics are accumulated as exact rationals.

mod metrics;
mod report;
mod similarity;

pub use metrics::{ccdr, class_sizes, dtkap, dtkap_exact, tkrmd, tkrmd_exact};
pub use report::{evaluate, naive_baseline, sphere_demo_export, write_rank_curve, EvalReport, QueryDiagnostics, RankMatch};
pub use similarity::{similarity_matrix, SimilarityMatrix, SimilarityMetric};
