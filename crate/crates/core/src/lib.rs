//! Open-set individual identification for patterned animals.
//!
//! The crate covers the whole offline pipeline:
//!
//! 1. **ingest** – JSONL manifests, flank identities, train/test splits.
//! 2. **preprocess** – crop, optional matting, equalized Canny edge channel,
//!    4-channel stacking, augmentation and normalization.
//! 3. **losses** – normalized softmax, CosFace, adaptive-margin CosFace,
//!    triplet loss and batch semi-hard negative mining.
//! 4. **sampler** – ID-grouped batches with a fixed number of exemplars per flank.
//! 5. **nn** / **trainer** – a small convolutional encoder with hand-written
//!    backpropagation, Adam, checkpointing by validation DT5AP.
//! 6. **evaluate** – one-vs-all similarity, TkRMD, DTkAP, CCDR, chance baseline.
//! 7. **matchdb** – the persistent graph of human match verdicts.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); rank metrics are
//! computed exactly with big rationals and converted at the edge.

pub mod embedding;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod io;
pub mod losses;
pub mod matchdb;
pub mod nn;
pub mod preprocess;
pub mod sampler;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision aliases, the default for training and serving.
pub type StackedInput = preprocess::StackedInput<f32>;
pub type EmbeddingSet = embedding::EmbeddingSet<f32>;
pub type SimilarityMatrix = evaluate::SimilarityMatrix<f32>;
pub type Encoder = nn::Encoder<f32>;
pub type AngularHead = losses::AngularHead<f32>;
pub type Checkpoint = trainer::Checkpoint<f32>;

/// Double-precision aliases, used for gradient verification.
pub type AngularHead64 = losses::AngularHead<f64>;
pub type Encoder64 = nn::Encoder<f64>;
