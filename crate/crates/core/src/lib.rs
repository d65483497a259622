//! Out-of-distribution detection with LLM-generated peer classes.
//!
//! Frozen image/text features pass through a small projection head trained
//! with a peer-class contrastive loss and cross-entropy; test inputs are
//! scored by their k-th nearest-neighbour distance to the training set in the
//! concatenated, per-layer-normalised head features.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the two
//! precisions used in practice.

pub mod bench;
pub mod config;
pub mod encoders;
pub mod error;
pub mod head;
pub mod knn;
pub mod losses;
pub mod peer_gen;
pub mod persist;
pub mod scalar;
pub mod trainer;

pub use error::{OdpcError, Result};
pub use scalar::Scalar;

pub type EmbeddingMatrix32 = encoders::EmbeddingMatrix<f32>;
pub type EmbeddingMatrix64 = encoders::EmbeddingMatrix<f64>;
pub type MlpHead32 = head::MlpHead<f32>;
pub type MlpHead64 = head::MlpHead<f64>;
pub type FeatureBank32 = knn::FeatureBank<f32>;
pub type FeatureBank64 = knn::FeatureBank<f64>;
