//! Supervised hash learning for multi-label retrieval.
//!
//! Codes are learned from quantified (cosine) label similarity with a joint
//! cross-entropy / mean-square-error pairwise objective, binarized by sign,
//! and searched by Hamming ranking. The numeric core is generic over
//! [`Scalar`]; the aliases below pin it to `f64` (the default everywhere) or `f32`.

pub mod config;
pub mod data;
pub mod error;
pub mod index;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod pipeline;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use index::{binarize, hamming, inner_product, BinaryCode, CodeDatabase, RankedList};
pub use labels::{classify_pair, cosine_label_similarity, LabelVector, PairSimilarity, SimilarityMode};
pub use metrics::{MetricsReport, TopN};
pub use model::{Architecture, HashModel};
pub use objective::{LossConfig, LossMode, PairBatch};
pub use scalar::Scalar;
pub use trainer::{TrainConfig, TrainReport};

pub type HashModelF64 = model::HashModel<f64>;
pub type HashModelF32 = model::HashModel<f32>;
pub type LossConfigF64 = objective::LossConfig<f64>;
pub type LossConfigF32 = objective::LossConfig<f32>;
pub type RelaxedCodeF64 = model::RelaxedCode<f64>;
pub type GradientsF64 = model::Gradients<f64>;
