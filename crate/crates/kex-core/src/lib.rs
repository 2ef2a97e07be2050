//! One-class anomaly detection with transport-ranked augmentation selection.
//!
//! The pipeline embeds a class's images and their transformed versions with a
//! pretrained-style encoder, ranks each transformation by the Wasserstein
//! distance between embedding distributions, trains a compact residual CNN
//! with a multi-positive contrastive objective on the dynamically selected
//! positive/negative transforms, scores samples with a one-class SVM, and
//! evaluates AUROC under three benchmark protocols (SAD, SPA, SSA).

pub mod dataset;
pub mod error;
pub mod eval_report;
pub mod imageops;
pub mod knowledge_encoder;
pub mod pipeline;
pub mod protocols;
pub mod scoring;
pub mod seeding;
pub mod transform_bank;
pub mod transport_ranker;

pub mod contrastive_trainer;

pub use error::{Error, Result};
pub use knowledge_encoder::EmbeddingSet;
pub use transform_bank::{Bank, ImageBatch, TransformSpec};
pub use transport_ranker::{PairPolicy, TransformRanking, TransportConfig};
