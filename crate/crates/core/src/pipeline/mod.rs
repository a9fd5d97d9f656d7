//! Canonicalization, training, scoring and evaluation.

mod canonical;
mod evaluate;
mod metrics;
mod scoring;
mod train;

pub use canonical::{canonical_frame, canonicalize, CanonicalFrame};
pub use evaluate::{evaluate, run_id, summarize, CategoryMetrics, EvalReport, Evaluation, MeanMetrics, ScoredSample};
pub use metrics::auroc;
pub use scoring::{
    heat_color, min_max_normalize, point_scores_from_tokens, prepare, result_from_errors, score, score_with, token_errors,
    AnomalyResult, Normalization, Prepared,
};
pub use train::{loss_csv, train, EpochSummary, LossRecord, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::model::ModelError;
use crate::tensor::TensorError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("category {category} lacks a class: {detail}")]
    MissingClass { category: String, detail: String },
    #[error("training diverged at step {step} on {sample}: {detail}")]
    Divergence { step: u64, sample: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<TokenizerError> for PipelineError {
    fn from(e: TokenizerError) -> Self {
        Self::Model(e.into())
    }
}
