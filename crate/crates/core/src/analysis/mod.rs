//! End-to-end workflows: score every prompt of a model, compare two models,
//! sweep repetition counts, and measure agreement with human annotators.

mod agreement;
mod compare;
mod scoring;
mod sensitivity;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::encoder::{EncoderError, ScseError};
use crate::metric::MetricError;

pub use agreement::{compute_agreement, AgreementReport, AnnotatorAgreement};
pub use compare::{compare_models, ComparisonReport, PromptComparison, RankSums, TestOutcome, TIE};
pub use scoring::{load_prompt_runs, prompt_embeddings, score_experiment, EmbeddingSource};
pub use sensitivity::{
    sensitivity_analysis, SensitivityReport, CONVERGENCE_TOLERANCE, HALF_PERCENT,
    REFERENCE_REPETITIONS,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("prompt `{prompt_id}`: {source}")]
    Encoder {
        prompt_id: String,
        #[source]
        source: EncoderError,
    },
    #[error("prompt `{prompt_id}`: embedding cache: {source}")]
    Cache {
        prompt_id: String,
        #[source]
        source: ScseError,
    },
    #[error("prompt `{prompt_id}`: no embedding cache at {path} and no encoder configured")]
    MissingCache { prompt_id: String, path: PathBuf },
    #[error("prompt `{prompt_id}`: stale embedding cache {path}: {reason}")]
    StaleCache {
        prompt_id: String,
        path: PathBuf,
        reason: String,
    },
    #[error("prompt `{prompt_id}`: {source}")]
    Metric {
        prompt_id: String,
        #[source]
        source: MetricError,
    },
    #[error("prompt `{prompt_id}`: insufficient images, need {needed} seeds but {available} available")]
    InsufficientImages {
        prompt_id: String,
        needed: usize,
        available: usize,
    },
    #[error("score tables are not paired: only in `{model_a}`: {only_in_a:?}; only in `{model_b}`: {only_in_b:?}")]
    Pairing {
        model_a: String,
        model_b: String,
        only_in_a: Vec<String>,
        only_in_b: Vec<String>,
    },
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("invalid repetition grid: {0}")]
    InvalidGrid(String),
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Many(Vec<AnalysisError>),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl AnalysisError {
    /// Folds a list of per-prompt failures into one error.
    pub(crate) fn collect(mut errors: Vec<AnalysisError>) -> Option<AnalysisError> {
        match errors.len() {
            0 => None,
            1 => errors.pop(),
            _ => Some(AnalysisError::Many(errors)),
        }
    }
}

pub(crate) fn with_pool<T: Send>(
    jobs: usize,
    f: impl FnOnce() -> T + Send,
) -> Result<T, AnalysisError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| AnalysisError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}
