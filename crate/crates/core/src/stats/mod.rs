//! Nonparametric statistics for comparing per-prompt score distributions.
//!
//! * [`ks_normality`]: one-sample Kolmogorov-Smirnov test against a normal
//!   with parameters estimated from the sample.
//! * [`ks_two_sample`]: two-sample Kolmogorov-Smirnov test.
//! * [`wilcoxon_signed_rank`]: paired Wilcoxon signed-rank test.
//! * [`summarize`]: mean, sample standard deviation and median.

mod ks;
mod summary;
mod wilcoxon;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ks::{
    kolmogorov_survival, ks_normality, ks_two_sample, two_sample_statistic, TwoSampleStatistic,
};
pub use summary::{summarize, SummaryStats};
pub use wilcoxon::{signed_rank_null_counts, wilcoxon_signed_rank, SignedRankTest, EXACT_MAX_N};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("insufficient sample: need at least {needed}, got {got}")]
    InsufficientSample { needed: usize, got: usize },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("paired samples differ in length: {left} vs {right}")]
    PairedLength { left: usize, right: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestName {
    KsNormality,
    KsTwoSample,
    WilcoxonSignedRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_name: TestName,
    pub statistic: f64,
    pub p_value: f64,
    /// Which computation path was taken (exact or asymptotic, zero and tie
    /// handling, estimated parameters).
    pub method_note: String,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}
