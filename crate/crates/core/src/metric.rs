//! Semantic consistency score over CLIP image embeddings.
//!
//! For the `N` embeddings `E_1..E_N` of one prompt's repeated generations the
//! score is the mean, over every unordered pair `i < j`, of
//! `max(100 * cos(E_i, E_j), 0)`. The clamp applies per pair, before the mean.
//!
//! Embeddings are stored in single precision (what encoders emit) but every
//! dot product, norm and running sum is accumulated in `f64`. Pairs are always
//! summed in lexicographic `(i, j)` order so a score is bit-reproducible.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("dimension mismatch: expected {expected}, found {found} (source `{source_id}`)")]
    Dimension {
        expected: usize,
        found: usize,
        source_id: String,
    },
    #[error("invalid embedding `{source_id}`: {reason}")]
    InvalidEmbedding { source_id: String, reason: String },
    #[error("insufficient images: need at least 2, got {n}")]
    InsufficientImages { n: usize },
    #[error("run has {embeddings} embeddings but {seeds} seeds")]
    SeedCount { embeddings: usize, seeds: usize },
    #[error("duplicate seed {0} in run")]
    DuplicateSeed(u64),
    #[error("score {0} outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("n_pairs {n_pairs} inconsistent with n_images {n_images}")]
    PairCount { n_images: usize, n_pairs: usize },
}

/// One image's visual embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmbedding", into = "RawEmbedding")]
pub struct EmbeddingVector {
    source_id: String,
    values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct RawEmbedding {
    source_id: String,
    values: Vec<f32>,
}

impl TryFrom<RawEmbedding> for EmbeddingVector {
    type Error = MetricError;

    fn try_from(raw: RawEmbedding) -> Result<Self, Self::Error> {
        EmbeddingVector::new(raw.source_id, raw.values)
    }
}

impl From<EmbeddingVector> for RawEmbedding {
    fn from(v: EmbeddingVector) -> Self {
        RawEmbedding {
            source_id: v.source_id,
            values: v.values,
        }
    }
}

impl EmbeddingVector {
    /// Rejects empty, non-finite and zero vectors.
    pub fn new(source_id: impl Into<String>, values: Vec<f32>) -> Result<Self, MetricError> {
        let source_id = source_id.into();
        let invalid = |reason: &str| MetricError::InvalidEmbedding {
            source_id: source_id.clone(),
            reason: reason.to_string(),
        };
        if values.is_empty() {
            return Err(invalid("empty vector"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(&format!("non-finite coordinate at index {i}")));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(invalid("zero vector"));
        }
        Ok(Self { source_id, values })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// L2-normalized copy in double precision.
    pub fn unit(&self) -> Vec<f64> {
        let norm = self.norm();
        self.values.iter().map(|&v| f64::from(v) / norm).collect()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(), MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::Dimension {
            expected: a.dim(),
            found: b.dim(),
            source_id: b.source_id.clone(),
        });
    }
    Ok(())
}

/// Cosine similarity, accumulated in `f64` and clipped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

/// `max(100 * cos(a, b), 0)`.
pub fn pairwise_clamped_similarity(
    a: &EmbeddingVector,
    b: &EmbeddingVector,
) -> Result<f64, MetricError> {
    Ok(clamp_scaled(cosine_similarity(a, b)?))
}

#[inline]
fn clamp_scaled(cos: f64) -> f64 {
    (100.0 * cos).max(0.0)
}

#[inline]
fn unit_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        .clamp(-1.0, 1.0)
}

/// The `N` embeddings of one (prompt, model) pair, indexed by seed.
///
/// Vectors are L2-normalized once on construction; all pairwise work after
/// that is plain dot products.
#[derive(Debug, Clone)]
pub struct PromptRun {
    prompt_id: String,
    model_id: String,
    seeds: Vec<u64>,
    embeddings: Vec<EmbeddingVector>,
    units: Vec<Vec<f64>>,
}

impl PromptRun {
    pub fn new(
        prompt_id: impl Into<String>,
        model_id: impl Into<String>,
        seeds: Vec<u64>,
        embeddings: Vec<EmbeddingVector>,
    ) -> Result<Self, MetricError> {
        if embeddings.len() != seeds.len() {
            return Err(MetricError::SeedCount {
                embeddings: embeddings.len(),
                seeds: seeds.len(),
            });
        }
        if embeddings.len() < 2 {
            return Err(MetricError::InsufficientImages {
                n: embeddings.len(),
            });
        }
        let mut seen = HashSet::with_capacity(seeds.len());
        for &s in &seeds {
            if !seen.insert(s) {
                return Err(MetricError::DuplicateSeed(s));
            }
        }
        let first = &embeddings[0];
        for e in &embeddings[1..] {
            check_dims(first, e)?;
        }
        let units = embeddings.iter().map(EmbeddingVector::unit).collect();
        Ok(Self {
            prompt_id: prompt_id.into(),
            model_id: model_id.into(),
            seeds,
            embeddings,
            units,
        })
    }

    /// Builds a run with seeds `0..N`, for callers that only have vectors.
    pub fn from_embeddings(
        prompt_id: impl Into<String>,
        model_id: impl Into<String>,
        embeddings: Vec<EmbeddingVector>,
    ) -> Result<Self, MetricError> {
        let seeds = (0..embeddings.len() as u64).collect();
        Self::new(prompt_id, model_id, seeds, embeddings)
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn embeddings(&self) -> &[EmbeddingVector] {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    /// The run restricted to its first `r` seeds.
    pub fn prefix(&self, r: usize) -> Result<PromptRun, MetricError> {
        if r < 2 || r > self.len() {
            return Err(MetricError::InsufficientImages { n: r.min(self.len()) });
        }
        Ok(PromptRun {
            prompt_id: self.prompt_id.clone(),
            model_id: self.model_id.clone(),
            seeds: self.seeds[..r].to_vec(),
            embeddings: self.embeddings[..r].to_vec(),
            units: self.units[..r].to_vec(),
        })
    }
}

/// Score of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScsValue {
    score: f64,
    n_images: usize,
    n_pairs: usize,
}

impl ScsValue {
    pub fn new(score: f64, n_images: usize, n_pairs: usize) -> Result<Self, MetricError> {
        if !(0.0..=100.0).contains(&score) {
            return Err(MetricError::ScoreOutOfRange(score));
        }
        if n_images < 2 {
            return Err(MetricError::InsufficientImages { n: n_images });
        }
        if n_pairs != pair_count(n_images) {
            return Err(MetricError::PairCount { n_images, n_pairs });
        }
        Ok(Self {
            score,
            n_images,
            n_pairs,
        })
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }
}

/// `C(n, 2)`.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Score plus the number of pairs whose raw cosine was negative, i.e. where
/// the clamp changed the summand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreDetail {
    pub value: ScsValue,
    pub clamped_pairs: usize,
}

fn score_units(units: &[Vec<f64>]) -> ScoreDetail {
    let n = units.len();
    let mut sum = 0.0f64;
    let mut clamped = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let cos = unit_dot(&units[i], &units[j]);
            if cos < 0.0 {
                clamped += 1;
            }
            sum += clamp_scaled(cos);
        }
    }
    let n_pairs = pair_count(n);
    let score = (sum / n_pairs as f64).clamp(0.0, 100.0);
    ScoreDetail {
        value: ScsValue {
            score,
            n_images: n,
            n_pairs,
        },
        clamped_pairs: clamped,
    }
}

pub fn semantic_consistency_score(run: &PromptRun) -> ScsValue {
    score_units(&run.units).value
}

pub fn score_with_diagnostics(run: &PromptRun) -> ScoreDetail {
    score_units(&run.units)
}

/// Dense symmetric matrix of clamped pairwise similarities; diagonal is 100.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n)
    }

    /// Mean of the strict upper triangle.
    pub fn upper_mean(&self) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                sum += self.get(i, j);
            }
        }
        sum / pair_count(self.n) as f64
    }
}

pub fn pairwise_matrix(run: &PromptRun) -> SimilarityMatrix {
    let n = run.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 100.0;
        for j in (i + 1)..n {
            let s = clamp_scaled(unit_dot(&run.units[i], &run.units[j]));
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    SimilarityMatrix { n, values }
}
