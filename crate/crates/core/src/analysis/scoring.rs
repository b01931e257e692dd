use rayon::prelude::*;

use super::{with_pool, AnalysisError};
use crate::dataset::{resolve_images, ExperimentManifest, ScoreTable};
use crate::encoder::{self, load_embeddings, save_embeddings, source_id, ImageEncoder};
use crate::metric::{score_with_diagnostics, EmbeddingVector, PromptRun};

/// Where embeddings come from when scoring.
#[derive(Clone, Copy)]
pub enum EmbeddingSource<'a> {
    /// Only read `.scse` caches; a missing cache is an error.
    CacheOnly,
    /// Read caches when current, otherwise encode images and write the cache.
    Encoder(&'a dyn ImageEncoder),
}

fn check_cache(
    manifest: &ExperimentManifest,
    prompt_id: &str,
    vectors: &[EmbeddingVector],
    descriptor: &encoder::EncoderDescriptor,
    source: EmbeddingSource<'_>,
) -> Result<(), String> {
    if vectors.len() != manifest.seeds.len() {
        return Err(format!(
            "{} vectors for {} manifest seeds",
            vectors.len(),
            manifest.seeds.len()
        ));
    }
    for (v, &seed) in vectors.iter().zip(&manifest.seeds) {
        let want = source_id(prompt_id, seed);
        if v.source_id() != want {
            return Err(format!("found `{}` where `{want}` was expected", v.source_id()));
        }
    }
    if let EmbeddingSource::Encoder(enc) = source {
        if enc.descriptor() != descriptor {
            return Err(format!(
                "written by encoder {:?}, current encoder is {:?}",
                descriptor,
                enc.descriptor()
            ));
        }
    }
    Ok(())
}

/// Embeddings for one (model, prompt) in manifest seed order, cache first.
pub fn prompt_embeddings(
    manifest: &ExperimentManifest,
    model_id: &str,
    prompt_id: &str,
    source: EmbeddingSource<'_>,
) -> Result<Vec<EmbeddingVector>, AnalysisError> {
    let cache = manifest.layout().cache_path(model_id, prompt_id);
    if cache.is_file() {
        let (vectors, descriptor) =
            load_embeddings(&cache).map_err(|e| AnalysisError::Cache {
                prompt_id: prompt_id.into(),
                source: e,
            })?;
        match check_cache(manifest, prompt_id, &vectors, &descriptor, source) {
            Ok(()) => return Ok(vectors),
            Err(reason) => {
                if matches!(source, EmbeddingSource::CacheOnly) {
                    return Err(AnalysisError::StaleCache {
                        prompt_id: prompt_id.into(),
                        path: cache,
                        reason,
                    });
                }
                log::info!("re-encoding {model_id}/{prompt_id}: {reason}");
            }
        }
    }
    let EmbeddingSource::Encoder(enc) = source else {
        return Err(AnalysisError::MissingCache {
            prompt_id: prompt_id.into(),
            path: cache,
        });
    };
    let images = resolve_images(manifest, model_id, prompt_id)?;
    let vectors = encoder::encode(&images, enc).map_err(|e| AnalysisError::Encoder {
        prompt_id: prompt_id.into(),
        source: e,
    })?;
    save_embeddings(&vectors, enc.descriptor(), &cache).map_err(|e| AnalysisError::Cache {
        prompt_id: prompt_id.into(),
        source: e,
    })?;
    Ok(vectors)
}

/// One [`PromptRun`] per requested prompt over the full manifest seed list.
/// Every failing prompt is reported, not just the first.
pub fn load_prompt_runs(
    manifest: &ExperimentManifest,
    model_id: &str,
    prompt_ids: &[&str],
    source: EmbeddingSource<'_>,
    jobs: usize,
) -> Result<Vec<PromptRun>, AnalysisError> {
    if manifest.model(model_id).is_none() {
        return Err(AnalysisError::UnknownModel(model_id.into()));
    }
    let results: Vec<Result<PromptRun, AnalysisError>> = with_pool(jobs, || {
        prompt_ids
            .par_iter()
            .map(|&pid| {
                let vectors = prompt_embeddings(manifest, model_id, pid, source)?;
                PromptRun::new(pid, model_id, manifest.seeds.clone(), vectors).map_err(|e| {
                    AnalysisError::Metric {
                        prompt_id: pid.into(),
                        source: e,
                    }
                })
            })
            .collect()
    })?;
    let mut runs = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => errors.push(e),
        }
    }
    match AnalysisError::collect(errors) {
        Some(e) => Err(e),
        None => Ok(runs),
    }
}

/// Scores every manifest prompt for `model_id`.
///
/// Per-prompt work runs on `jobs` threads; the table is assembled in manifest
/// prompt order, so the output does not depend on `jobs`.
pub fn score_experiment(
    manifest: &ExperimentManifest,
    model_id: &str,
    source: EmbeddingSource<'_>,
    jobs: usize,
) -> Result<ScoreTable, AnalysisError> {
    let prompt_ids: Vec<&str> = manifest.prompt_ids().collect();
    let runs = load_prompt_runs(manifest, model_id, &prompt_ids, source, jobs)?;
    let details: Vec<_> = with_pool(jobs, || runs.par_iter().map(score_with_diagnostics).collect())?;
    let clamped = details.iter().map(|d| d.clamped_pairs).sum();
    let rows = runs
        .iter()
        .zip(details)
        .map(|(run, d)| (run.prompt_id().to_string(), d.value))
        .collect();
    let table = ScoreTable::new(model_id, rows).expect("manifest prompts are unique and nonempty");
    Ok(table.with_clamped_pairs(clamped))
}
