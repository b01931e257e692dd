//! Experiment manifests, the canonical file layout, score tables and the
//! annotation store.

pub mod annotations;
pub mod layout;
pub mod manifest;
pub mod scores;

use std::path::PathBuf;

use thiserror::Error;

use crate::encoder::ImageRef;

pub use annotations::{effective_records, read_records, AnnotationLog, AnnotationRecord, StoreError};
pub use layout::Layout;
pub use manifest::{
    load_manifest, ExperimentManifest, GenerationParams, ManifestError, ModelSpec, PromptSpec,
};
pub use scores::{load_scores, load_scores_as, persist_scores, ScoreTable, ScoresError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingImage {
    pub seed: u64,
    pub path: PathBuf,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
    #[error("{} missing image(s) for {model_id}/{prompt_id}: {}", .missing.len(), format_gaps(.missing))]
    MissingImages {
        model_id: String,
        prompt_id: String,
        missing: Vec<MissingImage>,
    },
}

fn format_gaps(gaps: &[MissingImage]) -> String {
    gaps.iter()
        .map(|g| format!("seed {} ({})", g.seed, g.path.display()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One image per manifest seed, in seed order. Every absent file is reported.
pub fn resolve_images(
    manifest: &ExperimentManifest,
    model_id: &str,
    prompt_id: &str,
) -> Result<Vec<ImageRef>, DatasetError> {
    if manifest.model(model_id).is_none() {
        return Err(DatasetError::UnknownModel(model_id.into()));
    }
    if manifest.prompt(prompt_id).is_none() {
        return Err(DatasetError::UnknownPrompt(prompt_id.into()));
    }
    let layout = manifest.layout();
    let mut images = Vec::with_capacity(manifest.seeds.len());
    let mut missing = Vec::new();
    for &seed in &manifest.seeds {
        let path = layout.image_path(model_id, prompt_id, seed);
        if path.is_file() {
            images.push(
                ImageRef::from_path(path, prompt_id, seed).expect("canonical paths end in .png"),
            );
        } else {
            missing.push(MissingImage { seed, path });
        }
    }
    if !missing.is_empty() {
        return Err(DatasetError::MissingImages {
            model_id: model_id.into(),
            prompt_id: prompt_id.into(),
            missing,
        });
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn manifest(root: &Path) -> ExperimentManifest {
        let json = serde_json::json!({
            "experiment_id": "e",
            "layout_root": root,
            "seeds": [3, 1, 2],
            "models": [{"model_id": "m", "generation": {"width": 8, "height": 8,
                "scheduler": "K_EULER", "guidance_scale": 7.5, "num_inference_steps": 20}}],
            "prompts": [{"prompt_id": "p", "text": "t"}]
        });
        ExperimentManifest::from_json(&json.to_string(), root).unwrap()
    }

    #[test]
    fn resolves_in_seed_order_and_lists_all_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        let layout = m.layout();
        std::fs::create_dir_all(layout.prompt_dir("m", "p")).unwrap();
        std::fs::write(layout.image_path("m", "p", 1), b"x").unwrap();
        match resolve_images(&m, "m", "p") {
            Err(DatasetError::MissingImages { missing, .. }) => {
                assert_eq!(missing.iter().map(|g| g.seed).collect::<Vec<_>>(), vec![3, 2]);
            }
            other => panic!("{other:?}"),
        }
        for s in [2, 3] {
            std::fs::write(layout.image_path("m", "p", s), b"x").unwrap();
        }
        let imgs = resolve_images(&m, "m", "p").unwrap();
        assert_eq!(imgs.iter().map(|i| i.seed).collect::<Vec<_>>(), vec![3, 1, 2]);
        assert!(matches!(resolve_images(&m, "x", "p"), Err(DatasetError::UnknownModel(_))));
        assert!(matches!(resolve_images(&m, "m", "x"), Err(DatasetError::UnknownPrompt(_))));
    }
}
