//! Canonical on-disk layout:
//!
//! ```text
//! <layout_root>/<experiment_id>/<model_id>/<prompt_id>/<seed>.png   images
//! <layout_root>/<experiment_id>/<model_id>/<prompt_id>.scse         embedding cache
//! <layout_root>/<experiment_id>.scores/<model_id>.csv               score tables
//! <layout_root>/<experiment_id>.annotations.jsonl                   annotation store
//! ```

use std::path::{Component, Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    layout_root: PathBuf,
    experiment_id: String,
}

impl Layout {
    pub fn new(layout_root: impl Into<PathBuf>, experiment_id: impl Into<String>) -> Self {
        Self {
            layout_root: layout_root.into(),
            experiment_id: experiment_id.into(),
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.layout_root.join(&self.experiment_id)
    }

    pub fn prompt_dir(&self, model_id: &str, prompt_id: &str) -> PathBuf {
        self.experiment_dir().join(model_id).join(prompt_id)
    }

    pub fn image_path(&self, model_id: &str, prompt_id: &str, seed: u64) -> PathBuf {
        self.prompt_dir(model_id, prompt_id)
            .join(format!("{seed}.png"))
    }

    pub fn cache_path(&self, model_id: &str, prompt_id: &str) -> PathBuf {
        self.experiment_dir()
            .join(model_id)
            .join(format!("{prompt_id}.scse"))
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.layout_root
            .join(format!("{}.scores", self.experiment_id))
    }

    pub fn scores_path(&self, model_id: &str) -> PathBuf {
        self.scores_dir().join(format!("{model_id}.csv"))
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.layout_root
            .join(format!("{}.annotations.jsonl", self.experiment_id))
    }

    /// Inverse of [`Layout::image_path`]: recovers `(model_id, prompt_id, seed)`.
    pub fn parse_image_path(&self, path: &Path) -> Option<(String, String, u64)> {
        let rel = path.strip_prefix(self.experiment_dir()).ok()?;
        let parts: Vec<&str> = rel
            .components()
            .map(|c| match c {
                Component::Normal(s) => s.to_str(),
                _ => None,
            })
            .collect::<Option<_>>()?;
        let [model, prompt, file] = parts.as_slice() else {
            return None;
        };
        let stem = file.strip_suffix(".png")?;
        let seed: u64 = stem.parse().ok()?;
        // only the canonical decimal spelling maps back
        if seed.to_string() != stem {
            return None;
        }
        Some((model.to_string(), prompt.to_string(), seed))
    }
}
