use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layout::Layout;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest does not match schema: {0}")]
    Schema(String),
    #[error("manifest field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ManifestError {
    ManifestError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Fixed generation settings shared by every seed of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub width: u32,
    pub height: u32,
    pub scheduler: String,
    pub guidance_scale: f64,
    pub num_inference_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: String,
    pub generation: GenerationParams,
    /// Optional restatement of the seed list; must equal the manifest's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub prompt_id: String,
    pub text: String,
    /// Per-model text appended to the prompt, keyed by model id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub suffix: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub models: Vec<ModelSpec>,
    pub prompts: Vec<PromptSpec>,
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the manifest's directory.
    pub layout_root: PathBuf,
}

/// Ids become path components, so they are restricted to a portable set.
pub fn validate_id(field: &str, id: &str) -> Result<(), ManifestError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.as_bytes()[0].is_ascii_alphanumeric()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("`{id}` must match [A-Za-z0-9][A-Za-z0-9._-]{{0,127}}"),
        ))
    }
}

impl ExperimentManifest {
    pub fn from_json(json: &str, base_dir: &Path) -> Result<Self, ManifestError> {
        let mut m: ExperimentManifest =
            serde_json::from_str(json).map_err(|e| ManifestError::Schema(e.to_string()))?;
        if m.layout_root.is_relative() {
            m.layout_root = base_dir.join(&m.layout_root);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        validate_id("experiment_id", &self.experiment_id)?;
        if self.models.is_empty() {
            return Err(invalid("models", "at least one model is required"));
        }
        if self.prompts.is_empty() {
            return Err(invalid("prompts", "at least one prompt is required"));
        }
        if self.seeds.len() < 2 {
            return Err(invalid(
                "seeds",
                format!("need at least 2 seeds to form a pair, got {}", self.seeds.len()),
            ));
        }
        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(invalid("seeds", format!("duplicate seed {s}")));
            }
        }

        let mut model_ids = HashSet::new();
        for (i, m) in self.models.iter().enumerate() {
            validate_id(&format!("models[{i}].model_id"), &m.model_id)?;
            if !model_ids.insert(m.model_id.as_str()) {
                return Err(invalid(
                    format!("models[{i}].model_id"),
                    format!("duplicate model id `{}`", m.model_id),
                ));
            }
            if let Some(seeds) = &m.seeds {
                if seeds != &self.seeds {
                    return Err(invalid(
                        format!("models[{i}].seeds"),
                        "differs from the manifest seed list (paired design requires identical seeds)",
                    ));
                }
            }
            let g = &m.generation;
            if g.width == 0 || g.height == 0 {
                return Err(invalid(format!("models[{i}].generation"), "zero image size"));
            }
            if !g.guidance_scale.is_finite() {
                return Err(invalid(
                    format!("models[{i}].generation.guidance_scale"),
                    "not finite",
                ));
            }
        }

        let mut prompt_ids = HashSet::new();
        for (i, p) in self.prompts.iter().enumerate() {
            validate_id(&format!("prompts[{i}].prompt_id"), &p.prompt_id)?;
            if !prompt_ids.insert(p.prompt_id.as_str()) {
                return Err(invalid(
                    format!("prompts[{i}].prompt_id"),
                    format!("duplicate prompt id `{}`", p.prompt_id),
                ));
            }
            if let Some(k) = p.suffix.keys().find(|k| !model_ids.contains(k.as_str())) {
                return Err(invalid(
                    format!("prompts[{i}].suffix"),
                    format!("unknown model `{k}`"),
                ));
            }
        }
        Ok(())
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn prompt(&self, prompt_id: &str) -> Option<&PromptSpec> {
        self.prompts.iter().find(|p| p.prompt_id == prompt_id)
    }

    pub fn prompt_ids(&self) -> impl Iterator<Item = &str> {
        self.prompts.iter().map(|p| p.prompt_id.as_str())
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(|m| m.model_id.as_str())
    }

    /// Prompt text as sent to `model_id`, including any per-model suffix.
    pub fn prompt_text(&self, model_id: &str, prompt_id: &str) -> Option<String> {
        let p = self.prompt(prompt_id)?;
        let mut text = p.text.clone();
        if let Some(s) = p.suffix.get(model_id) {
            text.push_str(s);
        }
        Some(text)
    }

    pub fn expected_image_count(&self) -> usize {
        self.models.len() * self.prompts.len() * self.seeds.len()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.layout_root, &self.experiment_id)
    }
}

pub fn load_manifest(file: &Path) -> Result<ExperimentManifest, ManifestError> {
    let json = std::fs::read_to_string(file).map_err(|source| ManifestError::Io {
        path: file.to_path_buf(),
        source,
    })?;
    let base = file.parent().unwrap_or_else(|| Path::new("."));
    ExperimentManifest::from_json(&json, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> serde_json::Value {
        json!({
            "experiment_id": "exp1",
            "layout_root": "data",
            "seeds": [11, 22],
            "models": [{
                "model_id": "sdxl",
                "generation": {"width": 768, "height": 768, "scheduler": "K_EULER",
                               "guidance_scale": 7.5, "num_inference_steps": 20}
            }],
            "prompts": [{"prompt_id": "p1", "text": "a red fox"}]
        })
    }

    fn parse(v: &serde_json::Value) -> Result<ExperimentManifest, ManifestError> {
        ExperimentManifest::from_json(&v.to_string(), Path::new("/base"))
    }

    fn field_of(e: ManifestError) -> String {
        match e {
            ManifestError::Invalid { field, .. } => field,
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn minimal_manifest_loads() {
        let m = parse(&base()).unwrap();
        assert_eq!(m.layout_root, PathBuf::from("/base/data"));
        assert_eq!(m.expected_image_count(), 2);
        assert_eq!(m.prompt_text("sdxl", "p1").unwrap(), "a red fox");
    }

    #[test]
    fn single_seed_rejected() {
        let mut v = base();
        v["seeds"] = json!([5]);
        assert_eq!(field_of(parse(&v).unwrap_err()), "seeds");
    }

    #[test]
    fn duplicates_rejected() {
        let mut v = base();
        v["seeds"] = json!([5, 5]);
        assert_eq!(field_of(parse(&v).unwrap_err()), "seeds");

        let mut v = base();
        let p = v["prompts"][0].clone();
        v["prompts"] = json!([p.clone(), p]);
        assert_eq!(field_of(parse(&v).unwrap_err()), "prompts[1].prompt_id");

        let mut v = base();
        let m = v["models"][0].clone();
        v["models"] = json!([m.clone(), m]);
        assert_eq!(field_of(parse(&v).unwrap_err()), "models[1].model_id");
    }

    #[test]
    fn unpaired_seeds_rejected() {
        let mut v = base();
        v["models"][0]["seeds"] = json!([22, 11]);
        assert_eq!(field_of(parse(&v).unwrap_err()), "models[0].seeds");
        v["models"][0]["seeds"] = json!([11, 22]);
        assert!(parse(&v).is_ok());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("seeds");
        match parse(&v).unwrap_err() {
            ManifestError::Schema(msg) => assert!(msg.contains("seeds"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let mut v = base();
        v["models"][0]["generation"]["guidance"] = json!(7.5);
        assert!(matches!(parse(&v).unwrap_err(), ManifestError::Schema(_)));
    }

    #[test]
    fn ids_must_be_path_safe() {
        for bad in ["", "../x", "a/b", ".hidden", "sp ace"] {
            let mut v = base();
            v["prompts"][0]["prompt_id"] = json!(bad);
            assert_eq!(field_of(parse(&v).unwrap_err()), "prompts[0].prompt_id", "{bad}");
        }
    }

    #[test]
    fn suffix_applies_per_model() {
        let mut v = base();
        v["prompts"][0]["suffix"] = json!({"sdxl": " in the style of Monet"});
        let m = parse(&v).unwrap();
        assert_eq!(m.prompt_text("sdxl", "p1").unwrap(), "a red fox in the style of Monet");
        v["prompts"][0]["suffix"] = json!({"other": "x"});
        assert_eq!(field_of(parse(&v).unwrap_err()), "prompts[0].suffix");
    }

    #[test]
    fn full_scale_manifest() {
        let mut v = base();
        v["seeds"] = json!((1..=20).collect::<Vec<u64>>());
        let mut m2 = v["models"][0].clone();
        m2["model_id"] = json!("pixart-alpha");
        v["models"] = json!([v["models"][0].clone(), m2]);
        v["prompts"] = json!((0..100)
            .map(|i| json!({"prompt_id": format!("p{i:03}"), "text": format!("prompt {i}")}))
            .collect::<Vec<_>>());
        let m = parse(&v).unwrap();
        assert_eq!(m.expected_image_count(), 4000);
    }
}
