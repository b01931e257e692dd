//! ONNX image encoder backed by tract, a pure-Rust inference engine.
//!
//! Any vision model taking `[batch, 3, 224, 224]` float pixels and producing
//! `[batch, dim]` embeddings works, e.g. a CLIP vision tower with projection
//! exported from `transformers`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use scs_core::encoder::{EncoderDescriptor, EncoderError, ImageEncoder, PixelTensor};
use tract_onnx::prelude::*;

/// Output preferred when a model exposes several.
pub const EMBEDDING_OUTPUT: &str = "image_embeds";

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxEncoder {
    descriptor: EncoderDescriptor,
    plan: Plan,
    path: PathBuf,
}

impl std::fmt::Debug for OnnxEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxEncoder")
            .field("descriptor", &self.descriptor)
            .field("path", &self.path)
            .finish()
    }
}

fn build(path: &Path) -> TractResult<Plan> {
    let mut model = tract_onnx::onnx().model_for_path(path)?;
    let named = model
        .output_outlets()?
        .iter()
        .position(|&o| model.outlet_label(o) == Some(EMBEDDING_OUTPUT))
        .or_else(|| {
            model
                .output_outlets()
                .ok()?
                .iter()
                .position(|&o| model.node(o.node).name == EMBEDDING_OUTPUT)
        });
    let keep = model.output_outlets()?[named.unwrap_or(0)];
    model.select_output_outlets(&[keep])?;
    let [c, h, w] = PixelTensor::SHAPE;
    model
        .with_input_fact(0, f32::fact([1, c, h, w]).into())?
        .into_optimized()?
        .into_runnable()
}

fn run_one(plan: &Plan, pixels: &PixelTensor) -> TractResult<Vec<f32>> {
    let [c, h, w] = PixelTensor::SHAPE;
    let input = Tensor::from_shape(&[1, c, h, w], pixels.data())?;
    let out = plan.run(tvec!(input.into()))?;
    let view = out[0].to_plain_array_view::<f32>()?;
    Ok(view.iter().copied().collect())
}

impl OnnxEncoder {
    /// Loads the model and checks its output width against `descriptor`
    /// with one inference on a blank image.
    pub fn load(path: impl Into<PathBuf>, descriptor: EncoderDescriptor) -> Result<Self, EncoderError> {
        let path = path.into();
        descriptor.validate()?;
        let load_err = |e: TractError| EncoderError::ModelLoad {
            path: path.clone(),
            reason: format!("{e:#}"),
        };
        if !path.is_file() {
            return Err(EncoderError::ModelLoad {
                path: path.clone(),
                reason: "no such file".into(),
            });
        }
        let plan = build(&path).map_err(load_err)?;
        let probe = run_one(&plan, &PixelTensor::zeros()).map_err(load_err)?;
        if probe.len() != descriptor.embedding_dim {
            return Err(EncoderError::DescriptorMismatch {
                expected: descriptor.embedding_dim,
                found: probe.len(),
            });
        }
        log::debug!("loaded {} ({:?})", path.display(), descriptor);
        Ok(Self {
            descriptor,
            plan,
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ImageEncoder for OnnxEncoder {
    fn descriptor(&self) -> &EncoderDescriptor {
        &self.descriptor
    }

    fn embed(&self, batch: &[PixelTensor]) -> Result<Vec<Vec<f32>>, String> {
        batch
            .iter()
            .map(|t| run_one(&self.plan, t).map_err(|e| format!("{e:#}")))
            .collect()
    }
}
