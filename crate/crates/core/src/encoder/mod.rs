//! Image encoders and embedding persistence.
//!
//! An [`ImageEncoder`] turns preprocessed pixel tensors into raw embedding
//! vectors. [`encode`] wraps that with decoding, preprocessing, batching and
//! L2 normalization, so every vector leaving this module has unit norm and
//! carries the `prompt_id/seed` it came from.
//!
//! Backends live outside this crate (see `scs-onnx`); the SCSE cache format in
//! [`scse`] lets the rest of the toolkit run without any model runtime.

mod preprocess;
pub mod scse;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::EmbeddingVector;

pub use preprocess::{
    preprocess, PixelTensor, CLIP_MEAN, CLIP_STD, INPUT_CHANNELS, INPUT_SIZE, PREPROCESSING_ID,
};
pub use scse::{load_embeddings, save_embeddings, ScseError};

/// Images per `ImageEncoder::embed` call.
pub const DEFAULT_BATCH: usize = 8;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cannot decode image {image}: {reason}")]
    ImageDecode { image: String, reason: String },
    #[error("failed to load model {path}: {reason}")]
    ModelLoad { path: PathBuf, reason: String },
    #[error("descriptor declares embedding_dim {expected} but the model produces {found}")]
    DescriptorMismatch { expected: usize, found: usize },
    #[error("inference failed for {image}: {reason}")]
    Inference { image: String, reason: String },
    #[error("invalid encoder descriptor: {0}")]
    InvalidDescriptor(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub name: String,
    pub embedding_dim: usize,
    pub preprocessing_id: String,
}

impl EncoderDescriptor {
    pub fn new(
        name: impl Into<String>,
        embedding_dim: usize,
        preprocessing_id: impl Into<String>,
    ) -> Result<Self, EncoderError> {
        let d = Self {
            name: name.into(),
            embedding_dim,
            preprocessing_id: preprocessing_id.into(),
        };
        d.validate()?;
        Ok(d)
    }

    /// Stock CLIP ViT-B/32 vision tower.
    pub fn clip_vit_b32() -> Self {
        Self {
            name: "clip-vit-b32".into(),
            embedding_dim: 512,
            preprocessing_id: PREPROCESSING_ID.into(),
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.name.is_empty() {
            return Err(EncoderError::InvalidDescriptor("empty name".into()));
        }
        if self.embedding_dim == 0 {
            return Err(EncoderError::InvalidDescriptor("embedding_dim is 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(Self::Png),
            "jpg" | "jpeg" => Some(Self::Jpeg),
            _ => None,
        }
    }

    pub(crate) fn as_image_format(self) -> image::ImageFormat {
        match self {
            Self::Png => image::ImageFormat::Png,
            Self::Jpeg => image::ImageFormat::Jpeg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImagePayload {
    Path(PathBuf),
    Bytes(Arc<[u8]>),
}

/// A generated image, identified by the prompt and seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub payload: ImagePayload,
    pub format: ImageFormat,
    pub prompt_id: String,
    pub seed: u64,
}

impl ImageRef {
    pub fn from_path(
        path: impl Into<PathBuf>,
        prompt_id: impl Into<String>,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        let path = path.into();
        let format = ImageFormat::from_path(&path).ok_or_else(|| EncoderError::ImageDecode {
            image: path.display().to_string(),
            reason: "unsupported extension (expected png, jpg or jpeg)".into(),
        })?;
        Ok(Self {
            payload: ImagePayload::Path(path),
            format,
            prompt_id: prompt_id.into(),
            seed,
        })
    }

    pub fn from_bytes(
        bytes: impl Into<Arc<[u8]>>,
        format: ImageFormat,
        prompt_id: impl Into<String>,
        seed: u64,
    ) -> Self {
        Self {
            payload: ImagePayload::Bytes(bytes.into()),
            format,
            prompt_id: prompt_id.into(),
            seed,
        }
    }

    /// `prompt_id/seed`, the id carried by the resulting embedding.
    pub fn source_id(&self) -> String {
        source_id(&self.prompt_id, self.seed)
    }

    fn describe(&self) -> String {
        match &self.payload {
            ImagePayload::Path(p) => format!("{} ({})", self.source_id(), p.display()),
            ImagePayload::Bytes(_) => self.source_id(),
        }
    }
}

pub fn source_id(prompt_id: &str, seed: u64) -> String {
    format!("{prompt_id}/{seed}")
}

/// A loaded embedding model.
///
/// Implementations must be deterministic: identical tensors in, identical
/// vectors out. `embed` may be called from several threads at once.
pub trait ImageEncoder: Send + Sync {
    fn descriptor(&self) -> &EncoderDescriptor;

    /// Raw embeddings, one per input tensor, in input order.
    fn embed(&self, batch: &[PixelTensor]) -> Result<Vec<Vec<f32>>, String>;
}

/// Decodes, preprocesses and embeds `images`, returning unit-norm vectors in
/// input order.
pub fn encode(
    images: &[ImageRef],
    encoder: &dyn ImageEncoder,
) -> Result<Vec<EmbeddingVector>, EncoderError> {
    let dim = encoder.descriptor().embedding_dim;
    let tensors = images
        .par_iter()
        .map(preprocess)
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = Vec::with_capacity(images.len());
    for (chunk_imgs, chunk) in images.chunks(DEFAULT_BATCH).zip(tensors.chunks(DEFAULT_BATCH)) {
        let raw = encoder.embed(chunk).map_err(|reason| EncoderError::Inference {
            image: chunk_imgs
                .iter()
                .map(ImageRef::describe)
                .collect::<Vec<_>>()
                .join(", "),
            reason,
        })?;
        if raw.len() != chunk.len() {
            return Err(EncoderError::Inference {
                image: chunk_imgs[0].describe(),
                reason: format!("{} outputs for {} inputs", raw.len(), chunk.len()),
            });
        }
        for (img, values) in chunk_imgs.iter().zip(raw) {
            if values.len() != dim {
                return Err(EncoderError::DescriptorMismatch {
                    expected: dim,
                    found: values.len(),
                });
            }
            let v = l2_normalize(values).ok_or_else(|| EncoderError::Inference {
                image: img.describe(),
                reason: "zero or non-finite embedding".into(),
            })?;
            let ev = EmbeddingVector::new(img.source_id(), v).map_err(|e| {
                EncoderError::Inference {
                    image: img.describe(),
                    reason: e.to_string(),
                }
            })?;
            out.push(ev);
        }
    }
    Ok(out)
}

/// Unit-norm copy, computed in `f64`. `None` for zero or non-finite input.
pub fn l2_normalize(values: Vec<f32>) -> Option<Vec<f32>> {
    let norm = values
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    Some(
        values
            .into_iter()
            .map(|v| (f64::from(v) / norm) as f32)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::cosine_similarity;

    /// Mean of each channel plus a few fixed pixels; enough to tell images apart.
    struct ProbeEncoder(EncoderDescriptor);

    impl ImageEncoder for ProbeEncoder {
        fn descriptor(&self) -> &EncoderDescriptor {
            &self.0
        }

        fn embed(&self, batch: &[PixelTensor]) -> Result<Vec<Vec<f32>>, String> {
            Ok(batch
                .iter()
                .map(|t| {
                    let plane = INPUT_SIZE * INPUT_SIZE;
                    let mut v: Vec<f32> = (0..3)
                        .map(|c| t.data()[c * plane..(c + 1) * plane].iter().sum::<f32>() / plane as f32)
                        .collect();
                    v.push(t.data()[0] + 3.0);
                    v
                })
                .collect())
        }
    }

    fn png(w: u32, h: u32, rgb: [u8; 3]) -> Vec<u8> {
        let img = image::RgbImage::from_pixel(w, h, image::Rgb(rgb));
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        buf.into_inner()
    }

    fn encoder() -> ProbeEncoder {
        ProbeEncoder(EncoderDescriptor::new("probe", 4, PREPROCESSING_ID).unwrap())
    }

    #[test]
    fn empty_input_gives_empty_output() {
        assert!(encode(&[], &encoder()).unwrap().is_empty());
    }

    #[test]
    fn identical_images_give_identical_unit_vectors() {
        let bytes = png(40, 30, [200, 10, 90]);
        let imgs = vec![
            ImageRef::from_bytes(bytes.clone(), ImageFormat::Png, "p", 1),
            ImageRef::from_bytes(bytes, ImageFormat::Png, "p", 2),
            ImageRef::from_bytes(png(30, 30, [0, 255, 0]), ImageFormat::Png, "p", 3),
        ];
        let out = encode(&imgs, &encoder()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].values(), out[1].values());
        assert!((cosine_similarity(&out[0], &out[1]).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(out[2].source_id(), "p/3");
        for v in &out {
            assert!((v.norm() - 1.0).abs() < 1e-5);
            assert_eq!(v.dim(), 4);
        }
    }

    #[test]
    fn wrong_output_dim_is_mismatch() {
        let enc = ProbeEncoder(EncoderDescriptor::new("probe", 8, PREPROCESSING_ID).unwrap());
        let imgs = vec![ImageRef::from_bytes(png(4, 4, [1, 2, 3]), ImageFormat::Png, "p", 1)];
        assert!(matches!(
            encode(&imgs, &enc),
            Err(EncoderError::DescriptorMismatch { expected: 8, found: 4 })
        ));
    }

    #[test]
    fn undecodable_payload() {
        let imgs = vec![ImageRef::from_bytes(vec![1u8, 2, 3], ImageFormat::Png, "p", 9)];
        match encode(&imgs, &encoder()) {
            Err(EncoderError::ImageDecode { image, .. }) => assert!(image.contains("p/9")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn descriptor_validation() {
        assert!(EncoderDescriptor::new("", 512, "x").is_err());
        assert!(EncoderDescriptor::new("clip", 0, "x").is_err());
        assert_eq!(EncoderDescriptor::clip_vit_b32().embedding_dim, 512);
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(ImageFormat::from_path(Path::new("a/1.PNG")), Some(ImageFormat::Png));
        assert_eq!(ImageFormat::from_path(Path::new("a/1.jpeg")), Some(ImageFormat::Jpeg));
        assert_eq!(ImageFormat::from_path(Path::new("a/1.gif")), None);
        assert!(ImageRef::from_path("x/3.webp", "p", 3).is_err());
    }
}
