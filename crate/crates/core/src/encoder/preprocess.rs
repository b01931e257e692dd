// CLIP reference input pipeline: composite alpha on black, bicubic resize of
// the short side to 224, center crop, scale to [0, 1], standardize per channel.

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};

use super::{EncoderError, ImagePayload, ImageRef};

pub const INPUT_SIZE: usize = 224;
pub const INPUT_CHANNELS: usize = 3;
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

/// Pins the recipe above; stored in every embedding file's descriptor.
pub const PREPROCESSING_ID: &str = "clip-ref/bicubic-short224/center-crop224/alpha-black/v1";

/// A `[3, 224, 224]` CHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTensor {
    data: Vec<f32>,
}

impl PixelTensor {
    pub const SHAPE: [usize; 3] = [INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE];

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * INPUT_SIZE + y) * INPUT_SIZE + x]
    }

    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE],
        }
    }
}

fn decode(image: &ImageRef) -> Result<DynamicImage, EncoderError> {
    let err = |reason: String| EncoderError::ImageDecode {
        image: image.describe(),
        reason,
    };
    let bytes: std::borrow::Cow<'_, [u8]> = match &image.payload {
        ImagePayload::Path(p) => std::fs::read(p).map_err(|e| err(e.to_string()))?.into(),
        ImagePayload::Bytes(b) => b.as_ref().into(),
    };
    image::load_from_memory_with_format(&bytes, image.format.as_image_format())
        .map_err(|e| err(e.to_string()))
}

fn composite_on_black(img: &DynamicImage) -> RgbImage {
    if !img.color().has_alpha() {
        return img.to_rgb8();
    }
    let rgba = img.to_rgba8();
    RgbImage::from_fn(rgba.width(), rgba.height(), |x, y| {
        let [r, g, b, a] = rgba.get_pixel(x, y).0;
        let scale = |c: u8| ((u32::from(c) * u32::from(a) + 127) / 255) as u8;
        image::Rgb([scale(r), scale(g), scale(b)])
    })
}

fn resize_short_side(img: RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let target = INPUT_SIZE as u32;
    let (nw, nh) = if w <= h {
        (target, ((u64::from(target) * u64::from(h)) / u64::from(w)) as u32)
    } else {
        (((u64::from(target) * u64::from(w)) / u64::from(h)) as u32, target)
    };
    if (nw, nh) == (w, h) {
        return img;
    }
    imageops::resize(&img, nw, nh, FilterType::CatmullRom)
}

fn center_crop(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = INPUT_SIZE as u32;
    let left = ((w - s) as f64 / 2.0).round() as u32;
    let top = ((h - s) as f64 / 2.0).round() as u32;
    imageops::crop_imm(img, left, top, s, s).to_image()
}

pub fn preprocess(image: &ImageRef) -> Result<PixelTensor, EncoderError> {
    let decoded = decode(image)?;
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(EncoderError::ImageDecode {
            image: image.describe(),
            reason: "empty raster".into(),
        });
    }
    let rgb = center_crop(&resize_short_side(composite_on_black(&decoded)));
    let plane = INPUT_SIZE * INPUT_SIZE;
    let mut data = vec![0.0f32; INPUT_CHANNELS * plane];
    for (x, y, px) in rgb.enumerate_pixels() {
        let offset = y as usize * INPUT_SIZE + x as usize;
        for c in 0..INPUT_CHANNELS {
            let v = f32::from(px.0[c]) / 255.0;
            data[c * plane + offset] = (v - CLIP_MEAN[c]) / CLIP_STD[c];
        }
    }
    Ok(PixelTensor { data })
}
