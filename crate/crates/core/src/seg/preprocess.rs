use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb32FImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub shorter_side: usize,
    /// Output sides are rounded down to multiples of this.
    pub patch_size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl PreprocessConfig {
    pub fn clip(shorter_side: usize, patch_size: usize) -> Self {
        Self {
            shorter_side,
            patch_size,
            mean: CLIP_MEAN,
            std: CLIP_STD,
        }
    }
}

/// Output `(height, width)` for an input of `height × width`: the shorter
/// side scaled to `shorter_side`, the longer one by the same factor, both
/// rounded down to patch multiples.
pub fn target_size(
    height: usize,
    width: usize,
    shorter_side: usize,
    patch: usize,
) -> Result<(usize, usize)> {
    if height == 0 || width == 0 {
        return Err(Error::Input(format!("degenerate {height}×{width} image")));
    }
    if patch == 0 || shorter_side < patch {
        return Err(Error::Input(format!(
            "shorter side {shorter_side} is below patch size {patch}"
        )));
    }
    let short = height.min(width);
    let scale = |v: usize| -> usize {
        if v == short {
            shorter_side
        } else {
            ((v as f64) * shorter_side as f64 / short as f64).round() as usize
        }
    };
    let snap = |v: usize| v / patch * patch;
    Ok((snap(scale(height)), snap(scale(width))))
}

/// Resizes and normalizes an RGB image into a `3×H×W` tensor.
pub fn preprocess_image(image: &RgbImage, cfg: &PreprocessConfig) -> Result<Tensor> {
    let (w, h) = image.dimensions();
    let (th, tw) = target_size(h as usize, w as usize, cfg.shorter_side, cfg.patch_size)?;
    let float: Rgb32FImage = DynamicImage::ImageRgb8(image.clone()).to_rgb32f();
    let resized = if (th, tw) == (h as usize, w as usize) {
        float
    } else {
        imageops::resize(&float, tw as u32, th as u32, FilterType::Triangle)
    };
    let plane = th * tw;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px.0[c] - cfg.mean[c]) / cfg.std[c];
        }
    }
    Tensor::new(vec![3, th, tw], data)
}
