//! Dense open-vocabulary segmentation: every patch embedding is compared
//! with every class text embedding by cosine similarity, per-window logits
//! are upsampled to pixels and averaged over overlapping windows, and each
//! pixel takes the best-scoring class.

mod labels;
mod miou;
mod preprocess;
mod window;

pub use labels::{LabelMap, IGNORE_INDEX};
pub use miou::{compute_miou, MIoUReport};
pub use preprocess::{preprocess_image, target_size, PreprocessConfig, CLIP_MEAN, CLIP_STD};
pub use window::{plan_windows, Window, WindowPlan};

use rayon::prelude::*;

use crate::checkpoint::TextEmbeddings;
use crate::error::{Error, Result};
use crate::tensor::{cosine_matrix, interpolate_grid, Tensor};
use crate::vit::{PatchEmbeddings, SurgeryConfig, VitEncoder};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub label_map: LabelMap,
    /// `C × H × W` fused cosine logits.
    pub logits: Tensor,
    pub class_names: Vec<String>,
}

impl SegmentationResult {
    fn from_logits(logits: Tensor, class_names: Vec<String>) -> Result<Self> {
        let label_map = argmax_labels(&logits)?;
        Ok(Self {
            label_map,
            logits,
            class_names,
        })
    }

    /// Bilinearly resizes the logits (align-corners) and recomputes labels.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == (self.label_map.height, self.label_map.width) {
            return Ok(self.clone());
        }
        Self::from_logits(
            resize_logits(&self.logits, height, width)?,
            self.class_names.clone(),
        )
    }
}

fn dims3(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::Dimension(format!(
            "expected a C×H×W tensor, got {other:?}"
        ))),
    }
}

/// Per-pixel argmax over classes; ties go to the lowest class index.
pub fn argmax_labels(logits: &Tensor) -> Result<LabelMap> {
    let (c, h, w) = dims3(logits)?;
    let plane = h * w;
    let d = logits.data();
    let labels = (0..plane)
        .map(|p| {
            let mut best = 0usize;
            for k in 1..c {
                if d[k * plane + p] > d[best * plane + p] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    LabelMap::new(h, w, labels)
}

/// `C×h×w` → `C×height×width`, bilinear with align-corners.
pub fn resize_logits(logits: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (c, h, w) = dims3(logits)?;
    let src = logits.data();
    let mut hwc = vec![0.0f32; c * h * w];
    for k in 0..c {
        for p in 0..h * w {
            hwc[p * c + k] = src[k * h * w + p];
        }
    }
    let grid = interpolate_grid(&Tensor::new(vec![h, w, c], hwc)?, height, width)?;
    let g = grid.data();
    let plane = height * width;
    let mut out = vec![0.0f32; c * plane];
    for p in 0..plane {
        for k in 0..c {
            out[k * plane + p] = g[p * c + k];
        }
    }
    Tensor::new(vec![c, height, width], out)
}

/// Raw cosine logits `C × grid_h × grid_w`.
pub fn classify_patches(patches: &PatchEmbeddings, text: &TextEmbeddings) -> Result<Tensor> {
    if patches.matrix.cols() != text.dim() {
        return Err(Error::Dimension(format!(
            "patch embeddings have {} channels, text embeddings {}",
            patches.matrix.cols(),
            text.dim()
        )));
    }
    let cos = cosine_matrix(&patches.matrix, &text.matrix)?;
    cos.transpose()?
        .reshape(vec![text.num_classes(), patches.grid_h, patches.grid_w])
}

fn crop_pixels(pixels: &Tensor, win: &Window) -> Result<Tensor> {
    let (c, h, w) = dims3(pixels)?;
    let d = pixels.data();
    let mut out = Vec::with_capacity(c * win.height * win.width);
    for ch in 0..c {
        for y in win.top..win.top + win.height {
            let start = ch * h * w + y * w + win.left;
            out.extend_from_slice(&d[start..start + win.width]);
        }
    }
    Tensor::new(vec![c, win.height, win.width], out)
}

/// Logits of one window at pixel resolution.
pub fn window_logits(
    pixels: &Tensor,
    encoder: &VitEncoder,
    text: &TextEmbeddings,
    surgery: Option<&SurgeryConfig>,
) -> Result<Tensor> {
    let (_, h, w) = dims3(pixels)?;
    let (patches, _) = encoder.encode_dense(pixels, surgery, false)?;
    resize_logits(&classify_patches(&patches, text)?, h, w)
}

/// Sliding-window segmentation of a preprocessed `3×H×W` image.
pub fn segment_image(
    pixels: &Tensor,
    encoder: &VitEncoder,
    text: &TextEmbeddings,
    surgery: Option<&SurgeryConfig>,
    crop: usize,
    stride: usize,
) -> Result<SegmentationResult> {
    let (_, h, w) = dims3(pixels)?;
    let plan = plan_windows(h, w, crop, stride)?;
    let per_window = plan
        .windows
        .par_iter()
        .map(|win| window_logits(&crop_pixels(pixels, win)?, encoder, text, surgery))
        .collect::<Result<Vec<_>>>()?;

    let c = text.num_classes();
    let plane = h * w;
    let mut acc = vec![0.0f32; c * plane];
    let mut count = vec![0u32; plane];
    for (win, logits) in plan.windows.iter().zip(&per_window) {
        let l = logits.data();
        let wplane = win.height * win.width;
        for y in 0..win.height {
            for x in 0..win.width {
                let p = (win.top + y) * w + win.left + x;
                count[p] += 1;
                for k in 0..c {
                    acc[k * plane + p] += l[k * wplane + y * win.width + x];
                }
            }
        }
    }
    for k in 0..c {
        for p in 0..plane {
            acc[k * plane + p] /= count[p] as f32;
        }
    }
    SegmentationResult::from_logits(Tensor::new(vec![c, h, w], acc)?, text.class_names.clone())
}
