use std::path::Path;

use clearseg_core::seg::{preprocess_image, segment_image, PreprocessConfig, SegmentationResult};
use clearseg_core::{
    load_checkpoint_with, load_text_embeddings, KeyMap, LoadOptions, SurgeryConfig, Tensor,
    TextEmbeddings, VitConfig, VitEncoder,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result, StageExt};
use crate::io::read_rgb;

/// Loaded encoder, text embeddings and preprocessing settings.
pub struct Model {
    pub encoder: VitEncoder,
    pub text: TextEmbeddings,
    pub preprocess: PreprocessConfig,
}

/// One input image after preprocessing.
pub struct Prepared {
    pub original: (usize, usize),
    pub pixels: Tensor,
}

impl Model {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let key_map = cfg
            .key_map
            .as_deref()
            .map(KeyMap::from_json_file)
            .transpose()
            .stage("loading key map")?;
        let opts = LoadOptions {
            key_map: key_map.unwrap_or_default(),
            heads: cfg.heads,
            gelu: cfg.gelu,
        };
        let (config, weights) =
            load_checkpoint_with(&cfg.checkpoint, &opts).stage("loading checkpoint")?;
        log::info!(
            "checkpoint: width {} layers {} heads {} patch {} embed {}",
            config.width,
            config.layers,
            config.heads,
            config.patch_size,
            config.embed_dim
        );
        let encoder = VitEncoder::new(config, weights).stage("loading checkpoint")?;
        let text = load_text_embeddings(&cfg.text_emb).stage("loading text embeddings")?;
        if text.dim() != encoder.config.embed_dim {
            return Err(CliError::Stage {
                stage: "loading text embeddings",
                source: clearseg_core::Error::Dimension(format!(
                    "text embeddings have {} channels but the encoder projects to {}",
                    text.dim(),
                    encoder.config.embed_dim
                )),
            });
        }
        let crop_ok = cfg.crop.is_multiple_of(encoder.config.patch_size);
        if !crop_ok {
            return Err(CliError::Input(format!(
                "crop {} is not a multiple of the patch size {}",
                cfg.crop, encoder.config.patch_size
            )));
        }
        Ok(Self {
            preprocess: PreprocessConfig::clip(cfg.shorter_side, encoder.config.patch_size),
            encoder,
            text,
        })
    }

    pub fn vit_config(&self) -> &VitConfig {
        &self.encoder.config
    }

    pub fn prepare(&self, path: &Path) -> Result<Prepared> {
        let rgb = read_rgb(path)?;
        let pixels = preprocess_image(&rgb, &self.preprocess).stage("preprocessing")?;
        Ok(Prepared {
            original: (rgb.height() as usize, rgb.width() as usize),
            pixels,
        })
    }

    /// Segments at preprocessed resolution, then resizes logits to `(height, width)`.
    pub fn segment(
        &self,
        img: &Prepared,
        surgery: &SurgeryConfig,
        crop: usize,
        stride: usize,
        size: (usize, usize),
    ) -> Result<SegmentationResult> {
        segment_image(
            &img.pixels,
            &self.encoder,
            &self.text,
            Some(surgery),
            crop,
            stride,
        )
        .and_then(|r| r.resized(size.0, size.1))
        .stage("segmentation")
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool.
pub fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
