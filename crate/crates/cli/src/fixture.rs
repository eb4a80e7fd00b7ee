use std::path::{Path, PathBuf};

use clearseg_core::checkpoint::{labels_path, save_text_embeddings, SplitMix64};
use clearseg_core::seg::{LabelMap, IGNORE_INDEX};
use clearseg_core::{gen_fixture_checkpoint, GeluVariant, TextEmbeddings, VitConfig};
use image::{ImageFormat, Rgb, RgbImage};
use serde::Serialize;

use crate::config::{ensure_dir, SCHEMA_VERSION};
use crate::error::{CliError, Result, StageExt};
use crate::io::{write_atomic, write_json};

/// Shape of a synthetic fixture bundle.
#[derive(Debug, Clone, Serialize)]
pub struct FixtureOptions {
    pub seed: u64,
    pub image_size: usize,
    pub patch_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub gelu: GeluVariant,
    pub classes: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            image_size: 16,
            patch_size: 4,
            width: 16,
            layers: 3,
            heads: 2,
            embed_dim: 8,
            gelu: GeluVariant::Quick,
            classes: 2,
            image_height: 16,
            image_width: 16,
        }
    }
}

impl FixtureOptions {
    pub fn vit_config(&self) -> Result<VitConfig> {
        VitConfig::new(
            self.image_size,
            self.patch_size,
            self.width,
            self.layers,
            self.heads,
            self.embed_dim,
            self.gelu,
        )
        .map_err(|e| CliError::Input(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FixturePaths {
    pub checkpoint: PathBuf,
    pub text_emb: PathBuf,
    pub labels: PathBuf,
    pub image: PathBuf,
    pub gt: PathBuf,
}

/// Two-region test picture: warm on the left, cool on the right, with a
/// vertical gradient and seeded noise.
pub fn fixture_image(seed: u64, height: usize, width: usize) -> RgbImage {
    let mut rng = SplitMix64::new(seed ^ 0x5eed_1a6e);
    let mut img = RgbImage::new(width as u32, height as u32);
    for y in 0..height {
        let t = y as f32 / height.max(1) as f32;
        for x in 0..width {
            let base = if 2 * x < width {
                [200.0 + 40.0 * t, 90.0 + 30.0 * t, 40.0]
            } else {
                [30.0, 110.0 - 40.0 * t, 190.0 + 50.0 * t]
            };
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                *v = (base[c] + 24.0 * rng.next_symmetric())
                    .round()
                    .clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// Ground truth matching [`fixture_image`]: class 0 left, 1 right (or 0
/// everywhere for a single class), top and bottom rows ignored.
pub fn fixture_ground_truth(height: usize, width: usize, classes: usize) -> Result<LabelMap> {
    let mut labels = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            labels.push(if y == 0 || y + 1 == height {
                IGNORE_INDEX
            } else if 2 * x < width || classes < 2 {
                0
            } else {
                1
            });
        }
    }
    LabelMap::new(height, width, labels).stage("fixture ground truth")
}

pub fn png_bytes(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| CliError::Input(format!("encoding png: {e}")))?;
    Ok(buf.into_inner())
}

#[derive(Debug, Serialize)]
struct FixtureManifest<'a> {
    schema_version: u32,
    command: &'static str,
    opts: &'a FixtureOptions,
    config: &'a VitConfig,
    files: &'a FixturePaths,
}

/// Writes checkpoint, text embeddings, test image and ground truth into `out`.
pub fn gen_fixture(opts: &FixtureOptions, out: &Path) -> Result<FixturePaths> {
    let cfg = opts.vit_config()?;
    if opts.classes == 0 || opts.image_height == 0 || opts.image_width == 0 {
        return Err(CliError::Input(
            "fixture needs at least one class and a non-empty image".into(),
        ));
    }
    let dir = ensure_dir(out)?;
    let paths = FixturePaths {
        checkpoint: dir.join("checkpoint.safetensors"),
        text_emb: dir.join("text.safetensors"),
        labels: labels_path(&dir.join("text.safetensors")),
        image: dir.join("image.png"),
        gt: dir.join("gt.png"),
    };
    let (_, bytes) = gen_fixture_checkpoint(opts.seed, &cfg).stage("generating checkpoint")?;
    write_atomic(&paths.checkpoint, &bytes)?;
    let text = TextEmbeddings::synthetic(opts.seed.wrapping_add(1), opts.classes, opts.embed_dim)
        .stage("generating text embeddings")?;
    save_text_embeddings(&paths.text_emb, &text).stage("writing text embeddings")?;
    let img = fixture_image(opts.seed, opts.image_height, opts.image_width);
    write_atomic(&paths.image, &png_bytes(&img)?)?;
    let gt = fixture_ground_truth(opts.image_height, opts.image_width, opts.classes)?;
    write_atomic(&paths.gt, &gt.to_png_bytes().stage("writing ground truth")?)?;
    let manifest = FixtureManifest {
        schema_version: SCHEMA_VERSION,
        command: "gen-fixture",
        opts,
        config: &cfg,
        files: &paths,
    };
    write_json(&dir.join("fixture.json"), &manifest)?;
    Ok(paths)
}
