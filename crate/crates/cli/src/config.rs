use std::path::{Path, PathBuf};

use clearseg_core::stats::TokenSelection;
use clearseg_core::{AttnMode, GeluVariant, SurgeryConfig};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_SHORTER_SIDE: usize = 448;
pub const DEFAULT_CROP: usize = 336;
pub const DEFAULT_STRIDE: usize = 112;

/// Everything a model-backed command needs. Paths are absolute after [`RunConfig::resolve`].
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub checkpoint: PathBuf,
    pub text_emb: PathBuf,
    pub key_map: Option<PathBuf>,
    pub heads: Option<usize>,
    pub gelu: Option<GeluVariant>,
    pub surgery: SurgeryConfig,
    pub shorter_side: usize,
    pub crop: usize,
    pub stride: usize,
    pub out_dir: PathBuf,
    pub tokens: TokenSelection,
    pub jobs: Option<usize>,
    pub dump_logits: bool,
}

impl RunConfig {
    pub fn new(
        checkpoint: impl Into<PathBuf>,
        text_emb: impl Into<PathBuf>,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            text_emb: text_emb.into(),
            key_map: None,
            heads: None,
            gelu: None,
            surgery: SurgeryConfig::clearclip(),
            shorter_side: DEFAULT_SHORTER_SIDE,
            crop: DEFAULT_CROP,
            stride: DEFAULT_STRIDE,
            out_dir: out_dir.into(),
            tokens: TokenSelection::PatchOnly,
            jobs: None,
            dump_logits: false,
        }
    }

    /// Checks numeric fields, makes every input path absolute and creates the output directory.
    pub fn resolve(mut self) -> Result<Self> {
        self.surgery
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        if self.crop == 0 || self.stride == 0 || self.shorter_side == 0 {
            return Err(CliError::Input(
                "crop, stride and shorter side must be positive".into(),
            ));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        self.checkpoint = existing(&self.checkpoint)?;
        self.text_emb = existing(&self.text_emb)?;
        self.key_map = self.key_map.as_deref().map(existing).transpose()?;
        self.out_dir = ensure_dir(&self.out_dir)?;
        Ok(self)
    }
}

/// Absolute form of a path that must already exist.
pub fn existing(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    existing(path)
}

/// Preset plus raw overrides. Overrides win over the preset.
#[derive(Debug, Clone, Default)]
pub struct SurgeryOverrides {
    pub attn: Option<AttnMode>,
    pub residual: Option<bool>,
    pub ffn: Option<bool>,
    pub alpha: Option<f32>,
    pub beta: Option<f32>,
}

pub fn build_surgery(preset: &str, o: &SurgeryOverrides) -> Result<SurgeryConfig> {
    let mut s = SurgeryConfig::preset(preset).map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(m) = o.attn {
        s.attn_mode = m;
    }
    if let Some(r) = o.residual {
        s.keep_residual = r;
    }
    if let Some(f) = o.ffn {
        s.keep_ffn = f;
    }
    if let Some(a) = o.alpha {
        s.alpha = a;
    }
    if let Some(b) = o.beta {
        s.residual_mask_beta = b;
    }
    s.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(s)
}
