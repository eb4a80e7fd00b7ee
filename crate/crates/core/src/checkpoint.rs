//! Loading and saving ViT image-encoder weights and class text embeddings.
//!
//! Archives are safetensors files using the OpenAI CLIP visual-tower key
//! names (`visual.conv1.weight`, `visual.transformer.resblocks.{i}.…`,
//! `visual.proj`). OpenCLIP ViT checkpoints share these names; other layouts
//! can be adapted with a [`KeyMap`]. Linear weights keep the PyTorch
//! `out×in` layout so a save/load round trip is bit-exact.
//!
//! The head count cannot be read from tensor shapes. It is taken from the
//! `clearseg.vit` metadata entry when present (fixtures always write it),
//! otherwise from the CLIP convention of 64-channel heads.
//!
//! # Fixture generator
//!
//! [`gen_fixture_checkpoint`] fills every tensor from a SplitMix64 stream so
//! that any implementation can reproduce the same archive:
//!
//! * `state += 0x9E3779B97F4A7C15`, then the usual SplitMix64 finalizer
//!   (`xor-shift 30, × 0xBF58476D1CE4E5B9, xor-shift 27, × 0x94D049BB133111EB,
//!   xor-shift 31`);
//! * a draw `r = 2·((z >> 40) · 2⁻²⁴) − 1` lies in `[-1, 1)`;
//! * tensors are visited in [`tensor_keys`] order and filled row-major;
//!   layer-norm scales get `1 + 0.02·r`, every other value `0.02·r`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{GeluVariant, Tensor};

const META_KEY: &str = "clearseg.vit";
const TEXT_KEY: &str = "text_embeddings";
pub const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitConfig {
    /// Native input resolution (pixels per side).
    pub image_size: usize,
    pub patch_size: usize,
    /// Token channel count `d`.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward network.
    pub mlp_width: usize,
    /// Output dimension after the final projection.
    pub embed_dim: usize,
    pub gelu: GeluVariant,
}

impl VitConfig {
    /// Config with the conventional 4× feed-forward expansion.
    pub fn new(
        image_size: usize,
        patch_size: usize,
        width: usize,
        layers: usize,
        heads: usize,
        embed_dim: usize,
        gelu: GeluVariant,
    ) -> Result<Self> {
        let cfg = Self {
            image_size,
            patch_size,
            width,
            layers,
            heads,
            mlp_width: 4 * width,
            embed_dim,
            gelu,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// OpenAI CLIP ViT-B/16.
    pub fn clip_b16() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            width: 768,
            layers: 12,
            heads: 12,
            mlp_width: 3072,
            embed_dim: 512,
            gelu: GeluVariant::Quick,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.heads == 0 || self.patch_size == 0 {
            return fail(format!(
                "layers ({}), heads ({}) and patch size ({}) must be positive",
                self.layers, self.heads, self.patch_size
            ));
        }
        if self.width == 0 || !self.width.is_multiple_of(self.heads) {
            return fail(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            ));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image size {} is not a multiple of patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.mlp_width == 0 || self.embed_dim == 0 {
            return fail("mlp width and embed dim must be positive".into());
        }
        Ok(())
    }

    /// Tokens per side of the native patch grid.
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormWeights {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// `y = x·Wᵀ + b` with `W: out×in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1: LayerNormWeights,
    pub q: LinearWeights,
    pub k: LinearWeights,
    pub v: LinearWeights,
    pub out: LinearWeights,
    pub ln2: LayerNormWeights,
    pub fc1: LinearWeights,
    pub fc2: LinearWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitWeights {
    /// Patch-embedding kernel flattened to `d × (3·p·p)`, channel-major.
    pub patch_embed: Tensor,
    pub class_token: Tensor,
    /// `(1 + g²) × d`, class-token row first.
    pub pos_embed: Tensor,
    pub ln_pre: LayerNormWeights,
    pub blocks: Vec<BlockWeights>,
    pub ln_post: LayerNormWeights,
    /// `d × embed_dim`.
    pub proj: Tensor,
}

/// Expected-key → archive-key overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyMap(pub BTreeMap<String, String>);

impl KeyMap {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    fn resolve<'a>(&'a self, key: &'a str) -> &'a str {
        self.0.get(key).map_or(key, String::as_str)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub key_map: KeyMap,
    /// Overrides the head count found in metadata or implied by width.
    pub heads: Option<usize>,
    pub gelu: Option<GeluVariant>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveMeta {
    heads: usize,
    gelu: GeluVariant,
}

fn block_prefix(i: usize) -> String {
    format!("visual.transformer.resblocks.{i}")
}

/// Every archive key for `config`, in fixture fill order.
pub fn tensor_keys(config: &VitConfig) -> Vec<String> {
    let mut keys: Vec<String> = [
        "visual.conv1.weight",
        "visual.class_embedding",
        "visual.positional_embedding",
        "visual.ln_pre.weight",
        "visual.ln_pre.bias",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..config.layers {
        let p = block_prefix(i);
        for suffix in [
            "ln_1.weight",
            "ln_1.bias",
            "attn.in_proj_weight",
            "attn.in_proj_bias",
            "attn.out_proj.weight",
            "attn.out_proj.bias",
            "ln_2.weight",
            "ln_2.bias",
            "mlp.c_fc.weight",
            "mlp.c_fc.bias",
            "mlp.c_proj.weight",
            "mlp.c_proj.bias",
        ] {
            keys.push(format!("{p}.{suffix}"));
        }
    }
    keys.extend(
        [
            "visual.ln_post.weight",
            "visual.ln_post.bias",
            "visual.proj",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    keys
}

fn expected_shape(config: &VitConfig, key: &str) -> Vec<usize> {
    let d = config.width;
    let p = config.patch_size;
    let g = config.grid_size();
    let m = config.mlp_width;
    let tail = key.rsplit_once("resblocks.").map_or(key, |(_, rest)| {
        rest.split_once('.').map_or(rest, |(_, suffix)| suffix)
    });
    match tail {
        "visual.conv1.weight" => vec![d, 3, p, p],
        "visual.positional_embedding" => vec![g * g + 1, d],
        "visual.proj" => vec![d, config.embed_dim],
        "attn.in_proj_weight" => vec![3 * d, d],
        "attn.in_proj_bias" => vec![3 * d],
        "attn.out_proj.weight" => vec![d, d],
        "mlp.c_fc.weight" => vec![m, d],
        "mlp.c_fc.bias" => vec![m],
        "mlp.c_proj.weight" => vec![d, m],
        _ => vec![d],
    }
}

fn is_layer_norm_scale(key: &str) -> bool {
    key.ends_with("ln_pre.weight")
        || key.ends_with("ln_post.weight")
        || key.ends_with("ln_1.weight")
        || key.ends_with("ln_2.weight")
}

fn to_f32(key: &str, view: &TensorView<'_>) -> Result<Vec<f32>> {
    let bytes = view.data();
    let out = match view.dtype() {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
        other => {
            return Err(Error::UnsupportedDtype {
                key: key.to_string(),
                dtype: format!("{other:?}"),
            })
        }
    };
    Ok(out)
}

struct Archive<'a> {
    path: PathBuf,
    st: SafeTensors<'a>,
    key_map: &'a KeyMap,
}

impl Archive<'_> {
    fn contains(&self, key: &str) -> bool {
        self.st.tensor(self.key_map.resolve(key)).is_ok()
    }

    fn raw(&self, key: &str) -> Result<Tensor> {
        let name = self.key_map.resolve(key);
        let view = self
            .st
            .tensor(name)
            .map_err(|_| Error::MissingKey(name.to_string()))?;
        let data = to_f32(name, &view)?;
        let t = Tensor::new(view.shape().to_vec(), data)?;
        t.ensure_finite(name).map_err(|_| Error::Archive {
            path: self.path.clone(),
            msg: format!("tensor `{name}` contains non-finite values"),
        })?;
        Ok(t)
    }

    fn get(&self, key: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.raw(key)?;
        if t.shape() != shape {
            return Err(Error::ShapeMismatch {
                key: self.key_map.resolve(key).to_string(),
                expected: shape.to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        Ok(t)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn archive_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Archive {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Loads an archive with the default options plus an optional key remap.
pub fn load_checkpoint(path: &Path, key_map: Option<&KeyMap>) -> Result<(VitConfig, VitWeights)> {
    let opts = LoadOptions {
        key_map: key_map.cloned().unwrap_or_default(),
        ..Default::default()
    };
    load_checkpoint_with(path, &opts)
}

pub fn load_checkpoint_with(path: &Path, opts: &LoadOptions) -> Result<(VitConfig, VitWeights)> {
    let bytes = read_file(path)?;
    checkpoint_from_bytes(&bytes, path, opts)
}

pub fn checkpoint_from_bytes(
    bytes: &[u8],
    path: &Path,
    opts: &LoadOptions,
) -> Result<(VitConfig, VitWeights)> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| archive_err(path, e))?;
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| archive_err(path, e))?;
    let meta: Option<ArchiveMeta> = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .map(|s| serde_json::from_str(s))
        .transpose()
        .map_err(|e| archive_err(path, format!("bad `{META_KEY}` metadata: {e}")))?;
    let ar = Archive {
        path: path.to_path_buf(),
        st,
        key_map: &opts.key_map,
    };

    let class_token = ar.raw("visual.class_embedding")?;
    let width = class_token.numel();
    let conv = ar.raw("visual.conv1.weight")?;
    let patch_size = match conv.shape() {
        [_, 3, p, q] if p == q => *p,
        other => {
            return Err(Error::ShapeMismatch {
                key: ar.key_map.resolve("visual.conv1.weight").to_string(),
                expected: vec![width, 3, 0, 0],
                actual: other.to_vec(),
            })
        }
    };
    let pos = ar.raw("visual.positional_embedding")?;
    let tokens = pos.rows().saturating_sub(1);
    let grid = (tokens as f64).sqrt().round() as usize;
    if grid * grid != tokens || tokens == 0 {
        return Err(Error::UnsupportedLayout(format!(
            "positional embedding has {tokens} spatial rows, not a square grid"
        )));
    }
    let layers = (0..)
        .take_while(|&i| ar.contains(&format!("{}.ln_1.weight", block_prefix(i))))
        .count();
    if layers == 0 {
        return Err(Error::MissingKey(
            ar.key_map
                .resolve(&format!("{}.ln_1.weight", block_prefix(0)))
                .to_string(),
        ));
    }
    let mlp_width = ar
        .raw(&format!("{}.mlp.c_fc.bias", block_prefix(0)))?
        .numel();
    let proj = ar.raw("visual.proj")?;
    let embed_dim = proj.cols();
    let heads = opts
        .heads
        .or(meta.as_ref().map(|m| m.heads))
        .unwrap_or(width / 64);
    let gelu = opts
        .gelu
        .or(meta.as_ref().map(|m| m.gelu))
        .unwrap_or_default();
    let config = VitConfig {
        image_size: grid * patch_size,
        patch_size,
        width,
        layers,
        heads,
        mlp_width,
        embed_dim,
        gelu,
    };
    config.validate()?;

    let shape = |k: &str| expected_shape(&config, k);
    let get = |k: &str| ar.get(k, &shape(k));
    let ln = |prefix: &str| -> Result<LayerNormWeights> {
        Ok(LayerNormWeights {
            gamma: get(&format!("{prefix}.weight"))?,
            beta: get(&format!("{prefix}.bias"))?,
        })
    };
    let lin = |prefix: &str| -> Result<LinearWeights> {
        Ok(LinearWeights {
            weight: get(&format!("{prefix}.weight"))?,
            bias: get(&format!("{prefix}.bias"))?,
        })
    };

    let d = width;
    let patch_embed = get("visual.conv1.weight")?.reshape(vec![d, 3 * patch_size * patch_size])?;
    let mut blocks = Vec::with_capacity(layers);
    for i in 0..layers {
        let p = block_prefix(i);
        let in_w = get(&format!("{p}.attn.in_proj_weight"))?;
        let in_b = get(&format!("{p}.attn.in_proj_bias"))?;
        let split = |j: usize| -> Result<LinearWeights> {
            Ok(LinearWeights {
                weight: in_w.slice_rows(j * d, (j + 1) * d),
                bias: Tensor::new(vec![d], in_b.data()[j * d..(j + 1) * d].to_vec())?,
            })
        };
        blocks.push(BlockWeights {
            ln1: ln(&format!("{p}.ln_1"))?,
            q: split(0)?,
            k: split(1)?,
            v: split(2)?,
            out: lin(&format!("{p}.attn.out_proj"))?,
            ln2: ln(&format!("{p}.ln_2"))?,
            fc1: lin(&format!("{p}.mlp.c_fc"))?,
            fc2: lin(&format!("{p}.mlp.c_proj"))?,
        });
    }
    let weights = VitWeights {
        patch_embed,
        class_token: get("visual.class_embedding")?,
        pos_embed: get("visual.positional_embedding")?,
        ln_pre: ln("visual.ln_pre")?,
        blocks,
        ln_post: ln("visual.ln_post")?,
        proj: get("visual.proj")?,
    };
    log::info!(
        "loaded {}: {} layers, width {}, {} heads, patch {}, embed {}",
        path.display(),
        config.layers,
        config.width,
        config.heads,
        config.patch_size,
        config.embed_dim
    );
    Ok((config, weights))
}

fn archive_tensors(config: &VitConfig, w: &VitWeights) -> Result<Vec<(String, Tensor)>> {
    let p = config.patch_size;
    let mut out = vec![
        (
            "visual.conv1.weight".to_string(),
            w.patch_embed.clone().reshape(vec![config.width, 3, p, p])?,
        ),
        ("visual.class_embedding".into(), w.class_token.clone()),
        ("visual.positional_embedding".into(), w.pos_embed.clone()),
        ("visual.ln_pre.weight".into(), w.ln_pre.gamma.clone()),
        ("visual.ln_pre.bias".into(), w.ln_pre.beta.clone()),
    ];
    for (i, b) in w.blocks.iter().enumerate() {
        let pre = block_prefix(i);
        let d = config.width;
        let in_w = [&b.q.weight, &b.k.weight, &b.v.weight]
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        let in_b = [&b.q.bias, &b.k.bias, &b.v.bias]
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        out.extend([
            (format!("{pre}.ln_1.weight"), b.ln1.gamma.clone()),
            (format!("{pre}.ln_1.bias"), b.ln1.beta.clone()),
            (
                format!("{pre}.attn.in_proj_weight"),
                Tensor::new(vec![3 * d, d], in_w)?,
            ),
            (
                format!("{pre}.attn.in_proj_bias"),
                Tensor::new(vec![3 * d], in_b)?,
            ),
            (format!("{pre}.attn.out_proj.weight"), b.out.weight.clone()),
            (format!("{pre}.attn.out_proj.bias"), b.out.bias.clone()),
            (format!("{pre}.ln_2.weight"), b.ln2.gamma.clone()),
            (format!("{pre}.ln_2.bias"), b.ln2.beta.clone()),
            (format!("{pre}.mlp.c_fc.weight"), b.fc1.weight.clone()),
            (format!("{pre}.mlp.c_fc.bias"), b.fc1.bias.clone()),
            (format!("{pre}.mlp.c_proj.weight"), b.fc2.weight.clone()),
            (format!("{pre}.mlp.c_proj.bias"), b.fc2.bias.clone()),
        ]);
    }
    out.extend([
        ("visual.ln_post.weight".into(), w.ln_post.gamma.clone()),
        ("visual.ln_post.bias".into(), w.ln_post.beta.clone()),
        ("visual.proj".into(), w.proj.clone()),
    ]);
    Ok(out)
}

/// Serializes named f32 tensors into safetensors bytes.
pub fn safetensors_bytes(
    tensors: &[(String, Tensor)],
    metadata: Option<HashMap<String, String>>,
) -> Result<Vec<u8>> {
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, t)| {
            let bytes = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (k.clone(), t.shape().to_vec(), bytes)
        })
        .collect();
    let views = raw
        .iter()
        .map(|(k, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (k.clone(), v))
                .map_err(|e| Error::Dimension(format!("tensor `{k}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, metadata).map_err(|e| Error::Dimension(format!("serialize: {e}")))
}

pub fn checkpoint_bytes(config: &VitConfig, weights: &VitWeights) -> Result<Vec<u8>> {
    let meta = ArchiveMeta {
        heads: config.heads,
        gelu: config.gelu,
    };
    let metadata = HashMap::from([(
        META_KEY.to_string(),
        serde_json::to_string(&meta).expect("plain struct"),
    )]);
    safetensors_bytes(&archive_tensors(config, weights)?, Some(metadata))
}

pub fn save_checkpoint(path: &Path, config: &VitConfig, weights: &VitWeights) -> Result<()> {
    let bytes = checkpoint_bytes(config, weights)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// SplitMix64 stream used for all synthetic fixtures.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 24 bits of resolution.
    pub fn next_unit(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in `[-1, 1)`.
    pub fn next_symmetric(&mut self) -> f32 {
        2.0 * self.next_unit() - 1.0
    }
}

/// Seeded synthetic checkpoint; returns the weights and their archive bytes.
pub fn gen_fixture_checkpoint(seed: u64, config: &VitConfig) -> Result<(VitWeights, Vec<u8>)> {
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut tensors = Vec::new();
    for key in tensor_keys(config) {
        let shape = expected_shape(config, &key);
        let n: usize = shape.iter().product();
        let ln_scale = is_layer_norm_scale(&key);
        let data = (0..n)
            .map(|_| {
                let r = 0.02 * rng.next_symmetric();
                if ln_scale {
                    1.0 + r
                } else {
                    r
                }
            })
            .collect();
        tensors.push((key, Tensor::new(shape, data)?));
    }
    let meta = ArchiveMeta {
        heads: config.heads,
        gelu: config.gelu,
    };
    let metadata = HashMap::from([(
        META_KEY.to_string(),
        serde_json::to_string(&meta).expect("plain struct"),
    )]);
    let bytes = safetensors_bytes(&tensors, Some(metadata))?;
    let (_, weights) =
        checkpoint_from_bytes(&bytes, Path::new("<fixture>"), &LoadOptions::default())?;
    Ok((weights, bytes))
}

/// Class text embeddings `C × embed_dim`, rows unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddings {
    pub matrix: Tensor,
    pub class_names: Vec<String>,
}

impl TextEmbeddings {
    /// Validates counts and re-normalizes every row to unit length.
    pub fn new(matrix: Tensor, class_names: Vec<String>) -> Result<Self> {
        let (c, _) = matrix.dims2()?;
        if c == 0 {
            return Err(Error::Consistency("no classes".into()));
        }
        if c != class_names.len() {
            return Err(Error::Consistency(format!(
                "{c} embedding rows but {} class names",
                class_names.len()
            )));
        }
        let mut matrix = matrix;
        for (i, name) in class_names.iter().enumerate() {
            let row = matrix.row_mut(i);
            let norm = row
                .iter()
                .map(|v| (*v as f64) * (*v as f64))
                .sum::<f64>()
                .sqrt();
            if norm <= 0.0 || !norm.is_finite() {
                return Err(Error::Degenerate(format!(
                    "text embedding row {i} ({name}) has norm {norm}"
                )));
            }
            for v in row.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        Ok(Self {
            matrix,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Random unit rows named `class_0`, `class_1`, … drawn from SplitMix64.
    pub fn synthetic(seed: u64, classes: usize, dim: usize) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let data = (0..classes * dim).map(|_| rng.next_symmetric()).collect();
        let names = (0..classes).map(|i| format!("class_{i}")).collect();
        Self::new(Tensor::new(vec![classes, dim], data)?, names)
    }
}

/// `foo.safetensors` → `foo.labels.json`.
pub fn labels_path(path: &Path) -> PathBuf {
    path.with_extension("labels.json")
}

pub fn load_text_embeddings(path: &Path) -> Result<TextEmbeddings> {
    let bytes = read_file(path)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| archive_err(path, e))?;
    let names = st.names();
    let key = if names.contains(&TEXT_KEY) {
        TEXT_KEY.to_string()
    } else if names.len() == 1 {
        names[0].to_string()
    } else {
        return Err(Error::MissingKey(TEXT_KEY.into()));
    };
    let view = st.tensor(&key).map_err(|e| archive_err(path, e))?;
    let matrix = Tensor::new(view.shape().to_vec(), to_f32(&key, &view)?)?;
    matrix.dims2()?;
    matrix.ensure_finite(&key)?;
    let sidecar = labels_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let class_names: Vec<String> = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: sidecar.clone(),
        source,
    })?;
    TextEmbeddings::new(matrix, class_names)
}

pub fn save_text_embeddings(path: &Path, text: &TextEmbeddings) -> Result<()> {
    let bytes = safetensors_bytes(&[(TEXT_KEY.to_string(), text.matrix.clone())], None)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = labels_path(path);
    let json = serde_json::to_string_pretty(&text.class_names).expect("strings");
    std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}
