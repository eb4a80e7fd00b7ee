//! ViT image encoder with decomposable residual-attention blocks.
//!
//! Each block is evaluated as
//!
//! ```text
//! q, k, v = Proj_{q,k,v}(LN₁(X))
//! X_sum   = X_res + α·X_attn,   X_attn = Proj(Attn·v) + b_o
//! X_out   = X_sum + FFN(LN₂(X_sum))
//! ```
//!
//! and every intermediate is kept in a [`BlockTrace`]. The last block can be
//! rewired with a [`SurgeryConfig`]: a different attention pattern, no
//! residual branch, no feed-forward branch, and a scale on the attention
//! branch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{BlockWeights, LayerNormWeights, VitConfig, VitWeights, LN_EPS};
use crate::error::{Error, Result};
use crate::stats::mask_top_channels;
use crate::tensor::{
    gelu, interpolate_grid, layer_norm, linear, matmul, matmul_nt, softmax_rows, GeluVariant,
    Tensor,
};

/// Which pair of projections forms the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnMode {
    Qk,
    Qq,
    Kk,
    Vv,
    Identity,
    /// `softmax(qqᵀ) + softmax(kkᵀ)`; rows sum to two.
    QqPlusKk,
}

impl AttnMode {
    pub const ALL: [AttnMode; 6] = [
        AttnMode::Qk,
        AttnMode::Qq,
        AttnMode::Kk,
        AttnMode::Vv,
        AttnMode::Identity,
        AttnMode::QqPlusKk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttnMode::Qk => "qk",
            AttnMode::Qq => "qq",
            AttnMode::Kk => "kk",
            AttnMode::Vv => "vv",
            AttnMode::Identity => "identity",
            AttnMode::QqPlusKk => "qqkk",
        }
    }
}

impl fmt::Display for AttnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qk" => Ok(AttnMode::Qk),
            "qq" => Ok(AttnMode::Qq),
            "kk" => Ok(AttnMode::Kk),
            "vv" => Ok(AttnMode::Vv),
            "identity" => Ok(AttnMode::Identity),
            "qqkk" | "qq_plus_kk" => Ok(AttnMode::QqPlusKk),
            other => Err(Error::Input(format!("unknown attention mode `{other}`"))),
        }
    }
}

/// Last-block modifications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurgeryConfig {
    pub attn_mode: AttnMode,
    pub keep_residual: bool,
    pub keep_ffn: bool,
    /// Scale on the attention branch before it joins the residual.
    pub alpha: f32,
    /// Fraction of highest-mean residual channels zeroed before summation.
    /// Zero leaves the residual untouched.
    #[serde(default)]
    pub residual_mask_beta: f32,
}

impl Default for SurgeryConfig {
    fn default() -> Self {
        Self::clearclip()
    }
}

impl SurgeryConfig {
    pub fn vanilla() -> Self {
        Self {
            attn_mode: AttnMode::Qk,
            keep_residual: true,
            keep_ffn: true,
            alpha: 1.0,
            residual_mask_beta: 0.0,
        }
    }

    pub fn clearclip() -> Self {
        Self {
            attn_mode: AttnMode::Qq,
            keep_residual: false,
            keep_ffn: false,
            ..Self::vanilla()
        }
    }

    pub fn maskclip() -> Self {
        Self {
            attn_mode: AttnMode::Identity,
            keep_residual: false,
            keep_ffn: false,
            ..Self::vanilla()
        }
    }

    pub fn sclip() -> Self {
        Self {
            attn_mode: AttnMode::QqPlusKk,
            ..Self::vanilla()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "vanilla" => Ok(Self::vanilla()),
            "clearclip" => Ok(Self::clearclip()),
            "maskclip" => Ok(Self::maskclip()),
            "sclip" => Ok(Self::sclip()),
            other => Err(Error::Input(format!("unknown surgery preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Input(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.residual_mask_beta) {
            return Err(Error::Input(format!(
                "beta must lie in [0, 1], got {}",
                self.residual_mask_beta
            )));
        }
        Ok(())
    }
}

/// Decomposed outputs of one block, all `(1 + hw) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    /// Residual branch (the block input, after optional channel masking).
    pub x_res: Tensor,
    /// `Proj(Attn·v) + b_o`, before α-scaling.
    pub x_attn: Tensor,
    pub x_sum: Tensor,
    /// `None` when the feed-forward branch was removed.
    pub x_ffn: Option<Tensor>,
    pub x_out: Tensor,
}

/// Per-head attention matrices, each `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnMaps {
    pub maps: Vec<Tensor>,
    pub head_dim: usize,
}

/// Dense patch embeddings in the joint image-text space, class token removed.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddings {
    /// `hw × embed_dim`, row-major over the token grid.
    pub matrix: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

/// Per-head query/key/value projections of one block input.
#[derive(Debug, Clone)]
pub struct HeadProjections {
    pub q: Vec<Tensor>,
    pub k: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

fn split_heads(x: &Tensor, heads: usize) -> Vec<Tensor> {
    let dk = x.cols() / heads;
    (0..heads)
        .map(|h| x.slice_cols(h * dk, (h + 1) * dk))
        .collect()
}

fn ln(x: &Tensor, w: &LayerNormWeights) -> Result<Tensor> {
    layer_norm(x, &w.gamma, &w.beta, LN_EPS)
}

/// `LN₁` followed by the q/k/v projections, split into heads.
pub fn head_projections(x: &Tensor, block: &BlockWeights, heads: usize) -> Result<HeadProjections> {
    let h = ln(x, &block.ln1)?;
    let q = linear(&h, &block.q.weight, Some(&block.q.bias))?;
    let k = linear(&h, &block.k.weight, Some(&block.k.bias))?;
    let v = linear(&h, &block.v.weight, Some(&block.v.bias))?;
    Ok(HeadProjections {
        q: split_heads(&q, heads),
        k: split_heads(&k, heads),
        v: split_heads(&v, heads),
    })
}

pub fn attention_maps(
    q: &[Tensor],
    k: &[Tensor],
    v: &[Tensor],
    mode: AttnMode,
    head_dim: usize,
) -> Result<AttnMaps> {
    if q.len() != k.len() || q.len() != v.len() || q.is_empty() {
        return Err(Error::Dimension(format!(
            "head counts differ: q {}, k {}, v {}",
            q.len(),
            k.len(),
            v.len()
        )));
    }
    let n = q[0].rows();
    for t in q.iter().chain(k).chain(v) {
        if t.shape() != [n, head_dim] {
            return Err(Error::Dimension(format!(
                "head tensor {:?}, expected [{n}, {head_dim}]",
                t.shape()
            )));
        }
    }
    let scale = 1.0 / (head_dim as f32).sqrt();
    let self_attn =
        |a: &Tensor, b: &Tensor| -> Result<Tensor> { softmax_rows(&matmul_nt(a, b)?, scale) };
    let maps = (0..q.len())
        .map(|h| match mode {
            AttnMode::Qk => self_attn(&q[h], &k[h]),
            AttnMode::Qq => self_attn(&q[h], &q[h]),
            AttnMode::Kk => self_attn(&k[h], &k[h]),
            AttnMode::Vv => self_attn(&v[h], &v[h]),
            AttnMode::Identity => Ok(Tensor::eye(n)),
            AttnMode::QqPlusKk => self_attn(&q[h], &q[h])?.add(&self_attn(&k[h], &k[h])?),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttnMaps { maps, head_dim })
}

/// Concatenation over heads of `A_h · v_h`, `n × d`.
pub fn attend(maps: &AttnMaps, v: &[Tensor]) -> Result<Tensor> {
    let per_head = maps
        .maps
        .iter()
        .zip(v)
        .map(|(a, vh)| matmul(a, vh))
        .collect::<Result<Vec<_>>>()?;
    let n = per_head[0].rows();
    let dk = maps.head_dim;
    let d = dk * per_head.len();
    let mut out = Tensor::zeros(vec![n, d]);
    for (h, t) in per_head.iter().enumerate() {
        for i in 0..n {
            out.row_mut(i)[h * dk..(h + 1) * dk].copy_from_slice(t.row(i));
        }
    }
    Ok(out)
}

/// One residual-attention block. `surgery = None` is the stock block.
pub fn block_forward(
    x: &Tensor,
    block: &BlockWeights,
    heads: usize,
    gelu_variant: GeluVariant,
    surgery: Option<&SurgeryConfig>,
) -> Result<BlockTrace> {
    let cfg = surgery.copied().unwrap_or_else(SurgeryConfig::vanilla);
    cfg.validate()?;
    let (_, d) = x.dims2()?;
    if d % heads != 0 {
        return Err(Error::Dimension(format!(
            "width {d} not divisible by {heads} heads"
        )));
    }

    let proj = head_projections(x, block, heads)?;
    let maps = attention_maps(&proj.q, &proj.k, &proj.v, cfg.attn_mode, d / heads)?;
    let x_attn = linear(
        &attend(&maps, &proj.v)?,
        &block.out.weight,
        Some(&block.out.bias),
    )?;
    x_attn.ensure_finite("attention branch")?;

    let x_res = if cfg.keep_residual && cfg.residual_mask_beta > 0.0 {
        mask_top_channels(x, cfg.residual_mask_beta)?
    } else {
        x.clone()
    };

    let alpha = cfg.alpha;
    let sum_data = if cfg.keep_residual {
        x_res
            .data()
            .iter()
            .zip(x_attn.data())
            .map(|(r, a)| r + alpha * a)
            .collect()
    } else {
        x_attn.data().iter().map(|a| alpha * a).collect()
    };
    let x_sum = Tensor::new(x_attn.shape().to_vec(), sum_data)?;
    x_sum.ensure_finite("residual sum")?;

    let (x_ffn, x_out) = if cfg.keep_ffn {
        let h = ln(&x_sum, &block.ln2)?;
        let hidden = gelu(
            &linear(&h, &block.fc1.weight, Some(&block.fc1.bias))?,
            gelu_variant,
        );
        let ffn = linear(&hidden, &block.fc2.weight, Some(&block.fc2.bias))?;
        ffn.ensure_finite("feed-forward branch")?;
        let out = x_sum.add(&ffn)?;
        (Some(ffn), out)
    } else {
        (None, x_sum.clone())
    };
    x_out.ensure_finite("block output")?;

    Ok(BlockTrace {
        x_res,
        x_attn,
        x_sum,
        x_ffn,
        x_out,
    })
}

/// Resizes a `(1 + g²) × d` positional table to a `grid_h × grid_w` token grid.
pub fn interpolate_pos_embed(pos: &Tensor, grid_h: usize, grid_w: usize) -> Result<Tensor> {
    let (rows, d) = pos.dims2()?;
    let spatial = rows.saturating_sub(1);
    let g = (spatial as f64).sqrt().round() as usize;
    if g * g != spatial || spatial == 0 {
        return Err(Error::UnsupportedLayout(format!(
            "{spatial} positional rows do not form a square grid"
        )));
    }
    if g == grid_h && g == grid_w {
        return Ok(pos.clone());
    }
    let grid = pos.slice_rows(1, rows).reshape(vec![g, g, d])?;
    let resized = interpolate_grid(&grid, grid_h, grid_w)?;
    let mut data = Vec::with_capacity((1 + grid_h * grid_w) * d);
    data.extend_from_slice(pos.row(0));
    data.extend_from_slice(resized.data());
    Tensor::new(vec![1 + grid_h * grid_w, d], data)
}

/// Loaded encoder; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct VitEncoder {
    pub config: VitConfig,
    pub weights: VitWeights,
}

impl VitEncoder {
    pub fn new(config: VitConfig, weights: VitWeights) -> Result<Self> {
        config.validate()?;
        if weights.blocks.len() != config.layers {
            return Err(Error::Config(format!(
                "{} blocks for a {}-layer config",
                weights.blocks.len(),
                config.layers
            )));
        }
        Ok(Self { config, weights })
    }

    /// Flattens `3×H×W` pixels into one row per patch (channel, row, column order).
    fn patchify(&self, pixels: &Tensor) -> Result<(Tensor, usize, usize)> {
        let p = self.config.patch_size;
        let (h, w) = match pixels.shape() {
            [3, h, w] => (*h, *w),
            other => {
                return Err(Error::Dimension(format!(
                    "expected 3×H×W pixels, got {other:?}"
                )))
            }
        };
        if h == 0 || w == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Dimension(format!(
                "image {h}×{w} is not a positive multiple of patch size {p}"
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let px = pixels.data();
        let mut data = Vec::with_capacity(gh * gw * 3 * p * p);
        for gy in 0..gh {
            for gx in 0..gw {
                for c in 0..3 {
                    for ky in 0..p {
                        let start = c * h * w + (gy * p + ky) * w + gx * p;
                        data.extend_from_slice(&px[start..start + p]);
                    }
                }
            }
        }
        Ok((Tensor::new(vec![gh * gw, 3 * p * p], data)?, gh, gw))
    }

    /// Token matrix entering the first block: `(1 + hw) × d`.
    pub fn embed(&self, pixels: &Tensor) -> Result<(Tensor, usize, usize)> {
        let w = &self.weights;
        let (patches, gh, gw) = self.patchify(pixels)?;
        let patch_tokens = linear(&patches, &w.patch_embed, None)?;
        let d = self.config.width;
        let mut data = Vec::with_capacity((1 + gh * gw) * d);
        data.extend_from_slice(w.class_token.data());
        data.extend_from_slice(patch_tokens.data());
        let tokens = Tensor::new(vec![1 + gh * gw, d], data)?;
        let pos = interpolate_pos_embed(&w.pos_embed, gh, gw)?;
        let x = ln(&tokens.add(&pos)?, &w.ln_pre)?;
        x.ensure_finite("embedding")?;
        Ok((x, gh, gw))
    }

    /// Full forward pass; surgery applies to the last block only.
    pub fn encode_dense(
        &self,
        pixels: &Tensor,
        surgery: Option<&SurgeryConfig>,
        trace: bool,
    ) -> Result<(PatchEmbeddings, Option<Vec<BlockTrace>>)> {
        let (mut x, grid_h, grid_w) = self.embed(pixels)?;
        let last = self.config.layers - 1;
        let mut traces = trace.then(Vec::new);
        for (i, block) in self.weights.blocks.iter().enumerate() {
            let s = if i == last { surgery } else { None };
            let t = block_forward(&x, block, self.config.heads, self.config.gelu, s)?;
            x = t.x_out.clone();
            if let Some(ts) = traces.as_mut() {
                ts.push(t);
            }
        }
        let y = matmul(&ln(&x, &self.weights.ln_post)?, &self.weights.proj)?;
        y.ensure_finite("projection")?;
        let matrix = y.slice_rows(1, y.rows());
        Ok((
            PatchEmbeddings {
                matrix,
                grid_h,
                grid_w,
            },
            traces,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::gen_fixture_checkpoint;
    use crate::checkpoint::SplitMix64;

    fn tiny() -> VitEncoder {
        let cfg = VitConfig::new(16, 4, 16, 3, 2, 8, GeluVariant::Quick).unwrap();
        let (w, _) = gen_fixture_checkpoint(7, &cfg).unwrap();
        VitEncoder::new(cfg, w).unwrap()
    }

    fn random(shape: Vec<usize>, seed: u64, scale: f32) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        let n = shape.iter().product();
        Tensor::new(
            shape,
            (0..n).map(|_| scale * rng.next_symmetric()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn presets() {
        let c = SurgeryConfig::preset("clearclip").unwrap();
        assert_eq!(
            (c.attn_mode, c.keep_residual, c.keep_ffn, c.alpha),
            (AttnMode::Qq, false, false, 1.0)
        );
        let v = SurgeryConfig::preset("vanilla").unwrap();
        assert_eq!(
            (v.attn_mode, v.keep_residual, v.keep_ffn, v.alpha),
            (AttnMode::Qk, true, true, 1.0)
        );
        assert_eq!(
            SurgeryConfig::preset("sclip").unwrap().attn_mode,
            AttnMode::QqPlusKk
        );
        assert_eq!(
            SurgeryConfig::preset("maskclip").unwrap().attn_mode,
            AttnMode::Identity
        );
        assert!(SurgeryConfig::preset("nope").is_err());
        assert!(SurgeryConfig {
            alpha: 0.0,
            ..SurgeryConfig::vanilla()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn attention_mode_rows() {
        let q = vec![random(vec![5, 4], 1, 2.0), random(vec![5, 4], 2, 2.0)];
        let k = vec![random(vec![5, 4], 3, 2.0), random(vec![5, 4], 4, 2.0)];
        let v = vec![random(vec![5, 4], 5, 2.0), random(vec![5, 4], 6, 2.0)];
        for mode in AttnMode::ALL {
            let maps = attention_maps(&q, &k, &v, mode, 4).unwrap();
            let target = if mode == AttnMode::QqPlusKk { 2.0 } else { 1.0 };
            for m in &maps.maps {
                for i in 0..5 {
                    let s: f32 = m.row(i).iter().sum();
                    assert!((s - target).abs() < 1e-6, "{mode}: {s}");
                }
            }
        }
        let id = attention_maps(&q, &k, &v, AttnMode::Identity, 4).unwrap();
        assert!(id.maps.iter().all(|m| *m == Tensor::eye(5)));

        let z = vec![Tensor::zeros(vec![5, 4])];
        let uni = attention_maps(&z, &z, &z, AttnMode::Qk, 4).unwrap();
        assert!(uni.maps[0].data().iter().all(|&p| (p - 0.2).abs() < 1e-7));

        assert!(attention_maps(&q, &k[..1], &v, AttnMode::Qk, 4).is_err());
    }

    #[test]
    fn vanilla_surgery_matches_plain_block_bitwise() {
        let enc = tiny();
        let x = random(vec![17, 16], 11, 1.0);
        let b = &enc.weights.blocks[0];
        let plain = block_forward(&x, b, 2, GeluVariant::Quick, None).unwrap();
        let s = SurgeryConfig::vanilla();
        let same = block_forward(&x, b, 2, GeluVariant::Quick, Some(&s)).unwrap();
        assert_eq!(plain, same);
        assert_eq!(plain.x_sum, plain.x_res.add(&plain.x_attn).unwrap());
        assert_eq!(
            plain.x_out,
            plain.x_sum.add(plain.x_ffn.as_ref().unwrap()).unwrap()
        );
    }

    #[test]
    fn clearclip_block_outputs_attention_branch() {
        let enc = tiny();
        let x = random(vec![17, 16], 12, 1.0);
        let b = &enc.weights.blocks[2];
        let s = SurgeryConfig::clearclip();
        let t = block_forward(&x, b, 2, GeluVariant::Quick, Some(&s)).unwrap();
        assert!(t.x_ffn.is_none());
        let p = head_projections(&x, b, 2).unwrap();
        let maps = attention_maps(&p.q, &p.k, &p.v, AttnMode::Qq, 8).unwrap();
        let expect = linear(
            &attend(&maps, &p.v).unwrap(),
            &b.out.weight,
            Some(&b.out.bias),
        )
        .unwrap();
        assert_eq!(t.x_out, expect);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let enc = tiny();
        let mut x = random(vec![17, 16], 13, 1.0);
        x.data_mut()[3] = f32::NAN;
        let err =
            block_forward(&x, &enc.weights.blocks[0], 2, GeluVariant::Quick, None).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn pos_embed_interpolation() {
        let pos = random(vec![5, 3], 21, 1.0);
        assert_eq!(interpolate_pos_embed(&pos, 2, 2).unwrap(), pos);

        // 2×2 grid [[a, b], [c, d]] → 2×3: middle column is the mean of its row.
        let data = vec![9.0, 1.0, 3.0, 5.0, 7.0];
        let pos = Tensor::new(vec![5, 1], data).unwrap();
        let out = interpolate_pos_embed(&pos, 2, 3).unwrap();
        assert_eq!(out.data(), &[9.0, 1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);

        let constant = Tensor::new(
            vec![5, 2],
            vec![0.0, 0.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0],
        )
        .unwrap();
        let out = interpolate_pos_embed(&constant, 3, 5).unwrap();
        assert!(out.data()[2..].iter().all(|&v| v == 4.0));

        let bad = Tensor::zeros(vec![4, 2]);
        assert!(matches!(
            interpolate_pos_embed(&bad, 2, 2),
            Err(Error::UnsupportedLayout(_))
        ));
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let enc = tiny();
        let px = random(vec![3, 12, 20], 31, 2.0);
        let (a, tr) = enc
            .encode_dense(&px, Some(&SurgeryConfig::clearclip()), true)
            .unwrap();
        assert_eq!(a.matrix.shape(), &[15, 8]);
        assert_eq!((a.grid_h, a.grid_w), (3, 5));
        assert_eq!(tr.unwrap().len(), 3);
        let (b, none) = enc
            .encode_dense(&px, Some(&SurgeryConfig::clearclip()), false)
            .unwrap();
        assert_eq!(a, b);
        assert!(none.is_none());
        let bad = random(vec![3, 10, 12], 32, 1.0);
        assert!(matches!(
            enc.encode_dense(&bad, None, false),
            Err(Error::Dimension(_))
        ));
    }
}
