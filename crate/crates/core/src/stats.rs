//! Statistics over decomposed feature maps: joint-softmax entropy, norms,
//! peak values, sorted channel-mean profiles and top-channel masking.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vit::BlockTrace;

/// Shannon entropy of `softmax` taken over every element of `x` jointly,
/// divided by `ln(numel)`.
pub fn normalized_entropy(x: &Tensor) -> Result<f64> {
    let n = x.numel();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "entropy of a {n}-element map has a zero normalizer"
        )));
    }
    x.ensure_finite("entropy input")?;
    let max = x.data().iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let sum_exp: f64 = x.data().iter().map(|&v| (v as f64 - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let mut h = 0.0f64;
    for &v in x.data() {
        let log_p = v as f64 - lse;
        let p = log_p.exp();
        if p > 0.0 {
            h -= p * log_p;
        }
    }
    Ok((h / (n as f64).ln()).max(0.0))
}

pub fn frobenius_norm(x: &Tensor) -> f64 {
    x.data()
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

pub fn max_activation(x: &Tensor) -> f32 {
    x.data().iter().copied().fold(f32::NEG_INFINITY, f32::max)
}

fn channel_means(x: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = x.dims2()?;
    if n == 0 {
        return Err(Error::Degenerate("no tokens".into()));
    }
    let mut sums = vec![0.0f64; d];
    for i in 0..n {
        for (s, &v) in sums.iter_mut().zip(x.row(i)) {
            *s += v as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

/// Per-channel spatial means, scaled by the largest absolute mean and sorted ascending.
pub fn channel_mean_profile(x: &Tensor) -> Result<Vec<f64>> {
    let mut means = channel_means(x)?;
    let scale = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Degenerate("all channel means are zero".into()));
    }
    for m in &mut means {
        *m /= scale;
    }
    means.sort_by(f64::total_cmp);
    Ok(means)
}

/// `⌈β·d⌉`, tolerant of the f32 representation error in `β`
/// (`β = 0.1`, `d = 10` gives 1, not 2).
pub fn masked_channel_count(beta: f32, d: usize) -> usize {
    let exact = beta as f64 * d as f64;
    ((exact - 1e-6).ceil().max(0.0) as usize).min(d)
}

/// Indices of the `⌈β·d⌉` channels with the largest raw mean (ties: lower index first).
pub fn top_channels(x: &Tensor, beta: f32) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Input(format!("beta must lie in [0, 1], got {beta}")));
    }
    let means = channel_means(x)?;
    let d = means.len();
    let count = masked_channel_count(beta, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    Ok(order)
}

/// Zeroes the given channels across all tokens.
pub fn zero_channels(x: &Tensor, channels: &[usize]) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for &c in channels {
            row[c] = 0.0;
        }
    }
    out
}

/// Zeroes the top `⌈β·d⌉` highest-mean channels of a token matrix.
pub fn mask_top_channels(x: &Tensor, beta: f32) -> Result<Tensor> {
    Ok(zero_channels(x, &top_channels(x, beta)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Res,
    Attn,
    Sum,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Res, Branch::Attn, Branch::Sum];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Res => "res",
            Branch::Attn => "attn",
            Branch::Sum => "sum",
        }
    }

    fn pick(self, t: &BlockTrace) -> &Tensor {
        match self {
            Branch::Res => &t.x_res,
            Branch::Attn => &t.x_attn,
            Branch::Sum => &t.x_sum,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which token rows enter the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSelection {
    #[default]
    PatchOnly,
    AllTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    /// 1-based block index.
    pub layer: usize,
    pub branch: Branch,
    pub entropy: f64,
    pub fro_norm: f64,
    pub max_value: f64,
    /// Ascending normalized channel means.
    pub channel_means: Vec<f64>,
}

impl StatsRecord {
    pub fn compute(layer: usize, branch: Branch, x: &Tensor) -> Result<Self> {
        Ok(Self {
            layer,
            branch,
            entropy: normalized_entropy(x)?,
            fro_norm: frobenius_norm(x),
            max_value: max_activation(x) as f64,
            channel_means: channel_mean_profile(x)?,
        })
    }
}

/// One record per (layer, branch) in layer-major order.
pub fn layer_report(traces: &[BlockTrace], tokens: TokenSelection) -> Result<Vec<StatsRecord>> {
    if traces.is_empty() {
        return Err(Error::Input("no block traces".into()));
    }
    let mut out = Vec::with_capacity(traces.len() * 3);
    for (i, t) in traces.iter().enumerate() {
        for branch in Branch::ALL {
            let full = branch.pick(t);
            let x = match tokens {
                TokenSelection::PatchOnly => full.slice_rows(1, full.rows()),
                TokenSelection::AllTokens => full.clone(),
            };
            out.push(StatsRecord::compute(i + 1, branch, &x)?);
        }
    }
    Ok(out)
}
