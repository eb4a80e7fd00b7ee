//! Naive f64 reference forward pass, written with plain nested loops and
//! sharing no code with the library's kernels. Only the weight tensors and
//! configuration structs are read from the crate under test.
#![allow(dead_code)]

use clearseg_core::checkpoint::{BlockWeights, LayerNormWeights, LinearWeights};
use clearseg_core::{AttnMode, SurgeryConfig, Tensor, VitConfig, VitWeights};

pub type Mat = Vec<Vec<f64>>;

pub struct OracleTrace {
    pub x_res: Mat,
    pub x_attn: Mat,
    pub x_sum: Mat,
    pub x_out: Mat,
}

fn vec64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Row-major tensor data as `rows × (numel / rows)` f64 matrix.
pub fn mat(t: &Tensor) -> Mat {
    let r = t.shape()[0];
    let c = t.numel() / r;
    (0..r)
        .map(|i| {
            t.data()[i * c..(i + 1) * c]
                .iter()
                .map(|&v| v as f64)
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, w: &LayerNormWeights) -> Mat {
    let g = vec64(&w.gamma);
    let b = vec64(&w.beta);
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let denom = (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / denom * g[j] + b[j])
                .collect()
        })
        .collect()
}

/// `x·Wᵀ + b` with `W` stored out×in.
fn linear(x: &Mat, w: &LinearWeights) -> Mat {
    let wt = mat(&w.weight);
    let b = vec64(&w.bias);
    x.iter()
        .map(|row| {
            (0..wt.len())
                .map(|o| {
                    let mut s = b[o];
                    for i in 0..row.len() {
                        s += row[i] * wt[o][i];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn softmax_scores(a: &Mat, b: &Mat, lo: usize, hi: usize) -> Mat {
    let n = a.len();
    let scale = 1.0 / ((hi - lo) as f64).sqrt();
    (0..n)
        .map(|i| {
            let logits: Vec<f64> = (0..n)
                .map(|j| (lo..hi).map(|c| a[i][c] * b[j][c]).sum::<f64>() * scale)
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

fn quick_gelu(x: f64) -> f64 {
    x / (1.0 + (-1.702 * x).exp())
}

fn erf(x: f64) -> f64 {
    // Maclaurin series; |x| ≤ 4 keeps cancellation below 1e-10.
    if x.abs() > 4.0 {
        return x.signum();
    }
    let mut sum = x;
    let mut term = x;
    let x2 = x * x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -x2 / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() < 1e-17 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn exact_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / 2f64.sqrt()))
}

fn mask_top(x: &Mat, beta: f32) -> Mat {
    let d = x[0].len();
    let means: Vec<f64> = (0..d)
        .map(|c| x.iter().map(|r| r[c]).sum::<f64>() / x.len() as f64)
        .collect();
    let count = ((beta as f64 * d as f64 - 1e-6).ceil().max(0.0) as usize).min(d);
    let mut zeroed = vec![false; d];
    for _ in 0..count {
        let mut best: Option<usize> = None;
        for c in 0..d {
            if zeroed[c] {
                continue;
            }
            if best.is_none_or(|b| means[c] > means[b]) {
                best = Some(c);
            }
        }
        zeroed[best.unwrap()] = true;
    }
    x.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(c, v)| if zeroed[c] { 0.0 } else { *v })
                .collect()
        })
        .collect()
}

pub fn block(
    x: &Mat,
    b: &BlockWeights,
    heads: usize,
    gelu_exact: bool,
    s: &SurgeryConfig,
) -> OracleTrace {
    let n = x.len();
    let d = x[0].len();
    let dk = d / heads;
    let h = layer_norm(x, &b.ln1);
    let q = linear(&h, &b.q);
    let k = linear(&h, &b.k);
    let v = linear(&h, &b.v);
    let mut attended = vec![vec![0.0; d]; n];
    for head in 0..heads {
        let (lo, hi) = (head * dk, (head + 1) * dk);
        let a: Mat = match s.attn_mode {
            AttnMode::Qk => softmax_scores(&q, &k, lo, hi),
            AttnMode::Qq => softmax_scores(&q, &q, lo, hi),
            AttnMode::Kk => softmax_scores(&k, &k, lo, hi),
            AttnMode::Vv => softmax_scores(&v, &v, lo, hi),
            AttnMode::Identity => (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            AttnMode::QqPlusKk => {
                let a1 = softmax_scores(&q, &q, lo, hi);
                let a2 = softmax_scores(&k, &k, lo, hi);
                (0..n)
                    .map(|i| (0..n).map(|j| a1[i][j] + a2[i][j]).collect())
                    .collect()
            }
        };
        for i in 0..n {
            for c in lo..hi {
                attended[i][c] = (0..n).map(|j| a[i][j] * v[j][c]).sum();
            }
        }
    }
    let x_attn = linear(&attended, &b.out);
    let x_res = if s.keep_residual && s.residual_mask_beta > 0.0 {
        mask_top(x, s.residual_mask_beta)
    } else {
        x.clone()
    };
    let alpha = s.alpha as f64;
    let x_sum: Mat = (0..n)
        .map(|i| {
            (0..d)
                .map(|c| {
                    let r = if s.keep_residual { x_res[i][c] } else { 0.0 };
                    r + alpha * x_attn[i][c]
                })
                .collect()
        })
        .collect();
    let x_out = if s.keep_ffn {
        let h2 = layer_norm(&x_sum, &b.ln2);
        let mut hidden = linear(&h2, &b.fc1);
        for row in &mut hidden {
            for v in row.iter_mut() {
                *v = if gelu_exact {
                    exact_gelu(*v)
                } else {
                    quick_gelu(*v)
                };
            }
        }
        let f = linear(&hidden, &b.fc2);
        (0..n)
            .map(|i| (0..d).map(|c| x_sum[i][c] + f[i][c]).collect())
            .collect()
    } else {
        x_sum.clone()
    };
    OracleTrace {
        x_res,
        x_attn,
        x_sum,
        x_out,
    }
}

/// Align-corners bilinear sample of the native positional grid.
fn pos_at(pos: &Mat, g: usize, gh: usize, gw: usize, y: usize, x: usize) -> Vec<f64> {
    let coord = |i: usize, dst: usize| -> f64 {
        if dst == 1 || g == 1 {
            0.0
        } else {
            i as f64 * (g - 1) as f64 / (dst - 1) as f64
        }
    };
    let (sy, sx) = (coord(y, gh), coord(x, gw));
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(g - 1), (x0 + 1).min(g - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let at = |yy: usize, xx: usize| &pos[1 + yy * g + xx];
    (0..pos[0].len())
        .map(|c| {
            at(y0, x0)[c] * (1.0 - fy) * (1.0 - fx)
                + at(y0, x1)[c] * (1.0 - fy) * fx
                + at(y1, x0)[c] * fy * (1.0 - fx)
                + at(y1, x1)[c] * fy * fx
        })
        .collect()
}

/// Reference dense encoding: returns `hw × embed_dim` patch embeddings and per-block traces.
pub fn encode(
    cfg: &VitConfig,
    w: &VitWeights,
    pixels: &Tensor,
    surgery: Option<&SurgeryConfig>,
) -> (Mat, Vec<OracleTrace>) {
    let (h, wd) = (pixels.shape()[1], pixels.shape()[2]);
    let p = cfg.patch_size;
    let (gh, gw) = (h / p, wd / p);
    let d = cfg.width;
    let px = pixels.data();
    let kernel = vec64(&w.patch_embed);
    let pos = mat(&w.pos_embed);
    let g = cfg.grid_size();

    let mut x: Mat = vec![vec64(&w.class_token)];
    for gy in 0..gh {
        for gx in 0..gw {
            let mut tok = vec![0.0; d];
            for (o, t) in tok.iter_mut().enumerate() {
                for c in 0..3 {
                    for ky in 0..p {
                        for kx in 0..p {
                            let pv = px[c * h * wd + (gy * p + ky) * wd + gx * p + kx] as f64;
                            *t += kernel[o * 3 * p * p + c * p * p + ky * p + kx] * pv;
                        }
                    }
                }
            }
            x.push(tok);
        }
    }
    for (c, v) in x[0].iter_mut().enumerate() {
        *v += pos[0][c];
    }
    for gy in 0..gh {
        for gx in 0..gw {
            let pe = if gh == g && gw == g {
                pos[1 + gy * g + gx].clone()
            } else {
                pos_at(&pos, g, gh, gw, gy, gx)
            };
            for c in 0..d {
                x[1 + gy * gw + gx][c] += pe[c];
            }
        }
    }
    x = layer_norm(&x, &w.ln_pre);

    let vanilla = SurgeryConfig::vanilla();
    let mut traces = Vec::new();
    for (i, b) in w.blocks.iter().enumerate() {
        let s = if i + 1 == w.blocks.len() {
            surgery.unwrap_or(&vanilla)
        } else {
            &vanilla
        };
        let t = block(
            &x,
            b,
            cfg.heads,
            cfg.gelu == clearseg_core::GeluVariant::Exact,
            s,
        );
        x = t.x_out.clone();
        traces.push(t);
    }
    let y = layer_norm(&x, &w.ln_post);
    let proj = mat(&w.proj);
    let out = y[1..]
        .iter()
        .map(|row| {
            (0..cfg.embed_dim)
                .map(|e| (0..d).map(|c| row[c] * proj[c][e]).sum())
                .collect()
        })
        .collect();
    (out, traces)
}

/// ‖a − b‖_F / ‖b‖_F.
pub fn rel_frobenius(a: &Tensor, b: &Mat) -> f64 {
    let flat: Vec<f64> = b.iter().flatten().copied().collect();
    assert_eq!(a.numel(), flat.len(), "shape mismatch against oracle");
    let num: f64 = a
        .data()
        .iter()
        .zip(&flat)
        .map(|(x, y)| (*x as f64 - y).powi(2))
        .sum();
    let den: f64 = flat.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}
