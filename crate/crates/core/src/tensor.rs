//! Minimal dense f32 tensor and the handful of kernels the encoder needs.
//!
//! Everything is row-major and single precision. Reductions always run in
//! ascending index order, so results are reproducible bit-for-bit across
//! runs and thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense row-major n-dimensional array of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Dimension(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows `start..end` of a matrix as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let c = self.cols();
        Self {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        }
    }

    /// Columns `start..end` of a matrix as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Self {
            shape: vec![r, w],
            data,
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails with a numeric error naming `what` if any element is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, s: f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Adds `bias` to every row of a matrix.
    pub fn add_row_bias(&mut self, bias: &[f32]) -> Result<()> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::Dimension(format!(
                "bias of length {} for {} columns",
                bias.len(),
                c
            )));
        }
        for row in self.data.chunks_exact_mut(c) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Largest absolute elementwise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        if self.shape != other.shape {
            return f32::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

const ROW_TILE: usize = 4;
const COL_TILE: usize = 256;
const DEPTH_TILE: usize = 256;
/// Rows handed to one worker in the parallel path.
const ROW_BLOCK: usize = 64;
/// Multiply-adds above which row blocks run on the rayon pool.
const PAR_THRESHOLD: usize = 1 << 22;

/// `out += a·b` over `rows` rows. Tiling never reorders the `t` terms of an element.
fn gemm_rows(a: &[f32], b: &[f32], out: &mut [f32], rows: usize, k: usize, n: usize) {
    for j0 in (0..n).step_by(COL_TILE) {
        let j1 = (j0 + COL_TILE).min(n);
        for t0 in (0..k).step_by(DEPTH_TILE) {
            let t1 = (t0 + DEPTH_TILE).min(k);
            let mut i = 0;
            while i + ROW_TILE <= rows {
                let (c0, rest) = out[i * n..].split_at_mut(n);
                let (c1, rest) = rest.split_at_mut(n);
                let (c2, rest) = rest.split_at_mut(n);
                let c3 = &mut rest[..n];
                let (c0, c1, c2, c3) = (
                    &mut c0[j0..j1],
                    &mut c1[j0..j1],
                    &mut c2[j0..j1],
                    &mut c3[j0..j1],
                );
                for t in t0..t1 {
                    let a0 = a[i * k + t];
                    let a1 = a[(i + 1) * k + t];
                    let a2 = a[(i + 2) * k + t];
                    let a3 = a[(i + 3) * k + t];
                    let bt = &b[t * n + j0..t * n + j1];
                    for ((((x0, x1), x2), x3), bv) in c0
                        .iter_mut()
                        .zip(c1.iter_mut())
                        .zip(c2.iter_mut())
                        .zip(c3.iter_mut())
                        .zip(bt)
                    {
                        *x0 += a0 * bv;
                        *x1 += a1 * bv;
                        *x2 += a2 * bv;
                        *x3 += a3 * bv;
                    }
                }
                i += ROW_TILE;
            }
            for i in i..rows {
                let c = &mut out[i * n + j0..i * n + j1];
                for t in t0..t1 {
                    let av = a[i * k + t];
                    for (x, bv) in c.iter_mut().zip(&b[t * n + j0..t * n + j1]) {
                        *x += av * bv;
                    }
                }
            }
        }
    }
}

fn gemm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    if n == 0 {
        return out;
    }
    let block = |(bi, chunk): (usize, &mut [f32])| {
        let i0 = bi * ROW_BLOCK;
        let rows = chunk.len() / n;
        gemm_rows(&a[i0 * k..(i0 + rows) * k], b, chunk, rows, k, n);
    };
    if m * n * k >= PAR_THRESHOLD {
        out.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(block);
    } else {
        out.chunks_mut(ROW_BLOCK * n).enumerate().for_each(block);
    }
    out
}

/// `C = A·B` for `A: m×k`, `B: k×n`. Every `C[i,j]` sums its `k` terms in
/// ascending order starting from zero, so results do not depend on tiling
/// or thread count.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions {k} and {k2} differ"
        )));
    }
    Tensor::new(vec![m, n], gemm(&a.data, &b.data, m, k, n))
}

/// `C = A·Bᵀ` for `A: m×k`, `B: n×k`, with the same summation order as [`matmul`].
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_nt inner dimensions {k} and {k2} differ"
        )));
    }
    let mut bt = vec![0.0f32; k * n];
    for j in 0..n {
        for t in 0..k {
            bt[t * n + j] = b.data[j * k + t];
        }
    }
    Tensor::new(vec![m, n], gemm(&a.data, &bt, m, k, n))
}

/// Affine map with a PyTorch-layout weight: `x·Wᵀ + b`, `W: out×in`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let mut y = matmul_nt(x, weight)?;
    if let Some(b) = bias {
        y.add_row_bias(b.data())?;
    }
    Ok(y)
}

/// Row-wise `softmax(scale · row)` with max subtraction.
pub fn softmax_rows(a: &Tensor, scale: f32) -> Result<Tensor> {
    let (_, n) = a.dims2()?;
    let mut out = a.clone();
    for row in out.data.chunks_exact_mut(n.max(1)) {
        let mut max = f32::NEG_INFINITY;
        for v in row.iter_mut() {
            *v *= scale;
            max = max.max(*v);
        }
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Layer normalization over the last dimension (population variance).
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.cols();
    if gamma.numel() != d || beta.numel() != d {
        return Err(Error::Dimension(format!(
            "layer_norm over {d} channels with gamma {:?} / beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut out = x.clone();
    let n = d as f32;
    for row in out.data.chunks_exact_mut(d) {
        let mut mean = 0.0f32;
        for v in row.iter() {
            mean += v;
        }
        mean /= n;
        let mut var = 0.0f32;
        for v in row.iter() {
            let c = v - mean;
            var += c * c;
        }
        var /= n;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

/// GELU flavour: OpenAI CLIP checkpoints use the sigmoid approximation,
/// OpenCLIP ones the erf form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GeluVariant {
    #[default]
    Quick,
    Exact,
}

impl GeluVariant {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            GeluVariant::Quick => x / (1.0 + (-1.702 * x).exp()),
            GeluVariant::Exact => 0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GeluVariant::Quick => "quick",
            GeluVariant::Exact => "exact",
        }
    }
}

impl std::str::FromStr for GeluVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(GeluVariant::Quick),
            "exact" => Ok(GeluVariant::Exact),
            other => Err(Error::Config(format!("unknown gelu variant `{other}`"))),
        }
    }
}

pub fn gelu(x: &Tensor, variant: GeluVariant) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| variant.apply(v)).collect(),
    }
}

/// Pairwise cosine similarity between the rows of `a: m×d` and `b: n×d`.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, d) = a.dims2()?;
    let (n, d2) = b.dims2()?;
    if d != d2 {
        return Err(Error::Dimension(format!(
            "cosine between {d}- and {d2}-dimensional rows"
        )));
    }
    let norms = |t: &Tensor, name: &str| -> Result<Vec<f32>> {
        (0..t.rows())
            .map(|i| {
                let nrm = t.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
                if nrm > 0.0 {
                    Ok(nrm)
                } else {
                    Err(Error::Degenerate(format!(
                        "row {i} of {name} has zero norm"
                    )))
                }
            })
            .collect()
    };
    let na = norms(a, "lhs")?;
    let nb = norms(b, "rhs")?;
    let mut out = matmul_nt(a, b)?;
    for (i, ra) in na.iter().enumerate() {
        for (j, rb) in nb.iter().enumerate() {
            let v = &mut out.data[i * n + j];
            *v = (*v / (ra * rb)).clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}

/// Align-corners source coordinate and neighbour pair for output index `i`.
fn align_corners_coord(i: usize, src: usize, dst: usize) -> (usize, usize, f32) {
    if dst <= 1 || src <= 1 {
        return (0, 0, 0.0);
    }
    let pos = (i * (src - 1)) as f32 / (dst - 1) as f32;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f32)
}

/// Channel-wise bilinear resize of an `h×w×d` grid with align-corners sampling.
pub fn interpolate_grid(grid: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, d) = match grid.shape[..] {
        [h, w, d] => (h, w, d),
        _ => {
            return Err(Error::Dimension(format!(
                "interpolate_grid expects h×w×d, got {:?}",
                grid.shape
            )))
        }
    };
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!(
            "cannot resize {h}×{w} grid to {out_h}×{out_w}"
        )));
    }
    if h == out_h && w == out_w {
        return Ok(grid.clone());
    }
    let xs: Vec<_> = (0..out_w)
        .map(|x| align_corners_coord(x, w, out_w))
        .collect();
    let mut out = vec![0.0f32; out_h * out_w * d];
    for y in 0..out_h {
        let (y0, y1, fy) = align_corners_coord(y, h, out_h);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = &grid.data[(y0 * w + x0) * d..][..d];
            let p01 = &grid.data[(y0 * w + x1) * d..][..d];
            let p10 = &grid.data[(y1 * w + x0) * d..][..d];
            let p11 = &grid.data[(y1 * w + x1) * d..][..d];
            let o = &mut out[(y * out_w + x) * d..][..d];
            for c in 0..d {
                let top = p00[c] + fx * (p01[c] - p00[c]);
                let bot = p10[c] + fx * (p11[c] - p10[c]);
                o[c] = top + fy * (bot - top);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f32]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let b = m(&[&[1., 2.], &[3., 4.]]);
        assert_eq!(matmul(&Tensor::eye(2), &b).unwrap(), b);
        assert_eq!(
            matmul(&Tensor::zeros(vec![2, 2]), &b).unwrap(),
            Tensor::zeros(vec![2, 2])
        );
        let a = m(&[&[1., 2.], &[3., 4.]]);
        let b = m(&[&[5., 6.], &[7., 8.]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[&[19., 22.], &[43., 50.]]));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let err = matmul(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![2, 3])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&m(&[&[0., 0.]]), 1.0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&m(&[&[10., 0.]]), 1.0).unwrap();
        assert!((s.data()[0] - 0.9999546).abs() < 1e-6);
        assert!((s.data()[1] - 0.0000454).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::full(vec![2], 1.0);
        let zero = Tensor::zeros(vec![2]);
        let y = layer_norm(&m(&[&[3., 3.]]), &one, &zero, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let y = layer_norm(&m(&[&[1., 3.]]), &one, &zero, 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn gelu_examples() {
        for v in [GeluVariant::Quick, GeluVariant::Exact] {
            assert_eq!(v.apply(0.0), 0.0);
            assert!((v.apply(10.0) - 10.0).abs() < 1e-3);
        }
        assert!((GeluVariant::Quick.apply(1.0) - 0.845_79).abs() < 1e-5);
        // x·Φ(x) at 1 is 0.841345.
        assert!((GeluVariant::Exact.apply(1.0) - 0.841_345).abs() < 1e-5);
    }

    #[test]
    fn cosine_examples() {
        let c = cosine_matrix(&m(&[&[1., 0.]]), &m(&[&[0., 1.], &[3., 0.]])).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0]);
        let err = cosine_matrix(&m(&[&[0., 0.]]), &m(&[&[1., 0.]])).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn interpolate_examples() {
        let g = Tensor::new(vec![1, 2, 1], vec![2.0, 6.0]).unwrap();
        let out = interpolate_grid(&g, 1, 3).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 6.0]);
        assert!(matches!(
            interpolate_grid(&g, 0, 3),
            Err(Error::Dimension(_))
        ));
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f32> {
        let (m, k) = a.dims2().unwrap();
        let n = b.cols();
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f32;
                for t in 0..k {
                    s += a.data()[i * k + t] * b.data()[t * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn seeded(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = crate::checkpoint::SplitMix64::new(seed);
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.next_symmetric()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn tiled_and_parallel_paths_match_triple_loop_bitwise() {
        // Crosses every tile edge; the last case is above the parallel threshold.
        for (i, &(m, k, n)) in [(7, 300, 270), (70, 513, 33), (130, 300, 300)]
            .iter()
            .enumerate()
        {
            let a = seeded(m, k, i as u64);
            let b = seeded(k, n, 10 + i as u64);
            let want = naive_matmul(&a, &b);
            assert_eq!(matmul(&a, &b).unwrap().data(), &want[..]);
            assert_eq!(
                matmul_nt(&a, &b.transpose().unwrap()).unwrap().data(),
                &want[..]
            );
        }
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
        prop::collection::vec(-10.0f32..10.0, rows * cols)
            .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_matches_triple_loop_bitwise((a, b) in (1usize..6, 1usize..6, 1usize..6)
            .prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n)))) {
            let c = matmul(&a, &b).unwrap();
            prop_assert_eq!(c.data(), &naive_matmul(&a, &b)[..]);
        }

        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            a in (1usize..4, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c)),
            shift in -50.0f32..50.0,
        ) {
            let s = softmax_rows(&a, 1.0).unwrap();
            for i in 0..s.rows() {
                let sum: f32 = s.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
            }
            let shifted = Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| v + shift).collect()).unwrap();
            let s2 = softmax_rows(&shifted, 1.0).unwrap();
            prop_assert!(s.max_abs_diff(&s2) < 1e-6);
        }

        #[test]
        fn layer_norm_standardizes(a in (1usize..4, 4usize..16).prop_flat_map(|(r, c)| matrix(r, c))) {
            let d = a.cols();
            let y = layer_norm(&a, &Tensor::full(vec![d], 1.0), &Tensor::zeros(vec![d]), 1e-5).unwrap();
            for i in 0..a.rows() {
                let x = a.row(i);
                let mu = x.iter().sum::<f32>() / d as f32;
                let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / d as f32;
                if var < 1e-2 { continue; }
                let out = y.row(i);
                let m = out.iter().sum::<f32>() / d as f32;
                let v = out.iter().map(|o| (o - m) * (o - m)).sum::<f32>() / d as f32;
                prop_assert!(m.abs() < 1e-5);
                prop_assert!((v - 1.0).abs() < 1e-4);
                // scalar per-element oracle in f64
                let mu64 = x.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
                let var64 = x.iter().map(|&v| (v as f64 - mu64).powi(2)).sum::<f64>() / d as f64;
                for (o, &xv) in out.iter().zip(x) {
                    let expect = (xv as f64 - mu64) / (var64 + 1e-5).sqrt();
                    prop_assert!((*o as f64 - expect).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn cosine_bounded_and_scale_invariant(
            (a, b) in (1usize..4, 1usize..4, 1usize..6)
                .prop_flat_map(|(m, n, d)| (matrix(m, d), matrix(n, d))),
            c in 0.01f32..100.0,
        ) {
            prop_assume!((0..a.rows()).all(|i| a.row(i).iter().any(|v| v.abs() > 1e-3)));
            prop_assume!((0..b.rows()).all(|i| b.row(i).iter().any(|v| v.abs() > 1e-3)));
            let cm = cosine_matrix(&a, &b).unwrap();
            prop_assert!(cm.data().iter().all(|v| (-1.0 - 1e-6..=1.0 + 1e-6).contains(v)));
            let scaled = cosine_matrix(&a.scale(c), &b).unwrap();
            prop_assert!(cm.max_abs_diff(&scaled) < 1e-6);
            let self_cos = cosine_matrix(&a, &a).unwrap();
            for i in 0..a.rows() {
                prop_assert!((self_cos.data()[i * a.rows() + i] - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn interpolate_identity_and_constant(h in 1usize..5, w in 1usize..5, oh in 1usize..7, ow in 1usize..7, c in -5.0f32..5.0) {
            let g = Tensor::new(vec![h, w, 2], (0..h * w * 2).map(|i| i as f32).collect()).unwrap();
            prop_assert_eq!(interpolate_grid(&g, h, w).unwrap(), g);
            let k = Tensor::full(vec![h, w, 3], c);
            let out = interpolate_grid(&k, oh, ow).unwrap();
            prop_assert!(out.data().iter().all(|&v| v == c));
        }
    }
}
