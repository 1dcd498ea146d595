//! Dense row-major `f64` tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::KernelError;

/// A dense tensor of 64-bit floats stored row-major.
///
/// A rank-0 tensor is not representable; scalars use shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, KernelError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(KernelError::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of elements in one row of the leading dimension.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let n = self.row_len();
        &mut self.data[r * n..(r + 1) * n]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self, KernelError> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(KernelError::NonFinite { op })
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, KernelError> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(KernelError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), KernelError> {
    if t.rank() == rank {
        Ok(())
    } else {
        Err(KernelError::ShapeMismatch {
            op,
            left: t.shape.clone(),
            right: vec![0; rank],
        })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> KernelError {
    KernelError::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

// Raw (tape-free) kernels. The tape calls these for forward values and
// reuses them in gradient rules.

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, KernelError> {
    expect_rank("matmul", a, 2)?;
    expect_rank("matmul", b, 2)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor, KernelError> {
    expect_rank("transpose", a, 2)?;
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// "Same"-padded 1-D convolution: `input` is `D×T`, `filters` is `K×D×w`
/// with odd `w`, `bias` is `K`. Output is `K×T`.
pub fn conv1d(input: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor, KernelError> {
    expect_rank("conv1d", input, 2)?;
    expect_rank("conv1d", filters, 3)?;
    expect_rank("conv1d", bias, 1)?;
    let (d, t) = (input.shape[0], input.shape[1]);
    let (k, d2, w) = (filters.shape[0], filters.shape[1], filters.shape[2]);
    if w % 2 == 0 {
        return Err(KernelError::EvenWindow(w));
    }
    if d != d2 {
        return Err(mismatch("conv1d", input, filters));
    }
    if bias.shape[0] != k {
        return Err(mismatch("conv1d", filters, bias));
    }
    let half = w / 2;
    let mut out = vec![0.0; k * t];
    for j in 0..k {
        let orow = &mut out[j * t..(j + 1) * t];
        orow.iter_mut().for_each(|v| *v = bias.data[j]);
        for c in 0..d {
            let irow = &input.data[c * t..(c + 1) * t];
            let frow = &filters.data[(j * d + c) * w..(j * d + c + 1) * w];
            for (o, &fv) in frow.iter().enumerate() {
                // output t' reads input t' + o - half
                let (lo, hi) = tap_range(o, half, t);
                for tt in lo..hi {
                    orow[tt] += fv * irow[tt + o - half];
                }
            }
        }
    }
    Tensor::new(vec![k, t], out)
}

/// Output positions `[lo, hi)` whose input column `t + o - half` is in range.
fn tap_range(o: usize, half: usize, t: usize) -> (usize, usize) {
    let lo = half.saturating_sub(o);
    let hi = (t + half).saturating_sub(o).min(t);
    (lo, hi.max(lo))
}

/// Softmax over a vector; entries with `mask[i] == false` receive a logit
/// of `-1e9` and therefore an exact zero weight.
pub fn softmax(v: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, KernelError> {
    expect_rank("softmax", v, 1)?;
    if let Some(m) = mask {
        if m.len() != v.len() {
            return Err(KernelError::ShapeMismatch {
                op: "softmax",
                left: v.shape.clone(),
                right: vec![m.len()],
            });
        }
    }
    let logits: Vec<f64> = v
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| match mask {
            Some(m) if !m[i] => x - MASK_LOGIT,
            _ => x,
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| libm::exp(x - max)).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(v.shape.clone(), exps.into_iter().map(|e| e / sum).collect())
}

/// Logit offset applied to masked attention positions.
pub const MASK_LOGIT: f64 = 1e9;

/// `Σ_j weights[j] · vectors[j, :]`.
pub fn weighted_sum(weights: &Tensor, vectors: &Tensor) -> Result<Tensor, KernelError> {
    expect_rank("weighted_sum", weights, 1)?;
    expect_rank("weighted_sum", vectors, 2)?;
    if weights.shape[0] != vectors.shape[0] {
        return Err(mismatch("weighted_sum", weights, vectors));
    }
    let k = vectors.shape[1];
    let mut out = vec![0.0; k];
    for (j, &wj) in weights.data.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(vectors.row(j)) {
            *o += wj * v;
        }
    }
    Ok(Tensor::vector(out))
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}
