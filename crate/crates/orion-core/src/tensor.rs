//! Dense row-major f32 tensors and the small set of kernels the forward
//! pass needs. All reductions run in a fixed order so identical inputs give
//! bit-identical outputs on every run.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{OrionError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(OrionError::Weights(alloc::format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row view of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    /// Transpose of a 2-D tensor.
    pub fn transposed(&self) -> Tensor {
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor { shape: vec![c, r], data: out }
    }
}

/// Dot product with eight independent accumulators. The fixed lane structure
/// both vectorizes well and pins the reduction order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    let (a8, a_tail) = a.split_at(chunks * 8);
    let (b8, b_tail) = b.split_at(chunks * 8);
    for (ca, cb) in a8.chunks_exact(8).zip(b8.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in a_tail.iter().zip(b_tail.iter()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[i, j] = dot(x.row(i), wt.row(j)) + b[j]` where `wt` is the weight
/// stored transposed (`[n_out, n_in]`). `x` is `[m, n_in]`, `out` is
/// `[m, n_out]`.
pub fn linear_t(x: &[f32], m: usize, n_in: usize, wt: &[f32], b: Option<&[f32]>, n_out: usize, out: &mut [f32]) {
    debug_assert_eq!(x.len(), m * n_in);
    debug_assert_eq!(wt.len(), n_out * n_in);
    debug_assert_eq!(out.len(), m * n_out);
    for i in 0..m {
        let xr = &x[i * n_in..(i + 1) * n_in];
        let or = &mut out[i * n_out..(i + 1) * n_out];
        for (j, oj) in or.iter_mut().enumerate() {
            let mut v = dot(xr, &wt[j * n_in..(j + 1) * n_in]);
            if let Some(bias) = b {
                v += bias[j];
            }
            *oj = v;
        }
    }
}

/// y = LN(x) * scale + bias over the last axis of a single row.
pub fn layernorm_row(x: &[f32], eps: f32, scale: &[f32], bias: &[f32], out: &mut [f32]) {
    let n = x.len() as f32;
    let mut mean = 0.0f32;
    for v in x {
        mean += *v;
    }
    mean /= n;
    let mut var = 0.0f32;
    for v in x {
        let d = *v - mean;
        var += d * d;
    }
    var /= n;
    let inv = 1.0 / libm::sqrtf(var + eps);
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * inv * scale[i] + bias[i];
    }
}

/// In-place softmax over a row.
pub fn softmax_row(x: &mut [f32]) {
    let mut max = f32::NEG_INFINITY;
    for v in x.iter() {
        if *v > max {
            max = *v;
        }
    }
    let mut sum = 0.0f32;
    for v in x.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// Softmax probabilities of selected ids against the full row, accumulated
/// in f64 for a stable partition function over large vocabularies.
pub fn softmax_probs_at(logits: &[f32], ids: &[u32]) -> Vec<f64> {
    let mut max = f32::NEG_INFINITY;
    for v in logits {
        if *v > max {
            max = *v;
        }
    }
    let mut z = 0.0f64;
    for v in logits {
        z += libm::exp(f64::from(*v - max));
    }
    ids.iter().map(|&id| libm::exp(f64::from(logits[id as usize] - max)) / z).collect()
}

pub fn argmax(x: &[f32]) -> usize {
    let mut best = 0;
    let mut bv = f32::NEG_INFINITY;
    for (i, v) in x.iter().enumerate() {
        if *v > bv {
            bv = *v;
            best = i;
        }
    }
    best
}

/// GPT-2's tanh-approximate GELU (`gelu_new`).
#[inline]
pub fn gelu_tanh(x: f32) -> f32 {
    const C: f32 = 0.797_884_56; // sqrt(2/pi)
    0.5 * x * (1.0 + libm::tanhf(C * (x + 0.044_715 * x * x * x)))
}

/// Exact erf GELU (GPT-NeoX `gelu`).
#[inline]
pub fn gelu_erf(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * core::f32::consts::FRAC_1_SQRT_2))
}

pub fn add_assign(a: &mut [f32], b: &[f32]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x += *y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
    }

    #[test]
    fn dot_matches_naive_within_f32_error() {
        let mut rng = crate::rng::seeded(1);
        for len in [1usize, 7, 8, 9, 63, 64, 257] {
            let a: Vec<f32> = (0..len).map(|_| crate::rng::normal(&mut rng, 0.0, 1.0)).collect();
            let b: Vec<f32> = (0..len).map(|_| crate::rng::normal(&mut rng, 0.0, 1.0)).collect();
            let got = f64::from(dot(&a, &b));
            let want = naive_dot(&a, &b);
            assert!((got - want).abs() < 1e-3, "len {len}: {got} vs {want}");
        }
    }

    #[test]
    fn linear_t_matches_manual() {
        // x: [2,3], w canonical [3,2] -> wt [2,3]
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 2.0];
        let wt = [1.0, 0.0, 1.0, 2.0, -1.0, 0.5];
        let b = [0.25, -0.25];
        let mut out = [0.0f32; 4];
        linear_t(&x, 2, 3, &wt, Some(&b), 2, &mut out);
        assert_eq!(out, [4.25, 1.25, 1.25, -1.75]);
    }

    #[test]
    fn softmax_row_is_normalized() {
        let mut x = vec![1.0f32, 2.0, 3.0, -1.0];
        softmax_row(&mut x);
        let s: f32 = x.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(x[2] > x[1] && x[1] > x[0] && x[0] > x[3]);
    }

    #[test]
    fn layernorm_row_zero_mean_unit_var() {
        let x = [1.0f32, 5.0, -3.0, 9.0];
        let scale = [1.0f32; 4];
        let bias = [0.0f32; 4];
        let mut out = [0.0f32; 4];
        layernorm_row(&x, 1e-5, &scale, &bias, &mut out);
        let mean: f32 = out.iter().sum::<f32>() / 4.0;
        let var: f32 = out.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn gelu_reference_points() {
        assert!((gelu_tanh(0.0)).abs() < 1e-7);
        assert!((gelu_erf(0.0)).abs() < 1e-7);
        // Values cross-checked against the usual library implementations.
        assert!((gelu_tanh(1.0) - 0.841_192).abs() < 1e-4);
        assert!((gelu_erf(1.0) - 0.841_345).abs() < 1e-4);
        assert!((gelu_tanh(-2.0) + 0.045_402).abs() < 1e-4);
    }

    #[test]
    fn softmax_probs_at_matches_full() {
        let logits: Vec<f32> = (0..100).map(|i| (i as f32) * 0.05 - 2.0).collect();
        let probs = softmax_probs_at(&logits, &[0, 50, 99]);
        let mut full = logits.clone();
        softmax_row(&mut full);
        assert!((probs[0] - f64::from(full[0])).abs() < 1e-6);
        assert!((probs[2] - f64::from(full[99])).abs() < 1e-6);
    }
}
