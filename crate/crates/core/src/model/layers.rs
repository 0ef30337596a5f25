use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::dot;
use crate::Matrix;

const LAYER_NORM_EPS: f64 = 1e-8;

/// `y = W·x + b` with `W` stored `out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Normal init with variance `2 / (in + out)`, zero bias.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (in_dim + out_dim) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..out_dim * in_dim).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Matrix::from_vec(out_dim, in_dim, data).expect("finite init"),
            bias: vec![0.0; out_dim],
        }
    }

    /// Like [`Self::init`] with no bias term (an empty `bias`).
    pub fn init_unbiased(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            bias: Vec::new(),
            ..Self::init(out_dim, in_dim, rng)
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Zeros with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.out_dim(), self.in_dim()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Column-sample form: `x` is `in×n`, result `out×n`.
    pub fn forward_columns(&self, x: &Matrix) -> Matrix {
        let mut y = self.weight.matmul(x);
        for (o, &b) in self.bias.iter().enumerate() {
            y.row_mut(o).iter_mut().for_each(|v| *v += b);
        }
        y
    }

    /// Accumulates parameter gradients for [`Self::forward_columns`] and returns `dx`.
    pub fn backward_columns(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        grad.weight.add_assign(&dy.matmul_transposed(x));
        for (o, g) in grad.bias.iter_mut().enumerate() {
            *g += dy.row(o).iter().sum::<f64>();
        }
        self.weight.transpose().matmul(dy)
    }

    /// Row-sample form over a flat `rows×in` buffer; returns `rows×out`.
    pub fn forward_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        debug_assert_eq!(x.len(), rows * in_dim);
        let mut y = vec![0.0; rows * out_dim];
        for t in 0..rows {
            let xr = &x[t * in_dim..(t + 1) * in_dim];
            for o in 0..out_dim {
                y[t * out_dim + o] = self.bias.get(o).copied().unwrap_or(0.0) + dot(xr, self.weight.row(o));
            }
        }
        y
    }

    /// Backward of [`Self::forward_rows`]: accumulates into `grad`, adds `dx` into `dx_acc`.
    pub fn backward_rows(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear, dx_acc: &mut [f64]) {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        for t in 0..rows {
            let xr = &x[t * in_dim..(t + 1) * in_dim];
            let dyr = &dy[t * out_dim..(t + 1) * out_dim];
            let dxr = &mut dx_acc[t * in_dim..(t + 1) * in_dim];
            for (o, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                if let Some(b) = grad.bias.get_mut(o) {
                    *b += g;
                }
                let w = self.weight.row(o);
                let gw = grad.weight.row_mut(o);
                for i in 0..in_dim {
                    gw[i] += g * xr[i];
                    dxr[i] += g * w[i];
                }
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Per-row layer normalization with gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Normalized activations and inverse standard deviations kept for backward.
#[derive(Clone, Debug)]
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: vec![0.0; dim],
            bias: vec![0.0; dim],
        }
    }

    pub(crate) fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, LayerNormCache) {
        let d = self.gain.len();
        let mut y = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for t in 0..rows {
            let xr = &x[t * d..(t + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[t] = is;
            for i in 0..d {
                let h = (xr[i] - mean) * is;
                xhat[t * d + i] = h;
                y[t * d + i] = self.gain[i] * h + self.bias[i];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    /// Returns `dx`; accumulates gain/bias gradients.
    pub(crate) fn backward(&self, cache: &LayerNormCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
        let d = self.gain.len();
        let rows = cache.inv_std.len();
        let mut dx = vec![0.0; rows * d];
        let mut dxhat = vec![0.0; d];
        for t in 0..rows {
            let xh = &cache.xhat[t * d..(t + 1) * d];
            let dyr = &dy[t * d..(t + 1) * d];
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for i in 0..d {
                grad.gain[i] += dyr[i] * xh[i];
                grad.bias[i] += dyr[i];
                dxhat[i] = dyr[i] * self.gain[i];
                mean_d += dxhat[i];
                mean_dx += dxhat[i] * xh[i];
            }
            mean_d /= d as f64;
            mean_dx /= d as f64;
            let is = cache.inv_std[t];
            for i in 0..d {
                dx[t * d + i] = is * (dxhat[i] - mean_d - xh[i] * mean_dx);
            }
        }
        dx
    }

    pub fn parameter_count(&self) -> usize {
        self.gain.len() + self.bias.len()
    }
}
