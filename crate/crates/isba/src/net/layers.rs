//! Parameterized layers with hand-derived backward passes.
//!
//! Each layer owns its parameters and gradient accumulators. `backward`
//! adds into the accumulators, so callers zero them once per optimization
//! step. State is exposed through the visitor methods: `visit_tensors`
//! walks every persistent tensor (for checkpoints and precision rounding),
//! passing gradients only for trainable parameters.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops;

/// Visitor over persistent tensors: `(name, shape, values, gradients)`.
/// Gradients are `None` for non-trainable state such as running statistics.
pub type TensorVisitor<'a> = dyn FnMut(&str, &[usize], &mut [f64], Option<&mut [f64]>) + 'a;

/// Read-only variant used by checkpoint serialization.
pub type TensorReader<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> f64 {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.gen_range(-limit..limit)
}

/// 1-D convolution, same padding. Width 1 doubles as a frame-wise affine.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Array3<f64>,
    pub b: Array1<f64>,
    pub dw: Array3<f64>,
    pub db: Array1<f64>,
}

/// Forward-pass context a `Conv1d` needs for its backward pass.
#[derive(Debug)]
pub struct ConvCache {
    cols: Array2<f64>,
}

impl Conv1d {
    pub fn new(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, width: usize) -> Self {
        assert!(width % 2 == 1, "conv width must be odd");
        let fan_in = c_in * width;
        let fan_out = c_out * width;
        let w = Array3::from_shape_fn((c_out, c_in, width), |_| glorot(rng, fan_in, fan_out));
        Self {
            w,
            b: Array1::zeros(c_out),
            dw: Array3::zeros((c_out, c_in, width)),
            db: Array1::zeros(c_out),
        }
    }

    pub fn pointwise(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Self {
        Self::new(rng, c_in, c_out, 1)
    }

    pub fn out_channels(&self) -> usize {
        self.w.dim().0
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        ops::conv1d(x, &self.w, &self.b)
    }

    pub fn forward_cached(&self, x: &ArrayView2<f64>) -> (Array2<f64>, ConvCache) {
        let cols = ops::im2col(x, self.w.dim().2);
        let y = ops::conv1d_from_cols(&cols, &self.w, &self.b);
        (y, ConvCache { cols })
    }

    pub fn backward(&mut self, cache: &ConvCache, dy: &Array2<f64>) -> Array2<f64> {
        let (dw, db, dx) = ops::conv1d_backward(&cache.cols, &self.w, dy);
        self.dw += &dw;
        self.db += &db;
        dx
    }

    pub fn zero_grads(&mut self) {
        self.dw.fill(0.0);
        self.db.fill(0.0);
    }

    pub fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        let shape = self.w.shape().to_vec();
        f(
            &format!("{prefix}.w"),
            &shape,
            self.w.as_slice_mut().expect("standard layout"),
            Some(self.dw.as_slice_mut().expect("standard layout")),
        );
        let shape = self.b.shape().to_vec();
        f(
            &format!("{prefix}.b"),
            &shape,
            self.b.as_slice_mut().expect("standard layout"),
            Some(self.db.as_slice_mut().expect("standard layout")),
        );
    }

    pub fn read_tensors(&self, prefix: &str, f: &mut TensorReader) {
        f(
            &format!("{prefix}.w"),
            self.w.shape(),
            self.w.as_slice().expect("standard layout"),
        );
        f(
            &format!("{prefix}.b"),
            self.b.shape(),
            self.b.as_slice().expect("standard layout"),
        );
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Batch-style normalization over the time axis of one sequence, per
/// channel. Training normalizes with the sequence's own statistics and
/// nudges the running ones; inference uses the stored running statistics
/// and is a pure function.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub dgamma: Array1<f64>,
    pub dbeta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug)]
pub struct BnCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            dgamma: Array1::zeros(channels),
            dbeta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, BnCache) {
        let n = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("non-empty sequence");
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let x_hat = &centered * &inv_std.view().insert_axis(Axis(1));
        let y = &x_hat * &self.gamma.view().insert_axis(Axis(1))
            + self.beta.view().insert_axis(Axis(1));
        debug_assert!(n >= 1.0);
        self.running_mean
            .zip_mut_with(&mean, |r, &m| *r += BN_MOMENTUM * (m - *r));
        self.running_var
            .zip_mut_with(&var, |r, &v| *r += BN_MOMENTUM * (v - *r));
        (y, BnCache { x_hat, inv_std })
    }

    pub fn forward_infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + BN_EPS).sqrt());
        let shift = &self.beta - &(&scale * &self.running_mean);
        x * &scale.view().insert_axis(Axis(1)) + shift.view().insert_axis(Axis(1))
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Array2<f64>) -> Array2<f64> {
        let n = dy.ncols() as f64;
        let sum_dy = dy.sum_axis(Axis(1));
        let sum_dy_xhat = (dy * &cache.x_hat).sum_axis(Axis(1));
        self.dbeta += &sum_dy;
        self.dgamma += &sum_dy_xhat;
        let coef = (&self.gamma * &cache.inv_std).mapv(|v| v / n);
        let mut dx = dy * n;
        dx -= &sum_dy.view().insert_axis(Axis(1));
        dx -= &(&cache.x_hat * &sum_dy_xhat.view().insert_axis(Axis(1)));
        dx *= &coef.view().insert_axis(Axis(1));
        dx
    }

    pub fn zero_grads(&mut self) {
        self.dgamma.fill(0.0);
        self.dbeta.fill(0.0);
    }

    pub fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        let c = self.gamma.len();
        let shape = [c];
        f(
            &format!("{prefix}.gamma"),
            &shape,
            self.gamma.as_slice_mut().unwrap(),
            Some(self.dgamma.as_slice_mut().unwrap()),
        );
        f(
            &format!("{prefix}.beta"),
            &shape,
            self.beta.as_slice_mut().unwrap(),
            Some(self.dbeta.as_slice_mut().unwrap()),
        );
        f(
            &format!("{prefix}.running_mean"),
            &shape,
            self.running_mean.as_slice_mut().unwrap(),
            None,
        );
        f(
            &format!("{prefix}.running_var"),
            &shape,
            self.running_var.as_slice_mut().unwrap(),
            None,
        );
    }

    pub fn read_tensors(&self, prefix: &str, f: &mut TensorReader) {
        let shape = [self.gamma.len()];
        f(&format!("{prefix}.gamma"), &shape, self.gamma.as_slice().unwrap());
        f(&format!("{prefix}.beta"), &shape, self.beta.as_slice().unwrap());
        f(
            &format!("{prefix}.running_mean"),
            &shape,
            self.running_mean.as_slice().unwrap(),
        );
        f(
            &format!("{prefix}.running_var"),
            &shape,
            self.running_var.as_slice().unwrap(),
        );
    }
}
