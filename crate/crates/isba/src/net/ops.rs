//! Stateless tensor primitives for the 1-D networks.
//!
//! All sequence tensors are channel-major `[channels, time]`. Convolutions
//! use symmetric same-padding with zeros; the odd kernel width keeps the
//! output aligned with the input frame grid.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use super::NetError;

/// Lay out sliding windows as columns: row `ci * width + j`, column `t`
/// holds `x[ci, t + j - pad]` (zero outside the sequence).
pub fn im2col(x: &ArrayView2<f64>, width: usize) -> Array2<f64> {
    let (c_in, n) = x.dim();
    let pad = width / 2;
    let mut cols = Array2::zeros((c_in * width, n));
    for ci in 0..c_in {
        for j in 0..width {
            let mut row = cols.row_mut(ci * width + j);
            for t in 0..n {
                let s = t + j;
                if s >= pad && s - pad < n {
                    row[t] = x[[ci, s - pad]];
                }
            }
        }
    }
    cols
}

fn weight_matrix(w: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (c_out, c_in, width) = w.dim();
    w.view()
        .into_shape_with_order((c_out, c_in * width))
        .expect("conv weights are contiguous")
}

/// Same-padded 1-D convolution over precomputed columns.
pub fn conv1d_from_cols(cols: &Array2<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = weight_matrix(w).dot(cols);
    for (mut row, &bias) in y.rows_mut().into_iter().zip(b) {
        row += bias;
    }
    y
}

pub fn conv1d(x: &ArrayView2<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array2<f64> {
    conv1d_from_cols(&im2col(x, w.dim().2), w, b)
}

/// Gradients of the convolution: `(dw, db, dx)` given upstream `dy`.
pub fn conv1d_backward(
    cols: &Array2<f64>,
    w: &Array3<f64>,
    dy: &Array2<f64>,
) -> (Array3<f64>, Array1<f64>, Array2<f64>) {
    let (c_out, c_in, width) = w.dim();
    let n = dy.ncols();
    let pad = width / 2;
    let dw_mat = dy.dot(&cols.t());
    let dw = dw_mat
        .into_shape_with_order((c_out, c_in, width))
        .expect("gradient is contiguous");
    let db = dy.sum_axis(Axis(1));
    let dcols = weight_matrix(w).t().dot(dy);
    let mut dx = Array2::zeros((c_in, n));
    for ci in 0..c_in {
        for j in 0..width {
            let row = dcols.row(ci * width + j);
            for t in 0..n {
                let s = t + j;
                if s >= pad && s - pad < n {
                    dx[[ci, s - pad]] += row[t];
                }
            }
        }
    }
    (dw, db, dx)
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

/// Max-pool pairs of frames. Requires even length; returns the pooled
/// sequence and the within-pair offset chosen per output frame.
pub fn maxpool2(x: &Array2<f64>) -> (Array2<f64>, Array2<u8>) {
    let (c, n) = x.dim();
    assert!(n % 2 == 0, "maxpool2 needs an even length, got {n}");
    let half = n / 2;
    let mut y = Array2::zeros((c, half));
    let mut idx = Array2::zeros((c, half));
    for ci in 0..c {
        for t in 0..half {
            let (a, b) = (x[[ci, 2 * t]], x[[ci, 2 * t + 1]]);
            if b > a {
                y[[ci, t]] = b;
                idx[[ci, t]] = 1;
            } else {
                y[[ci, t]] = a;
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_backward(dy: &Array2<f64>, idx: &Array2<u8>) -> Array2<f64> {
    let (c, half) = dy.dim();
    let mut dx = Array2::zeros((c, half * 2));
    for ci in 0..c {
        for t in 0..half {
            dx[[ci, 2 * t + idx[[ci, t]] as usize]] = dy[[ci, t]];
        }
    }
    dx
}

/// Nearest-neighbor upsampling: each frame repeated `factor` times.
pub fn upsample_repeat(x: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (c, n) = x.dim();
    Array2::from_shape_fn((c, n * factor), |(ci, t)| x[[ci, t / factor]])
}

pub fn upsample_repeat_backward(dy: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (c, nf) = dy.dim();
    let n = nf / factor;
    let mut dx = Array2::zeros((c, n));
    for ci in 0..c {
        for t in 0..nf {
            dx[[ci, t / factor]] += dy[[ci, t]];
        }
    }
    dx
}

/// Replicate the last frame until the sequence is `target` long.
pub fn pad_edge(x: &ArrayView2<f64>, target: usize) -> Array2<f64> {
    let (c, n) = x.dim();
    assert!(n >= 1 && target >= n);
    Array2::from_shape_fn((c, target), |(ci, t)| x[[ci, t.min(n - 1)]])
}

/// Column-wise softmax (over the channel axis, per frame).
pub fn softmax_cols(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut col in p.columns_mut() {
        let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        col.mapv_inplace(|v| (v - m).exp());
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    p
}

/// Full softmax Jacobian applied to the upstream gradient:
/// `dz = p * (dy - <dy, p>)` column-wise.
pub fn softmax_cols_backward(p: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dz = dy.clone();
    for (mut dcol, pcol) in dz.columns_mut().into_iter().zip(p.columns()) {
        let dot = dcol
            .iter()
            .zip(pcol.iter())
            .map(|(d, p)| d * p)
            .sum::<f64>();
        for (d, &pv) in dcol.iter_mut().zip(pcol.iter()) {
            *d = pv * (*d - dot);
        }
    }
    dz
}

pub fn check_finite(layer: &str, a: &Array2<f64>) -> Result<(), NetError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NetError::NonFiniteActivation {
            layer: layer.to_string(),
        })
    }
}
