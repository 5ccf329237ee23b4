//! Per-layer forward and backward kernels.
//!
//! All kernels operate on row-major `[batch, ...]` buffers. Matrix
//! products go through `matrixmultiply::dgemm`; everything else is
//! plain loops. Backward kernels return gradients in the same shapes
//! as their inputs.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// C = A * B (+ C when beta = 1), with explicit strides so transposed
/// views never need a copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    debug_assert!(c.len() >= m.saturating_sub(1) * rsc.unsigned_abs() + n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

// ---------------------------------------------------------------- dense

/// y[B,out] = x[B,in] . W^T + b, with W stored [out,in].
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, inputs) = (x.shape()[0], x.shape()[1]);
    let outputs = w.shape()[0];
    let mut y = Tensor::zeros(vec![batch, outputs]);
    gemm(
        batch,
        inputs,
        outputs,
        x.data(),
        inputs as isize,
        1,
        w.data(),
        1,
        inputs as isize,
        0.0,
        y.data_mut(),
        outputs as isize,
        1,
    );
    let bias = b.data();
    for row in y.data_mut().chunks_mut(outputs) {
        for (v, bv) in row.iter_mut().zip(bias) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Returns (dx, dw, db).
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, inputs) = (x.shape()[0], x.shape()[1]);
    let outputs = w.shape()[0];

    let mut dx = Tensor::zeros(vec![batch, inputs]);
    gemm(
        batch,
        outputs,
        inputs,
        dy.data(),
        outputs as isize,
        1,
        w.data(),
        inputs as isize,
        1,
        0.0,
        dx.data_mut(),
        inputs as isize,
        1,
    );

    let mut dw = Tensor::zeros(vec![outputs, inputs]);
    gemm(
        outputs,
        batch,
        inputs,
        dy.data(),
        1,
        outputs as isize,
        x.data(),
        inputs as isize,
        1,
        0.0,
        dw.data_mut(),
        inputs as isize,
        1,
    );

    let mut db = Tensor::zeros(vec![outputs]);
    for row in dy.data().chunks(outputs) {
        for (d, v) in db.data_mut().iter_mut().zip(row) {
            *d += v;
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------- conv1d

/// Zero "same" padding split: (k-1)/2 on the left, k/2 on the right.
pub fn same_padding(kernel: usize) -> (usize, usize) {
    ((kernel - 1) / 2, kernel / 2)
}

/// Lower x[B,ci,L] into patch matrix cols[B*L, ci*k] with zero padding.
fn im2col(x: &Tensor, kernel: usize) -> Vec<f64> {
    let (batch, ci, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (pad_left, _) = same_padding(kernel);
    let xd = x.data();
    let mut cols = vec![0.0; batch * len * ci * kernel];
    let row_width = ci * kernel;
    for b in 0..batch {
        for pos in 0..len {
            let row = (b * len + pos) * row_width;
            for c in 0..ci {
                let src = (b * ci + c) * len;
                let dst = row + c * kernel;
                for j in 0..kernel {
                    let ix = pos as isize + j as isize - pad_left as isize;
                    if ix >= 0 && (ix as usize) < len {
                        cols[dst + j] = xd[src + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// y[B,co,L] = conv(x[B,ci,L], W[co,ci,k]) + b. Also returns the patch
/// matrix so backward can reuse it.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (batch, _ci, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, ci_w, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if len == 0 {
        return Err(Error::shape("conv1d", "series of length >= 1", "length 0"));
    }
    let cols = im2col(x, kernel);
    let patch = ci_w * kernel;

    // ymat[B*L, co] = cols . W^T (W viewed as [co, ci*k])
    let mut ymat = vec![0.0; batch * len * co];
    gemm(
        batch * len,
        patch,
        co,
        &cols,
        patch as isize,
        1,
        w.data(),
        1,
        patch as isize,
        0.0,
        &mut ymat,
        co as isize,
        1,
    );

    let mut y = Tensor::zeros(vec![batch, co, len]);
    let bias = b.data();
    let yd = y.data_mut();
    for bi in 0..batch {
        for pos in 0..len {
            let src = (bi * len + pos) * co;
            for c in 0..co {
                yd[(bi * co + c) * len + pos] = ymat[src + c] + bias[c];
            }
        }
    }
    Ok((y, cols))
}

/// Returns (dx, dw, db). `cols` is the patch matrix from the forward pass.
pub fn conv1d_backward(x: &Tensor, cols: &[f64], w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, ci, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, _ci, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (pad_left, _) = same_padding(kernel);
    let patch = ci * kernel;

    // dymat[B*L, co] from dy[B,co,L]
    let dyd = dy.data();
    let mut dymat = vec![0.0; batch * len * co];
    for bi in 0..batch {
        for c in 0..co {
            let src = (bi * co + c) * len;
            for pos in 0..len {
                dymat[(bi * len + pos) * co + c] = dyd[src + pos];
            }
        }
    }

    let mut dw = Tensor::zeros(vec![co, ci, kernel]);
    gemm(
        co,
        batch * len,
        patch,
        &dymat,
        1,
        co as isize,
        cols,
        patch as isize,
        1,
        0.0,
        dw.data_mut(),
        patch as isize,
        1,
    );

    let mut db = Tensor::zeros(vec![co]);
    for row in dymat.chunks(co) {
        for (d, v) in db.data_mut().iter_mut().zip(row) {
            *d += v;
        }
    }

    // dcols[B*L, ci*k] = dymat . Wmat
    let mut dcols = vec![0.0; batch * len * patch];
    gemm(
        batch * len,
        co,
        patch,
        &dymat,
        co as isize,
        1,
        w.data(),
        patch as isize,
        1,
        0.0,
        &mut dcols,
        patch as isize,
        1,
    );

    // col2im: scatter-add patch gradients back onto the input.
    let mut dx = Tensor::zeros(vec![batch, ci, len]);
    let dxd = dx.data_mut();
    for b in 0..batch {
        for pos in 0..len {
            let row = (b * len + pos) * patch;
            for c in 0..ci {
                let dst = (b * ci + c) * len;
                let src = row + c * kernel;
                for j in 0..kernel {
                    let ix = pos as isize + j as isize - pad_left as isize;
                    if ix >= 0 && (ix as usize) < len {
                        dxd[dst + ix as usize] += dcols[src + j];
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ------------------------------------------------------------ batch norm

/// Channel geometry of a batch-norm input: `[B, C]` is treated as a
/// series of length 1.
pub fn norm_geometry(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [b, c] => (b, c, 1),
        [b, c, l] => (b, c, l),
        _ => unreachable!("batchnorm input rank checked by spec validation"),
    }
}

pub struct NormCache {
    /// Normalized pre-affine values.
    pub xhat: Vec<f64>,
    /// Per-channel 1/sqrt(var + eps) actually used by the forward pass.
    pub inv_std: Vec<f64>,
    /// Whether the forward pass used batch statistics.
    pub used_batch_stats: bool,
}

pub struct NormBatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<f64>,
    pub per_channel_count: usize,
}

/// Train-mode batch norm: normalize with batch statistics.
pub fn batchnorm_forward_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormCache, NormBatchStats)> {
    let (batch, channels, len) = norm_geometry(x.shape());
    let count = batch * len;
    if count < 2 {
        return Err(Error::Validation(format!(
            "batch norm needs at least 2 values per channel in train mode, got {count}"
        )));
    }
    let xd = x.data();
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut sum = 0.0;
        for b in 0..batch {
            let base = (b * channels + c) * len;
            for l in 0..len {
                sum += xd[base + l];
            }
        }
        let mu = sum / count as f64;
        let mut sq = 0.0;
        for b in 0..batch {
            let base = (b * channels + c) * len;
            for l in 0..len {
                let d = xd[base + l] - mu;
                sq += d * d;
            }
        }
        mean[c] = mu;
        var[c] = sq / count as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let mut xhat = vec![0.0; xd.len()];
    let mut y = Tensor::zeros(x.shape().to_vec());
    let yd = y.data_mut();
    let (g, bta) = (gamma.data(), beta.data());
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            for l in 0..len {
                let h = (xd[base + l] - mean[c]) * inv_std[c];
                xhat[base + l] = h;
                yd[base + l] = g[c] * h + bta[c];
            }
        }
    }
    Ok((
        y,
        NormCache { xhat, inv_std: inv_std.clone(), used_batch_stats: true },
        NormBatchStats { mean, var, per_channel_count: count },
    ))
}

/// Eval-mode batch norm: normalize with running statistics.
pub fn batchnorm_forward_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> (Tensor, NormCache) {
    let (batch, channels, len) = norm_geometry(x.shape());
    let xd = x.data();
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut y = Tensor::zeros(x.shape().to_vec());
    let yd = y.data_mut();
    let (g, bta) = (gamma.data(), beta.data());
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            for l in 0..len {
                let h = (xd[base + l] - running_mean[c]) * inv_std[c];
                xhat[base + l] = h;
                yd[base + l] = g[c] * h + bta[c];
            }
        }
    }
    (y, NormCache { xhat, inv_std, used_batch_stats: false })
}

/// Returns (dx, dgamma, dbeta). Handles both statistics modes: with
/// batch statistics the mean/variance terms contribute to dx, with
/// running statistics the transform is a fixed per-channel affine map.
pub fn batchnorm_backward(
    cache: &NormCache,
    shape: &[usize],
    gamma: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (batch, channels, len) = norm_geometry(shape);
    let count = (batch * len) as f64;
    let dyd = dy.data();
    let g = gamma.data();

    let mut sum_dy = vec![0.0; channels];
    let mut sum_dy_xhat = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            for l in 0..len {
                sum_dy[c] += dyd[base + l];
                sum_dy_xhat[c] += dyd[base + l] * cache.xhat[base + l];
            }
        }
    }

    let mut dx = Tensor::zeros(shape.to_vec());
    let dxd = dx.data_mut();
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            let scale = g[c] * cache.inv_std[c];
            for l in 0..len {
                let i = base + l;
                dxd[i] = if cache.used_batch_stats {
                    scale * (dyd[i] - sum_dy[c] / count - cache.xhat[i] * sum_dy_xhat[c] / count)
                } else {
                    scale * dyd[i]
                };
            }
        }
    }
    let dgamma = Tensor::new(vec![channels], sum_dy_xhat).expect("channel count");
    let dbeta = Tensor::new(vec![channels], sum_dy).expect("channel count");
    (dx, dgamma, dbeta)
}

// ----------------------------------------------------------- activations

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.clear_grad();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// dx from the forward *output*: positive outputs pass the gradient.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(y.shape().to_vec());
    for ((d, &out), &g) in dx.data_mut().iter_mut().zip(y.data()).zip(dy.data()) {
        if out > 0.0 {
            *d = g;
        }
    }
    dx
}

pub fn global_avg_pool_forward(x: &Tensor) -> Tensor {
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = Tensor::zeros(vec![batch, channels]);
    let xd = x.data();
    let yd = y.data_mut();
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            yd[b * channels + c] = xd[base..base + len].iter().sum::<f64>() / len as f64;
        }
    }
    y
}

pub fn global_avg_pool_backward(input_shape: &[usize], dy: &Tensor) -> Tensor {
    let (batch, channels, len) = (input_shape[0], input_shape[1], input_shape[2]);
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let dxd = dx.data_mut();
    let dyd = dy.data();
    for b in 0..batch {
        for c in 0..channels {
            let share = dyd[b * channels + c] / len as f64;
            let base = (b * channels + c) * len;
            for l in 0..len {
                dxd[base + l] = share;
            }
        }
    }
    dx
}

/// Row-wise softmax with max-shift for stability.
pub fn softmax_forward(x: &Tensor) -> Tensor {
    let width = x.shape()[1];
    let mut y = x.clone();
    y.clear_grad();
    for row in y.data_mut().chunks_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// dx_i = p_i * (dy_i - sum_j dy_j p_j), row-wise.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let width = y.shape()[1];
    let mut dx = Tensor::zeros(y.shape().to_vec());
    for ((drow, prow), gyrow) in dx
        .data_mut()
        .chunks_mut(width)
        .zip(y.data().chunks(width))
        .zip(dy.data().chunks(width))
    {
        let dot: f64 = gyrow.iter().zip(prow).map(|(g, p)| g * p).sum();
        for ((d, &p), &g) in drow.iter_mut().zip(prow).zip(gyrow) {
            *d = p * (g - dot);
        }
    }
    dx
}
