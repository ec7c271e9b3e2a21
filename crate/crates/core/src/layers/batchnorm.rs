//! Per-channel batch normalization over N, H, W.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Learnable scale/shift plus running statistics.
///
/// Running statistics update as `running = momentum·running + (1 − momentum)·batch`;
/// the variance fed into the running estimate is the unbiased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Forward-pass values needed by [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub grad_x: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
}

/// (batch, channels, plane) of a 2-D N×C or 4-D N×C×H×W tensor.
fn layout(x: &Tensor, channels: usize) -> Result<(usize, usize, usize)> {
    let (n, c, plane) = match x.shape() {
        &[n, c] => (n, c, 1),
        &[n, c, h, w] => (n, c, h * w),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm expects a 2-D or 4-D tensor, got {s:?}"
            )))
        }
    };
    if c != channels {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm configured for {channels} channels, input has {c}"
        )));
    }
    Ok((n, c, plane))
}

fn for_channel(n: usize, c: usize, plane: usize, ch: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |b| {
        let base = (b * c + ch) * plane;
        base..base + plane
    })
}

pub fn batchnorm_train(x: &Tensor, state: &mut BatchNormState) -> Result<(Tensor, BnCache)> {
    let (n, c, plane) = layout(x, state.channels())?;
    let m = n * plane;
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let xd = x.data();
    let mut y = vec![0.0; xd.len()];
    let mut xhat = vec![0.0; xd.len()];
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let mean = for_channel(n, c, plane, ch).map(|i| xd[i]).sum::<f64>() / m as f64;
        let var = for_channel(n, c, plane, ch)
            .map(|i| (xd[i] - mean) * (xd[i] - mean))
            .sum::<f64>()
            / m as f64;
        let istd = 1.0 / (var + state.epsilon).sqrt();
        let (g, b) = (state.gamma.data()[ch], state.beta.data()[ch]);
        for i in for_channel(n, c, plane, ch) {
            xhat[i] = (xd[i] - mean) * istd;
            y[i] = g * xhat[i] + b;
        }
        inv_std.push(istd);

        let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
        let mom = state.momentum;
        let rm = &mut state.running_mean.data_mut()[ch];
        *rm = mom * *rm + (1.0 - mom) * mean;
        let rv = &mut state.running_var.data_mut()[ch];
        *rv = mom * *rv + (1.0 - mom) * unbiased;
    }
    Ok((
        Tensor::new(x.shape().to_vec(), y)?,
        BnCache {
            xhat: Tensor::new(x.shape().to_vec(), xhat)?,
            inv_std,
        },
    ))
}

/// Affine map using the running statistics.
pub fn batchnorm_eval(x: &Tensor, state: &BatchNormState) -> Result<Tensor> {
    let (n, c, plane) = layout(x, state.channels())?;
    let xd = x.data();
    let mut y = vec![0.0; xd.len()];
    for ch in 0..c {
        let istd = 1.0 / (state.running_var.data()[ch] + state.epsilon).sqrt();
        let mean = state.running_mean.data()[ch];
        let (g, b) = (state.gamma.data()[ch], state.beta.data()[ch]);
        for i in for_channel(n, c, plane, ch) {
            y[i] = g * (xd[i] - mean) * istd + b;
        }
    }
    Tensor::new(x.shape().to_vec(), y)
}

pub fn batchnorm_backward(cache: &BnCache, gamma: &Tensor, grad_out: &Tensor) -> Result<BnGrads> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::TapeMismatch(format!(
            "batchnorm grad shape {:?}, forward was {:?}",
            grad_out.shape(),
            cache.xhat.shape()
        )));
    }
    let (n, c, plane) = layout(grad_out, gamma.len())?;
    let m = (n * plane) as f64;
    let (gd, xh) = (grad_out.data(), cache.xhat.data());
    let mut gx = vec![0.0; gd.len()];
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in for_channel(n, c, plane, ch) {
            sum_g += gd[i];
            sum_gx += gd[i] * xh[i];
        }
        g_beta[ch] = sum_g;
        g_gamma[ch] = sum_gx;
        let k = gamma.data()[ch] * cache.inv_std[ch] / m;
        for i in for_channel(n, c, plane, ch) {
            gx[i] = k * (m * gd[i] - sum_g - xh[i] * sum_gx);
        }
    }
    Ok(BnGrads {
        grad_x: Tensor::new(grad_out.shape().to_vec(), gx)?,
        grad_gamma: Tensor::new(vec![c], g_gamma)?,
        grad_beta: Tensor::new(vec![c], g_beta)?,
    })
}
