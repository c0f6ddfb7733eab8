use super::dense::Mode;
use super::tensor::{ensure_finite, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics updated in train mode and consumed in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Saved by the train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: [usize; 4],
}

/// Per-channel batch normalization of a `[B, C, H, W]` tensor.
pub fn batchnorm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let [b, c, h, w] = *input.shape() else {
        return Err(Error::dim("batchnorm2d", format!("input must be [B,C,H,W], got {:?}", input.shape())));
    };
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(Error::dim("batchnorm2d", format!("{c} channels vs gamma {}", gamma.len())));
    }
    let plane = h * w;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    let idx = |n: usize, ch: usize| (n * c + ch) * plane;

    match mode {
        Mode::Eval => {
            for ch in 0..c {
                let inv = 1.0 / (stats.var[ch] + BN_EPSILON).sqrt();
                let (g, bt, m) = (gamma.data()[ch], beta.data()[ch], stats.mean[ch]);
                for n in 0..b {
                    let s = idx(n, ch);
                    for i in s..s + plane {
                        out[i] = g * (x[i] - m) * inv + bt;
                    }
                }
            }
            ensure_finite(&out, "batchnorm2d")?;
            Ok((Tensor::new(input.shape().to_vec(), out)?, None))
        }
        Mode::Train => {
            if b * plane < 2 {
                return Err(Error::Config("batch norm in train mode needs at least two values per channel".into()));
            }
            let count = (b * plane) as f64;
            let mut x_hat = vec![0.0; x.len()];
            let mut inv_std = vec![0.0; c];
            for ch in 0..c {
                let mut sum = 0.0;
                for n in 0..b {
                    let s = idx(n, ch);
                    sum += x[s..s + plane].iter().sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for n in 0..b {
                    let s = idx(n, ch);
                    sq += x[s..s + plane].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                let var = sq / count;
                let inv = 1.0 / (var + BN_EPSILON).sqrt();
                inv_std[ch] = inv;
                let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
                for n in 0..b {
                    let s = idx(n, ch);
                    for i in s..s + plane {
                        x_hat[i] = (x[i] - mean) * inv;
                        out[i] = g * x_hat[i] + bt;
                    }
                }
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean;
                let unbiased = sq / (count - 1.0);
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
            }
            ensure_finite(&out, "batchnorm2d")?;
            Ok((
                Tensor::new(input.shape().to_vec(), out)?,
                Some(BatchNormCache {
                    x_hat,
                    inv_std,
                    shape: [b, c, h, w],
                }),
            ))
        }
    }
}

/// Train-mode backward. Returns `dL/dinput`; accumulates into gamma/beta grads.
pub fn batchnorm2d_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let [b, c, h, w] = cache.shape;
    let plane = h * w;
    let count = (b * plane) as f64;
    let mut gx = vec![0.0; grad_out.len()];
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..b {
            let s = (n * c + ch) * plane;
            for i in s..s + plane {
                sum_g += grad_out[i];
                sum_gx += grad_out[i] * cache.x_hat[i];
            }
        }
        grad_gamma[ch] += sum_gx;
        grad_beta[ch] += sum_g;
        let scale = gamma.data()[ch] * cache.inv_std[ch] / count;
        for n in 0..b {
            let s = (n * c + ch) * plane;
            for i in s..s + plane {
                gx[i] = scale * (count * grad_out[i] - sum_g - cache.x_hat[i] * sum_gx);
            }
        }
    }
    gx
}
