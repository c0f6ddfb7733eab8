use rand::Rng;

use super::tensor::{ensure_finite, Tensor};
use crate::error::{Error, Result};

/// Forward behaviour switch for dropout and batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `y = W x + b` for `W: [M, N]`.
pub fn fully_connected(input: &[f64], weights: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    let [m, n] = *weights.shape() else {
        return Err(Error::dim("fully_connected", format!("weights must be 2-D, got {:?}", weights.shape())));
    };
    if input.len() != n || bias.len() != m {
        return Err(Error::dim(
            "fully_connected",
            format!("input {} / bias {} vs weights [{m}, {n}]", input.len(), bias.len()),
        ));
    }
    let out: Vec<f64> = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect();
    ensure_finite(&out, "fully_connected")?;
    Ok(out)
}

/// Accumulate gradients of `y = W x + b`. Returns `dL/dx` when requested.
pub fn fully_connected_backward(
    input: &[f64],
    weights: &Tensor,
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let n = input.len();
    for ((row, gb), &g) in grad_weights.chunks_exact_mut(n).zip(grad_bias.iter_mut()).zip(grad_out) {
        *gb += g;
        if g != 0.0 {
            for (gw, x) in row.iter_mut().zip(input) {
                *gw += g * x;
            }
        }
    }
    want_input_grad.then(|| {
        let mut gx = vec![0.0; n];
        for (row, &g) in weights.data().chunks_exact(n).zip(grad_out) {
            if g != 0.0 {
                for (acc, w) in gx.iter_mut().zip(row) {
                    *acc += g * w;
                }
            }
        }
        gx
    })
}

pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| x.max(0.0)).collect()
}

/// Gradient through relu given its output; zero subgradient at 0.
pub fn relu_backward(output: &[f64], grad_out: &[f64]) -> Vec<f64> {
    output
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect()
}

pub fn relu_inplace(values: &mut [f64]) {
    values.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic sigmoid shifted up by 0.5, so outputs lie in (0.5, 1.5).
///
/// The logistic part is kept at least 1e-15 away from 0 and 1; in double
/// precision it would otherwise round onto the interval ends for |x| > ~37.
pub fn sigmoid_biased(x: f64) -> f64 {
    logistic(x).clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN) + 0.5
}

const SIGMOID_MARGIN: f64 = 1e-15;

/// Derivative of [`sigmoid_biased`] expressed through its output.
pub fn sigmoid_biased_grad(output: f64) -> f64 {
    let s = output - 0.5;
    s * (1.0 - s)
}

/// Inverted dropout. Returns the output and, in train mode, the per-element
/// scale mask (0 or `1/(1-p)`).
pub fn dropout<R: Rng + ?Sized>(input: &[f64], p: f64, mode: Mode, rng: &mut R) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((input.to_vec(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = input
        .iter()
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let out = input.iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((out, Some(mask)))
}

/// Stack `[C_i, H, W]` tensors along the channel axis in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::dim("concat_channels", "no inputs"))?;
    let spatial = &first.shape()[1..];
    let mut channels = 0;
    for t in inputs {
        if t.shape().len() != 3 || &t.shape()[1..] != spatial {
            return Err(Error::dim(
                "concat_channels",
                format!("spatial dims {:?} vs {:?}", &t.shape()[1..], spatial),
            ));
        }
        channels += t.shape()[0];
    }
    let mut data = Vec::with_capacity(inputs.iter().map(|t| t.len()).sum());
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![channels, spatial[0], spatial[1]], data)
}

/// Split a concatenated gradient back into per-input chunks.
pub fn split_channels_grad(grad: &[f64], channel_counts: &[usize], plane: usize) -> Vec<Vec<f64>> {
    let mut offset = 0;
    channel_counts
        .iter()
        .map(|&c| {
            let chunk = grad[offset..offset + c * plane].to_vec();
            offset += c * plane;
            chunk
        })
        .collect()
}

/// Multiply every activation in a channel by a scalar weight.
pub fn scale_channel(input: &[f64], w: f64) -> Vec<f64> {
    input.iter().map(|x| x * w).collect()
}

/// Returns `(dL/dinput, dL/dw)`.
pub fn scale_channel_backward(input: &[f64], w: f64, grad_out: &[f64]) -> (Vec<f64>, f64) {
    let gi = grad_out.iter().map(|g| g * w).collect();
    let gw = input.iter().zip(grad_out).map(|(x, g)| x * g).sum();
    (gi, gw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{max_relative_error, numeric_gradient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fc_identity_and_bias_only() {
        let x = [1.5, -2.0, 0.25];
        let eye = Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(fully_connected(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x.to_vec());
        let b = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
        assert_eq!(fully_connected(&x, &Tensor::zeros(&[2, 3]), &b).unwrap(), vec![0.3, -0.7]);
        assert!(fully_connected(&x[..2], &eye, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn fc_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, n) = (4, 6);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Tensor::new(vec![m, n], (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::new(vec![m], (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let probe: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |x: &[f64], w: &Tensor, b: &Tensor| -> f64 {
            fully_connected(x, w, b).unwrap().iter().zip(&probe).map(|(y, p)| y * p).sum()
        };
        let mut gw = vec![0.0; m * n];
        let mut gb = vec![0.0; m];
        let gx = fully_connected_backward(&x, &w, &probe, &mut gw, &mut gb, true).unwrap();
        let nx = numeric_gradient(&x, 1e-5, |v| loss(v, &w, &b));
        let nw = numeric_gradient(w.data(), 1e-5, |v| loss(&x, &Tensor::new(vec![m, n], v.to_vec()).unwrap(), &b));
        let nb = numeric_gradient(b.data(), 1e-5, |v| loss(&x, &w, &Tensor::new(vec![m], v.to_vec()).unwrap()));
        assert!(max_relative_error(&gx, &nx) < 1e-4);
        assert!(max_relative_error(&gw, &nw) < 1e-4);
        assert!(max_relative_error(&gb, &nb) < 1e-4);
    }

    #[test]
    fn activations() {
        assert_eq!(relu(&[-3.0, 3.0, 0.0]), vec![0.0, 3.0, 0.0]);
        assert_eq!(relu_backward(&[0.0, 2.0], &[5.0, 5.0]), vec![0.0, 5.0]);
        assert_eq!(sigmoid_biased(0.0), 1.0);
        for x in [-100.0, 100.0, -800.0, 800.0] {
            let y = sigmoid_biased(x);
            assert!(y > 0.5 && y < 1.5);
        }
        assert!(sigmoid_biased(-100.0) > 0.5 && sigmoid_biased(100.0) < 1.5);
        let x = 0.3;
        let h = 1e-5;
        let numeric = (sigmoid_biased(x + h) - sigmoid_biased(x - h)) / (2.0 * h);
        assert!((sigmoid_biased_grad(sigmoid_biased(x)) - numeric).abs() < 1e-9);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = vec![1.0; 100];
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        let (y, mask) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        assert!(mask.is_some());
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = vec![1.0; 1_000_000];
        let (y, _) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::filled(&[4, 6, 6], 1.0);
        let b = Tensor::filled(&[8, 6, 6], 2.0);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[12, 6, 6]);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        assert!(concat_channels(&[&a, &Tensor::zeros(&[1, 5, 6])]).is_err());
        let parts = split_channels_grad(c.data(), &[4, 8], 36);
        assert_eq!(parts[0], a.data());
        assert_eq!(parts[1], b.data());
    }

    #[test]
    fn scale_channel_gradients() {
        assert_eq!(scale_channel(&[1.0; 36], 0.5), vec![0.5; 36]);
        assert_eq!(scale_channel(&[3.0, -1.0], 1.0), vec![3.0, -1.0]);
        let input: Vec<f64> = (0..36).map(|i| (i as f64 * 0.3).sin()).collect();
        let (_, gw) = scale_channel_backward(&input, 0.8, &[1.0; 36]);
        assert!((gw - input.iter().sum::<f64>()).abs() < 1e-12);
        let numeric = numeric_gradient(&[0.8], 1e-5, |w| scale_channel(&input, w[0]).iter().sum());
        assert!(max_relative_error(&[gw], &numeric) < 1e-4);
    }
}
