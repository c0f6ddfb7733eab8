use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Max-pooled output plus the flat input index each output value came from.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Per-channel max pooling without padding. Ties resolve to the first index
/// in row-major scan order.
pub fn maxpool2d(input: &Tensor, k: usize, stride: usize) -> Result<Pooled> {
    let [c, h, w] = *input.shape() else {
        return Err(Error::dim("maxpool2d", format!("input must be [C,H,W], got {:?}", input.shape())));
    };
    if k == 0 || stride == 0 || k > h || k > w {
        return Err(Error::dim("maxpool2d", format!("window {k} does not fit {h}x{w}")));
    }
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let data = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for idx in row..row + k {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![c, ho, wo], out)?,
        argmax,
    })
}

/// Route upstream gradient to the recorded argmax positions (accumulating).
pub fn maxpool2d_backward(argmax: &[usize], grad_out: &[f64], grad_input: &mut [f64]) {
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        grad_input[idx] += g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cascade_shapes() {
        let p = maxpool2d(&Tensor::zeros(&[2, 54, 54]), 6, 4).unwrap();
        assert_eq!(p.output.shape(), &[2, 13, 13]);
        let p = maxpool2d(&p.output, 3, 2).unwrap();
        assert_eq!(p.output.shape(), &[2, 6, 6]);
        let p = maxpool2d(&Tensor::zeros(&[1, 13, 13]), 3, 2).unwrap();
        assert_eq!(p.output.shape(), &[1, 6, 6]);
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        assert!(matches!(
            maxpool2d(&Tensor::zeros(&[1, 2, 2]), 3, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn constant_input_routes_to_first_window_element() {
        let input = Tensor::filled(&[1, 5, 5], 2.0);
        let p = maxpool2d(&input, 3, 2).unwrap();
        assert!(p.output.data().iter().all(|&v| v == 2.0));
        let mut grad = vec![0.0; 25];
        maxpool2d_backward(&p.argmax, &[1.0; 4], &mut grad);
        let mut expected = vec![0.0; 25];
        for (oy, ox) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            expected[oy * 2 * 5 + ox * 2] = 1.0;
        }
        assert_eq!(grad, expected);
    }

    #[test]
    fn picks_window_maximum() {
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let p = maxpool2d(&input, 2, 1).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![1]);
    }
}
