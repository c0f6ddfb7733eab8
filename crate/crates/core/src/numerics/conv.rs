use super::gemm::{gemm, View};
use super::tensor::{ensure_finite, Tensor};
use std::ops::Range;

use crate::error::{Error, Result};

/// Output size of a strided, zero-padded window along one axis.
pub fn conv_output_dim(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::dim("conv2d", "kernel and stride must be positive"));
    }
    if size + 2 * pad < k {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {k} larger than padded input {}", size + 2 * pad),
        ));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

/// Target size, in values, of one block of unfolded columns.
const COLUMN_BLOCK: usize = 1 << 15;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn new(input: &Tensor, kernels: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let [c_in, h, w] = *input.shape() else {
            return Err(Error::dim("conv2d", format!("input must be [C,H,W], got {:?}", input.shape())));
        };
        let [c_out, kc, kh, kw] = *kernels.shape() else {
            return Err(Error::dim("conv2d", format!("kernels must be [O,C,k,k], got {:?}", kernels.shape())));
        };
        if kc != c_in || kh != kw {
            return Err(Error::dim(
                "conv2d",
                format!("kernels {:?} incompatible with input {:?}", kernels.shape(), input.shape()),
            ));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            pad,
            h_out: conv_output_dim(h, kh, stride, pad)?,
            w_out: conv_output_dim(w, kw, stride, pad)?,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn blocks(&self) -> impl Iterator<Item = Range<usize>> {
        let (step, h_out) = (self.block_rows(), self.h_out);
        (0..h_out).step_by(step).map(move |r| r..(r + step).min(h_out))
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
    fn valid_ox(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        // ix = ox*s + kx - p must satisfy 0 <= ix < w
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if self.w + p > kx { ((self.w + p - kx - 1) / s + 1).min(self.w_out) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Output rows per block, keeping one block of unfolded columns near
    /// `COLUMN_BLOCK` values so it stays cache resident.
    fn block_rows(&self) -> usize {
        (COLUMN_BLOCK / (self.patch_len() * self.w_out).max(1)).clamp(1, self.h_out)
    }

    /// Unfold the input windows of output rows `rows` into a
    /// `[C_in·k·k, rows.len()·W_out]` matrix.
    fn im2col(&self, input: &[f64], rows: Range<usize>) -> Vec<f64> {
        let n = rows.len() * self.w_out;
        let mut cols = vec![0.0; self.patch_len() * n];
        for c in 0..self.c_in {
            let plane = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let (lo, hi) = self.valid_ox(kx);
                    for (r, oy) in rows.clone().enumerate() {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize || lo >= hi {
                            continue;
                        }
                        let src_row = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let start = lo * self.stride + kx - self.pad;
                        let out = &mut dst[r * self.w_out + lo..r * self.w_out + hi];
                        if self.stride == 1 {
                            out.copy_from_slice(&src_row[start..start + (hi - lo)]);
                        } else {
                            for (d, s) in out.iter_mut().zip(src_row[start..].iter().step_by(self.stride)) {
                                *d = *s;
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Fold the column-gradient block of output rows `rows` back onto the
    /// input, accumulating.
    fn col2im_add(&self, cols: &[f64], rows: Range<usize>, grad_input: &mut [f64]) {
        let n = rows.len() * self.w_out;
        for c in 0..self.c_in {
            let plane = &mut grad_input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    let (lo, hi) = self.valid_ox(kx);
                    for (r, oy) in rows.clone().enumerate() {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize || lo >= hi {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let start = lo * self.stride + kx - self.pad;
                        let from = &src[r * self.w_out + lo..r * self.w_out + hi];
                        for (d, s) in dst_row[start..].iter_mut().step_by(self.stride).zip(from) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, k, k]`
/// kernels plus a per-output-channel bias.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeom::new(input, kernels, stride, pad)?;
    if bias.len() != g.c_out {
        return Err(Error::dim("conv2d", format!("bias has {} entries for {} kernels", bias.len(), g.c_out)));
    }
    let n = g.positions();
    let kl = g.patch_len();
    let mut out = vec![0.0; g.c_out * n];
    for (o, chunk) in out.chunks_mut(n).enumerate() {
        chunk.fill(bias.data()[o]);
    }
    for rows in g.blocks() {
        let p0 = rows.start * g.w_out;
        let nb = rows.len() * g.w_out;
        if g.is_pointwise() {
            gemm(g.c_out, kl, nb, View::new(kernels.data(), kl), View::new(&input.data()[p0..], n), 1.0, &mut out[p0..], n);
        } else {
            let cols = g.im2col(input.data(), rows);
            gemm(g.c_out, kl, nb, View::new(kernels.data(), kl), View::new(&cols, nb), 1.0, &mut out[p0..], n);
        }
    }
    ensure_finite(&out, "conv2d")?;
    Tensor::new(vec![g.c_out, g.h_out, g.w_out], out)
}

/// Accumulate conv2d gradients. `grad_input` may be skipped when the input is
/// not differentiable (e.g. raw image patches).
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<()> {
    let g = ConvGeom::new(input, kernels, stride, pad)?;
    let n = g.positions();
    let kl = g.patch_len();
    if grad_out.len() != g.c_out * n || grad_kernels.len() != kernels.len() || grad_bias.len() != g.c_out {
        return Err(Error::dim("conv2d_backward", "gradient buffer sizes do not match"));
    }
    for (o, chunk) in grad_out.chunks(n).enumerate() {
        grad_bias[o] += chunk.iter().sum::<f64>();
    }
    if let Some(gi) = &grad_input {
        if gi.len() != input.len() {
            return Err(Error::dim("conv2d_backward", "input gradient size mismatch"));
        }
    }
    let mut grad_input = grad_input;
    let mut grad_cols = Vec::new();
    for rows in g.blocks() {
        let p0 = rows.start * g.w_out;
        let nb = rows.len() * g.w_out;
        let g_out = View::new(&grad_out[p0..], n);
        if g.is_pointwise() {
            gemm(g.c_out, nb, kl, g_out, View::t(&input.data()[p0..], n), 1.0, grad_kernels, kl);
        } else {
            let cols = g.im2col(input.data(), rows.clone());
            gemm(g.c_out, nb, kl, g_out, View::t(&cols, nb), 1.0, grad_kernels, kl);
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            if g.is_pointwise() {
                gemm(kl, g.c_out, nb, View::t(kernels.data(), kl), g_out, 1.0, &mut gi[p0..], n);
            } else {
                grad_cols.resize(kl * nb, 0.0);
                gemm(kl, g.c_out, nb, View::t(kernels.data(), kl), g_out, 0.0, &mut grad_cols, nb);
                g.col2im_add(&grad_cols, rows, gi);
            }
        }
    }
    if let Some(gi) = grad_input {
        ensure_finite(gi, "conv2d_backward")?;
    }
    ensure_finite(grad_kernels, "conv2d_backward")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{max_relative_error, numeric_gradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation.
    fn naive_conv(input: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let [c_in, h, w] = *input.shape() else { unreachable!() };
        let [c_out, _, kk, _] = *k.shape() else { unreachable!() };
        let ho = (h + 2 * pad - kk) / stride + 1;
        let wo = (w + 2 * pad - kk) / stride + 1;
        let mut out = vec![0.0; c_out * ho * wo];
        for o in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..c_in {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += input.data()[(c * h + iy as usize) * w + ix as usize]
                                        * k.data()[((o * c_in + c) * kk + ky) * kk + kx];
                                }
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random(&[1, 5, 7], &mut rng);
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let out = conv2d(&input, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn output_dims_follow_floor_formula() {
        assert_eq!(conv_output_dim(224, 7, 2, 0).unwrap(), 109);
        assert_eq!(conv_output_dim(54, 5, 2, 2).unwrap(), 27);
        assert!(conv_output_dim(3, 7, 1, 1).is_err());
    }

    #[test]
    fn matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(stride, pad) in &[(1, 0), (2, 1), (2, 2), (3, 0)] {
            let input = random(&[3, 9, 8], &mut rng);
            let k = random(&[4, 3, 3, 3], &mut rng);
            let b = random(&[4], &mut rng);
            let out = conv2d(&input, &k, &b, stride, pad).unwrap();
            let expected = naive_conv(&input, &k, &b, stride, pad);
            for (x, y) in out.data().iter().zip(&expected) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let input = Tensor::zeros(&[2, 5, 5]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&input, &k, &Tensor::zeros(&[1]), 1, 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random(&[3, 8, 8], &mut rng);
        let k = random(&[2, 3, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        let (stride, pad) = (2, 1);
        let out = conv2d(&input, &k, &b, stride, pad).unwrap();
        let probe: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |i: &Tensor, k: &Tensor, b: &Tensor| -> f64 {
            let o = conv2d(i, k, b, stride, pad).unwrap();
            o.data().iter().zip(&probe).map(|(x, p)| x * p).sum()
        };

        let mut gi = vec![0.0; input.len()];
        let mut gk = vec![0.0; k.len()];
        let mut gb = vec![0.0; b.len()];
        conv2d_backward(&input, &k, stride, pad, &probe, Some(&mut gi), &mut gk, &mut gb).unwrap();

        let ni = numeric_gradient(input.data(), 1e-5, |x| {
            loss(&Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap(), &k, &b)
        });
        let nk = numeric_gradient(k.data(), 1e-5, |x| {
            loss(&input, &Tensor::new(k.shape().to_vec(), x.to_vec()).unwrap(), &b)
        });
        let nb = numeric_gradient(b.data(), 1e-5, |x| {
            loss(&input, &k, &Tensor::new(vec![2], x.to_vec()).unwrap())
        });
        assert!(max_relative_error(&gi, &ni) < 1e-4);
        assert!(max_relative_error(&gk, &nk) < 1e-4);
        assert!(max_relative_error(&gb, &nb) < 1e-4);
    }

    proptest::proptest! {
        #[test]
        fn unfold_matches_direct_loop_on_any_geometry(
            h in 1usize..9, w in 1usize..9, k in 1usize..5, stride in 1usize..4, pad in 0usize..3, seed in 0u64..1000
        ) {
            proptest::prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input = random(&[2, h, w], &mut rng);
            let kern = random(&[3, 2, k, k], &mut rng);
            let b = random(&[3], &mut rng);
            let out = conv2d(&input, &kern, &b, stride, pad).unwrap();
            for (x, y) in out.data().iter().zip(naive_conv(&input, &kern, &b, stride, pad)) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
            // col2im is the adjoint of im2col: <im2col(x), c> == <x, col2im(c)>
            let g = ConvGeom::new(&input, &kern, stride, pad).unwrap();
            let cols = g.im2col(input.data(), 0..g.h_out);
            let probe: Vec<f64> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut back = vec![0.0; input.len()];
            g.col2im_add(&probe, 0..g.h_out, &mut back);
            let lhs: f64 = cols.iter().zip(&probe).map(|(a, b)| a * b).sum();
            let rhs: f64 = input.data().iter().zip(&back).map(|(a, b)| a * b).sum();
            proptest::prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
