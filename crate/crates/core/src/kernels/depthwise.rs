//! Size-preserving depthwise convolution with optional dilation.

use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct DwGeometry {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    dilation: usize,
    padding: usize,
}

impl DwGeometry {
    fn new(input: [usize; 4], kernel: [usize; 4], dilation: usize, padding: usize) -> Result<Self> {
        let [n, c, h, w] = input;
        let [kc, one, kh, kw] = kernel;
        if kc != c || one != 1 {
            return shape_err(format!(
                "depthwise_conv2d: kernel dims {kernel:?} do not match input dims {input:?} (expected [{c}, 1, k, k])"
            ));
        }
        if kh != kw {
            return shape_err(format!("depthwise_conv2d: kernel must be square, got {kh}x{kw}"));
        }
        if kh % 2 == 0 {
            return config_err(format!(
                "depthwise_conv2d: kernel size {kh} is even, spatial size cannot be preserved"
            ));
        }
        if dilation == 0 {
            return config_err("depthwise_conv2d: dilation must be positive");
        }
        let want = dilation * (kh - 1) / 2;
        if padding != want {
            return config_err(format!(
                "depthwise_conv2d: padding {padding} does not preserve size (need {want} for k={kh}, dilation={dilation})"
            ));
        }
        Ok(Self { batch: n, channels: c, h, w, k: kh, dilation, padding })
    }

    #[inline]
    fn source(&self, o: usize, tap: usize, limit: usize) -> Option<usize> {
        let pos = (o + tap * self.dilation).checked_sub(self.padding)?;
        (pos < limit).then_some(pos)
    }
}

/// `padding` must equal `dilation·(k−1)/2` with odd `k`, so output dims equal input dims.
pub fn depthwise_conv2d(input: &Tensor, kernel: &Tensor, dilation: usize, padding: usize) -> Result<Tensor> {
    let g = DwGeometry::new(input.dims(), kernel.dims(), dilation, padding)?;
    let mut out = Tensor::zeros(input.dims());
    let x = input.data();
    let kd = kernel.data();
    let o = out.data_mut();
    let plane = g.h * g.w;
    for n in 0..g.batch {
        for c in 0..g.channels {
            let base = (n * g.channels + c) * plane;
            let taps = &kd[c * g.k * g.k..(c + 1) * g.k * g.k];
            for y in 0..g.h {
                for xo in 0..g.w {
                    let mut acc = 0.0;
                    for ky in 0..g.k {
                        let Some(iy) = g.source(y, ky, g.h) else { continue };
                        for kx in 0..g.k {
                            let Some(ix) = g.source(xo, kx, g.w) else { continue };
                            acc += x[base + iy * g.w + ix] * taps[ky * g.k + kx];
                        }
                    }
                    o[base + y * g.w + xo] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_kernel)`.
pub fn depthwise_conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    dilation: usize,
    padding: usize,
) -> Result<(Tensor, Tensor)> {
    let g = DwGeometry::new(input.dims(), kernel.dims(), dilation, padding)?;
    input.expect_same_dims(grad_out, "depthwise_conv2d backward")?;
    let mut gi = Tensor::zeros(input.dims());
    let mut gk = Tensor::zeros(kernel.dims());
    let x = input.data();
    let kd = kernel.data();
    let go = grad_out.data();
    let plane = g.h * g.w;
    let kk = g.k * g.k;
    for n in 0..g.batch {
        for c in 0..g.channels {
            let base = (n * g.channels + c) * plane;
            for y in 0..g.h {
                for xo in 0..g.w {
                    let d = go[base + y * g.w + xo];
                    for ky in 0..g.k {
                        let Some(iy) = g.source(y, ky, g.h) else { continue };
                        for kx in 0..g.k {
                            let Some(ix) = g.source(xo, kx, g.w) else { continue };
                            let xi = base + iy * g.w + ix;
                            let ki = c * kk + ky * g.k + kx;
                            gk.data_mut()[ki] += d * x[xi];
                            gi.data_mut()[xi] += d * kd[ki];
                        }
                    }
                }
            }
        }
    }
    Ok((gi, gk))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(c: usize) -> Tensor {
        Tensor::from_fn([c, 1, 3, 3], |[_, _, y, x]| if y == 1 && x == 1 { 1.0 } else { 0.0 })
    }

    #[test]
    fn delta_kernel_is_identity_for_any_dilation() {
        let x = Tensor::from_fn([2, 3, 5, 4], |[n, c, y, x]| (n + 2 * c) as f64 - 0.3 * y as f64 + x as f64 * 0.7);
        for d in 1..=3 {
            let y = depthwise_conv2d(&x, &delta(3), d, d).unwrap();
            assert!(y.bit_eq(&x), "dilation {d}");
        }
    }

    #[test]
    fn ones_3x3_dilation_1() {
        let y = depthwise_conv2d(&Tensor::ones([1, 1, 3, 3]), &Tensor::ones([1, 1, 3, 3]), 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn ones_5x5_dilation_2_center() {
        let y = depthwise_conv2d(&Tensor::ones([1, 1, 5, 5]), &Tensor::ones([1, 1, 3, 3]), 2, 2).unwrap();
        assert_eq!(y.get([0, 0, 2, 2]), 9.0);
        // corner sees taps at offsets {0, +2} in each axis
        assert_eq!(y.get([0, 0, 0, 0]), 4.0);
    }

    #[test]
    fn channels_do_not_mix() {
        let mut x = Tensor::zeros([1, 2, 3, 3]);
        x.set([0, 0, 1, 1], 1.0);
        let y = depthwise_conv2d(&x, &Tensor::ones([2, 1, 3, 3]), 1, 1).unwrap();
        assert!(y.data()[9..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn even_kernel_is_config_error() {
        let err = depthwise_conv2d(&Tensor::ones([1, 1, 4, 4]), &Tensor::ones([1, 1, 2, 2]), 1, 0).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn wrong_padding_is_rejected() {
        assert!(depthwise_conv2d(&Tensor::ones([1, 1, 4, 4]), &Tensor::ones([1, 1, 3, 3]), 2, 1).is_err());
    }
}
