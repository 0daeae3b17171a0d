//! Dense 2-D convolution with two interchangeable execution paths.
//!
//! The naive path is a direct nested loop and serves as the reference.
//! The optimized path lowers each batch element with im2col and runs a
//! blocked matrix multiply. Both paths implement forward and backward.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Layout};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvPath {
    Naive,
    #[default]
    Optimized,
}

impl std::str::FromStr for ConvPath {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "naive" => Ok(ConvPath::Naive),
            "optimized" => Ok(ConvPath::Optimized),
            other => Err(format!("unknown conv path '{other}'")),
        }
    }
}

/// Resolved sizes of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: [usize; 4], kernel: [usize; 4], stride: usize, padding: usize) -> Result<Self> {
        let [n, cin, h, w] = input;
        let [cout, kcin, kh, kw] = kernel;
        if cin != kcin {
            return shape_err(format!(
                "conv2d: input dims {input:?} have {cin} channels but kernel dims {kernel:?} expect {kcin}"
            ));
        }
        if stride == 0 {
            return config_err("conv2d: stride must be positive");
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return shape_err(format!(
                "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
                h + 2 * padding,
                w + 2 * padding
            ));
        }
        Ok(Self {
            batch: n,
            in_channels: cin,
            in_h: h,
            in_w: w,
            out_channels: cout,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_sample(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    /// Input coordinate touched by output `o` at kernel tap `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.padding)?;
        (pos < limit).then_some(pos)
    }

    /// FLOPs of one forward pass (multiply and add counted separately).
    pub fn flops(&self) -> u64 {
        2 * (self.batch * self.out_channels * self.out_plane() * self.patch_len()) as u64
    }
}

/// Gradients of a convolution with respect to its operands.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

fn check_bias(geom: &ConvGeometry, bias: Option<&Tensor>) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != geom.out_channels {
            return shape_err(format!(
                "conv2d: bias has {} elements, expected {}",
                b.len(),
                geom.out_channels
            ));
        }
    }
    Ok(())
}

pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    path: ConvPath,
) -> Result<Tensor> {
    let geom = ConvGeometry::new(input.dims(), kernel.dims(), stride, padding)?;
    check_bias(&geom, bias)?;
    let mut out = Tensor::zeros(geom.output_dims());
    conv2d_forward_raw(
        &geom,
        input.data(),
        kernel.data(),
        bias.map(|b| b.data()),
        out.data_mut(),
        path,
    );
    Ok(out)
}

/// Backward pass of [`conv2d`]. `input` gradient is skipped unless requested.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    path: ConvPath,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let geom = ConvGeometry::new(input.dims(), kernel.dims(), stride, padding)?;
    if grad_out.dims() != geom.output_dims() {
        return shape_err(format!(
            "conv2d backward: grad dims {:?}, expected {:?}",
            grad_out.dims(),
            geom.output_dims()
        ));
    }
    let mut grad_input = want_input_grad.then(|| Tensor::zeros(input.dims()));
    let mut grad_kernel = Tensor::zeros(kernel.dims());
    let mut grad_bias = Tensor::zeros([geom.out_channels, 1, 1, 1]);
    conv2d_backward_raw(
        &geom,
        input.data(),
        kernel.data(),
        grad_out.data(),
        grad_input.as_mut().map(|t| t.data_mut()),
        grad_kernel.data_mut(),
        grad_bias.data_mut(),
        path,
    );
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

/// Slice-level forward used by both the tensor API and the `f32` benchmark.
pub fn conv2d_forward_raw<T: Float>(
    geom: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
    path: ConvPath,
) {
    match path {
        ConvPath::Naive => forward_naive(geom, input, kernel, bias, out),
        ConvPath::Optimized => forward_im2col(geom, input, kernel, bias, out),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_raw<T: Float>(
    geom: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_kernel: &mut [T],
    grad_bias: &mut [T],
    path: ConvPath,
) {
    match path {
        ConvPath::Naive => backward_naive(geom, input, kernel, grad_out, grad_input, grad_kernel, grad_bias),
        ConvPath::Optimized => {
            backward_im2col(geom, input, kernel, grad_out, grad_input, grad_kernel, grad_bias)
        }
    }
}

fn forward_naive<T: Float>(g: &ConvGeometry, input: &[T], kernel: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let mut o = 0;
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            let b = bias.map_or(T::zero(), |b| b[co]);
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = T::zero();
                    for ci in 0..g.in_channels {
                        for ky in 0..g.kernel_h {
                            let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                            for kx in 0..g.kernel_w {
                                let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                                let x = input[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
                                let w = kernel[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
                                acc = acc + x * w;
                            }
                        }
                    }
                    out[o] = acc + b;
                    o += 1;
                }
            }
        }
    }
}

fn backward_naive<T: Float>(
    g: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    grad_kernel: &mut [T],
    grad_bias: &mut [T],
) {
    let mut o = 0;
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let go = grad_out[o];
                    o += 1;
                    grad_bias[co] = grad_bias[co] + go;
                    for ci in 0..g.in_channels {
                        for ky in 0..g.kernel_h {
                            let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                            for kx in 0..g.kernel_w {
                                let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                                let xi = ((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix;
                                let wi = ((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx;
                                grad_kernel[wi] = grad_kernel[wi] + go * input[xi];
                                if let Some(gi) = grad_input.as_deref_mut() {
                                    gi[xi] = gi[xi] + go * kernel[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Lower one sample to a `(cin·kh·kw) × (out_h·out_w)` patch matrix.
fn im2col<T: Float>(g: &ConvGeometry, sample: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for ci in 0..g.in_channels {
        let chan = &sample[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.source(oy, ky, g.in_h) {
                        None => line.iter_mut().for_each(|v| *v = T::zero()),
                        Some(iy) => {
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.source(ox, kx, g.in_w) {
                                    Some(ix) => chan[iy * g.in_w + ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a patch matrix back onto one sample (adjoint of [`im2col`]).
fn col2im<T: Float>(g: &ConvGeometry, cols: &[T], sample: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for ci in 0..g.in_channels {
        let chan = &mut sample[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kx, g.in_w) {
                            let v = &mut chan[iy * g.in_w + ix];
                            *v = *v + src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn is_pointwise(g: &ConvGeometry) -> bool {
    g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0
}

fn forward_im2col<T: Float>(g: &ConvGeometry, input: &[T], kernel: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let k = g.patch_len();
    let plane = g.out_plane();
    let mut cols = if is_pointwise(g) { Vec::new() } else { vec![T::zero(); k * plane] };
    let out_sample = g.out_channels * plane;
    for n in 0..g.batch {
        let sample = &input[n * g.in_sample()..(n + 1) * g.in_sample()];
        let dst = &mut out[n * out_sample..(n + 1) * out_sample];
        dst.iter_mut().for_each(|v| *v = T::zero());
        // A 1x1/stride-1 convolution's patch matrix is the sample itself.
        let patches: &[T] = if is_pointwise(g) {
            sample
        } else {
            im2col(g, sample, &mut cols);
            &cols
        };
        gemm(g.out_channels, plane, k, kernel, Layout::Normal, patches, Layout::Normal, dst);
        if let Some(b) = bias {
            for (co, row) in dst.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = *v + b[co]);
            }
        }
    }
}

fn backward_im2col<T: Float>(
    g: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    grad_kernel: &mut [T],
    grad_bias: &mut [T],
) {
    let k = g.patch_len();
    let plane = g.out_plane();
    let out_sample = g.out_channels * plane;
    let mut cols = if is_pointwise(g) { Vec::new() } else { vec![T::zero(); k * plane] };
    let mut grad_cols = vec![T::zero(); k * plane];
    for n in 0..g.batch {
        let sample = &input[n * g.in_sample()..(n + 1) * g.in_sample()];
        let go = &grad_out[n * out_sample..(n + 1) * out_sample];
        for (co, row) in go.chunks(plane).enumerate() {
            grad_bias[co] = row.iter().fold(grad_bias[co], |acc, &v| acc + v);
        }
        let patches: &[T] = if is_pointwise(g) {
            sample
        } else {
            im2col(g, sample, &mut cols);
            &cols
        };
        // dK (cout×k) += dY (cout×plane) · patchesᵀ (plane×k)
        gemm(g.out_channels, k, plane, go, Layout::Normal, patches, Layout::Transposed, grad_kernel);
        if let Some(gi) = grad_input.as_deref_mut() {
            grad_cols.iter_mut().for_each(|v| *v = T::zero());
            // dPatches (k×plane) = Kᵀ (k×cout) · dY (cout×plane)
            gemm(k, plane, g.out_channels, kernel, Layout::Transposed, go, Layout::Normal, &mut grad_cols);
            let dst = &mut gi[n * g.in_sample()..(n + 1) * g.in_sample()];
            if is_pointwise(g) {
                for (d, s) in dst.iter_mut().zip(&grad_cols) {
                    *d = *d + *s;
                }
            } else {
                col2im(g, &grad_cols, dst);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_channel_mixing() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![3.0, 1.0]).unwrap();
        let k = Tensor::from_vec([2, 2, 1, 1], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        for path in [ConvPath::Naive, ConvPath::Optimized] {
            let y = conv2d(&x, &k, None, 1, 0, path).unwrap();
            assert_eq!(y.data(), &[4.0, 2.0]);
        }
    }

    #[test]
    fn ones_3x3_padded() {
        let x = Tensor::ones([1, 1, 3, 3]);
        let k = Tensor::ones([1, 1, 3, 3]);
        for path in [ConvPath::Naive, ConvPath::Optimized] {
            let y = conv2d(&x, &k, None, 1, 1, path).unwrap();
            assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        }
    }

    #[test]
    fn strided_output_shape() {
        let g = ConvGeometry::new([1, 1, 4, 4], [1, 1, 3, 3], 2, 1).unwrap();
        assert_eq!(g.output_dims(), [1, 1, 2, 2]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let err = ConvGeometry::new([1, 3, 4, 4], [2, 2, 3, 3], 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 4, 4]") && msg.contains("[2, 2, 3, 3]"), "{msg}");
    }

    #[test]
    fn kernel_larger_than_padded_input_rejected() {
        assert!(ConvGeometry::new([1, 1, 2, 2], [1, 1, 5, 5], 1, 1).is_err());
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::zeros([1, 1, 2, 2]);
        let k = Tensor::ones([2, 1, 1, 1]);
        let b = Tensor::from_vec([2, 1, 1, 1], vec![0.5, -1.0]).unwrap();
        for path in [ConvPath::Naive, ConvPath::Optimized] {
            let y = conv2d(&x, &k, Some(&b), 1, 0, path).unwrap();
            assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]);
        }
    }
}
