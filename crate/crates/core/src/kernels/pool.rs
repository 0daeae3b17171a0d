//! Adaptive and global average/max pooling.
//!
//! Output cell `a` along an axis of input length `len` and output length
//! `out` averages (or maximizes) over `[floor(a·len/out), ceil((a+1)·len/out))`.
//! Neighbouring windows overlap when `len` is not a multiple of `out`.

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Half-open window `[start, end)` of output cell `a`.
#[inline]
pub fn adaptive_window(a: usize, len: usize, out: usize) -> (usize, usize) {
    let start = a * len / out;
    let end = ((a + 1) * len).div_ceil(out);
    (start, end)
}

fn check_out(input: &Tensor, out_h: usize, out_w: usize, op: &str) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return config_err(format!("{op}: output size must be positive, got {out_h}x{out_w}"));
    }
    if out_h > input.height() || out_w > input.width() {
        return config_err(format!(
            "{op}: output size {out_h}x{out_w} exceeds input size {}x{}",
            input.height(),
            input.width()
        ));
    }
    Ok(())
}

pub fn adaptive_avg_pool(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    check_out(input, out_h, out_w, "adaptive_avg_pool")?;
    let [n, c, h, w] = input.dims();
    let x = input.data();
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let o = out.data_mut();
    let mut idx = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for a in 0..out_h {
            let (y0, y1) = adaptive_window(a, h, out_h);
            for b in 0..out_w {
                let (x0, x1) = adaptive_window(b, w, out_w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += x[base + y * w + xx];
                    }
                }
                o[idx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                idx += 1;
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool_backward(input_dims: [usize; 4], grad_out: &Tensor) -> Tensor {
    let [n, c, h, w] = input_dims;
    let [_, _, out_h, out_w] = grad_out.dims();
    let mut gi = Tensor::zeros(input_dims);
    let g = grad_out.data();
    let d = gi.data_mut();
    let mut idx = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for a in 0..out_h {
            let (y0, y1) = adaptive_window(a, h, out_h);
            for b in 0..out_w {
                let (x0, x1) = adaptive_window(b, w, out_w);
                let share = g[idx] / ((y1 - y0) * (x1 - x0)) as f64;
                idx += 1;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        d[base + y * w + xx] += share;
                    }
                }
            }
        }
    }
    gi
}

/// Max pooling result plus the flat input index chosen for every output cell.
#[derive(Clone, Debug)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Ties resolve to the lowest flat input index.
pub fn adaptive_max_pool(input: &Tensor, out_h: usize, out_w: usize) -> Result<MaxPoolOutput> {
    check_out(input, out_h, out_w, "adaptive_max_pool")?;
    let [n, c, h, w] = input.dims();
    let x = input.data();
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let mut argmax = Vec::with_capacity(out.len());
    let o = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for a in 0..out_h {
            let (y0, y1) = adaptive_window(a, h, out_h);
            for b in 0..out_w {
                let (x0, x1) = adaptive_window(b, w, out_w);
                let mut best = base + y0 * w + x0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        let i = base + y * w + xx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                o[argmax.len()] = x[best];
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput { output: out, argmax })
}

pub fn adaptive_max_pool_backward(input_dims: [usize; 4], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gi = Tensor::zeros(input_dims);
    let d = gi.data_mut();
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        d[src] += g;
    }
    gi
}

pub fn global_avg_pool(input: &Tensor) -> Tensor {
    adaptive_avg_pool(input, 1, 1).expect("1x1 output always fits")
}

pub fn global_max_pool(input: &Tensor) -> MaxPoolOutput {
    adaptive_max_pool(input, 1, 1).expect("1x1 output always fits")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Tensor {
        Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    fn ramp() -> Tensor {
        Tensor::from_vec([1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn avg_examples() {
        assert_eq!(adaptive_avg_pool(&square(), 1, 1).unwrap().data(), &[2.5]);
        assert_eq!(adaptive_avg_pool(&square(), 2, 2).unwrap(), square());
        assert_eq!(adaptive_avg_pool(&ramp(), 2, 2).unwrap().data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn max_examples() {
        assert_eq!(adaptive_max_pool(&square(), 1, 1).unwrap().output.data(), &[4.0]);
        assert_eq!(adaptive_max_pool(&square(), 2, 2).unwrap().output, square());
        assert_eq!(adaptive_max_pool(&ramp(), 2, 2).unwrap().output.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn global_pools() {
        let c = Tensor::full([2, 3, 4, 5], -1.25);
        assert!(global_avg_pool(&c).data().iter().all(|&v| v == -1.25));
        assert!(global_max_pool(&c).output.data().iter().all(|&v| v == -1.25));
        assert_eq!(global_avg_pool(&square()).data(), &[2.5]);
        assert_eq!(global_max_pool(&square()).output.data(), &[4.0]);
    }

    #[test]
    fn max_ties_go_to_lowest_index() {
        let x = Tensor::full([1, 1, 3, 3], 2.0);
        let r = adaptive_max_pool(&x, 1, 1).unwrap();
        assert_eq!(r.argmax, vec![0]);
        let g = adaptive_max_pool_backward(x.dims(), &r.argmax, &Tensor::scalar(1.0));
        assert_eq!(g.data()[0], 1.0);
        assert_eq!(g.sum(), 1.0);
    }

    #[test]
    fn overlapping_windows() {
        // length 5 into 3 cells: [0,2), [1,4), [3,5)
        assert_eq!(adaptive_window(0, 5, 3), (0, 2));
        assert_eq!(adaptive_window(1, 5, 3), (1, 4));
        assert_eq!(adaptive_window(2, 5, 3), (3, 5));
    }

    #[test]
    fn oversized_output_rejected() {
        assert!(matches!(adaptive_avg_pool(&square(), 3, 1), Err(crate::Error::Config(_))));
        assert!(matches!(adaptive_max_pool(&square(), 1, 3), Err(crate::Error::Config(_))));
    }
}
