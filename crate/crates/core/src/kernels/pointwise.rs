//! Fully connected layers, activations, resizing and elementwise arithmetic.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// `weight` is `[cout, cin, 1, 1]`, `bias` has `cout` elements.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, cin, h, w] = input.dims();
    if h != 1 || w != 1 {
        return shape_err(format!("fully_connected: input must be [N, C, 1, 1], got {:?}", input.dims()));
    }
    let [cout, wcin, wh, ww] = weight.dims();
    if wcin != cin || wh != 1 || ww != 1 {
        return shape_err(format!(
            "fully_connected: weight dims {:?} incompatible with input dims {:?}",
            weight.dims(),
            input.dims()
        ));
    }
    if bias.len() != cout {
        return shape_err(format!("fully_connected: bias has {} elements, expected {cout}", bias.len()));
    }
    let x = input.data();
    let wd = weight.data();
    let mut out = Tensor::zeros([n, cout, 1, 1]);
    for b in 0..n {
        for o in 0..cout {
            let row = &wd[o * cin..(o + 1) * cin];
            let xs = &x[b * cin..(b + 1) * cin];
            let dot: f64 = row.iter().zip(xs).map(|(w, x)| w * x).sum();
            out.data_mut()[b * cout + o] = dot + bias.data()[o];
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn fully_connected_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [n, cin, _, _] = input.dims();
    let cout = weight.dims()[0];
    let mut gi = Tensor::zeros(input.dims());
    let mut gw = Tensor::zeros(weight.dims());
    let mut gb = Tensor::zeros([cout, 1, 1, 1]);
    let x = input.data();
    let wd = weight.data();
    let g = grad_out.data();
    for b in 0..n {
        for o in 0..cout {
            let go = g[b * cout + o];
            gb.data_mut()[o] += go;
            for i in 0..cin {
                gw.data_mut()[o * cin + i] += go * x[b * cin + i];
                gi.data_mut()[b * cin + i] += go * wd[o * cin + i];
            }
        }
    }
    (gi, gw, gb)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    input
        .zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
        .expect("relu backward dims")
}

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, clamped so the result stays strictly inside (0, 1).
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward expressed through the saved forward output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    output.zip_map(grad_out, |s, g| g * s * (1.0 - s)).expect("sigmoid backward dims")
}

pub fn upsample_nearest2x(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.dims();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let x = input.data();
    let o = out.data_mut();
    for plane in 0..n * c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                o[(plane * 2 * h + y) * 2 * w + xx] = x[(plane * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2x_backward(grad_out: &Tensor) -> Tensor {
    let [n, c, h2, w2] = grad_out.dims();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gi = Tensor::zeros([n, c, h, w]);
    let g = grad_out.data();
    let d = gi.data_mut();
    for plane in 0..n * c {
        for y in 0..h2 {
            for xx in 0..w2 {
                d[(plane * h + y / 2) * w + xx / 2] += g[(plane * h2 + y) * w2 + xx];
            }
        }
    }
    gi
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, |x, y| x + y)
}

pub fn neg(a: &Tensor) -> Tensor {
    a.map(|v| -v)
}

/// Elementwise product. `b` may also have batch size 1, in which case it
/// is broadcast over the batch of `a`.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() == b.dims() {
        return a.zip_map(b, |x, y| x * y);
    }
    check_batch_broadcast(a, b)?;
    let mut out = a.clone();
    for chunk in out.data_mut().chunks_mut(b.len()) {
        for (v, w) in chunk.iter_mut().zip(b.data()) {
            *v *= w;
        }
    }
    Ok(out)
}

/// Returns `(grad_a, grad_b)`; `grad_b` is summed over the batch when `b` was broadcast.
pub fn hadamard_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = hadamard(grad_out, b)?;
    if a.dims() == b.dims() {
        return Ok((ga, hadamard(grad_out, a)?));
    }
    let mut gb = Tensor::zeros(b.dims());
    for (gs, xs) in grad_out.data().chunks(b.len()).zip(a.data().chunks(b.len())) {
        for ((d, g), x) in gb.data_mut().iter_mut().zip(gs).zip(xs) {
            *d += g * x;
        }
    }
    Ok((ga, gb))
}

fn check_batch_broadcast(a: &Tensor, b: &Tensor) -> Result<()> {
    let [_, c, h, w] = a.dims();
    if b.dims() != [1, c, h, w] {
        return shape_err(format!(
            "hadamard: dims {:?} and {:?} neither match nor broadcast over batch",
            a.dims(),
            b.dims()
        ));
    }
    Ok(())
}

fn check_scale(x: &Tensor, s: &Tensor) -> Result<()> {
    let [n, c, _, _] = x.dims();
    if s.dims() != [n, c, 1, 1] {
        return shape_err(format!(
            "broadcast_scale: scale dims {:?} do not broadcast over {:?}",
            s.dims(),
            x.dims()
        ));
    }
    Ok(())
}

/// Multiply every spatial position of channel `c` by `s[n, c]`.
pub fn broadcast_scale(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    check_scale(x, s)?;
    let plane = x.height() * x.width();
    let mut out = x.clone();
    for (chunk, &sv) in out.data_mut().chunks_mut(plane).zip(s.data()) {
        chunk.iter_mut().for_each(|v| *v *= sv);
    }
    Ok(out)
}

/// Returns `(grad_x, grad_s)`.
pub fn broadcast_scale_backward(x: &Tensor, s: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let plane = x.height() * x.width();
    let gx = broadcast_scale(grad_out, s).expect("broadcast_scale backward dims");
    let mut gs = Tensor::zeros(s.dims());
    for ((gs_v, xs), gs_chunk) in gs
        .data_mut()
        .iter_mut()
        .zip(x.data().chunks(plane))
        .zip(grad_out.data().chunks(plane))
    {
        *gs_v = xs.iter().zip(gs_chunk).map(|(a, b)| a * b).sum();
    }
    (gx, gs)
}

/// Stack `a` then `b` along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if n != nb || h != hb || w != wb {
        return shape_err(format!("concat_channels: dims {:?} and {:?} differ outside channels", a.dims(), b.dims()));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels(grad: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = grad.dims();
    let cb = c - ca;
    let plane = h * w;
    let mut ga = Vec::with_capacity(n * ca * plane);
    let mut gb = Vec::with_capacity(n * cb * plane);
    for s in 0..n {
        let sample = &grad.data()[s * c * plane..(s + 1) * c * plane];
        ga.extend_from_slice(&sample[..ca * plane]);
        gb.extend_from_slice(&sample[ca * plane..]);
    }
    (
        Tensor::from_vec([n, ca, h, w], ga).expect("split dims"),
        Tensor::from_vec([n, cb, h, w], gb).expect("split dims"),
    )
}

/// Mean binary cross-entropy; `pred` must lie strictly inside (0, 1).
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_dims(target, "bce_loss")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum();
    Ok(total / pred.len() as f64)
}

pub fn bce_loss_backward(pred: &Tensor, target: &Tensor, grad_loss: f64) -> Tensor {
    let scale = grad_loss / pred.len() as f64;
    pred.zip_map(target, |p, y| scale * (p - y) / (p * (1.0 - p)))
        .expect("bce backward dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_examples() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![3.0, 4.0]).unwrap();
        let eye = Tensor::from_vec([2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(fully_connected(&x, &eye, &Tensor::zeros([2, 1, 1, 1])).unwrap(), x);

        let w = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
        let y = fully_connected(&x, &w, &Tensor::zeros([1, 1, 1, 1])).unwrap();
        assert_eq!(y.data(), &[7.0]);

        let b = Tensor::from_vec([3, 1, 1, 1], vec![0.5, -2.0, 1.0]).unwrap();
        let y = fully_connected(&x, &Tensor::zeros([3, 2, 1, 1]), &b).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn fc_rejects_spatial_input() {
        let x = Tensor::zeros([1, 2, 2, 1]);
        let err = fully_connected(&x, &Tensor::zeros([1, 2, 1, 1]), &Tensor::zeros([1, 1, 1, 1]));
        assert!(matches!(err, Err(crate::Error::Shape(_))));
    }

    #[test]
    fn activations() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        for v in [-1e4, -800.0, -40.0, 0.0, 40.0, 800.0, 1e4] {
            let s = sigmoid_scalar(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s}");
        }
        for v in [0.1, 1.3, 7.5, 20.0] {
            assert!((sigmoid_scalar(v) + sigmoid_scalar(-v) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_nearest2x(&x);
        assert_eq!(y.dims(), [1, 1, 4, 4]);
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let g = upsample_nearest2x_backward(&Tensor::ones([1, 1, 4, 4]));
        assert_eq!(g.data(), &[4.0; 4]);
    }

    #[test]
    fn elementwise_examples() {
        let x = Tensor::from_fn([1, 2, 2, 2], |[_, c, y, x]| c as f64 - y as f64 * 0.5 + x as f64);
        assert_eq!(hadamard(&x, &Tensor::ones(x.dims())).unwrap(), x);
        assert!(broadcast_scale(&x, &Tensor::zeros([1, 2, 1, 1])).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(add(&x, &neg(&x)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(add(&x, &Tensor::zeros([1, 1, 2, 2])).is_err());
        assert!(hadamard(&x, &Tensor::zeros([1, 1, 2, 2])).is_err());
    }

    #[test]
    fn hadamard_broadcasts_over_batch() {
        let a = Tensor::from_fn([3, 2, 1, 2], |[n, c, _, x]| (n * 4 + c * 2 + x) as f64);
        let b = Tensor::from_vec([1, 2, 1, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let y = hadamard(&a, &b).unwrap();
        for n in 0..3 {
            assert_eq!(y.get([n, 1, 0, 1]), a.get([n, 1, 0, 1]) * 2.0);
        }
        let (ga, gb) = hadamard_backward(&a, &b, &Tensor::ones(a.dims())).unwrap();
        assert_eq!(ga.get([2, 0, 0, 1]), -1.0);
        assert_eq!(gb.data(), &[12.0, 15.0, 18.0, 21.0]);
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::from_fn([2, 1, 1, 1], |[n, ..]| n as f64);
        let b = Tensor::from_fn([2, 2, 1, 1], |[n, c, ..]| 10.0 + (2 * n + c) as f64);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.data(), &[0.0, 10.0, 11.0, 1.0, 12.0, 13.0]);
        let (ga, gb) = split_channels(&ab, 1);
        assert_eq!((ga, gb), (a, b));
    }

    #[test]
    fn bce_examples() {
        let half = Tensor::full([1, 1, 2, 2], 0.5);
        let loss = bce_loss(&half, &Tensor::ones([1, 1, 2, 2])).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);

        let eps = 1e-7;
        let y = Tensor::from_vec([1, 1, 1, 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = y.map(|v| if v == 1.0 { 1.0 - eps } else { eps });
        let loss = bce_loss(&p, &y).unwrap();
        assert!(loss < 1e-6 * eps.ln().abs(), "{loss}");

        let p = Tensor::from_vec([1, 1, 1, 3], vec![0.2, 0.7, 0.9]).unwrap();
        let y = Tensor::from_vec([1, 1, 1, 3], vec![1.0, 0.0, 0.25]).unwrap();
        let flip = |t: &Tensor| t.map(|v| 1.0 - v);
        let l1 = bce_loss(&p, &y).unwrap();
        let l2 = bce_loss(&flip(&p), &flip(&y)).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
    }
}
