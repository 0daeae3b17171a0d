//! Kernel oracles: the optimized convolution against the direct loop,
//! pooling against brute-force window enumeration, and depthwise
//! convolution against an equivalent dense convolution.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{config_err, Result};
use crate::kernels::{self, ConvPath};
use crate::param::param_rng;
use crate::tensor::Tensor;

pub const CONV_TOLERANCE: f64 = 1e-10;
pub const AVG_POOL_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub name: &'static str,
    pub cases: usize,
    pub max_abs_err: f64,
    pub tolerance: f64,
}

impl OracleRow {
    pub fn passed(&self) -> bool {
        self.cases > 0 && self.max_abs_err <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub seed: u64,
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(OracleRow::passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "oracle seed={}", self.seed);
        let _ = writeln!(s, "{:<26} {:>6} {:>12} {:>10}  status", "check", "cases", "max_abs_err", "tolerance");
        for r in &self.rows {
            let status = if r.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{:<26} {:>6} {:>12.3e} {:>10.0e}  {status}", r.name, r.cases, r.max_abs_err, r.tolerance);
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

fn random_tensor(rng: &mut impl Rng, dims: [usize; 4]) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

/// Small integers, so that max-pool windows contain ties.
fn quantized_tensor(rng: &mut impl Rng, dims: [usize; 4]) -> Tensor {
    Tensor::from_fn(dims, |_| f64::from(rng.gen_range(0u8..4)))
}

/// Absolute difference, with any disagreement in finiteness counted as infinite.
fn diff(a: &Tensor, b: &Tensor) -> f64 {
    if a.dims() != b.dims() {
        return f64::INFINITY;
    }
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| if x.is_finite() && y.is_finite() { (x - y).abs() } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

/// Random geometries; forward and all three gradients, naive vs. optimized.
pub fn conv_oracle(cases: usize, seed: u64) -> Result<[OracleRow; 2]> {
    let mut rng = param_rng(seed, "oracle.conv");
    let mut fwd = 0.0f64;
    let mut bwd = 0.0f64;
    for _ in 0..cases {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..=3);
        let padding = rng.gen_range(0..=k / 2);
        let h = rng.gen_range(k.max(1)..=12);
        let w = rng.gen_range(k.max(1)..=12);
        let (n, cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=6));
        let x = random_tensor(&mut rng, [n, cin, h, w]);
        let kern = random_tensor(&mut rng, [cout, cin, k, k]);
        let bias = random_tensor(&mut rng, [cout, 1, 1, 1]);
        let naive = kernels::conv2d(&x, &kern, Some(&bias), stride, padding, ConvPath::Naive)?;
        let fast = kernels::conv2d(&x, &kern, Some(&bias), stride, padding, ConvPath::Optimized)?;
        fwd = fwd.max(diff(&naive, &fast));
        let g = random_tensor(&mut rng, naive.dims());
        let gn = kernels::conv2d_backward(&x, &kern, &g, stride, padding, ConvPath::Naive, true)?;
        let go = kernels::conv2d_backward(&x, &kern, &g, stride, padding, ConvPath::Optimized, true)?;
        let gi = match (&gn.input, &go.input) {
            (Some(a), Some(b)) => diff(a, b),
            _ => f64::INFINITY,
        };
        bwd = bwd.max(gi).max(diff(&gn.kernel, &go.kernel)).max(diff(&gn.bias, &go.bias));
    }
    Ok([
        OracleRow { name: "conv2d forward", cases, max_abs_err: fwd, tolerance: CONV_TOLERANCE },
        OracleRow { name: "conv2d backward", cases, max_abs_err: bwd, tolerance: CONV_TOLERANCE },
    ])
}

/// Whether input index `r` belongs to output cell `a`, decided by interval
/// overlap of `[r, r+1)` with `[a·len/out, (a+1)·len/out)` in exact integers.
fn member(r: usize, a: usize, len: usize, out: usize) -> bool {
    (r + 1) * out > a * len && r * out < (a + 1) * len
}

/// Brute-force pooling: every output cell scans the whole plane.
fn brute_pool(x: &Tensor, oh: usize, ow: usize) -> (Tensor, Tensor, Vec<usize>) {
    let [n, c, h, w] = x.dims();
    let mut avg = Tensor::zeros([n, c, oh, ow]);
    let mut max = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for a in 0..oh {
                for e in 0..ow {
                    let (mut sum, mut count) = (0.0, 0usize);
                    let mut best: Option<(f64, usize)> = None;
                    for y in 0..h {
                        for xx in 0..w {
                            if member(y, a, h, oh) && member(xx, e, w, ow) {
                                let v = x.get([b, ch, y, xx]);
                                sum += v;
                                count += 1;
                                if best.is_none_or(|(m, _)| v > m) {
                                    best = Some((v, x.offset([b, ch, y, xx])));
                                }
                            }
                        }
                    }
                    avg.set([b, ch, a, e], sum / count as f64);
                    let (m, i) = best.expect("windows are non-empty");
                    max.set([b, ch, a, e], m);
                    argmax.push(i);
                }
            }
        }
    }
    (avg, max, argmax)
}

/// Adaptive pooling vs. [`brute_pool`]; max must agree bitwise, argmax included.
pub fn pool_oracle(cases: usize, seed: u64) -> Result<[OracleRow; 3]> {
    let mut rng = param_rng(seed, "oracle.pool");
    let mut avg_err = 0.0f64;
    let mut max_err = 0.0f64;
    let mut coverage_err = 0.0f64;
    for case in 0..cases {
        let (h, w) = (rng.gen_range(1..=13), rng.gen_range(1..=13));
        let (oh, ow) = (rng.gen_range(1..=h), rng.gen_range(1..=w));
        let dims = [rng.gen_range(1..=2), rng.gen_range(1..=3), h, w];
        let x = if case % 2 == 0 { random_tensor(&mut rng, dims) } else { quantized_tensor(&mut rng, dims) };
        let (avg_ref, max_ref, argmax_ref) = brute_pool(&x, oh, ow);
        avg_err = avg_err.max(diff(&kernels::adaptive_avg_pool(&x, oh, ow)?, &avg_ref));
        let got = kernels::adaptive_max_pool(&x, oh, ow)?;
        if !got.output.bit_eq(&max_ref) || got.argmax != argmax_ref {
            max_err = max_err.max(diff(&got.output, &max_ref).max(f64::MIN_POSITIVE));
        }
        for (len, out) in [(h, oh), (w, ow)] {
            for a in 0..out {
                let (s, e) = kernels::adaptive_window(a, len, out);
                let brute: Vec<usize> = (0..len).filter(|&r| member(r, a, len, out)).collect();
                if brute.first() != Some(&s) || brute.last() != Some(&(e - 1)) || brute.len() != e - s {
                    coverage_err = 1.0;
                }
            }
            if (0..len).any(|r| !(0..out).any(|a| member(r, a, len, out))) {
                coverage_err = 1.0;
            }
        }
    }
    Ok([
        OracleRow { name: "adaptive_avg_pool", cases, max_abs_err: avg_err, tolerance: AVG_POOL_TOLERANCE },
        OracleRow { name: "adaptive_max_pool", cases, max_abs_err: max_err, tolerance: 0.0 },
        OracleRow { name: "adaptive_window coverage", cases, max_abs_err: coverage_err, tolerance: 0.0 },
    ])
}

/// Depthwise dilated convolution vs. a dense convolution whose kernel is
/// block-diagonal over channels with the dilation spelled out as zero taps.
pub fn depthwise_oracle(cases: usize, seed: u64) -> Result<OracleRow> {
    let mut rng = param_rng(seed, "oracle.depthwise");
    let mut err = 0.0f64;
    for _ in 0..cases {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let dilation = rng.gen_range(1..=3);
        let padding = dilation * (k - 1) / 2;
        let c = rng.gen_range(1..=4);
        let (h, w) = (rng.gen_range(1..=10), rng.gen_range(1..=10));
        let n = rng.gen_range(1..=2);
        let x = random_tensor(&mut rng, [n, c, h, w]);
        let kern = random_tensor(&mut rng, [c, 1, k, k]);
        let span = dilation * (k - 1) + 1;
        let dense = Tensor::from_fn([c, c, span, span], |[o, i, y, xx]| {
            if o == i && y % dilation == 0 && xx % dilation == 0 {
                kern.get([o, 0, y / dilation, xx / dilation])
            } else {
                0.0
            }
        });
        let want = kernels::conv2d(&x, &dense, None, 1, padding, ConvPath::Naive)?;
        err = err.max(diff(&kernels::depthwise_conv2d(&x, &kern, dilation, padding)?, &want));
    }
    Ok(OracleRow { name: "depthwise_conv2d", cases, max_abs_err: err, tolerance: CONV_TOLERANCE })
}

pub fn run_oracle(cases: usize, seed: u64) -> Result<OracleReport> {
    if cases == 0 {
        return config_err("oracle: case count must be positive");
    }
    let mut rows = Vec::with_capacity(6);
    rows.extend(conv_oracle(cases, seed)?);
    rows.extend(pool_oracle(cases, seed)?);
    rows.push(depthwise_oracle(cases, seed)?);
    Ok(OracleReport { seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_matches_window_formula_on_examples() {
        // len 5 → out 3: windows [0,2), [1,4), [3,5)
        let cells: Vec<Vec<usize>> = (0..3).map(|a| (0..5).filter(|&r| member(r, a, 5, 3)).collect()).collect();
        assert_eq!(cells, vec![vec![0, 1], vec![1, 2, 3], vec![3, 4]]);
    }

    #[test]
    fn small_run_passes() {
        let report = run_oracle(10, 7).unwrap();
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn zero_cases_rejected() {
        assert!(run_oracle(0, 0).is_err());
    }
}
