//! Naive vs. optimized convolution timings at the model's layer shapes,
//! plus the full forward pass under each path.
//!
//! Each case is first checked for output equality between the two paths;
//! a mismatch aborts the benchmark. Reported times are medians of the timed
//! repetitions, which follow (and exclude) the warmup repetitions.

use std::hint::black_box;
use std::time::Instant;

use num_traits::Float;
use rand::Rng;
use serde::Serialize;

use crate::error::{config_err, Error, Result};
use crate::harness::metrics::median;
use crate::harness::scene::gen_batch;
use crate::kernels::{conv2d_backward_raw, conv2d_forward_raw, ConvGeometry, ConvPath};
use crate::param::param_rng;
use crate::pyramid::{AblationFlags, LrFpnModel, ModelConfig};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub batch: usize,
    pub reps: usize,
    pub warmup: usize,
    pub dtype: DType,
    pub seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.reps < 10 {
            return config_err(format!("bench: at least 10 timed repetitions required, got {}", self.reps));
        }
        if self.batch == 0 {
            return config_err("bench: batch must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelTiming {
    pub name: String,
    /// `[N, C, H, W]` of the input and `[Cout, Cin, k, k]` of the kernel.
    pub input: [usize; 4],
    pub kernel: [usize; 4],
    pub stride: usize,
    pub padding: usize,
    pub flops: u64,
    /// Largest naive/optimized disagreement over the forward output and all
    /// three gradients, each divided by `max(1, max |naive|)`.
    pub guard_diff: f64,
    pub naive_forward_s: f64,
    pub optimized_forward_s: f64,
    pub naive_backward_s: f64,
    pub optimized_backward_s: f64,
    pub forward_speedup: f64,
    pub backward_speedup: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ForwardTiming {
    pub flags: String,
    pub batch: usize,
    pub max_abs_diff: f64,
    pub naive_s: f64,
    pub optimized_s: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub dtype: DType,
    pub input_size: usize,
    pub batch: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub kernels: Vec<KernelTiming>,
    /// Full-model forward; always evaluated in f64.
    pub forward: ForwardTiming,
    /// Summed naive conv time over summed optimized conv time (forward and
    /// backward of every listed kernel).
    pub speedup: f64,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bench report serializes");
        s.push('\n');
        s
    }
}

/// Median seconds of `reps` timed calls after `warmup` untimed calls.
pub fn time_median(warmup: usize, reps: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut samples)
}

fn ratio(naive: f64, optimized: f64) -> f64 {
    if optimized > 0.0 {
        naive / optimized
    } else {
        0.0
    }
}

/// Every distinct convolution of the model: backbone stages, 1×1 lateral
/// projections, extra layers and the head.
pub fn model_convs(model: &ModelConfig, batch: usize) -> Vec<(String, [usize; 4], [usize; 4], usize, usize)> {
    let s = model.input_size;
    let ch = model.stage_channels;
    let d = model.pyramid_channels;
    let mut v = Vec::new();
    let mut cin = model.input_channels;
    for (k, &c) in ch.iter().enumerate() {
        v.push((format!("backbone.{}", k + 1), [batch, cin, s >> k, s >> k], [c, cin, 3, 3], 2, 1));
        cin = c;
    }
    for k in 1..ch.len() {
        let side = s >> (k + 1);
        v.push((format!("lateral.{}", k + 1), [batch, ch[k], side, side], [d, ch[k], 1, 1], 1, 0));
    }
    let sizes = model.pyramid_sizes();
    v.push(("extra.4".into(), [batch, d, sizes[2], sizes[2]], [d, d, 3, 3], 2, 1));
    v.push(("extra.5".into(), [batch, d, sizes[3], sizes[3]], [d, d, 3, 3], 2, 1));
    v.push(("head".into(), [batch, d, sizes[0], sizes[0]], [1, d, 1, 1], 1, 0));
    v
}

fn bench_conv<T: Float + Send>(
    cfg: &BenchConfig,
    name: String,
    input: [usize; 4],
    kernel: [usize; 4],
    stride: usize,
    padding: usize,
    rng: &mut impl Rng,
    tolerance: f64,
) -> Result<KernelTiming> {
    let geom = ConvGeometry::new(input, kernel, stride, padding)?;
    let cast = |v: f64| T::from(v).expect("finite value fits");
    let gen = |rng: &mut dyn FnMut() -> f64, n: usize| -> Vec<T> { (0..n).map(|_| cast(rng())).collect() };
    let mut draw = || rng.gen_range(-1.0..1.0);
    let x = gen(&mut draw, input.iter().product());
    let k = gen(&mut draw, kernel.iter().product());
    let b = gen(&mut draw, kernel[0]);
    let out_len: usize = geom.output_dims().iter().product();
    let g = gen(&mut draw, out_len);

    let forward = |path| {
        let mut out = vec![T::zero(); out_len];
        conv2d_forward_raw(&geom, &x, &k, Some(&b), &mut out, path);
        out
    };
    let backward = |path| {
        let mut gi = vec![T::zero(); x.len()];
        let mut gk = vec![T::zero(); k.len()];
        let mut gb = vec![T::zero(); b.len()];
        conv2d_backward_raw(&geom, &x, &k, &g, Some(&mut gi), &mut gk, &mut gb, path);
        [gi, gk, gb]
    };

    let max_diff = |a: &[T], b: &[T]| -> f64 {
        a.iter().zip(b).map(|(&p, &q)| (p - q).abs().to_f64().unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
    };
    let scale = |a: &[T]| a.iter().map(|v| v.abs().to_f64().unwrap_or(f64::INFINITY)).fold(1.0, f64::max);
    let (fn_, fo) = (forward(ConvPath::Naive), forward(ConvPath::Optimized));
    let (bn, bo) = (backward(ConvPath::Naive), backward(ConvPath::Optimized));
    let mut diff = max_diff(&fn_, &fo) / scale(&fn_);
    for (p, q) in bn.iter().zip(&bo) {
        diff = diff.max(max_diff(p, q) / scale(p));
    }
    if !(diff <= tolerance) {
        return Err(Error::Verification(format!("bench guard: {name} naive and optimized outputs differ by {diff:e}")));
    }

    let (w, r) = (cfg.warmup, cfg.reps);
    let naive_forward_s = time_median(w, r, || {
        black_box(forward(ConvPath::Naive));
    });
    let optimized_forward_s = time_median(w, r, || {
        black_box(forward(ConvPath::Optimized));
    });
    let naive_backward_s = time_median(w, r, || {
        black_box(backward(ConvPath::Naive));
    });
    let optimized_backward_s = time_median(w, r, || {
        black_box(backward(ConvPath::Optimized));
    });
    Ok(KernelTiming {
        name,
        input,
        kernel,
        stride,
        padding,
        flops: geom.flops(),
        guard_diff: diff,
        naive_forward_s,
        optimized_forward_s,
        naive_backward_s,
        optimized_backward_s,
        forward_speedup: ratio(naive_forward_s, optimized_forward_s),
        backward_speedup: ratio(naive_backward_s, optimized_backward_s),
    })
}

/// Full-model forward on a synthetic batch under each conv path.
fn bench_forward(cfg: &BenchConfig) -> Result<ForwardTiming> {
    let flags = AblationFlags::FULL;
    let mut model = LrFpnModel::new(cfg.model.clone(), flags, cfg.seed)?;
    let mut rng = param_rng(cfg.seed, "bench.scenes");
    let (images, _) = gen_batch(&model.scene_spec(), cfg.batch, &mut rng)?;
    let run = |model: &LrFpnModel| -> Result<Vec<Tensor>> {
        let mut tape = model.tape();
        let pyr = model.forward(&mut tape, &images)?;
        Ok(pyr.levels.iter().map(|&v| tape.value(v).clone()).collect())
    };
    model.conv_path = ConvPath::Naive;
    let naive_out = run(&model)?;
    let naive_s = time_median(cfg.warmup, cfg.reps, || {
        black_box(run(&model).ok());
    });
    model.conv_path = ConvPath::Optimized;
    let opt_out = run(&model)?;
    let optimized_s = time_median(cfg.warmup, cfg.reps, || {
        black_box(run(&model).ok());
    });
    let diff = naive_out.iter().zip(&opt_out).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
    if !(diff <= 1e-10) {
        return Err(Error::Verification(format!("bench guard: full forward paths differ by {diff:e}")));
    }
    Ok(ForwardTiming {
        flags: flags.label(),
        batch: cfg.batch,
        max_abs_diff: diff,
        naive_s,
        optimized_s,
        speedup: ratio(naive_s, optimized_s),
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut rng = param_rng(cfg.seed, "bench.kernels");
    let mut kernels = Vec::new();
    for (name, input, kernel, stride, padding) in model_convs(&cfg.model, cfg.batch) {
        let t = match cfg.dtype {
            DType::F64 => bench_conv::<f64>(cfg, name, input, kernel, stride, padding, &mut rng, 1e-10)?,
            DType::F32 => bench_conv::<f32>(cfg, name, input, kernel, stride, padding, &mut rng, 1e-4)?,
        };
        kernels.push(t);
    }
    let forward = bench_forward(cfg)?;
    let naive: f64 = kernels.iter().map(|k| k.naive_forward_s + k.naive_backward_s).sum();
    let optimized: f64 = kernels.iter().map(|k| k.optimized_forward_s + k.optimized_backward_s).sum();
    Ok(BenchReport {
        dtype: cfg.dtype,
        input_size: cfg.model.input_size,
        batch: cfg.batch,
        reps: cfg.reps,
        warmup: cfg.warmup,
        seed: cfg.seed,
        kernels,
        forward,
        speedup: ratio(naive, optimized),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_calls_are_not_timed() {
        let mut calls = 0;
        let t = time_median(3, 10, || calls += 1);
        assert_eq!(calls, 13);
        assert!(t >= 0.0);
    }

    #[test]
    fn miniature_report_is_complete() {
        for dtype in [DType::F64, DType::F32] {
            let cfg = BenchConfig { model: ModelConfig::miniature(), batch: 1, reps: 10, warmup: 3, dtype, seed: 0 };
            let r = run_bench(&cfg).unwrap();
            assert_eq!(r.kernels.len(), 10);
            assert!(r.speedup >= 0.0 && r.forward.speedup >= 0.0);
            let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
            assert!(json["speedup"].as_f64().is_some());
        }
    }

    #[test]
    fn too_few_reps_rejected() {
        let cfg = BenchConfig { model: ModelConfig::miniature(), batch: 1, reps: 9, warmup: 3, dtype: DType::F64, seed: 0 };
        assert!(run_bench(&cfg).is_err());
    }
}
