use proptest::prelude::*;

use lrfpn::harness::checkpoint::{apply_checkpoint, decode, encode};
use lrfpn::harness::scene::{gen_scene, SceneSpec};
use lrfpn::kernels::{self, ConvPath};
use lrfpn::pyramid::AblationFlags;
use lrfpn::{DType, Param, ParamStore, Tensor};

fn tensor(dims: [usize; 4], seed: u64) -> Tensor {
    // Cheap deterministic fill; proptest supplies the seed.
    let mut s = seed | 1;
    Tensor::from_fn(dims, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 2001) as f64 / 1000.0 - 1.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_input(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4, h in 3usize..9, w in 3usize..9,
        stride in 1usize..3, seed in any::<u64>(), alpha in -2.0f64..2.0,
    ) {
        let k = tensor([cout, cin, 3, 3], seed);
        let a = tensor([n, cin, h, w], seed ^ 1);
        let b = tensor([n, cin, h, w], seed ^ 2);
        for path in [ConvPath::Naive, ConvPath::Optimized] {
            let mix = a.zip_map(&b, |x, y| alpha * x + y).unwrap();
            let lhs = kernels::conv2d(&mix, &k, None, stride, 1, path).unwrap();
            let ca = kernels::conv2d(&a, &k, None, stride, 1, path).unwrap();
            let cb = kernels::conv2d(&b, &k, None, stride, 1, path).unwrap();
            let rhs = ca.zip_map(&cb, |x, y| alpha * x + y).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn depthwise_is_linear_in_kernel(c in 1usize..4, h in 1usize..8, dil in 1usize..3, seed in any::<u64>()) {
        let x = tensor([1, c, h, h], seed);
        let k1 = tensor([c, 1, 3, 3], seed ^ 3);
        let k2 = tensor([c, 1, 3, 3], seed ^ 4);
        let sum = kernels::add(&k1, &k2).unwrap();
        let lhs = kernels::depthwise_conv2d(&x, &sum, dil, dil).unwrap();
        let rhs = kernels::add(
            &kernels::depthwise_conv2d(&x, &k1, dil, dil).unwrap(),
            &kernels::depthwise_conv2d(&x, &k2, dil, dil).unwrap(),
        ).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn sigmoid_is_point_symmetric(x in -30.0f64..30.0) {
        let s = kernels::sigmoid_scalar(x) + kernels::sigmoid_scalar(-x);
        prop_assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_windows_cover_every_index(len in 1usize..40, out_frac in 0.0f64..1.0) {
        let out = 1 + ((len - 1) as f64 * out_frac) as usize;
        let mut covered = vec![0usize; len];
        let mut prev = (0, 0);
        for a in 0..out {
            let (s, e) = kernels::adaptive_window(a, len, out);
            prop_assert!(s < e && e <= len);
            prop_assert!(a == 0 || (s >= prev.0 && e >= prev.1));
            covered[s..e].iter_mut().for_each(|c| *c += 1);
            prev = (s, e);
        }
        prop_assert!(covered.iter().all(|&c| c >= 1 && c <= 2));
        prop_assert_eq!(kernels::adaptive_window(0, len, out).0, 0);
        prop_assert_eq!(kernels::adaptive_window(out - 1, len, out).1, len);
    }

    #[test]
    fn avg_pool_preserves_mean_when_divisible(k in 1usize..4, o in 1usize..5, seed in any::<u64>()) {
        let x = tensor([1, 2, k * o, k * o], seed);
        let pooled = kernels::adaptive_avg_pool(&x, o, o).unwrap();
        let mean_in = x.sum() / x.len() as f64;
        let mean_out = pooled.sum() / pooled.len() as f64;
        prop_assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn max_pool_dominates_avg_pool(h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
        let x = tensor([1, 1, h, w], seed);
        let (oh, ow) = (1 + h / 2, 1 + w / 3);
        let avg = kernels::adaptive_avg_pool(&x, oh, ow).unwrap();
        let max = kernels::adaptive_max_pool(&x, oh, ow).unwrap().output;
        prop_assert!(avg.data().iter().zip(max.data()).all(|(a, m)| a <= m));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..5), 1..6), seed in any::<u64>()) {
        let mut store = ParamStore::new();
        for (i, shape) in shapes.iter().enumerate() {
            let dims = lrfpn::param::padded_dims(shape);
            store.insert(Param::new(format!("p{i}"), shape.clone(), tensor(dims, seed ^ i as u64)).unwrap()).unwrap();
        }
        let bytes = encode(&store, DType::F64);
        let mut copy = store.clone();
        copy.iter_mut().for_each(|p| p.value.fill(0.0));
        apply_checkpoint(&mut copy, &decode(&bytes).unwrap()).unwrap();
        prop_assert_eq!(encode(&copy, DType::F64), bytes);
        for ((_, a), (_, b)) in store.iter().zip(copy.iter()) {
            prop_assert!(a.value.bit_eq(&b.value));
        }
    }

    #[test]
    fn flag_tokens_round_trip(bits in 0u8..32) {
        let mut toks = Vec::new();
        for (bit, t) in [(1, "sp"), (2, "pp"), (4, "li"), (8, "ni"), (16, "ci")] {
            if bits & bit != 0 {
                toks.push(t);
            }
        }
        let f = AblationFlags::from_tokens(&toks.join(",")).unwrap();
        prop_assert_eq!(f.bits(), bits);
        prop_assert_eq!(AblationFlags::parse(&f.tokens().replace('+', ",")).unwrap().bits(), bits);
        prop_assert_eq!(AblationFlags::parse(&f.label()).unwrap().bits(), bits);
    }

    #[test]
    fn scenes_are_deterministic_and_in_bounds(seed in any::<u64>()) {
        let spec = SceneSpec::default();
        let a = gen_scene(&spec, seed).unwrap();
        let b = gen_scene(&spec, seed).unwrap();
        prop_assert!(a.image.bit_eq(&b.image) && a.heatmap.bit_eq(&b.heatmap));
        for o in &a.objects {
            prop_assert!(o.y + o.size <= spec.image_size && o.x + o.size <= spec.image_size);
        }
        prop_assert!(a.heatmap.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
