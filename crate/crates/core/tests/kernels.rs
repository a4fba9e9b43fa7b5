mod common;

use cenet::gradcheck::{finite_diff_check, DEFAULT_STEP};
use cenet::ops::{self, Activation, ConvSpec, Mode, PoolKind, RunningStats, BN_EPS};
use cenet::tape::{Tape, Var};
use cenet::tensor::Tensor;
use cenet::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn conv_matches_direct_loops_on_100_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (x, w, b, spec) = common::random_conv_case(&mut rng);
        let got = ops::conv2d(&x, &w, Some(&b), &spec).unwrap();
        let want = common::naive_conv(&x, &w, Some(&b), &spec);
        assert_eq!(got.shape(), want.shape());
        worst = worst.max(got.max_abs_diff(&want));
    }
    assert!(worst <= 1e-12, "max abs diff {worst:e}");
}

#[test]
fn depthwise_2x4x6x6_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = ConvSpec::depthwise(4, 3, 1);
    let x = Tensor::uniform([2, 4, 6, 6], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
    let got = ops::conv2d(&x, &w, None, &spec).unwrap();
    assert!(got.max_abs_diff(&common::naive_conv(&x, &w, None, &spec)) <= 1e-12);
}

#[test]
fn conv_errors_name_the_dimension() {
    let spec = ConvSpec::standard(3, 4, 3, 1);
    let x = Tensor::zeros([1, 2, 5, 5]);
    let w = Tensor::zeros(spec.weight_shape());
    let msg = ops::conv2d(&x, &w, None, &spec).unwrap_err().to_string();
    assert!(msg.contains("channel"), "{msg}");
    let bad = ConvSpec {
        groups: 2,
        ..ConvSpec::standard(3, 4, 3, 1)
    };
    assert!(bad.validate().is_err());
}

#[test]
fn gelu_of_one_matches_series() {
    let v = Activation::Gelu.apply(1.0);
    assert!((v - common::gelu_ref(1.0)).abs() < 1e-15);
    assert!((v - 0.841_344_7).abs() < 1e-7);
    for x in [-3.0, -0.5, 0.25, 2.0] {
        assert!((Activation::Gelu.apply(x) - common::gelu_ref(x)).abs() < 1e-14);
    }
}

#[test]
fn elementwise_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::uniform([1, 2, 2, 2], -1.0, 1.0, &mut rng);
    let ones = Tensor::ones(x.shape());
    assert_eq!(ops::elementwise(&x, &ones, ops::Elementwise::Mul).unwrap(), x);
    let scaled = ops::elementwise(&x, &Tensor::channel_vector(&[0.5, 2.0]), ops::Elementwise::Mul).unwrap();
    for i in 0..4 {
        assert_eq!(scaled.data()[i], 0.5 * x.data()[i]);
        assert_eq!(scaled.data()[4 + i], 2.0 * x.data()[4 + i]);
    }
    let zero = ops::elementwise(&x, &ops::negate(&x), ops::Elementwise::Add).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
    assert!(ops::elementwise(&x, &Tensor::zeros([1, 2, 2, 1]), ops::Elementwise::Add).is_err());
}

#[test]
fn batch_norm_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::uniform([4, 2, 3, 3], -2.0, 5.0, &mut rng);
    let mut stats = RunningStats::new(2);
    let y = ops::batch_norm(&x, &[1.0, 1.0], &[0.0, 0.0], &mut stats, Mode::Train).unwrap();
    for c in 0..2 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| (0..9).map(move |i| (n, i)))
            .map(|(n, i)| y.at(n, c, i / 3, i % 3))
            .collect();
        let xin: Vec<f64> = (0..4)
            .flat_map(|n| (0..9).map(move |i| (n, i)))
            .map(|(n, i)| x.at(n, c, i / 3, i % 3))
            .collect();
        let mean = vals.iter().sum::<f64>() / 36.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 36.0;
        let xm = xin.iter().sum::<f64>() / 36.0;
        let xv = xin.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / 36.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - xv / (xv + BN_EPS)).abs() < 1e-6);
        assert!((stats.mean[c] - 0.1 * xm).abs() < 1e-12);
        assert!((stats.var[c] - (0.9 + 0.1 * xv)).abs() < 1e-12);
    }

    let constant = Tensor::full([2, 2, 2, 2], 3.0);
    let y = ops::batch_norm(&constant, &[2.0, 2.0], &[0.25, -1.0], &mut RunningStats::new(2), Mode::Train).unwrap();
    for n in 0..2 {
        for i in 0..4 {
            assert_eq!(y.at(n, 0, i / 2, i % 2), 0.25);
            assert_eq!(y.at(n, 1, i / 2, i % 2), -1.0);
        }
    }

    // Eval before any training step uses mean 0, variance 1.
    let y = ops::batch_norm(&constant, &[1.0, 1.0], &[0.0, 0.0], &mut RunningStats::new(2), Mode::Eval).unwrap();
    assert!((y.data()[0] - 3.0 / (1.0 + BN_EPS).sqrt()).abs() < 1e-15);
}

#[test]
fn pool_and_split_errors() {
    let x = Tensor::zeros([1, 6, 4, 4]);
    assert!(matches!(ops::channel_split4(&x), Err(Error::Divisibility { channels: 6, .. })));
    assert!(ops::pool(&x, PoolKind::WindowMax, 8, 8).is_err());
    assert!(ops::pool(&x, PoolKind::WindowMax, 2, 1).is_err());
    assert!(ops::upsample_to(&x, 2, 8).is_err());
}

/// Distinct values spaced 0.01 apart, none near zero, in random order.
fn separated(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * 0.01).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).unwrap()
}

fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::uniform(t.value(y).shape(), -1.0, 1.0, &mut rng);
    let r = t.constant(r);
    let p = t.mul(y, r).unwrap();
    t.sum(p)
}

type Build = Box<dyn Fn(&mut Tape, Var) -> cenet::Result<Var>>;

fn differentiable_ops(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Build)> {
    let mut convs: Vec<(&'static str, Build)> = Vec::new();
    for (name, spec) in [
        ("conv standard", ConvSpec::standard(4, 3, 3, 1)),
        ("conv strided", ConvSpec::standard(4, 2, 3, 2)),
        ("conv depthwise", ConvSpec::depthwise(4, 3, 1)),
        ("conv pointwise", ConvSpec::pointwise(4, 5)),
    ] {
        let w = Tensor::uniform(spec.weight_shape(), -1.0, 1.0, rng);
        let b = Tensor::uniform([1, spec.out_channels, 1, 1], -1.0, 1.0, rng);
        convs.push((
            name,
            Box::new(move |t: &mut Tape, x| {
                let w = t.param(w.clone());
                let b = t.param(b.clone());
                t.conv2d(x, w, Some(b), spec)
            }),
        ));
    }
    let gamma = Tensor::uniform([1, 4, 1, 1], 0.5, 1.5, rng);
    let beta = Tensor::uniform([1, 4, 1, 1], -0.5, 0.5, rng);
    let mean: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let var: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..1.5)).collect();
    let chan = Tensor::uniform([2, 4, 1, 1], -1.0, 1.0, rng);
    let (g2, b2) = (gamma.clone(), beta.clone());
    let mut all: Vec<(&'static str, Build)> = vec![
        ("global avg", Box::new(|t: &mut Tape, x| Ok(t.global_avg(x)))),
        ("global max", Box::new(|t: &mut Tape, x| Ok(t.global_max(x)))),
        ("window max 2", Box::new(|t: &mut Tape, x| t.window_max(x, 2))),
        ("window max 4", Box::new(|t: &mut Tape, x| t.window_max(x, 4))),
        ("upsample", Box::new(|t: &mut Tape, x| t.upsample_to(x, 11, 13))),
        ("relu", Box::new(|t: &mut Tape, x| Ok(t.activation(x, Activation::Relu)))),
        ("gelu", Box::new(|t: &mut Tape, x| Ok(t.activation(x, Activation::Gelu)))),
        ("sigmoid", Box::new(|t: &mut Tape, x| Ok(t.activation(x, Activation::Sigmoid)))),
        ("silu", Box::new(|t: &mut Tape, x| Ok(t.activation(x, Activation::Silu)))),
        (
            "split and concat",
            Box::new(|t: &mut Tape, x| {
                let [a, b, c, d] = t.channel_split4(x)?;
                t.channel_concat(&[b, d, a, c])
            }),
        ),
        ("mul self", Box::new(|t: &mut Tape, x| t.mul(x, x))),
        (
            "channel broadcast",
            Box::new(move |t: &mut Tape, x| {
                let c = t.param(chan.clone());
                let m = t.mul(x, c)?;
                t.add(m, c)
            }),
        ),
        (
            "batch norm eval",
            Box::new(move |t: &mut Tape, x| {
                let (g, b) = (t.param(gamma.clone()), t.param(beta.clone()));
                Ok(t.batch_norm(x, g, b, Some((&mean, &var)))?.0)
            }),
        ),
        (
            "batch norm train",
            Box::new(move |t: &mut Tape, x| {
                let (g, b) = (t.param(g2.clone()), t.param(b2.clone()));
                Ok(t.batch_norm(x, g, b, None)?.0)
            }),
        ),
    ];
    all.extend(convs);
    all
}

#[test]
fn every_op_passes_finite_differences_on_20_seeds() {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, f) in differentiable_ops(&mut rng) {
            let x = separated([2, 4, 5, 7], &mut rng);
            let err = finite_diff_check(
                |t, v| {
                    let y = f(t, v)?;
                    Ok(weighted_sum(t, y, seed))
                },
                &x,
                DEFAULT_STEP,
            )
            .unwrap();
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(slot) => slot.1 = slot.1.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    for (name, err) in &worst {
        println!("{name}: {err:.3e}");
        assert!(*err < 1e-4, "{name}: {err:e}");
    }
}

#[test]
fn cross_entropy_passes_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::uniform([4, 3, 1, 1], -3.0, 3.0, &mut rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let err = finite_diff_check(|t, v| t.cross_entropy(v, &labels), &logits, DEFAULT_STEP).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn outputs_stay_finite_under_extreme_inputs() {
    let x = Tensor::from_vec([1, 4, 1, 2], vec![-800.0, 800.0, -40.0, 40.0, 0.0, 1e-300, -1e-300, 700.0]).unwrap();
    for kind in [Activation::Relu, Activation::Gelu, Activation::Sigmoid, Activation::Silu] {
        assert!(ops::activation(&x, kind).is_finite(), "{kind:?}");
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let y = t.activation(v, kind);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.wrt(v).unwrap().iter().all(|d| d.is_finite()), "{kind:?}");
    }
}

fn shape_strategy() -> impl Strategy<Value = [usize; 4]> {
    (1usize..=3, 1usize..=4, 1usize..=8, 1usize..=8).prop_map(|(n, c, h, w)| [n, c, h, w])
}

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    (shape_strategy(), any::<u64>()).prop_map(|(shape, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape, -5.0, 5.0, &mut rng)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn conv_oracle_property(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, w, b, spec) = common::random_conv_case(&mut rng);
        let got = ops::conv2d(&x, &w, Some(&b), &spec).unwrap();
        prop_assert!(got.max_abs_diff(&common::naive_conv(&x, &w, Some(&b), &spec)) <= 1e-12);
    }

    #[test]
    fn split_concat_round_trip(q in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform([2, 4 * q, 3, 2], -1.0, 1.0, &mut rng);
        let parts = ops::channel_split4(&x).unwrap();
        for p in &parts {
            prop_assert_eq!(p.channels(), q);
        }
        prop_assert_eq!(ops::channel_concat(&parts).unwrap(), x);
    }

    #[test]
    fn global_pool_bounds(x in tensor_strategy()) {
        let avg = ops::pool(&x, PoolKind::GlobalAvg, 1, 1).unwrap();
        let max = ops::pool(&x, PoolKind::GlobalMax, 1, 1).unwrap();
        let [n, c, h, w] = x.shape();
        for ni in 0..n {
            for ci in 0..c {
                let vals: Vec<f64> = (0..h * w).map(|i| x.at(ni, ci, i / w, i % w)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let a = avg.at(ni, ci, 0, 0);
                prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
                prop_assert_eq!(max.at(ni, ci, 0, 0), hi);
            }
        }
    }

    #[test]
    fn window_max_and_upsample_match_oracles(x in tensor_strategy(), k in 1usize..4, th in 0usize..5, tw in 0usize..5) {
        let [_, _, h, w] = x.shape();
        if k <= h.max(w) {
            let got = ops::pool(&x, PoolKind::WindowMax, k, k).unwrap();
            prop_assert_eq!(got, common::max_pool_ref(&x, k));
        }
        let up = ops::upsample_to(&x, h + th, w + tw).unwrap();
        prop_assert_eq!(up, common::upsample_ref(&x, h + th, w + tw));
    }

    #[test]
    fn upsample_then_window_max_is_identity(x in tensor_strategy(), k in 1usize..4) {
        let x = x.map(f64::abs);
        let up = ops::upsample_nearest(&x, k).unwrap();
        prop_assert_eq!(ops::pool(&up, PoolKind::WindowMax, k, k).unwrap(), x);
    }

    #[test]
    fn activations_match_closed_forms(v in -5.0f64..5.0) {
        prop_assert!((Activation::Gelu.apply(v) - common::gelu_ref(v)).abs() < 1e-10);
        prop_assert!((Activation::Sigmoid.apply(v) - common::sigmoid(v)).abs() < 1e-15);
        prop_assert!((Activation::Silu.apply(v) - v * common::sigmoid(v)).abs() < 1e-13);
        prop_assert_eq!(Activation::Relu.apply(v), v.max(0.0));
    }
}
