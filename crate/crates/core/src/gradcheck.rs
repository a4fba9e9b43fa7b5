//! Central finite-difference verification of recorded gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionKind, CeAttention, SeAttention, DEFAULT_SE_RATIO};
use crate::backbone::{build_network, Block, BlockKind, FusedMbConv, MbConv, NetworkConfig, StageSpec};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv};
use crate::ops::{Activation, ConvSpec, Mode};
use crate::params::{Ctx, ParamId, ParamStore};
use crate::safm::{Safm, SafmMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;
/// Step for whole-module checks. Deep stacks of max pools over large maps
/// put kinks within 1e-3 of almost any point; 1e-5 rarely crosses one and
/// keeps roundoff near 1e-11.
pub const SUITE_STEP: f64 = 1e-5;

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_scalar<F>(f: &F, x: Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).sum())
}

/// Max relative error between the tape gradient of the scalar `f(x)` and
/// central differences, over every coordinate of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, step, &coords)
}

/// As [`finite_diff_check`], restricted to the listed coordinates.
pub fn finite_diff_check_at<F>(f: F, x: &Tensor, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(v).expect("input is a parameter leaf");

    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval_scalar(&f, plus)? - eval_scalar(&f, minus)?) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Finite-difference check of parameter gradients for a loss built from a
/// [`ParamStore`]. `samples` lists `(parameter, flat index)` coordinates.
pub fn check_param_grads<F>(
    store: &ParamStore,
    mode: Mode,
    samples: &[(ParamId, usize)],
    step: f64,
    loss_fn: F,
) -> Result<f64>
where
    F: Fn(&mut Ctx) -> Result<Var>,
{
    let mut ctx = Ctx::new(store, mode);
    let loss = loss_fn(&mut ctx)?;
    let grads = ctx.backward(loss)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut ctx = Ctx::new(s, mode);
        let loss = loss_fn(&mut ctx)?;
        Ok(ctx.tape.value(loss).sum())
    };
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for &(id, i) in samples {
        let analytic = grads.get(id).map_or(0.0, |g| g[i]);
        let orig = probe.get(id).data()[i];
        probe.get_mut(id).data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.get_mut(id).data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.get_mut(id).data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic, (up - down) / (2.0 * step)));
    }
    Ok(worst)
}


pub const TOLERANCE: f64 = 1e-4;
/// Looser bound for paths through training-mode batch norm.
pub const BN_TRAIN_TOLERANCE: f64 = 1e-3;

/// Which group of checks [`run_suite`] executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    Ce,
    Safm,
    Backbone,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "ce" => Ok(Self::Ce),
            "safm" => Ok(Self::Safm),
            "backbone" => Ok(Self::Backbone),
            other => Err(Error::Config(format!("unknown gradcheck module {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

/// Up to `budget` coordinates spread over every trainable entry.
pub fn sample_coords(store: &ParamStore, budget: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trainable: Vec<ParamId> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    if trainable.is_empty() {
        return Vec::new();
    }
    let per = budget.div_ceil(trainable.len()).max(1);
    let mut out = Vec::new();
    for id in trainable {
        let n = store.get(id).len();
        if n <= per {
            out.extend((0..n).map(|i| (id, i)));
        } else {
            out.extend(rand::seq::index::sample(&mut rng, n, per).into_iter().map(|i| (id, i)));
        }
    }
    out
}

struct Case<'a> {
    store: ParamStore,
    input: ParamId,
    weights: Tensor,
    forward: Box<dyn Fn(&mut Ctx, Var) -> Result<Var> + 'a>,
}

impl<'a> Case<'a> {
    fn new<R: Rng>(
        mut store: ParamStore,
        shape: [usize; 4],
        rng: &mut R,
        forward: impl Fn(&mut Ctx, Var) -> Result<Var> + 'a,
    ) -> Result<Self> {
        let input = store.add("input", Tensor::uniform(shape, -1.0, 1.0, rng), true)?;
        Ok(Self {
            store,
            input,
            weights: Tensor::zeros([1, 1, 1, 1]),
            forward: Box::new(forward),
        })
    }

    /// Error of `Σ R ⊙ f(x)` for a fixed random `R`.
    fn run(mut self, mode: Mode, budget: usize, seed: u64) -> Result<f64> {
        let mut ctx = Ctx::new(&self.store, mode);
        let x = ctx.var(self.input);
        let y = (self.forward)(&mut ctx, x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        self.weights = Tensor::uniform(ctx.tape.value(y).shape(), -1.0, 1.0, &mut rng);
        let coords = sample_coords(&self.store, budget, seed);
        let weights = &self.weights;
        let forward = &self.forward;
        let input = self.input;
        check_param_grads(&self.store, mode, &coords, SUITE_STEP, |ctx| {
            let x = ctx.var(input);
            let y = forward(ctx, x)?;
            let r = ctx.tape.constant(weights.clone());
            let p = ctx.tape.mul(y, r)?;
            Ok(ctx.tape.sum(p))
        })
    }
}

fn push(out: &mut Vec<CheckResult>, name: &str, tolerance: f64, max_error: f64) {
    log::info!("gradcheck {name}: {max_error:.3e}");
    out.push(CheckResult {
        name: name.to_string(),
        max_error,
        tolerance,
    });
}

fn op_checks(out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let convs = [
        ("conv2d standard", ConvSpec::standard(3, 4, 3, 1)),
        ("conv2d strided", ConvSpec::standard(2, 3, 3, 2)),
        ("conv2d depthwise", ConvSpec::depthwise(4, 3, 1)),
        ("conv2d pointwise", ConvSpec::pointwise(4, 3)),
        (
            "conv2d grouped",
            ConvSpec {
                groups: 2,
                ..ConvSpec::standard(4, 6, 3, 1)
            },
        ),
    ];
    for (i, (name, spec)) in convs.into_iter().enumerate() {
        let mut store = ParamStore::new();
        let conv = Conv::new(&mut store, "conv", spec, true, &mut rng)?;
        store.fill_where(|n| n == "conv.b", 0.1);
        let case = Case::new(store, [2, spec.in_channels, 5, 6], &mut rng, move |ctx, x| conv.forward(ctx, x))?;
        push(out, name, TOLERANCE, case.run(Mode::Eval, usize::MAX, i as u64)?);
    }

    type Unary = fn(&mut Tape, Var) -> Result<Var>;
    let unary: [(&str, Unary); 9] = [
        ("global average pool", |t, x| Ok(t.global_avg(x))),
        ("global max pool", |t, x| Ok(t.global_max(x))),
        ("window max pool", |t, x| t.window_max(x, 2)),
        ("upsample", |t, x| t.upsample_to(x, 7, 9)),
        ("relu", |t, x| Ok(t.activation(x, Activation::Relu))),
        ("gelu", |t, x| Ok(t.activation(x, Activation::Gelu))),
        ("sigmoid", |t, x| Ok(t.activation(x, Activation::Sigmoid))),
        ("silu", |t, x| Ok(t.activation(x, Activation::Silu))),
        ("channel split and concat", |t, x| {
            let [a, b, c, d] = t.channel_split4(x)?;
            t.channel_concat(&[d, b, c, a])
        }),
    ];
    for (i, (name, f)) in unary.into_iter().enumerate() {
        // Distinct values on a 0.01 grid: no pooling ties, nothing at the ReLU kink.
        let mut grid: Vec<f64> = (0..240).map(|i| (i as f64 - 119.5) * 0.01).collect();
        grid.shuffle(&mut rng);
        let x = Tensor::from_vec([2, 4, 5, 6], grid)?;
        let mut r = ChaCha8Rng::seed_from_u64(i as u64);
        let weights = Tensor::uniform(
            {
                let mut t = Tape::new();
                let v = t.constant(x.clone());
                let y = f(&mut t, v)?;
                t.value(y).shape()
            },
            -1.0,
            1.0,
            &mut r,
        );
        let err = finite_diff_check(
            |t, v| {
                let y = f(t, v)?;
                let w = t.constant(weights.clone());
                let p = t.mul(y, w)?;
                Ok(t.sum(p))
            },
            &x,
            SUITE_STEP,
        )?;
        push(out, name, TOLERANCE, err);
    }

    let labels = [2usize, 0, 1];
    let logits = Tensor::uniform([3, 4, 1, 1], -2.0, 2.0, &mut rng);
    let err = finite_diff_check(|t, v| t.cross_entropy(v, &labels), &logits, SUITE_STEP)?;
    push(out, "cross entropy", TOLERANCE, err);

    for (mode, name, tol) in [
        (Mode::Eval, "batch norm eval", TOLERANCE),
        (Mode::Train, "batch norm train", BN_TRAIN_TOLERANCE),
    ] {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3)?;
        let mut pr = ChaCha8Rng::seed_from_u64(5);
        for (n, lo, hi) in [("bn.gamma", 0.5, 1.5), ("bn.beta", -0.5, 0.5), ("bn.running_mean", -0.2, 0.2), ("bn.running_var", 0.5, 2.0)] {
            let id = store.id(n).expect("batch norm entry");
            *store.get_mut(id) = Tensor::uniform([1, 3, 1, 1], lo, hi, &mut pr);
        }
        let case = Case::new(store, [3, 3, 3, 4], &mut rng, move |ctx, x| bn.forward(ctx, x))?;
        push(out, name, tol, case.run(mode, usize::MAX, 17)?);
    }
    Ok(())
}

fn ce_checks(out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for (shared, name) in [(true, "ce attention"), (false, "ce attention unshared mlp")] {
        let mut store = ParamStore::new();
        let ce = CeAttention::new(&mut store, "blk", 8, shared, &mut rng)?;
        let case = Case::new(store, [2, 8, 5, 5], &mut rng, move |ctx, x| ce.forward(ctx, x))?;
        push(out, name, TOLERANCE, case.run(Mode::Eval, 400, 3)?);
    }
    let mut store = ParamStore::new();
    let se = SeAttention::new(&mut store, "blk", 8, DEFAULT_SE_RATIO, &mut rng)?;
    let case = Case::new(store, [2, 8, 4, 4], &mut rng, move |ctx, x| se.forward(ctx, x))?;
    push(out, "se attention", TOLERANCE, case.run(Mode::Eval, 400, 4)?);
    Ok(())
}

fn safm_checks(out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cases = [
        ("dp-safm depthwise", SafmMode::DepthwiseSeparable, true, 8),
        ("dp-safm standard", SafmMode::Standard, true, 8),
        ("dp-safm depthwise odd size", SafmMode::DepthwiseSeparable, true, 6),
        ("dp-safm identity first branch", SafmMode::DepthwiseSeparable, false, 8),
    ];
    for (i, (name, mode, conv_x1, hw)) in cases.into_iter().enumerate() {
        let mut store = ParamStore::new();
        let safm = Safm::new(&mut store, "blk", 8, mode, conv_x1, &mut rng)?;
        let case = Case::new(store, [2, 8, hw, hw + 1], &mut rng, move |ctx, x| safm.forward(ctx, x))?;
        push(out, name, TOLERANCE, case.run(Mode::Eval, 400, i as u64)?);
    }
    Ok(())
}

fn randomize_bn(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.entry(id).name.clone();
        let shape = store.get(id).shape();
        let (lo, hi) = if name.ends_with(".running_var") || name.ends_with(".gamma") {
            (0.5, 1.5)
        } else if name.ends_with(".running_mean") || name.ends_with(".beta") {
            (-0.3, 0.3)
        } else {
            continue;
        };
        *store.get_mut(id) = Tensor::uniform(shape, lo, hi, &mut rng);
    }
}

fn backbone_checks(out: &mut Vec<CheckResult>) -> Result<()> {
    let cfg = NetworkConfig::nano();
    let blocks = [
        ("fused-mbconv e1", StageSpec::fused(8, 8, 1, 1, 1)),
        ("fused-mbconv e4 s2", StageSpec::fused(4, 8, 4, 2, 1)),
        ("mbconv e4 ce", StageSpec::mbconv(8, 8, 4, 1, 1).with_attention(AttentionKind::Ce)),
        ("mbconv e2 s2 se", StageSpec::mbconv(4, 8, 2, 2, 1).with_attention(AttentionKind::Se)),
    ];
    for (i, (name, stage)) in blocks.into_iter().enumerate() {
        for (mode, suffix, tol) in [(Mode::Eval, "", TOLERANCE), (Mode::Train, " train", BN_TRAIN_TOLERANCE)] {
            let mut rng = ChaCha8Rng::seed_from_u64(404 + i as u64);
            let mut store = ParamStore::new();
            let spec = stage.block(0);
            let block = match stage.block_kind {
                BlockKind::FusedMbConv => Block::Fused(FusedMbConv::new(&mut store, "blk", spec, &mut rng)?),
                BlockKind::MbConv => Block::MbConv(MbConv::new(&mut store, "blk", spec, &cfg, &mut rng)?),
            };
            randomize_bn(&mut store, i as u64);
            let case = Case::new(store, [3, stage.in_channels, 6, 6], &mut rng, move |ctx, x| block.forward(ctx, x))?;
            push(out, &format!("{name}{suffix}"), tol, case.run(mode, 300, i as u64)?);
        }
    }

    let (net, mut store) = build_network(&cfg, 7)?;
    randomize_bn(&mut store, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let x = Tensor::uniform([2, 3, cfg.input_size, cfg.input_size], 0.0, 1.0, &mut rng);
    let labels = [1usize, 3];
    let coords = sample_coords(&store, 50, 9);
    let err = check_param_grads(&store, Mode::Eval, &coords, SUITE_STEP, |ctx| {
        let xv = ctx.tape.constant(x.clone());
        let logits = net.forward(ctx, xv)?;
        ctx.tape.cross_entropy(logits, &labels)
    })?;
    push(out, "nano network", TOLERANCE, err);
    Ok(())
}

/// Run the finite-difference checks for `suite`.
pub fn run_suite(suite: Suite) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    if suite == Suite::All {
        op_checks(&mut out)?;
    }
    if matches!(suite, Suite::All | Suite::Ce) {
        ce_checks(&mut out)?;
    }
    if matches!(suite, Suite::All | Suite::Safm) {
        safm_checks(&mut out)?;
    }
    if matches!(suite, Suite::All | Suite::Backbone) {
        backbone_checks(&mut out)?;
    }
    Ok(out)
}
