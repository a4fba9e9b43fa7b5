//! Multi-scale spatially-adaptive feature modulation with depthwise-separable
//! branch convolutions (DP-SAFM), and the standard-convolution variant.
//!
//! The input is split into four channel quarters. Quarter `i` (0-based) is
//! max-pooled by `2^i`, convolved, and nearest-upsampled back to the input
//! size. The quarters are concatenated, fused by a 1×1 conv, passed through
//! GELU and multiplied elementwise with the input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::ops::{Activation, ConvSpec, Mode};
use crate::params::{Ctx, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const BRANCHES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SafmMode {
    DepthwiseSeparable,
    Standard,
}

impl std::str::FromStr for SafmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dw" | "depthwise" | "depthwise-separable" => Ok(Self::DepthwiseSeparable),
            "std" | "standard" => Ok(Self::Standard),
            other => Err(Error::Config(format!("unknown SAFM mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SafmMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DepthwiseSeparable => "dw",
            Self::Standard => "std",
        })
    }
}

/// Closed-form learnable-scalar count with every branch convolved.
///
/// With `q = c/4`: standard `4·(9q² + q) + c² + c`, depthwise-separable
/// `4·(9q + q + q² + q) + c² + c`.
pub fn safm_param_count(c: usize, mode: SafmMode) -> usize {
    let q = c / 4;
    let branch = match mode {
        SafmMode::Standard => 9 * q * q + q,
        SafmMode::DepthwiseSeparable => 9 * q + q + q * q + q,
    };
    BRANCHES * branch + c * c + c
}

#[derive(Debug, Clone)]
enum BranchConv {
    Identity,
    Separable { dw: Conv, pw: Conv },
    Standard(Conv),
}

impl BranchConv {
    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            Self::Identity => Ok(x),
            Self::Separable { dw, pw } => {
                let h = dw.forward(ctx, x)?;
                pw.forward(ctx, h)
            }
            Self::Standard(conv) => conv.forward(ctx, x),
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct SafmTrace {
    /// Branch outputs after convolution, before upsampling.
    pub pre_upsample: [Var; BRANCHES],
    /// Branch outputs restored to the input resolution.
    pub post_upsample: [Var; BRANCHES],
    /// The fused map before GELU.
    pub fused: Var,
    pub output: Var,
}

#[derive(Debug, Clone)]
pub struct Safm {
    pub channels: usize,
    pub mode: SafmMode,
    branches: Vec<BranchConv>,
    fuse: Conv,
}

impl Safm {
    /// Registers `<path>.safm.b<i>.{dw,pw}` (or `.b<i>.std`) for `i` in 1..=4
    /// and `<path>.safm.fuse`. With `conv_x1 = false` the full-resolution
    /// quarter passes through without a convolution.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        path: &str,
        channels: usize,
        mode: SafmMode,
        conv_x1: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if channels % 4 != 0 {
            return Err(Error::Divisibility {
                channels,
                divisor: 4,
                context: "SAFM channel split",
            });
        }
        let q = channels / 4;
        let base = format!("{path}.safm");
        let mut branches = Vec::with_capacity(BRANCHES);
        for i in 1..=BRANCHES {
            let conv = if i == 1 && !conv_x1 {
                BranchConv::Identity
            } else {
                match mode {
                    SafmMode::DepthwiseSeparable => BranchConv::Separable {
                        dw: Conv::new(store, &format!("{base}.b{i}.dw"), ConvSpec::depthwise(q, 3, 1), true, rng)?,
                        pw: Conv::new(store, &format!("{base}.b{i}.pw"), ConvSpec::pointwise(q, q), true, rng)?,
                    },
                    SafmMode::Standard => BranchConv::Standard(Conv::new(
                        store,
                        &format!("{base}.b{i}.std"),
                        ConvSpec::standard(q, q, 3, 1),
                        true,
                        rng,
                    )?),
                }
            };
            branches.push(conv);
        }
        let fuse = Conv::new(store, &format!("{base}.fuse"), ConvSpec::pointwise(channels, channels), true, rng)?;
        Ok(Self {
            channels,
            mode,
            branches,
            fuse,
        })
    }

    pub fn conv_x1(&self) -> bool {
        !matches!(self.branches[0], BranchConv::Identity)
    }

    pub fn fuse_conv(&self) -> &Conv {
        &self.fuse
    }

    pub fn param_count(&self) -> usize {
        let branch: usize = self
            .branches
            .iter()
            .map(|b| match b {
                BranchConv::Identity => 0,
                BranchConv::Separable { dw, pw } => dw.param_count() + pw.param_count(),
                BranchConv::Standard(c) => c.param_count(),
            })
            .sum();
        branch + self.fuse.param_count()
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        Ok(self.forward_traced(ctx, x)?.output)
    }

    pub fn forward_traced(&self, ctx: &mut Ctx, x: Var) -> Result<SafmTrace> {
        let [_, c, h, w] = ctx.tape.value(x).shape();
        if c != self.channels {
            return Err(Error::shape(
                "dp_safm_forward",
                format!("input has {c} channels, block built for {}", self.channels),
            ));
        }
        let parts = ctx.tape.channel_split4(x)?;
        let mut pre = parts;
        let mut post = parts;
        for (i, (&part, conv)) in parts.iter().zip(&self.branches).enumerate() {
            let k = 1usize << i;
            let pooled = if i == 0 {
                part
            } else if k > h && k > w {
                // Window covers the whole map: ceil-mode output is 1×1.
                ctx.tape.global_max(part)
            } else {
                ctx.tape.window_max(part, k)?
            };
            pre[i] = conv.forward(ctx, pooled)?;
            post[i] = if i == 0 {
                pre[i]
            } else {
                ctx.tape.upsample_to(pre[i], h, w)?
            };
        }
        let cat = ctx.tape.channel_concat(&post)?;
        let fused = self.fuse.forward(ctx, cat)?;
        let gate = ctx.tape.activation(fused, Activation::Gelu);
        let output = ctx.tape.mul(gate, x)?;
        Ok(SafmTrace {
            pre_upsample: pre,
            post_upsample: post,
            fused,
            output,
        })
    }
}

/// Plain (non-recording) DP-SAFM forward.
pub fn dp_safm_forward(x: &Tensor, block: &Safm, store: &ParamStore) -> Result<Tensor> {
    let mut ctx = Ctx::new(store, Mode::Eval);
    let v = ctx.tape.constant(x.clone());
    let y = block.forward(&mut ctx, v)?;
    Ok(ctx.tape.value(y).clone())
}
