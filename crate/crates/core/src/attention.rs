//! Channel attention: the channel-efficient (CE) block and the
//! squeeze-and-excitation (SE) baseline it replaces.
//!
//! CE pools each channel twice (global average and global max), passes both
//! vectors through one Conv-ReLU-Conv channel MLP, sums the two results,
//! mixes them with a further 1×1 conv and gates the input with a sigmoid:
//!
//! ```text
//! M_c = MLP(avg(F)) + MLP(max(F))
//! out = F ⊙ σ(Conv(M_c))
//! ```
//!
//! The MLP keeps the full channel width (no bottleneck).

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::ops::{Activation, ConvSpec, Mode};
use crate::params::{Ctx, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const DEFAULT_SE_RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    None,
    Se,
    Ce,
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "se" => Ok(Self::Se),
            "ce" => Ok(Self::Ce),
            other => Err(Error::Config(format!("unknown attention kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Se => "se",
            Self::Ce => "ce",
        })
    }
}

/// Closed-form learnable-scalar count of an attention block at width `c`.
///
/// CE: `3c² + 3c`. SE: `2c²/r + c/r + c`. `r` is ignored for CE.
pub fn attention_param_count(kind: AttentionKind, c: usize, r: usize) -> usize {
    match kind {
        AttentionKind::None => 0,
        AttentionKind::Ce => 3 * c * c + 3 * c,
        AttentionKind::Se => 2 * c * c / r + c / r + c,
    }
}

fn check_channels(ctx: &Ctx, x: Var, expected: usize, block: &'static str) -> Result<()> {
    let got = ctx.tape.value(x).channels();
    if got != expected {
        return Err(Error::shape(
            block,
            format!("input has {got} channels, block built for {expected}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct ChannelMlp {
    conv1: Conv,
    conv2: Conv,
}

impl ChannelMlp {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, path: &str, suffix: &str, c: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(store, &format!("{path}.mlp1{suffix}"), ConvSpec::pointwise(c, c), true, rng)?,
            conv2: Conv::new(store, &format!("{path}.mlp2{suffix}"), ConvSpec::pointwise(c, c), true, rng)?,
        })
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?;
        let h = ctx.tape.activation(h, Activation::Relu);
        self.conv2.forward(ctx, h)
    }
}

#[derive(Debug, Clone)]
pub struct CeAttention {
    pub channels: usize,
    mlp: ChannelMlp,
    /// Separate MLP for the max branch when the MLP is not shared.
    mlp_max: Option<ChannelMlp>,
    out: Conv,
}

impl CeAttention {
    /// Registers `<path>.ce.{mlp1,mlp2,out}.{w,b}`; with `shared_mlp = false`
    /// also `<path>.ce.{mlp1_max,mlp2_max}.{w,b}`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        path: &str,
        channels: usize,
        shared_mlp: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let base = format!("{path}.ce");
        let mlp = ChannelMlp::new(store, &base, "", channels, rng)?;
        let mlp_max = if shared_mlp {
            None
        } else {
            Some(ChannelMlp::new(store, &base, "_max", channels, rng)?)
        };
        let out = Conv::new(store, &format!("{base}.out"), ConvSpec::pointwise(channels, channels), true, rng)?;
        Ok(Self {
            channels,
            mlp,
            mlp_max,
            out,
        })
    }

    pub fn shared_mlp(&self) -> bool {
        self.mlp_max.is_none()
    }

    /// The per-channel sigmoid gate, `N×C×1×1`.
    pub fn gate(&self, ctx: &mut Ctx, f: Var) -> Result<Var> {
        check_channels(ctx, f, self.channels, "ce_forward")?;
        let avg = ctx.tape.global_avg(f);
        let max = ctx.tape.global_max(f);
        let avg_c = self.mlp.forward(ctx, avg)?;
        let max_c = self.mlp_max.as_ref().unwrap_or(&self.mlp).forward(ctx, max)?;
        let m_c = ctx.tape.add(max_c, avg_c)?;
        let m_d = self.out.forward(ctx, m_c)?;
        Ok(ctx.tape.activation(m_d, Activation::Sigmoid))
    }

    pub fn forward(&self, ctx: &mut Ctx, f: Var) -> Result<Var> {
        let gate = self.gate(ctx, f)?;
        ctx.tape.mul(f, gate)
    }
}

#[derive(Debug, Clone)]
pub struct SeAttention {
    pub channels: usize,
    pub ratio: usize,
    reduce: Conv,
    expand: Conv,
}

impl SeAttention {
    /// Registers `<path>.se.{reduce,expand}.{w,b}`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        path: &str,
        channels: usize,
        ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(Error::Divisibility {
                channels,
                divisor: ratio,
                context: "squeeze-excitation reduction ratio",
            });
        }
        let hidden = channels / ratio;
        Ok(Self {
            channels,
            ratio,
            reduce: Conv::new(store, &format!("{path}.se.reduce"), ConvSpec::pointwise(channels, hidden), true, rng)?,
            expand: Conv::new(store, &format!("{path}.se.expand"), ConvSpec::pointwise(hidden, channels), true, rng)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, f: Var) -> Result<Var> {
        check_channels(ctx, f, self.channels, "se_forward")?;
        let s = ctx.tape.global_avg(f);
        let h = self.reduce.forward(ctx, s)?;
        let h = ctx.tape.activation(h, Activation::Relu);
        let e = self.expand.forward(ctx, h)?;
        let gate = ctx.tape.activation(e, Activation::Sigmoid);
        ctx.tape.mul(f, gate)
    }

    pub fn expand_bias(&self) -> Option<crate::params::ParamId> {
        self.expand.bias
    }
}

/// Attention block selected by [`AttentionKind`].
#[derive(Debug, Clone)]
pub enum Attention {
    None,
    Se(SeAttention),
    Ce(CeAttention),
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        path: &str,
        kind: AttentionKind,
        channels: usize,
        se_ratio: usize,
        ce_shared_mlp: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            AttentionKind::None => Self::None,
            AttentionKind::Se => Self::Se(SeAttention::new(store, path, channels, se_ratio, rng)?),
            AttentionKind::Ce => Self::Ce(CeAttention::new(store, path, channels, ce_shared_mlp, rng)?),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            Self::None => Ok(x),
            Self::Se(se) => se.forward(ctx, x),
            Self::Ce(ce) => ce.forward(ctx, x),
        }
    }
}

/// Plain (non-recording) CE forward.
pub fn ce_forward(f: &Tensor, block: &CeAttention, store: &ParamStore) -> Result<Tensor> {
    let mut ctx = Ctx::new(store, Mode::Eval);
    let x = ctx.tape.constant(f.clone());
    let y = block.forward(&mut ctx, x)?;
    Ok(ctx.tape.value(y).clone())
}

/// Plain (non-recording) SE forward.
pub fn se_forward(f: &Tensor, block: &SeAttention, store: &ParamStore) -> Result<Tensor> {
    let mut ctx = Ctx::new(store, Mode::Eval);
    let x = ctx.tape.constant(f.clone());
    let y = block.forward(&mut ctx, x)?;
    Ok(ctx.tape.value(y).clone())
}
