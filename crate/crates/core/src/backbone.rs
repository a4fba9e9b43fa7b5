//! MBConv / Fused-MBConv blocks and the config-driven network builder.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{Attention, AttentionKind, DEFAULT_SE_RATIO};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv};
use crate::ops::{Activation, ConvSpec, Mode};
use crate::params::{Ctx, ParamStore};
use crate::safm::{Safm, SafmMode};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    MbConv,
    FusedMbConv,
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mbconv" => Ok(Self::MbConv),
            "fused" | "fused-mbconv" | "fused_mbconv" => Ok(Self::FusedMbConv),
            other => Err(Error::Config(format!("unknown block kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MbConv => "mbconv",
            Self::FusedMbConv => "fused",
        })
    }
}

/// Where DP-SAFM blocks are inserted within a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SafmPlacement {
    Off,
    /// Once, after the last repeat.
    AfterStage,
    /// After every repeat.
    AfterEachRepeat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub block_kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
    pub repeats: usize,
    pub attention: AttentionKind,
    pub safm: SafmPlacement,
}

impl StageSpec {
    pub fn fused(in_channels: usize, out_channels: usize, expansion: usize, stride: usize, repeats: usize) -> Self {
        Self {
            block_kind: BlockKind::FusedMbConv,
            in_channels,
            out_channels,
            expansion,
            stride,
            repeats,
            attention: AttentionKind::None,
            safm: SafmPlacement::Off,
        }
    }

    pub fn mbconv(in_channels: usize, out_channels: usize, expansion: usize, stride: usize, repeats: usize) -> Self {
        Self {
            block_kind: BlockKind::MbConv,
            ..Self::fused(in_channels, out_channels, expansion, stride, repeats)
        }
    }

    pub fn with_attention(mut self, attention: AttentionKind) -> Self {
        self.attention = attention;
        self
    }

    pub fn with_safm(mut self, safm: SafmPlacement) -> Self {
        self.safm = safm;
        self
    }

    pub fn safm_after(&self) -> bool {
        self.safm != SafmPlacement::Off
    }

    /// Spec of repeat `r`: only the first repeat strides or changes width.
    pub fn block(&self, r: usize) -> BlockSpec {
        BlockSpec {
            kind: self.block_kind,
            in_channels: if r == 0 { self.in_channels } else { self.out_channels },
            out_channels: self.out_channels,
            expansion: self.expansion,
            stride: if r == 0 { self.stride } else { 1 },
            attention: self.attention,
        }
    }
}

/// One concrete block of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
    pub attention: AttentionKind,
}

impl BlockSpec {
    pub fn expanded(&self) -> usize {
        self.in_channels * self.expansion
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    pub head_channels: usize,
    pub num_classes: usize,
    pub input_size: usize,
    pub se_ratio: usize,
    pub ce_shared_mlp: bool,
    pub safm_mode: SafmMode,
    pub safm_conv_x1: bool,
}

impl NetworkConfig {
    /// Desk-scale preset: three stages, 64×64 input, four classes.
    pub fn nano() -> Self {
        Self {
            stem_channels: 16,
            stages: vec![
                StageSpec::fused(16, 16, 1, 1, 1).with_safm(SafmPlacement::AfterStage),
                StageSpec::fused(16, 32, 4, 2, 2).with_safm(SafmPlacement::AfterStage),
                StageSpec::mbconv(32, 64, 4, 2, 2).with_attention(AttentionKind::Ce),
            ],
            head_channels: 128,
            num_classes: 4,
            input_size: 64,
            se_ratio: DEFAULT_SE_RATIO,
            ce_shared_mlp: true,
            safm_mode: SafmMode::DepthwiseSeparable,
            safm_conv_x1: true,
        }
    }

    /// Replace the attention of every MBConv stage.
    pub fn with_attention(mut self, kind: AttentionKind) -> Self {
        for s in self.stages.iter_mut().filter(|s| s.block_kind == BlockKind::MbConv) {
            s.attention = kind;
        }
        self
    }

    /// Set the SAFM placement of every Fused-MBConv stage that had one.
    pub fn without_safm(mut self) -> Self {
        for s in &mut self.stages {
            s.safm = SafmPlacement::Off;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 || self.head_channels == 0 || self.input_size == 0 {
            return Err(Error::Config("stem, head and input must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("network has no stages".into()));
        }
        let mut prev = self.stem_channels;
        for (i, s) in self.stages.iter().enumerate() {
            let fail = |detail: String| Err(Error::Stage { stage: i, detail });
            if s.in_channels != prev {
                return fail(format!("in_channels {} does not chain from previous {prev}", s.in_channels));
            }
            if s.out_channels == 0 || s.expansion == 0 || s.repeats == 0 {
                return fail("out_channels, expansion and repeats must be positive".into());
            }
            if s.stride != 1 && s.stride != 2 {
                return fail(format!("stride must be 1 or 2, got {}", s.stride));
            }
            if s.safm_after() {
                if s.block_kind != BlockKind::FusedMbConv {
                    return fail("SAFM insertion is only allowed after fused-mbconv stages".into());
                }
                if s.out_channels % 4 != 0 {
                    return fail(format!("SAFM needs channels divisible by 4, got {}", s.out_channels));
                }
            }
            if s.attention != AttentionKind::None && s.block_kind != BlockKind::MbConv {
                return fail("attention is only allowed in mbconv stages".into());
            }
            if s.attention == AttentionKind::Se {
                for r in 0..s.repeats.min(2) {
                    let e = s.block(r).expanded();
                    if self.se_ratio == 0 || e % self.se_ratio != 0 {
                        return fail(format!("SE ratio {} does not divide width {e}", self.se_ratio));
                    }
                }
            }
            prev = s.out_channels;
        }
        Ok(())
    }

    /// Spatial size after the stem and every stage.
    pub fn final_spatial(&self) -> usize {
        let down = |n: usize| n.div_ceil(2);
        let mut size = down(self.input_size);
        for s in &self.stages {
            if s.stride == 2 {
                size = down(size);
            }
        }
        size
    }

    pub fn last_channels(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |s| s.out_channels)
    }

    /// Parse the flat `key = value` format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self {
            stages: Vec::new(),
            ..Self::nano()
        };
        let mut stages: Vec<(usize, StageSpec)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Config(format!("line {}: {detail}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<usize>().map_err(|_| err(format!("{key}: not an integer: {v:?}")));
            let flag = |v: &str| parse_bool(v).ok_or_else(|| err(format!("{key}: not a boolean: {v:?}")));
            match key {
                "stem" => cfg.stem_channels = num(value)?,
                "head" => cfg.head_channels = num(value)?,
                "classes" => cfg.num_classes = num(value)?,
                "input" => cfg.input_size = num(value)?,
                "se.ratio" => cfg.se_ratio = num(value)?,
                "ce.shared_mlp" => cfg.ce_shared_mlp = flag(value)?,
                "safm.mode" => cfg.safm_mode = value.parse().map_err(|e: Error| err(e.to_string()))?,
                "safm.conv_x1" => cfg.safm_conv_x1 = flag(value)?,
                k if k.starts_with("stage.") => {
                    let idx = num(&k["stage.".len()..])?;
                    let stage = parse_stage(value).map_err(|e| err(e.to_string()))?;
                    if stages.iter().any(|(i, _)| *i == idx) {
                        return Err(err(format!("stage {idx} defined twice")));
                    }
                    stages.push((idx, stage));
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        stages.sort_by_key(|(i, _)| *i);
        cfg.stages = stages.into_iter().map(|(_, s)| s).collect();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stem = {}", self.stem_channels);
        for (i, s) in self.stages.iter().enumerate() {
            let safm = match s.safm {
                SafmPlacement::Off => "0",
                SafmPlacement::AfterStage => "1",
                SafmPlacement::AfterEachRepeat => "each",
            };
            let _ = writeln!(
                out,
                "stage.{} = {} in={} out={} e={} s={} r={} attn={} safm={}",
                i + 1,
                s.block_kind,
                s.in_channels,
                s.out_channels,
                s.expansion,
                s.stride,
                s.repeats,
                s.attention,
                safm
            );
        }
        let _ = writeln!(out, "head = {}", self.head_channels);
        let _ = writeln!(out, "classes = {}", self.num_classes);
        let _ = writeln!(out, "input = {}", self.input_size);
        let _ = writeln!(out, "se.ratio = {}", self.se_ratio);
        let _ = writeln!(out, "ce.shared_mlp = {}", self.ce_shared_mlp);
        let _ = writeln!(out, "safm.mode = {}", self.safm_mode);
        let _ = writeln!(out, "safm.conv_x1 = {}", self.safm_conv_x1);
        out
    }
}

pub(crate) fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "1" | "true" | "on" | "yes" => Some(true),
        "0" | "false" | "off" | "no" => Some(false),
        _ => None,
    }
}

fn parse_stage(value: &str) -> Result<StageSpec> {
    let mut tokens = value.split_whitespace();
    let kind: BlockKind = tokens
        .next()
        .ok_or_else(|| Error::Config("empty stage".into()))?
        .parse()?;
    let mut spec = StageSpec {
        block_kind: kind,
        in_channels: 0,
        out_channels: 0,
        expansion: 1,
        stride: 1,
        repeats: 1,
        attention: AttentionKind::None,
        safm: SafmPlacement::Off,
    };
    let mut seen_in = false;
    let mut seen_out = false;
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("stage field {tok:?} is not key=value")))?;
        let num = || v.parse::<usize>().map_err(|_| Error::Config(format!("stage field {k}: not an integer: {v:?}")));
        match k {
            "in" => {
                spec.in_channels = num()?;
                seen_in = true;
            }
            "out" => {
                spec.out_channels = num()?;
                seen_out = true;
            }
            "e" => spec.expansion = num()?,
            "s" => spec.stride = num()?,
            "r" => spec.repeats = num()?,
            "attn" => spec.attention = v.parse()?,
            "safm" => {
                spec.safm = match v {
                    "each" | "repeat" => SafmPlacement::AfterEachRepeat,
                    _ => match parse_bool(v) {
                        Some(true) => SafmPlacement::AfterStage,
                        Some(false) => SafmPlacement::Off,
                        None => return Err(Error::Config(format!("stage field safm: bad value {v:?}"))),
                    },
                }
            }
            other => return Err(Error::Config(format!("unknown stage field {other:?}"))),
        }
    }
    if !seen_in || !seen_out {
        return Err(Error::Config("stage needs in= and out=".into()));
    }
    Ok(spec)
}

#[derive(Debug, Clone)]
pub struct FusedMbConv {
    pub spec: BlockSpec,
    conv: Conv,
    bn: BatchNorm,
    project: Option<(Conv, BatchNorm)>,
}

impl FusedMbConv {
    pub fn new(store: &mut ParamStore, path: &str, spec: BlockSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let e = spec.expanded();
        if spec.expansion == 1 {
            let conv = Conv::new(
                store,
                &format!("{path}.conv"),
                ConvSpec::standard(spec.in_channels, spec.out_channels, 3, spec.stride),
                false,
                rng,
            )?;
            let bn = BatchNorm::new(store, &format!("{path}.bn"), spec.out_channels)?;
            return Ok(Self {
                spec,
                conv,
                bn,
                project: None,
            });
        }
        let conv = Conv::new(
            store,
            &format!("{path}.expand"),
            ConvSpec::standard(spec.in_channels, e, 3, spec.stride),
            false,
            rng,
        )?;
        let bn = BatchNorm::new(store, &format!("{path}.expand_bn"), e)?;
        let proj = Conv::new(
            store,
            &format!("{path}.project"),
            ConvSpec::pointwise(e, spec.out_channels),
            false,
            rng,
        )?;
        let proj_bn = BatchNorm::new(store, &format!("{path}.project_bn"), spec.out_channels)?;
        Ok(Self {
            spec,
            conv,
            bn,
            project: Some((proj, proj_bn)),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.conv.forward(ctx, x)?;
        let h = self.bn.forward(ctx, h)?;
        let mut h = ctx.tape.activation(h, Activation::Silu);
        if let Some((conv, bn)) = &self.project {
            h = conv.forward(ctx, h)?;
            h = bn.forward(ctx, h)?;
        }
        if self.spec.has_residual() {
            h = ctx.tape.add(h, x)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct MbConv {
    pub spec: BlockSpec,
    expand: Option<(Conv, BatchNorm)>,
    dw: Conv,
    dw_bn: BatchNorm,
    pub attention: Attention,
    project: Conv,
    project_bn: BatchNorm,
}

impl MbConv {
    pub fn new(
        store: &mut ParamStore,
        path: &str,
        spec: BlockSpec,
        cfg: &NetworkConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let e = spec.expanded();
        let expand = if spec.expansion > 1 {
            Some((
                Conv::new(store, &format!("{path}.expand"), ConvSpec::pointwise(spec.in_channels, e), false, rng)?,
                BatchNorm::new(store, &format!("{path}.expand_bn"), e)?,
            ))
        } else {
            None
        };
        let dw = Conv::new(store, &format!("{path}.dw"), ConvSpec::depthwise(e, 3, spec.stride), false, rng)?;
        let dw_bn = BatchNorm::new(store, &format!("{path}.dw_bn"), e)?;
        let attention = Attention::new(store, path, spec.attention, e, cfg.se_ratio, cfg.ce_shared_mlp, rng)?;
        let project = Conv::new(
            store,
            &format!("{path}.project"),
            ConvSpec::pointwise(e, spec.out_channels),
            false,
            rng,
        )?;
        let project_bn = BatchNorm::new(store, &format!("{path}.project_bn"), spec.out_channels)?;
        Ok(Self {
            spec,
            expand,
            dw,
            dw_bn,
            attention,
            project,
            project_bn,
        })
    }

    /// Expanded features entering the attention block.
    pub fn pre_attention(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some((conv, bn)) = &self.expand {
            h = conv.forward(ctx, h)?;
            h = bn.forward(ctx, h)?;
            h = ctx.tape.activation(h, Activation::Silu);
        }
        h = self.dw.forward(ctx, h)?;
        h = self.dw_bn.forward(ctx, h)?;
        Ok(ctx.tape.activation(h, Activation::Silu))
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.pre_attention(ctx, x)?;
        let h = self.attention.forward(ctx, h)?;
        let h = self.project.forward(ctx, h)?;
        let mut h = self.project_bn.forward(ctx, h)?;
        if self.spec.has_residual() {
            h = ctx.tape.add(h, x)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Fused(FusedMbConv),
    MbConv(MbConv),
    Safm(Safm),
}

impl Block {
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            Self::Fused(b) => b.forward(ctx, x),
            Self::MbConv(b) => b.forward(ctx, x),
            Self::Safm(b) => b.forward(ctx, x),
        }
    }
}

/// The assembled network graph. Parameters live in the accompanying
/// [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    stem: Conv,
    stem_bn: BatchNorm,
    /// `(checkpoint path prefix, block)` in execution order.
    pub blocks: Vec<(String, Block)>,
    head: Conv,
    head_bn: BatchNorm,
    classifier: Conv,
}

/// Build the network and initialize its parameters deterministically from
/// `seed`.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<(Network, ParamStore)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let stem = Conv::new(
        &mut store,
        "stem.conv",
        ConvSpec::standard(3, config.stem_channels, 3, 2),
        false,
        &mut rng,
    )?;
    let stem_bn = BatchNorm::new(&mut store, "stem.bn", config.stem_channels)?;
    let mut blocks = Vec::new();
    for (si, stage) in config.stages.iter().enumerate() {
        let wrap = |e: Error| match e {
            Error::Stage { .. } => e,
            other => Error::Stage {
                stage: si,
                detail: other.to_string(),
            },
        };
        for r in 0..stage.repeats {
            let path = format!("stages.{si}.{r}");
            let spec = stage.block(r);
            let block = match stage.block_kind {
                BlockKind::FusedMbConv => Block::Fused(FusedMbConv::new(&mut store, &path, spec, &mut rng).map_err(wrap)?),
                BlockKind::MbConv => Block::MbConv(MbConv::new(&mut store, &path, spec, config, &mut rng).map_err(wrap)?),
            };
            blocks.push((path.clone(), block));
            let last = r + 1 == stage.repeats;
            let safm_here = match stage.safm {
                SafmPlacement::Off => false,
                SafmPlacement::AfterStage => last,
                SafmPlacement::AfterEachRepeat => true,
            };
            if safm_here {
                let safm_path = if stage.safm == SafmPlacement::AfterStage {
                    format!("stages.{si}")
                } else {
                    path
                };
                let safm = Safm::new(
                    &mut store,
                    &safm_path,
                    stage.out_channels,
                    config.safm_mode,
                    config.safm_conv_x1,
                    &mut rng,
                )
                .map_err(wrap)?;
                blocks.push((format!("{safm_path}.safm"), Block::Safm(safm)));
            }
        }
    }
    let last = config.last_channels();
    let head = Conv::new(
        &mut store,
        "head.conv",
        ConvSpec::pointwise(last, config.head_channels),
        false,
        &mut rng,
    )?;
    let head_bn = BatchNorm::new(&mut store, "head.bn", config.head_channels)?;
    let classifier = Conv::new(
        &mut store,
        "head.fc",
        ConvSpec::pointwise(config.head_channels, config.num_classes),
        true,
        &mut rng,
    )?;
    Ok((
        Network {
            config: config.clone(),
            stem,
            stem_bn,
            blocks,
            head,
            head_bn,
            classifier,
        },
        store,
    ))
}

impl Network {
    /// Logits as `N×K×1×1`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let [_, c, h, w] = ctx.tape.value(x).shape();
        let s = self.config.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::shape(
                "network_forward",
                format!("expected N×3×{s}×{s} input, got channels {c}, spatial {h}×{w}"),
            ));
        }
        let y = self.stem.forward(ctx, x)?;
        let y = self.stem_bn.forward(ctx, y)?;
        let mut y = ctx.tape.activation(y, Activation::Silu);
        for (_, block) in &self.blocks {
            y = block.forward(ctx, y)?;
        }
        let y = self.head.forward(ctx, y)?;
        let y = self.head_bn.forward(ctx, y)?;
        let y = ctx.tape.activation(y, Activation::Silu);
        let y = ctx.tape.global_avg(y);
        self.classifier.forward(ctx, y)
    }

    /// Learnable-scalar count per block path, in execution order, with the
    /// stem and head first and last.
    pub fn block_param_counts(&self, store: &ParamStore) -> Vec<(String, usize)> {
        let mut out = vec![("stem".to_string(), store.count_prefix("stem."))];
        for (path, block) in &self.blocks {
            let n = match block {
                Block::Safm(s) => s.param_count(),
                _ => store.count_prefix(&format!("{path}.")) - store.count_prefix(&format!("{path}.safm.")),
            };
            out.push((path.clone(), n));
        }
        out.push(("head".to_string(), store.count_prefix("head.")));
        out
    }
}

/// Plain forward returning `N×K×1×1` logits.
pub fn network_forward(net: &Network, store: &ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
    let mut ctx = Ctx::new(store, mode);
    let v = ctx.tape.constant(x.clone());
    let y = net.forward(&mut ctx, v)?;
    Ok(ctx.tape.value(y).clone())
}

/// Total learnable scalars.
pub fn count_params(store: &ParamStore) -> usize {
    store.count_params()
}
