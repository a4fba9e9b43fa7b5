//! Parameterized convolution and batch-norm layers bound to a [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::ops::{ConvSpec, Mode};
use crate::params::{Ctx, ParamId, ParamStore, RunningUpdate};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    /// He-normal (fan-in) weights, zero bias. Stored as `<name>.w` / `<name>.b`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: ConvSpec,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let fan_in = (spec.in_channels / spec.groups) * spec.kernel_h * spec.kernel_w;
        let w = Tensor::normal(spec.weight_shape(), (2.0 / fan_in as f64).sqrt(), rng);
        let weight = store.add(format!("{name}.w"), w, true)?;
        let bias = if bias {
            Some(store.add(
                format!("{name}.b"),
                Tensor::zeros([1, spec.out_channels, 1, 1]),
                true,
            )?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.var(self.weight);
        let b = self.bias.map(|b| ctx.var(b));
        ctx.tape.conv2d(x, w, b, self.spec)
    }

    pub fn param_count(&self) -> usize {
        self.spec.weight_count() + if self.bias.is_some() { self.spec.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let shape = [1, channels, 1, 1];
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(shape), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(shape), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(shape), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(shape), false)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm(x, gamma, beta, None)?;
                if let Some(stats) = stats {
                    ctx.record_update(RunningUpdate {
                        mean: self.running_mean,
                        var: self.running_var,
                        stats,
                    });
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.tape.value(ctx.var(self.running_mean)).data().to_vec();
                let var = ctx.tape.value(ctx.var(self.running_var)).data().to_vec();
                Ok(ctx.tape.batch_norm(x, gamma, beta, Some((&mean, &var)))?.0)
            }
        }
    }
}
