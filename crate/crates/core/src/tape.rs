//! Reverse-mode differentiation over recorded tensor operations.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node and
//! return its [`Var`] handle; [`Tape::backward`] replays the nodes in reverse
//! recording order and returns the accumulated [`Gradients`].

use crate::error::{Error, Result};
use crate::ops::{self, Activation, BnForward, Broadcast, ConvSpec};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    GlobalAvg(Var),
    /// Max-style reductions that route gradient to one source cell each.
    Gather {
        x: Var,
        src: Vec<usize>,
    },
    /// Upsampling: many outputs read one source cell.
    Scatter {
        x: Var,
        src: Vec<usize>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    ChannelSlice {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    BatchNorm {
        x: Var,
        gamma: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
        beta: Var,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics observed by a train-mode batch norm, for running-stat
/// updates after the step.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient will be reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.needs(&deps);
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, rg))
    }

    pub fn global_avg(&mut self, x: Var) -> Var {
        let out = ops::global_avg(self.value(x));
        let rg = self.needs(&[x]);
        self.push(out, Op::GlobalAvg(x), rg)
    }

    pub fn global_max(&mut self, x: Var) -> Var {
        let (out, src) = ops::global_max(self.value(x));
        let rg = self.needs(&[x]);
        self.push(out, Op::Gather { x, src }, rg)
    }

    pub fn window_max(&mut self, x: Var, window: usize) -> Result<Var> {
        let (out, src) = ops::window_max(self.value(x), window)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Gather { x, src }, rg))
    }

    pub fn upsample_to(&mut self, x: Var, target_h: usize, target_w: usize) -> Result<Var> {
        let (out, src) = ops::upsample_to_indexed(self.value(x), target_h, target_w)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Scatter { x, src }, rg))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::shape("upsample", "factor must be at least 1"));
        }
        let (h, w) = (self.value(x).height(), self.value(x).width());
        self.upsample_to(x, h * factor, w * factor)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = ops::activation(self.value(x), kind);
        let rg = self.needs(&[x]);
        self.push(out, Op::Act { x, kind }, rg)
    }

    pub fn channel_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let c = self.value(x).channels();
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "channel_slice",
                format!("channels [{start}, {}) outside 0..{c}", start + len),
            ));
        }
        let out = ops::channel_slice(self.value(x), start, len);
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::ChannelSlice { x, start }, rg))
    }

    pub fn channel_split4(&mut self, x: Var) -> Result<[Var; 4]> {
        let c = self.value(x).channels();
        if c % 4 != 0 {
            return Err(Error::Divisibility {
                channels: c,
                divisor: 4,
                context: "channel_split4",
            });
        }
        let q = c / 4;
        let mut parts = [x; 4];
        for (i, p) in parts.iter_mut().enumerate() {
            *p = self.channel_slice(x, i * q, q)?;
        }
        Ok(parts)
    }

    pub fn channel_concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let out = ops::channel_concat(&values)?;
        let rg = self.needs(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = ops::broadcast_kind(self.value(a), self.value(b))?;
        let out = ops::elementwise(self.value(a), self.value(b), ops::Elementwise::Add)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b, bc), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = ops::broadcast_kind(self.value(a), self.value(b))?;
        let out = ops::elementwise(self.value(a), self.value(b), ops::Elementwise::Mul)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b, bc), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let rg = self.needs(&[x]);
        self.push(out, Op::Scale(x, k), rg)
    }

    pub fn negate(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Batch norm. With `running = None` the batch statistics are used and
    /// returned; otherwise `running` (mean, var) normalizes.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let BnForward {
            out,
            xhat,
            inv_std,
            mean,
            var,
        } = ops::batch_norm_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
        )?;
        let batch_stats = running.is_none();
        let rg = self.needs(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                xhat,
                inv_std,
                batch_stats,
                beta,
            },
            rg,
        );
        Ok((v, batch_stats.then_some(BatchStats { mean, var })))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// Mean over the batch of `−log softmax(logits)[label]`; logits are
    /// `N×K×1×1`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let [n, k, h, w] = lv.shape();
        if h != 1 || w != 1 || labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} with {} labels", lv.shape(), labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label, classes: k });
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0;
        for (row, &label) in lv.data().chunks(k).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            loss += log_z - row[label];
            probs.extend(row.iter().map(|v| (v - log_z).exp()));
        }
        let out = Tensor::scalar(loss / n as f64);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1, 1, 1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut nodes = self.nodes;
        for (node, g) in nodes.iter_mut().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            } else if g.is_none() {
                *g = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients {
            values: nodes.into_iter().map(|n| n.value).collect(),
            grads,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            delta(slot);
        };
        let add_all = |slot: &mut [f64], d: &[f64]| {
            slot.iter_mut().zip(d).for_each(|(s, v)| *s += v);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, spec } => {
                let (dx, dw, db) = ops::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    spec,
                    g,
                    node.value.shape(),
                );
                acc(*x, &mut |s| add_all(s, &dx));
                acc(*w, &mut |s| add_all(s, &dw));
                if let Some(b) = b {
                    acc(*b, &mut |s| add_all(s, &db));
                }
            }
            Op::GlobalAvg(x) => {
                let p = self.value(*x).plane();
                acc(*x, &mut |s| {
                    for (k, chunk) in s.chunks_mut(p).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += g[k] / p as f64);
                    }
                });
            }
            Op::Gather { x, src } => acc(*x, &mut |s| {
                for (&i, &gv) in src.iter().zip(g) {
                    s[i] += gv;
                }
            }),
            Op::Scatter { x, src } => acc(*x, &mut |s| {
                for (&i, &gv) in src.iter().zip(g) {
                    s[i] += gv;
                }
            }),
            Op::Act { x, kind } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for ((sv, &gv), &v) in s.iter_mut().zip(g).zip(xv) {
                        *sv += gv * kind.derivative(v);
                    }
                });
            }
            Op::ChannelSlice { x, start } => {
                let [n, len, h, w] = node.value.shape();
                let c = self.value(*x).channels();
                let p = h * w;
                acc(*x, &mut |s| {
                    for b in 0..n {
                        let dst = &mut s[(b * c + start) * p..(b * c + start + len) * p];
                        add_all(dst, &g[b * len * p..(b + 1) * len * p]);
                    }
                });
            }
            Op::Concat(parts) => {
                let [n, c, h, w] = node.value.shape();
                let p = h * w;
                let mut offset = 0;
                for &part in parts {
                    let pc = self.value(part).channels();
                    acc(part, &mut |s| {
                        for b in 0..n {
                            let src = &g[(b * c + offset) * p..(b * c + offset + pc) * p];
                            add_all(&mut s[b * pc * p..(b + 1) * pc * p], src);
                        }
                    });
                    offset += pc;
                }
            }
            Op::Add(a, b, bc) => {
                acc(*a, &mut |s| add_all(s, g));
                let p = node.value.plane();
                acc(*b, &mut |s| match bc {
                    Broadcast::Same => add_all(s, g),
                    Broadcast::Channel => {
                        for (k, chunk) in g.chunks(p).enumerate() {
                            s[k] += chunk.iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let p = node.value.plane();
                let b_at = |i: usize| match bc {
                    Broadcast::Same => bv[i],
                    Broadcast::Channel => bv[i / p],
                };
                acc(*a, &mut |s| {
                    for (i, sv) in s.iter_mut().enumerate() {
                        *sv += g[i] * b_at(i);
                    }
                });
                acc(*b, &mut |s| match bc {
                    Broadcast::Same => {
                        for (i, sv) in s.iter_mut().enumerate() {
                            *sv += g[i] * av[i];
                        }
                    }
                    Broadcast::Channel => {
                        for (k, sv) in s.iter_mut().enumerate() {
                            *sv += (k * p..(k + 1) * p).map(|i| g[i] * av[i]).sum::<f64>();
                        }
                    }
                });
            }
            Op::Scale(x, k) => acc(*x, &mut |s| {
                s.iter_mut().zip(g).for_each(|(sv, gv)| *sv += k * gv);
            }),
            Op::BatchNorm {
                x,
                gamma,
                xhat,
                inv_std,
                batch_stats,
                beta,
            } => {
                let (dx, dgamma, dbeta) = ops::batch_norm_backward(
                    node.value.shape(),
                    self.value(*gamma).data(),
                    xhat,
                    inv_std,
                    g,
                    *batch_stats,
                );
                acc(*x, &mut |s| add_all(s, &dx));
                acc(*gamma, &mut |s| add_all(s, &dgamma));
                acc(*beta, &mut |s| add_all(s, &dbeta));
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                acc(*logits, &mut |s| {
                    for (row, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let target = if j == label { 1.0 } else { 0.0 };
                            s[row * k + j] += g[0] * (probs[row * k + j] - target) / n as f64;
                        }
                    }
                });
            }
        }
    }
}

/// Result of [`Tape::backward`]: every recorded value plus gradients for
/// leaves created with [`Tape::param`].
#[derive(Debug)]
pub struct Gradients {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a parameter leaf; `None` for constants and interior nodes.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }

    /// The leaf value with its `grad` slot populated.
    pub fn leaf(&self, v: Var) -> Tensor {
        let mut t = self.values[v.0].clone();
        t.grad = self.grads[v.0].clone();
        t
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }
}
