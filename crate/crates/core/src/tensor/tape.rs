//! Reverse-mode autodiff over an explicitly recorded operation graph.
//!
//! Every forward call on a [`Tape`] computes its result eagerly, pushes one
//! node, and returns a [`Var`] handle. [`Tape::backward`] replays the nodes
//! in reverse creation order (which is a valid topological order, since
//! inputs always precede their consumers) and accumulates vector-Jacobian
//! products into each node's gradient buffer. A tape is single-use: build,
//! backward, read gradients, drop.

use super::conv;
use super::norm::{self, BnSaved};
pub use super::norm::BatchMoments;
use super::{ConvSpec, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise activation selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    /// `x < 0 -> slope * x`, slope in (0, 1).
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl ActivationKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

const BCE_EPS: f64 = 1e-7;

enum Op {
    Leaf,
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
    },
    ConvTranspose {
        input: Var,
        weight: Var,
        bias: Var,
        spec: ConvSpec,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved,
        train: bool,
    },
    Activation {
        input: Var,
        kind: ActivationKind,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    AddScalar {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    Abs {
        input: Var,
    },
    Sqrt {
        input: Var,
    },
    /// feat `[C, spatial...]` scaled per location by gate `[1, spatial...]`.
    MulGate {
        feat: Var,
        gate: Var,
    },
    Reshape {
        input: Var,
    },
    SliceChannels {
        input: Var,
        start: usize,
    },
    AppendChannelMean {
        input: Var,
    },
    BceLoss {
        probs: Var,
        target: f64,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Recorded operation graph with eager forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ran_backward: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a constant: no gradient will be tracked through it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Register a differentiable leaf (a parameter or an input whose
    /// gradient is wanted).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`. Zeros if
    /// no gradient flowed to it.
    pub fn grad(&self, v: Var) -> Result<Vec<f64>, TensorError> {
        if !self.ran_backward {
            return Err(TensorError::BackwardNotRun);
        }
        Ok(match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].value.numel()],
        })
    }

    // ── forward builders ────────────────────────────────────────────

    pub fn conv(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        spec: &ConvSpec,
    ) -> Result<Var, TensorError> {
        let value = conv::conv_forward(
            self.value(input),
            spec,
            self.value(weight),
            self.value(bias),
        )?;
        let rg = self.requires(input) || self.requires(weight) || self.requires(bias);
        Ok(self.push(
            value,
            rg,
            Op::Conv {
                input,
                weight,
                bias,
                spec: spec.clone(),
            },
        ))
    }

    pub fn conv_transpose(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        spec: &ConvSpec,
    ) -> Result<Var, TensorError> {
        let value = conv::conv_transpose_forward(
            self.value(input),
            spec,
            self.value(weight),
            self.value(bias),
        )?;
        let rg = self.requires(input) || self.requires(weight) || self.requires(bias);
        Ok(self.push(
            value,
            rg,
            Op::ConvTranspose {
                input,
                weight,
                bias,
                spec: spec.clone(),
            },
        ))
    }

    /// Train-mode batch norm; also reports the instance moments so the
    /// caller can maintain running averages.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchMoments), TensorError> {
        let (value, saved, moments) = norm::bn_train_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            eps,
        )?;
        let rg = self.requires(input) || self.requires(gamma) || self.requires(beta);
        let v = self.push(
            value,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
                train: true,
            },
        );
        Ok((v, moments))
    }

    /// Eval-mode batch norm against fixed running moments.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        run_mean: &[f64],
        run_var: &[f64],
    ) -> Result<Var, TensorError> {
        let (value, saved) = norm::bn_eval_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            eps,
            run_mean,
            run_var,
        )?;
        let rg = self.requires(input) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            value,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
                train: false,
            },
        ))
    }

    pub fn activation(&mut self, input: Var, kind: ActivationKind) -> Var {
        let value = super::activation(self.value(input), kind);
        let rg = self.requires(input);
        self.push(value, rg, Op::Activation { input, kind })
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        self.activation(input, ActivationKind::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, ActivationKind::Tanh)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, ActivationKind::Sigmoid)
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        context: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                context: context.into(),
                expected: ta.shape().to_vec(),
                actual: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary_elementwise(a, b, "add", |x, y| x + y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary_elementwise(a, b, "sub", |x, y| x - y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary_elementwise(a, b, "mul", |x, y| x * y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::Mul { a, b }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary_elementwise(a, b, "div", |x, y| x / y)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::Div { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let t = self.value(input);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&x| factor * x).collect(),
        )
        .expect("same shape");
        let rg = self.requires(input);
        self.push(value, rg, Op::Scale { input, factor })
    }

    pub fn add_scalar(&mut self, input: Var, offset: f64) -> Var {
        let t = self.value(input);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&x| x + offset).collect(),
        )
        .expect("same shape");
        let rg = self.requires(input);
        self.push(value, rg, Op::AddScalar { input })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).data().iter().sum());
        let rg = self.requires(input);
        self.push(value, rg, Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64);
        let rg = self.requires(input);
        self.push(value, rg, Op::Mean { input })
    }

    pub fn abs(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x.abs()).collect())
            .expect("same shape");
        let rg = self.requires(input);
        self.push(value, rg, Op::Abs { input })
    }

    pub fn sqrt(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| x.sqrt()).collect())
            .expect("same shape");
        let rg = self.requires(input);
        self.push(value, rg, Op::Sqrt { input })
    }

    /// Broadcast-multiply a `[1, spatial...]` gate over the channels of
    /// `[C, spatial...]` features.
    pub fn mul_gate(&mut self, feat: Var, gate: Var) -> Result<Var, TensorError> {
        let (tf, tg) = (self.value(feat), self.value(gate));
        let mut expected = tf.shape().to_vec();
        expected[0] = 1;
        if tg.shape() != expected {
            return Err(TensorError::ShapeMismatch {
                context: "mul_gate gate".into(),
                expected,
                actual: tg.shape().to_vec(),
            });
        }
        let c = tf.shape()[0];
        let n = tf.numel() / c;
        let mut data = vec![0.0; tf.numel()];
        for ci in 0..c {
            for i in 0..n {
                data[ci * n + i] = tf.data()[ci * n + i] * tg.data()[i];
            }
        }
        let value = Tensor::new(tf.shape().to_vec(), data)?;
        let rg = self.requires(feat) || self.requires(gate);
        Ok(self.push(value, rg, Op::MulGate { feat, gate }))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let value = self.value(input).clone().reshaped(shape)?;
        let rg = self.requires(input);
        Ok(self.push(value, rg, Op::Reshape { input }))
    }

    /// Keep channels `start .. start + len` of a `[C, rest...]` tensor.
    pub fn slice_channels(
        &mut self,
        input: Var,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let t = self.value(input);
        let c = t.shape()[0];
        if start + len > c {
            return Err(TensorError::ChannelMismatch {
                context: "slice_channels".into(),
                expected: c,
                actual: start + len,
            });
        }
        let n = t.numel() / c;
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let data = t.data()[start * n..(start + len) * n].to_vec();
        let value = Tensor::new(shape, data)?;
        let rg = self.requires(input);
        Ok(self.push(value, rg, Op::SliceChannels { input, start }))
    }

    /// Append one channel holding the per-location mean over the existing
    /// channels: `[C, rest...] -> [C+1, rest...]`.
    pub fn append_channel_mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let c = t.shape()[0];
        let n = t.numel() / c;
        let mut shape = t.shape().to_vec();
        shape[0] = c + 1;
        let mut data = Vec::with_capacity((c + 1) * n);
        data.extend_from_slice(t.data());
        for i in 0..n {
            let mut acc = 0.0;
            for ci in 0..c {
                acc += t.data()[ci * n + i];
            }
            data.push(acc / c as f64);
        }
        let value = Tensor::new(shape, data).expect("shape computed");
        let rg = self.requires(input);
        self.push(value, rg, Op::AppendChannelMean { input })
    }

    /// Mean binary cross-entropy of a probability map against a constant
    /// target (1.0 for real, 0.0 for fake). Values are clamped away from
    /// {0, 1} by 1e-7 before the logarithms.
    pub fn bce_loss(&mut self, probs: Var, target: f64) -> Var {
        let t = self.value(probs);
        let n = t.numel() as f64;
        let mut acc = 0.0;
        for &p in t.data() {
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            acc -= target * pc.ln() + (1.0 - target) * (1.0 - pc).ln();
        }
        let value = Tensor::scalar(acc / n);
        let rg = self.requires(probs);
        self.push(value, rg, Op::BceLoss { probs, target })
    }

    // ── backward ────────────────────────────────────────────────────

    fn acc(&mut self, v: Var, contribution: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        debug_assert_eq!(contribution.len(), numel);
        match &mut self.nodes[v.0].grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => self.nodes[v.0].grad = Some(contribution.to_vec()),
        }
    }

    /// Replay the graph in reverse from `loss`, which must be scalar.
    /// Gradients are then available through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.ran_backward {
            return Err(TensorError::InvalidSpec(
                "backward already ran on this tape".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::InvalidSpec(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(d_out) = self.nodes[idx].grad.clone() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backward_op(&op, &d_out);
        }
        self.ran_backward = true;
        Ok(())
    }

    fn backward_op(&mut self, op: &Op, d_out: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Conv {
                input,
                weight,
                bias,
                spec,
            } => {
                let need_dx = self.requires(*input);
                let (dx, dw, db) = match spec.dimensionality() {
                    2 => conv::conv2d_backward(
                        self.value(*input),
                        spec,
                        self.value(*weight),
                        d_out,
                        need_dx,
                    ),
                    _ => conv::conv3d_backward(
                        self.value(*input),
                        spec,
                        self.value(*weight),
                        d_out,
                        need_dx,
                    ),
                };
                if let Some(dx) = dx {
                    self.acc(*input, &dx);
                }
                self.acc(*weight, &dw);
                self.acc(*bias, &db);
            }
            Op::ConvTranspose {
                input,
                weight,
                bias,
                spec,
            } => {
                let need_dx = self.requires(*input);
                let (dx, dw, db) = match spec.dimensionality() {
                    2 => conv::conv_transpose2d_backward(
                        self.value(*input),
                        spec,
                        d_out,
                        self.value(*weight),
                        need_dx,
                    ),
                    _ => conv::conv_transpose3d_backward(
                        self.value(*input),
                        spec,
                        d_out,
                        self.value(*weight),
                        need_dx,
                    ),
                };
                if let Some(dx) = dx {
                    self.acc(*input, &dx);
                }
                self.acc(*weight, &dw);
                self.acc(*bias, &db);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
                train,
            } => {
                let c = self.value(*gamma).numel();
                let (dx, dg, db) = if *train {
                    norm::bn_train_backward(d_out, self.value(*gamma), saved, c)
                } else {
                    norm::bn_eval_backward(d_out, self.value(*gamma), saved, c)
                };
                self.acc(*input, &dx);
                self.acc(*gamma, &dg);
                self.acc(*beta, &db);
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input).data();
                let dx: Vec<f64> = match kind {
                    ActivationKind::LeakyRelu(slope) => d_out
                        .iter()
                        .zip(x)
                        .map(|(&d, &xi)| if xi >= 0.0 { d } else { slope * d })
                        .collect(),
                    ActivationKind::Tanh => d_out
                        .iter()
                        .zip(x)
                        .map(|(&d, &xi)| {
                            let y = xi.tanh();
                            d * (1.0 - y * y)
                        })
                        .collect(),
                    ActivationKind::Sigmoid => d_out
                        .iter()
                        .zip(x)
                        .map(|(&d, &xi)| {
                            let y = ActivationKind::Sigmoid.apply(xi);
                            d * y * (1.0 - y)
                        })
                        .collect(),
                };
                self.acc(*input, &dx);
            }
            Op::Add { a, b } => {
                self.acc(*a, d_out);
                self.acc(*b, d_out);
            }
            Op::Sub { a, b } => {
                self.acc(*a, d_out);
                let neg: Vec<f64> = d_out.iter().map(|&d| -d).collect();
                self.acc(*b, &neg);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&d, &y)| d * y)
                    .collect();
                let db: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&d, &x)| d * x)
                    .collect();
                self.acc(*a, &da);
                self.acc(*b, &db);
            }
            Op::Div { a, b } => {
                let bv = self.value(*b).data();
                let av = self.value(*a).data();
                let da: Vec<f64> = d_out.iter().zip(bv).map(|(&d, &y)| d / y).collect();
                let db: Vec<f64> = d_out
                    .iter()
                    .zip(av.iter().zip(bv))
                    .map(|(&d, (&x, &y))| -d * x / (y * y))
                    .collect();
                self.acc(*a, &da);
                self.acc(*b, &db);
            }
            Op::Scale { input, factor } => {
                let dx: Vec<f64> = d_out.iter().map(|&d| factor * d).collect();
                self.acc(*input, &dx);
            }
            Op::AddScalar { input } | Op::Reshape { input } => {
                self.acc(*input, d_out);
            }
            Op::Sum { input } => {
                let n = self.nodes[input.0].value.numel();
                self.acc(*input, &vec![d_out[0]; n]);
            }
            Op::Mean { input } => {
                let n = self.nodes[input.0].value.numel();
                self.acc(*input, &vec![d_out[0] / n as f64; n]);
            }
            Op::Abs { input } => {
                let dx: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*input).data())
                    .map(|(&d, &xi)| d * xi.signum() * if xi == 0.0 { 0.0 } else { 1.0 })
                    .collect();
                self.acc(*input, &dx);
            }
            Op::Sqrt { input } => {
                let dx: Vec<f64> = d_out
                    .iter()
                    .zip(self.value(*input).data())
                    .map(|(&d, &xi)| d * 0.5 / xi.sqrt())
                    .collect();
                self.acc(*input, &dx);
            }
            Op::MulGate { feat, gate } => {
                let tf = self.value(*feat);
                let c = tf.shape()[0];
                let n = tf.numel() / c;
                let gv = self.value(*gate).data().to_vec();
                let fv = tf.data().to_vec();
                let mut d_feat = vec![0.0; c * n];
                let mut d_gate = vec![0.0; n];
                for ci in 0..c {
                    for i in 0..n {
                        d_feat[ci * n + i] = d_out[ci * n + i] * gv[i];
                        d_gate[i] += d_out[ci * n + i] * fv[ci * n + i];
                    }
                }
                self.acc(*feat, &d_feat);
                self.acc(*gate, &d_gate);
            }
            Op::SliceChannels { input, start } => {
                let t = &self.nodes[input.0].value;
                let c = t.shape()[0];
                let n = t.numel() / c;
                let mut dx = vec![0.0; t.numel()];
                dx[start * n..start * n + d_out.len()].copy_from_slice(d_out);
                self.acc(*input, &dx);
            }
            Op::AppendChannelMean { input } => {
                let t = &self.nodes[input.0].value;
                let c = t.shape()[0];
                let n = t.numel() / c;
                let mut dx = vec![0.0; t.numel()];
                for ci in 0..c {
                    for i in 0..n {
                        dx[ci * n + i] = d_out[ci * n + i] + d_out[c * n + i] / c as f64;
                    }
                }
                self.acc(*input, &dx);
            }
            Op::BceLoss { probs, target } => {
                let t = self.value(*probs);
                let n = t.numel() as f64;
                let g = d_out[0];
                let dx: Vec<f64> = t
                    .data()
                    .iter()
                    .map(|&p| {
                        if p < BCE_EPS || p > 1.0 - BCE_EPS {
                            0.0
                        } else {
                            g * (p - target) / (p * (1.0 - p)) / n
                        }
                    })
                    .collect();
                self.acc(*probs, &dx);
            }
        }
    }
}
