//! Reverse-mode automatic differentiation over recorded tensor operations.
//!
//! A [`Graph`] is a define-by-run tape: every operation appends a node that
//! stores its output value plus whatever the backward pass needs. Nodes only
//! ever reference earlier nodes, so reverse iteration is a valid topological
//! order. [`Graph::backward`] seeds a scalar loss with 1 and pushes gradients
//! to every differentiable leaf.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activations::{self, ActivationKind, Mode};
use crate::error::{Error, Result};
use crate::losses;
use crate::norm::{self, BnRunningState, NormSaved};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Constant,
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Matmul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    DenseBias {
        input: NodeId,
        bias: NodeId,
    },
    GlobalAvgPool(NodeId),
    Activation {
        input: NodeId,
        kind: ActivationKind,
        mode: Mode,
        /// RReLU train-mode slopes sampled in the forward pass; the backward
        /// pass reuses them, keeping the pair consistent.
        slopes: Option<Vec<T>>,
    },
    PRelu {
        input: NodeId,
        slope: NodeId,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: NormSaved<T>,
    },
    LayerNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: NormSaved<T>,
    },
    GroupNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        saved: NormSaved<T>,
    },
    Mse {
        y: NodeId,
        yhat: NodeId,
    },
    Mae {
        y: NodeId,
        yhat: NodeId,
    },
    Huber {
        y: NodeId,
        yhat: NodeId,
        delta: T,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
    Hinge {
        labels: Vec<T>,
        pred: NodeId,
    },
    Triplet {
        anchor: NodeId,
        positive: NodeId,
        negative: NodeId,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradient tensors indexed by node; one slot per differentiable leaf (and
/// any interior node on a path to the loss).
#[derive(Debug)]
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.by_node.get_mut(id.0).and_then(|g| g.take())
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Differentiable leaf (parameter or traced input).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, op: &'static str, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Internal(format!(
                "{op}: node {} not yet recorded (cycle or foreign id)",
                id.0
            )));
        }
        Ok(())
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check("add", a)?;
        self.check("add", b)?;
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check("sub", a)?;
        self.check("sub", b)?;
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check("mul", a)?;
        self.check("mul", b)?;
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        self.check("scale", x)?;
        let v = self.value(x).map(|v| v * c);
        let ng = self.needs(&[x]);
        Ok(self.push(v, Op::Scale(x, c), ng))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check("sum", x)?;
        let v = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(&[x]);
        Ok(self.push(v, Op::Sum(x), ng))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check("mean", x)?;
        let n = self.value(x).numel();
        let v = Tensor::scalar(self.value(x).sum() / T::from_usize(n));
        let ng = self.needs(&[x]);
        Ok(self.push(v, Op::Mean(x), ng))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.check("reshape", x)?;
        let v = self.value(x).reshape(shape)?;
        let ng = self.needs(&[x]);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check("matmul", a)?;
        self.check("matmul", b)?;
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(v, Op::Matmul(a, b), ng))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        for id in [input, kernel, bias] {
            self.check("conv2d", id)?;
        }
        let v = tensor::conv2d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            padding,
        )?;
        let ng = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            ng,
        ))
    }

    /// `[N,F] + [F]` row-broadcast bias.
    pub fn dense_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check("dense_bias", input)?;
        self.check("dense_bias", bias)?;
        let x = self.value(input);
        let b = self.value(bias);
        if x.shape().len() != 2 || b.shape() != [x.shape()[1]] {
            return Err(Error::ShapeMismatch {
                op: "dense_bias",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let f = x.shape()[1];
        let mut v = x.clone();
        for row in v.data_mut().chunks_mut(f) {
            for (rv, bv) in row.iter_mut().zip(b.data()) {
                *rv += *bv;
            }
        }
        let ng = self.needs(&[input, bias]);
        Ok(self.push(v, Op::DenseBias { input, bias }, ng))
    }

    /// `[N,C,H,W] -> [N,C]` global average pooling.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.check("global_avg_pool", x)?;
        let t = self.value(x);
        if t.shape().len() != 4 {
            return Err(Error::InvalidShape {
                op: "global_avg_pool",
                shape: t.shape().to_vec(),
                reason: "expected [N,C,H,W]".into(),
            });
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let spatial = t.shape()[2] * t.shape()[3];
        let mut v = Tensor::zeros(vec![n, c]);
        for i in 0..n * c {
            let mut s = T::ZERO;
            for j in 0..spatial {
                s += t.data()[i * spatial + j];
            }
            v.data_mut()[i] = s / T::from_usize(spatial);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(v, Op::GlobalAvgPool(x), ng))
    }

    /// Elementwise activation. RReLU in train mode samples one slope per
    /// element from `rng` and stores them for the backward pass.
    pub fn activation(
        &mut self,
        kind: ActivationKind,
        x: NodeId,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        self.check("activation", x)?;
        kind.validate()?;
        let (v, slopes) = match kind {
            ActivationKind::RRelu { lower, upper } if mode == Mode::Train => {
                let n = self.value(x).numel();
                let slopes = activations::sample_rrelu_slopes::<T>(lower, upper, n, rng);
                let mut out = self.value(x).clone();
                for (o, s) in out.data_mut().iter_mut().zip(&slopes) {
                    *o = activations::forward_scalar(&kind, *o, *s);
                }
                (out, Some(slopes))
            }
            _ => (
                activations::apply_activation(&kind, self.value(x), mode, rng)?,
                None,
            ),
        };
        let ng = self.needs(&[x]);
        Ok(self.push(
            v,
            Op::Activation {
                input: x,
                kind,
                mode,
                slopes,
            },
            ng,
        ))
    }

    /// PReLU with its slope as a learnable scalar leaf.
    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId> {
        self.check("prelu", x)?;
        self.check("prelu", slope)?;
        let s = self.value(slope).item()?;
        let v = self
            .value(x)
            .map(|v| if v > T::ZERO { v } else { s * v });
        let ng = self.needs(&[x, slope]);
        Ok(self.push(v, Op::PRelu { input: x, slope }, ng))
    }

    /// Batch normalization; updates `state` in train mode.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: &mut BnRunningState<T>,
        epsilon: T,
        momentum: T,
        mode: Mode,
    ) -> Result<NodeId> {
        for id in [x, gamma, beta] {
            self.check("batch_norm", id)?;
        }
        let xt = self.value(x);
        if xt.shape().len() < 2 || xt.shape()[0] == 0 {
            return Err(Error::Contract {
                op: "batch_norm",
                reason: format!("need a nonempty [N,C,...] input, got {:?}", xt.shape()),
            });
        }
        let channels = xt.shape()[1];
        let n = xt.shape()[0];
        let spatial: usize = xt.shape()[2..].iter().product();
        let (mean, var, train) = match mode {
            Mode::Train => {
                let (m, v) = norm::bn_stats(xt, channels);
                for c in 0..channels {
                    let rm = &mut state.mean.data_mut()[c];
                    *rm = (T::ONE - momentum) * *rm + momentum * m[c];
                    let rv = &mut state.var.data_mut()[c];
                    *rv = (T::ONE - momentum) * *rv + momentum * v[c];
                }
                (m, v, true)
            }
            Mode::Eval => (state.mean.data().to_vec(), state.var.data().to_vec(), false),
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::ONE / (*v + epsilon).sqrt()).collect();
        let mut out = xt.clone();
        let g = self.value(gamma);
        let b = self.value(beta);
        for img in 0..n {
            for c in 0..channels {
                let base = (img * channels + c) * spatial;
                for i in 0..spatial {
                    let xv = out.data()[base + i];
                    out.data_mut()[base + i] =
                        g.data()[c] * (xv - mean[c]) * inv_std[c] + b.data()[c];
                }
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                saved: NormSaved {
                    mean,
                    inv_std,
                    train,
                },
            },
            ng,
        ))
    }

    /// Layer normalization over the trailing feature dimension.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        epsilon: T,
    ) -> Result<NodeId> {
        for id in [x, gamma, beta] {
            self.check("layer_norm", id)?;
        }
        let xt = self.value(x);
        let d = *xt.shape().last().ok_or(Error::Contract {
            op: "layer_norm",
            reason: "rank-0 input".into(),
        })?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: self.value(gamma).shape().to_vec(),
                right: vec![d],
            });
        }
        let (mean, var) = norm::ln_stats(xt, d);
        let inv_std: Vec<T> = var.iter().map(|v| T::ONE / (*v + epsilon).sqrt()).collect();
        let rows = xt.numel() / d;
        let mut out = xt.clone();
        let g = self.value(gamma);
        let b = self.value(beta);
        for r in 0..rows {
            for i in 0..d {
                let xv = out.data()[r * d + i];
                out.data_mut()[r * d + i] =
                    g.data()[i] * (xv - mean[r]) * inv_std[r] + b.data()[i];
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                input: x,
                gamma,
                beta,
                saved: NormSaved {
                    mean,
                    inv_std,
                    train: true,
                },
            },
            ng,
        ))
    }

    /// Group normalization over contiguous channel groups of an [N,C,H,W] input.
    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        epsilon: T,
    ) -> Result<NodeId> {
        for id in [x, gamma, beta] {
            self.check("group_norm", id)?;
        }
        let xt = self.value(x);
        if xt.shape().len() != 4 {
            return Err(Error::InvalidShape {
                op: "group_norm",
                shape: xt.shape().to_vec(),
                reason: "expected [N,C,H,W]".into(),
            });
        }
        let channels = xt.shape()[1];
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "group norm requires C divisible by G, got C={channels}, G={groups}"
            )));
        }
        let (mean, var) = norm::gn_stats(xt, groups);
        let inv_std: Vec<T> = var.iter().map(|v| T::ONE / (*v + epsilon).sqrt()).collect();
        let n = xt.shape()[0];
        let spatial = xt.shape()[2] * xt.shape()[3];
        let per_group = channels / groups;
        let region = per_group * spatial;
        let mut out = xt.clone();
        let g = self.value(gamma);
        let b = self.value(beta);
        for r in 0..n * groups {
            let group = r % groups;
            let base = r * region;
            for i in 0..region {
                let c = group * per_group + i / spatial;
                let xv = out.data()[base + i];
                out.data_mut()[base + i] =
                    g.data()[c] * (xv - mean[r]) * inv_std[r] + b.data()[c];
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::GroupNorm {
                input: x,
                gamma,
                beta,
                groups,
                saved: NormSaved {
                    mean,
                    inv_std,
                    train: true,
                },
            },
            ng,
        ))
    }

    pub fn mse(&mut self, y: NodeId, yhat: NodeId) -> Result<NodeId> {
        self.check("mse", y)?;
        self.check("mse", yhat)?;
        let v = losses::mse(self.value(y), self.value(yhat))?;
        let ng = self.needs(&[y, yhat]);
        Ok(self.push(Tensor::scalar(v), Op::Mse { y, yhat }, ng))
    }

    pub fn mae(&mut self, y: NodeId, yhat: NodeId) -> Result<NodeId> {
        self.check("mae", y)?;
        self.check("mae", yhat)?;
        let v = losses::mae(self.value(y), self.value(yhat))?;
        let ng = self.needs(&[y, yhat]);
        Ok(self.push(Tensor::scalar(v), Op::Mae { y, yhat }, ng))
    }

    pub fn huber(&mut self, y: NodeId, yhat: NodeId, delta: T) -> Result<NodeId> {
        self.check("huber", y)?;
        self.check("huber", yhat)?;
        let v = losses::huber(self.value(y), self.value(yhat), delta)?;
        let ng = self.needs(&[y, yhat]);
        Ok(self.push(Tensor::scalar(v), Op::Huber { y, yhat, delta }, ng))
    }

    pub fn cross_entropy(&mut self, labels: &[usize], logits: NodeId) -> Result<NodeId> {
        self.check("cross_entropy", logits)?;
        let v = losses::cross_entropy(labels, self.value(logits))?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "cross_entropy loss".into(),
            });
        }
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(v),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    pub fn hinge(&mut self, labels: &Tensor<T>, pred: NodeId) -> Result<NodeId> {
        self.check("hinge", pred)?;
        let v = losses::hinge(labels, self.value(pred))?;
        let ng = self.needs(&[pred]);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Hinge {
                labels: labels.data().to_vec(),
                pred,
            },
            ng,
        ))
    }

    pub fn triplet(
        &mut self,
        anchor: NodeId,
        positive: NodeId,
        negative: NodeId,
        margin: T,
    ) -> Result<NodeId> {
        for id in [anchor, positive, negative] {
            self.check("triplet", id)?;
        }
        let v = losses::triplet(
            self.value(anchor),
            self.value(positive),
            self.value(negative),
            margin,
        )?;
        let ng = self.needs(&[anchor, positive, negative]);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Triplet {
                anchor,
                positive,
                negative,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar loss node to every differentiable leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.check("backward", loss)?;
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract {
                op: "backward",
                reason: format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else {
                continue;
            };
            self.backward_node(i, &g, &mut grads)?;
        }
        Ok(Gradients { by_node: grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += *d;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn backward_node(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &self.nodes[i].op {
            Op::Constant | Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let da = g.zip_map(self.value(*b), "mul backward", |gv, bv| gv * bv)?;
                let db = g.zip_map(self.value(*a), "mul backward", |gv, av| gv * av)?;
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape().to_vec(), gv));
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).numel());
                let gv = g.data()[0] / n;
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape().to_vec(), gv));
            }
            Op::Reshape(x) => {
                let back = g.reshape(self.value(*x).shape().to_vec())?;
                self.accumulate(grads, *x, back);
            }
            Op::Matmul(a, b) => {
                let bt = tensor::transpose2d(self.value(*b))?;
                let da = tensor::matmul(g, &bt)?;
                let at = tensor::transpose2d(self.value(*a))?;
                let db = tensor::matmul(&at, g)?;
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (dinput, dkernel, dbias) = tensor::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    *padding,
                )?;
                self.accumulate(grads, *input, dinput);
                self.accumulate(grads, *kernel, dkernel);
                self.accumulate(grads, *bias, dbias);
            }
            Op::DenseBias { input, bias } => {
                let f = self.value(*bias).numel();
                let mut db = Tensor::zeros(vec![f]);
                for row in g.data().chunks(f) {
                    for (acc, gv) in db.data_mut().iter_mut().zip(row) {
                        *acc += *gv;
                    }
                }
                self.accumulate(grads, *input, g.clone());
                self.accumulate(grads, *bias, db);
            }
            Op::GlobalAvgPool(x) => {
                let xt = self.value(*x);
                let spatial = xt.shape()[2] * xt.shape()[3];
                let inv = T::ONE / T::from_usize(spatial);
                let mut dx = Tensor::zeros(xt.shape().to_vec());
                for i in 0..g.numel() {
                    let gv = g.data()[i] * inv;
                    for j in 0..spatial {
                        dx.data_mut()[i * spatial + j] = gv;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Activation {
                input,
                kind,
                mode,
                slopes,
            } => {
                let xt = self.value(*input);
                let dx = match slopes {
                    Some(s) => {
                        let mut out = xt.clone();
                        for (i, o) in out.data_mut().iter_mut().enumerate() {
                            *o = activations::derivative_scalar(kind, xt.data()[i], s[i]);
                        }
                        out
                    }
                    None => {
                        // Non-stochastic kinds and eval-mode RReLU; rng unused.
                        let mut rng = ChaCha8Rng::seed_from_u64(0);
                        activations::activation_derivative(kind, xt, *mode, &mut rng)?
                    }
                };
                let dx = dx.zip_map(g, "activation backward", |d, gv| d * gv)?;
                self.accumulate(grads, *input, dx);
            }
            Op::PRelu { input, slope } => {
                let s = self.value(*slope).item()?;
                let xt = self.value(*input);
                let dx = xt.zip_map(g, "prelu backward", |xv, gv| {
                    if xv > T::ZERO {
                        gv
                    } else {
                        s * gv
                    }
                })?;
                let mut ds = T::ZERO;
                for (xv, gv) in xt.data().iter().zip(g.data()) {
                    if *xv <= T::ZERO {
                        ds += *gv * *xv;
                    }
                }
                self.accumulate(grads, *input, dx);
                self.accumulate(grads, *slope, Tensor::scalar(ds));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dgamma, dbeta) =
                    norm::bn_backward(self.value(*input), self.value(*gamma).data(), saved, g);
                self.accumulate(grads, *input, dx);
                self.accumulate(grads, *gamma, Tensor::new(vec![dgamma.len()], dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(vec![dbeta.len()], dbeta)?);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dgamma, dbeta) =
                    norm::ln_backward(self.value(*input), self.value(*gamma).data(), saved, g);
                self.accumulate(grads, *input, dx);
                self.accumulate(grads, *gamma, Tensor::new(vec![dgamma.len()], dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(vec![dbeta.len()], dbeta)?);
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                saved,
            } => {
                let (dx, dgamma, dbeta) = norm::gn_backward(
                    self.value(*input),
                    self.value(*gamma).data(),
                    *groups,
                    saved,
                    g,
                );
                self.accumulate(grads, *input, dx);
                self.accumulate(grads, *gamma, Tensor::new(vec![dgamma.len()], dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(vec![dbeta.len()], dbeta)?);
            }
            Op::Mse { y, yhat } => {
                let gs = g.data()[0];
                let n = T::from_usize(self.value(*y).numel());
                let two = T::from_f64(2.0);
                let diff = self
                    .value(*y)
                    .zip_map(self.value(*yhat), "mse backward", |a, b| a - b)?;
                let dy = diff.map(|d| gs * two * d / n);
                let dyhat = diff.map(|d| -(gs * two * d / n));
                self.accumulate(grads, *y, dy);
                self.accumulate(grads, *yhat, dyhat);
            }
            Op::Mae { y, yhat } => {
                let gs = g.data()[0];
                let n = T::from_usize(self.value(*y).numel());
                let sign = |d: T| {
                    if d > T::ZERO {
                        T::ONE
                    } else if d < T::ZERO {
                        -T::ONE
                    } else {
                        T::ZERO // subgradient at the kink
                    }
                };
                let diff = self
                    .value(*y)
                    .zip_map(self.value(*yhat), "mae backward", |a, b| a - b)?;
                let dy = diff.map(|d| gs * sign(d) / n);
                let dyhat = diff.map(|d| -(gs * sign(d) / n));
                self.accumulate(grads, *y, dy);
                self.accumulate(grads, *yhat, dyhat);
            }
            Op::Huber { y, yhat, delta } => {
                let gs = g.data()[0];
                let n = T::from_usize(self.value(*y).numel());
                let delta = *delta;
                let rho_prime = move |r: T| {
                    if r.abs() <= delta {
                        r
                    } else if r > T::ZERO {
                        delta
                    } else {
                        -delta
                    }
                };
                let diff = self
                    .value(*y)
                    .zip_map(self.value(*yhat), "huber backward", |a, b| a - b)?;
                let dy = diff.map(|d| gs * rho_prime(d) / n);
                let dyhat = diff.map(|d| -(gs * rho_prime(d) / n));
                self.accumulate(grads, *y, dy);
                self.accumulate(grads, *yhat, dyhat);
            }
            Op::CrossEntropy { logits, labels } => {
                let gs = g.data()[0];
                let lt = self.value(*logits);
                let (n, k) = (lt.shape()[0], lt.shape()[1]);
                let inv_n = T::ONE / T::from_usize(n);
                let mut dlogits = Tensor::zeros(lt.shape().to_vec());
                let mut logp = vec![T::ZERO; k];
                for (r, &label) in labels.iter().enumerate() {
                    losses::log_softmax_row(&lt.data()[r * k..(r + 1) * k], &mut logp);
                    for c in 0..k {
                        let p = logp[c].exp();
                        let onehot = if c == label { T::ONE } else { T::ZERO };
                        dlogits.data_mut()[r * k + c] = gs * (p - onehot) * inv_n;
                    }
                }
                self.accumulate(grads, *logits, dlogits);
            }
            Op::Hinge { labels, pred } => {
                let gs = g.data()[0];
                let pt = self.value(*pred);
                let n = T::from_usize(pt.numel());
                let mut dpred = Tensor::zeros(pt.shape().to_vec());
                for i in 0..pt.numel() {
                    let margin = T::ONE - labels[i] * pt.data()[i];
                    if margin > T::ZERO {
                        dpred.data_mut()[i] = -(gs * labels[i] / n);
                    }
                }
                self.accumulate(grads, *pred, dpred);
            }
            Op::Triplet {
                anchor,
                positive,
                negative,
            } => {
                let gs = g.data()[0];
                if self.nodes[i].value.data()[0] <= T::ZERO {
                    return Ok(()); // hinge inactive, zero gradient everywhere
                }
                let a = self.value(*anchor);
                let p = self.value(*positive);
                let nn = self.value(*negative);
                let dp = losses::euclidean(a.data(), p.data());
                let dn = losses::euclidean(a.data(), nn.data());
                let tiny = T::from_f64(1e-12);
                let mut da = Tensor::zeros(a.shape().to_vec());
                let mut dpos = Tensor::zeros(a.shape().to_vec());
                let mut dneg = Tensor::zeros(a.shape().to_vec());
                for j in 0..a.numel() {
                    if dp > tiny {
                        let u = (a.data()[j] - p.data()[j]) / dp;
                        da.data_mut()[j] += gs * u;
                        dpos.data_mut()[j] -= gs * u;
                    }
                    if dn > tiny {
                        let u = (a.data()[j] - nn.data()[j]) / dn;
                        da.data_mut()[j] -= gs * u;
                        dneg.data_mut()[j] += gs * u;
                    }
                }
                self.accumulate(grads, *anchor, da);
                self.accumulate(grads, *positive, dpos);
                self.accumulate(grads, *negative, dneg);
            }
        }
        Ok(())
    }
}

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h.
///
/// The verification oracle for every backward formula in this crate.
pub fn finite_diff_grad<T: Scalar>(
    f: &mut dyn FnMut(&Tensor<T>) -> Result<T>,
    x: &Tensor<T>,
    h: T,
) -> Result<Tensor<T>> {
    if h <= T::ZERO {
        return Err(Error::InvalidParameter {
            name: "h",
            value: h.to_f64(),
            reason: "step must be positive",
        });
    }
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite_diff_grad probe at coordinate {i}"),
            });
        }
        grad.data_mut()[i] = (up - down) / (h + h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| r.random::<f64>() * 2.0 - 1.0)
    }

    /// |a-b| <= tol * (1 + max(|a|,|b|))
    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn backward_of_square_is_2x() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0f64));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data()[0], 6.0);
    }

    #[test]
    fn backward_of_linear_map() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::<f64>::eye(2));
        let z = g.leaf(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let wz = g.matmul(w, z).unwrap();
        let loss = g.sum(wz).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(grads.wrt(z).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::<f64>::zeros(vec![3]));
        assert!(matches!(
            g.backward(x),
            Err(Error::Contract { .. })
        ));
    }

    #[test]
    fn finite_diff_point_examples() {
        let x = Tensor::new(vec![3], vec![0.4, -1.0, 2.0]).unwrap();
        let g = finite_diff_grad(&mut |t: &Tensor<f64>| Ok(t.sum()), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        let x = Tensor::scalar(3.0f64);
        let g = finite_diff_grad(&mut |t: &Tensor<f64>| Ok(t.data()[0] * t.data()[0]), &x, 1e-5)
            .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
        assert!(finite_diff_grad(&mut |t: &Tensor<f64>| Ok(t.sum()), &x, 0.0).is_err());
        // non-finite probe values propagate as errors
        let bad = finite_diff_grad(&mut |t: &Tensor<f64>| Ok((t.data()[0] - 3.0).ln()), &x, 1e-5);
        assert!(matches!(bad, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn finite_diff_matches_gelu_analytic_derivative() {
        // this op IS the oracle; cross-check both GELU derivative forms
        let xs: Vec<f64> = (-3..=3).map(|i| i as f64).collect();
        let x = Tensor::new(vec![xs.len()], xs.clone()).unwrap();
        let mut f_tanh = |t: &Tensor<f64>| {
            Ok(t.data().iter().map(|&v| activations::gelu_tanh(v)).sum())
        };
        let fd = finite_diff_grad(&mut f_tanh, &x, 1e-5).unwrap();
        for (i, &xv) in xs.iter().enumerate() {
            assert!((fd.data()[i] - activations::gelu_derivative_tanh(xv)).abs() < 1e-6);
        }
        let mut f_exact = |t: &Tensor<f64>| {
            Ok(t.data()
                .iter()
                .map(|&v| activations::gelu_exact(v, 1.0).unwrap())
                .sum())
        };
        let fd = finite_diff_grad(&mut f_exact, &x, 1e-5).unwrap();
        for (i, &xv) in xs.iter().enumerate() {
            assert!((fd.data()[i] - activations::gelu_derivative_exact(xv)).abs() < 1e-6);
        }
    }

    #[test]
    fn two_layer_tanh_net_gradients_match_finite_differences() {
        let mut r = rng(42);
        let w1v = rand_tensor(&[3, 2], &mut r);
        let w2v = rand_tensor(&[1, 3], &mut r);
        let xv = rand_tensor(&[2, 1], &mut r);

        let run = |w1t: &Tensor<f64>, w2t: &Tensor<f64>| -> f64 {
            let mut g = Graph::new();
            let w1 = g.leaf(w1t.clone());
            let w2 = g.leaf(w2t.clone());
            let x = g.constant(xv.clone());
            let h = g.matmul(w1, x).unwrap();
            let a = g
                .activation(ActivationKind::Tanh, h, Mode::Eval, &mut rng(0))
                .unwrap();
            let out = g.matmul(w2, a).unwrap();
            let loss = g.sum(out).unwrap();
            g.value(loss).data()[0]
        };

        let mut g = Graph::new();
        let w1 = g.leaf(w1v.clone());
        let w2 = g.leaf(w2v.clone());
        let x = g.constant(xv.clone());
        let h = g.matmul(w1, x).unwrap();
        let a = g
            .activation(ActivationKind::Tanh, h, Mode::Eval, &mut rng(0))
            .unwrap();
        let out = g.matmul(w2, a).unwrap();
        let loss = g.sum(out).unwrap();
        let grads = g.backward(loss).unwrap();

        let fd1 = finite_diff_grad(&mut |t: &Tensor<f64>| Ok(run(t, &w2v)), &w1v, 1e-5).unwrap();
        let fd2 = finite_diff_grad(&mut |t: &Tensor<f64>| Ok(run(&w1v, t)), &w2v, 1e-5).unwrap();
        for (a, b) in grads.wrt(w1).unwrap().data().iter().zip(fd1.data()) {
            assert!(close(*a, *b, 1e-6), "{a} vs {b}");
        }
        for (a, b) in grads.wrt(w2).unwrap().data().iter().zip(fd2.data()) {
            assert!(close(*a, *b, 1e-6), "{a} vs {b}");
        }
    }

    #[test]
    fn dense_layer_gradients_satisfy_the_error_recursion() {
        // two dense layers: z1 = W1 x + b1, a1 = tanh(z1), z2 = W2 a1 + b2,
        // L = sum(z2). The returned gradients must equal the layer-wise
        // recursion dL/dW_i = delta_i z_{i-1}^T, dL/db_i = delta_i with
        // delta_1 = (W2^T delta_2) .* phi'(z1).
        let mut r = rng(77);
        let w1v = rand_tensor(&[3, 2], &mut r);
        let b1v = rand_tensor(&[3, 1], &mut r);
        let w2v = rand_tensor(&[2, 3], &mut r);
        let b2v = rand_tensor(&[2, 1], &mut r);
        let xv = rand_tensor(&[2, 1], &mut r);

        let mut g = Graph::new();
        let w1 = g.leaf(w1v.clone());
        let b1 = g.leaf(b1v.clone());
        let w2 = g.leaf(w2v.clone());
        let b2 = g.leaf(b2v.clone());
        let x = g.constant(xv.clone());
        let z1m = g.matmul(w1, x).unwrap();
        let z1 = g.add(z1m, b1).unwrap();
        let a1 = g
            .activation(ActivationKind::Tanh, z1, Mode::Eval, &mut rng(0))
            .unwrap();
        let z2m = g.matmul(w2, a1).unwrap();
        let z2 = g.add(z2m, b2).unwrap();
        let loss = g.sum(z2).unwrap();
        let grads = g.backward(loss).unwrap();

        // hand recursion
        let z1_val: Vec<f64> = (0..3)
            .map(|i| (0..2).map(|k| w1v.data()[i * 2 + k] * xv.data()[k]).sum::<f64>() + b1v.data()[i])
            .collect();
        let a1_val: Vec<f64> = z1_val.iter().map(|v| v.tanh()).collect();
        let delta2 = [1.0f64, 1.0];
        // delta1 = (W2^T delta2) .* (1 - tanh^2 z1)
        let delta1: Vec<f64> = (0..3)
            .map(|i| {
                let back: f64 = (0..2).map(|j| w2v.data()[j * 3 + i] * delta2[j]).sum();
                back * (1.0 - a1_val[i] * a1_val[i])
            })
            .collect();

        let gw2 = grads.wrt(w2).unwrap();
        let gb2 = grads.wrt(b2).unwrap();
        for j in 0..2 {
            assert!((gb2.data()[j] - delta2[j]).abs() <= 1e-12);
            for i in 0..3 {
                // dL/dW2 = delta2 a1^T
                assert!((gw2.data()[j * 3 + i] - delta2[j] * a1_val[i]).abs() <= 1e-12);
            }
        }
        let gw1 = grads.wrt(w1).unwrap();
        let gb1 = grads.wrt(b1).unwrap();
        for i in 0..3 {
            assert!((gb1.data()[i] - delta1[i]).abs() <= 1e-12);
            for k in 0..2 {
                // dL/dW1 = delta1 x^T
                assert!((gw1.data()[i * 2 + k] - delta1[i] * xv.data()[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut g = Graph::new();
            let mut r = rng(9);
            let w = g.leaf(rand_tensor(&[4, 4], &mut r));
            let x = g.constant(rand_tensor(&[4, 2], &mut r));
            let h = g.matmul(w, x).unwrap();
            let a = g
                .activation(ActivationKind::GeluTanh, h, Mode::Train, &mut rng(5))
                .unwrap();
            let loss = g.mean(a).unwrap();
            let grads = g.backward(loss).unwrap();
            grads.wrt(w).unwrap().data().to_vec()
        };
        let a = build();
        let b = build();
        assert_eq!(a, b); // bit-identical
    }

    #[test]
    fn graph_rrelu_reuses_forward_slopes() {
        let kind = ActivationKind::RRelu {
            lower: 0.125,
            upper: 1.0 / 3.0,
        };
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![4], vec![-3.0f64, -1.0, 1.0, 2.0]).unwrap());
        let y = g.activation(kind, x, Mode::Train, &mut rng(11)).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        let xv = g.value(x).clone();
        let yv = g.value(y).clone();
        let gv = grads.wrt(x).unwrap();
        for i in 0..4 {
            if xv.data()[i] < 0.0 {
                let slope = yv.data()[i] / xv.data()[i];
                assert!((gv.data()[i] - slope).abs() < 1e-15);
            } else {
                assert_eq!(gv.data()[i], 1.0);
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut r = rng(17);
        let xv = rand_tensor(&[2, 2, 5, 5], &mut r);
        let kv = rand_tensor(&[3, 2, 3, 3], &mut r);
        let bv = rand_tensor(&[3], &mut r);

        let run = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let y = tensor::conv2d(x, k, b, 2, 1).unwrap();
            y.sum()
        };

        let mut g = Graph::new();
        let x = g.leaf(xv.clone());
        let k = g.leaf(kv.clone());
        let b = g.leaf(bv.clone());
        let y = g.conv2d(x, k, b, 2, 1).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();

        let fd_x =
            finite_diff_grad(&mut |t: &Tensor<f64>| Ok(run(t, &kv, &bv)), &xv, 1e-5).unwrap();
        let fd_k =
            finite_diff_grad(&mut |t: &Tensor<f64>| Ok(run(&xv, t, &bv)), &kv, 1e-5).unwrap();
        let fd_b =
            finite_diff_grad(&mut |t: &Tensor<f64>| Ok(run(&xv, &kv, t)), &bv, 1e-5).unwrap();
        for (a, bb) in grads.wrt(x).unwrap().data().iter().zip(fd_x.data()) {
            assert!(close(*a, *bb, 1e-6));
        }
        for (a, bb) in grads.wrt(k).unwrap().data().iter().zip(fd_k.data()) {
            assert!(close(*a, *bb, 1e-6));
        }
        for (a, bb) in grads.wrt(b).unwrap().data().iter().zip(fd_b.data()) {
            assert!(close(*a, *bb, 1e-6));
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut r = rng(23);
        let yv = rand_tensor(&[6], &mut r);
        // keep |y - yhat| away from the MAE/Huber kinks
        let yhatv = yv.map(|v| v + 0.3);

        // mse, mae, huber wrt yhat
        for loss_case in 0..3 {
            let eval = |yhat: &Tensor<f64>| -> f64 {
                let mut g = Graph::new();
                let y = g.constant(yv.clone());
                let p = g.leaf(yhat.clone());
                let l = match loss_case {
                    0 => g.mse(y, p).unwrap(),
                    1 => g.mae(y, p).unwrap(),
                    _ => g.huber(y, p, 0.25).unwrap(),
                };
                g.value(l).data()[0]
            };
            let mut g = Graph::new();
            let y = g.constant(yv.clone());
            let p = g.leaf(yhatv.clone());
            let l = match loss_case {
                0 => g.mse(y, p).unwrap(),
                1 => g.mae(y, p).unwrap(),
                _ => g.huber(y, p, 0.25).unwrap(),
            };
            let grads = g.backward(l).unwrap();
            let fd = finite_diff_grad(&mut |t: &Tensor<f64>| Ok(eval(t)), &yhatv, 1e-6).unwrap();
            for (a, b) in grads.wrt(p).unwrap().data().iter().zip(fd.data()) {
                assert!(close(*a, *b, 1e-6), "case {loss_case}: {a} vs {b}");
            }
        }

        // cross entropy wrt logits
        let logits = rand_tensor(&[3, 5], &mut r);
        let labels = [4usize, 0, 2];
        let eval_ce = |t: &Tensor<f64>| losses::cross_entropy(&labels, t);
        let mut g = Graph::new();
        let lg = g.leaf(logits.clone());
        let l = g.cross_entropy(&labels, lg).unwrap();
        let grads = g.backward(l).unwrap();
        let fd = finite_diff_grad(&mut |t: &Tensor<f64>| eval_ce(t), &logits, 1e-6).unwrap();
        for (a, b) in grads.wrt(lg).unwrap().data().iter().zip(fd.data()) {
            assert!(close(*a, *b, 1e-6));
        }

        // hinge wrt predictions, margins away from the kink
        let labels_pm = Tensor::new(vec![4], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let preds = Tensor::new(vec![4], vec![0.4, 0.2, 1.8, -1.5]).unwrap();
        let mut g = Graph::new();
        let p = g.leaf(preds.clone());
        let l = g.hinge(&labels_pm, p).unwrap();
        let grads = g.backward(l).unwrap();
        let fd = finite_diff_grad(
            &mut |t: &Tensor<f64>| losses::hinge(&labels_pm, t),
            &preds,
            1e-6,
        )
        .unwrap();
        for (a, b) in grads.wrt(p).unwrap().data().iter().zip(fd.data()) {
            assert!(close(*a, *b, 1e-6));
        }

        // triplet wrt all three embeddings
        let av = rand_tensor(&[4], &mut r);
        let pv = av.map(|v| v + 0.4);
        let nv = av.map(|v| v - 0.2);
        let margin = 1.0;
        let mut g = Graph::new();
        let a = g.leaf(av.clone());
        let pp = g.leaf(pv.clone());
        let nn = g.leaf(nv.clone());
        let l = g.triplet(a, pp, nn, margin).unwrap();
        assert!(g.value(l).data()[0] > 0.0, "hinge must be active for the check");
        let grads = g.backward(l).unwrap();
        let fd_a = finite_diff_grad(
            &mut |t: &Tensor<f64>| losses::triplet(t, &pv, &nv, margin),
            &av,
            1e-6,
        )
        .unwrap();
        let fd_p = finite_diff_grad(
            &mut |t: &Tensor<f64>| losses::triplet(&av, t, &nv, margin),
            &pv,
            1e-6,
        )
        .unwrap();
        let fd_n = finite_diff_grad(
            &mut |t: &Tensor<f64>| losses::triplet(&av, &pv, t, margin),
            &nv,
            1e-6,
        )
        .unwrap();
        for (g1, f1) in grads.wrt(a).unwrap().data().iter().zip(fd_a.data()) {
            assert!(close(*g1, *f1, 1e-6));
        }
        for (g1, f1) in grads.wrt(pp).unwrap().data().iter().zip(fd_p.data()) {
            assert!(close(*g1, *f1, 1e-6));
        }
        for (g1, f1) in grads.wrt(nn).unwrap().data().iter().zip(fd_n.data()) {
            assert!(close(*g1, *f1, 1e-6));
        }
    }

    #[test]
    fn norm_gradients_match_finite_differences() {
        let mut r = rng(31);
        let xv = rand_tensor(&[3, 4, 2, 2], &mut r);
        let gammav = Tensor::from_fn(vec![4], |_| 0.5 + r.random::<f64>());
        let betav = rand_tensor(&[4], &mut r);

        // batch norm (train), wrt x, gamma, beta
        let eval_bn = |x: &Tensor<f64>, gm: &Tensor<f64>, bt: &Tensor<f64>| -> f64 {
            let mut g = Graph::new();
            let xi = g.leaf(x.clone());
            let gi = g.leaf(gm.clone());
            let bi = g.leaf(bt.clone());
            let mut state = BnRunningState::new(4);
            let y = g
                .batch_norm(xi, gi, bi, &mut state, 1e-5, 0.1, Mode::Train)
                .unwrap();
            // weighted sum keeps the objective sensitive to every element
            let w = Tensor::from_fn(g.value(y).shape().to_vec(), |i| ((i % 7) as f64 - 3.0) * 0.25);
            let wn = g.constant(w);
            let m = g.mul(y, wn).unwrap();
            let l = g.sum(m).unwrap();
            g.value(l).data()[0]
        };

        let mut g = Graph::new();
        let xi = g.leaf(xv.clone());
        let gi = g.leaf(gammav.clone());
        let bi = g.leaf(betav.clone());
        let mut state = BnRunningState::new(4);
        let y = g
            .batch_norm(xi, gi, bi, &mut state, 1e-5, 0.1, Mode::Train)
            .unwrap();
        let w = Tensor::from_fn(g.value(y).shape().to_vec(), |i| ((i % 7) as f64 - 3.0) * 0.25);
        let wn = g.constant(w);
        let m = g.mul(y, wn).unwrap();
        let l = g.sum(m).unwrap();
        let grads = g.backward(l).unwrap();

        let fd_x = finite_diff_grad(
            &mut |t: &Tensor<f64>| Ok(eval_bn(t, &gammav, &betav)),
            &xv,
            1e-5,
        )
        .unwrap();
        let fd_g = finite_diff_grad(
            &mut |t: &Tensor<f64>| Ok(eval_bn(&xv, t, &betav)),
            &gammav,
            1e-5,
        )
        .unwrap();
        let fd_b = finite_diff_grad(
            &mut |t: &Tensor<f64>| Ok(eval_bn(&xv, &gammav, t)),
            &betav,
            1e-5,
        )
        .unwrap();
        for (a, b) in grads.wrt(xi).unwrap().data().iter().zip(fd_x.data()) {
            assert!(close(*a, *b, 1e-5), "bn dx {a} vs {b}");
        }
        for (a, b) in grads.wrt(gi).unwrap().data().iter().zip(fd_g.data()) {
            assert!(close(*a, *b, 1e-5), "bn dgamma {a} vs {b}");
        }
        for (a, b) in grads.wrt(bi).unwrap().data().iter().zip(fd_b.data()) {
            assert!(close(*a, *b, 1e-5), "bn dbeta {a} vs {b}");
        }
    }

    #[test]
    fn layer_and_group_norm_gradients_match_finite_differences() {
        let mut r = rng(37);
        let xv = rand_tensor(&[3, 6], &mut r);
        let gammav = Tensor::from_fn(vec![6], |_| 0.5 + r.random::<f64>());
        let betav = rand_tensor(&[6], &mut r);

        let eval_ln = |x: &Tensor<f64>, gm: &Tensor<f64>, bt: &Tensor<f64>| -> f64 {
            let mut g = Graph::new();
            let xi = g.leaf(x.clone());
            let gi = g.leaf(gm.clone());
            let bi = g.leaf(bt.clone());
            let y = g.layer_norm(xi, gi, bi, 1e-5).unwrap();
            let w = Tensor::from_fn(g.value(y).shape().to_vec(), |i| ((i % 5) as f64 - 2.0) * 0.3);
            let wn = g.constant(w);
            let m = g.mul(y, wn).unwrap();
            let l = g.sum(m).unwrap();
            g.value(l).data()[0]
        };
        let mut g = Graph::new();
        let xi = g.leaf(xv.clone());
        let gi = g.leaf(gammav.clone());
        let bi = g.leaf(betav.clone());
        let y = g.layer_norm(xi, gi, bi, 1e-5).unwrap();
        let w = Tensor::from_fn(g.value(y).shape().to_vec(), |i| ((i % 5) as f64 - 2.0) * 0.3);
        let wn = g.constant(w);
        let m = g.mul(y, wn).unwrap();
        let l = g.sum(m).unwrap();
        let grads = g.backward(l).unwrap();
        let fd_x =
            finite_diff_grad(&mut |t: &Tensor<f64>| Ok(eval_ln(t, &gammav, &betav)), &xv, 1e-5)
                .unwrap();
        for (a, b) in grads.wrt(xi).unwrap().data().iter().zip(fd_x.data()) {
            assert!(close(*a, *b, 1e-5), "ln dx {a} vs {b}");
        }

        // group norm wrt x
        let xg = rand_tensor(&[2, 4, 3, 3], &mut r);
        let gg = Tensor::from_fn(vec![4], |_| 0.5 + r.random::<f64>());
        let bg = rand_tensor(&[4], &mut r);
        let eval_gn = |x: &Tensor<f64>| -> f64 {
            let mut g = Graph::new();
            let xi = g.leaf(x.clone());
            let gi = g.constant(gg.clone());
            let bi = g.constant(bg.clone());
            let y = g.group_norm(xi, gi, bi, 2, 1e-5).unwrap();
            let w = Tensor::from_fn(g.value(y).shape().to_vec(), |i| ((i % 3) as f64 - 1.0) * 0.4);
            let wn = g.constant(w);
            let m = g.mul(y, wn).unwrap();
            let l = g.sum(m).unwrap();
            g.value(l).data()[0]
        };
        let mut g = Graph::new();
        let xi = g.leaf(xg.clone());
        let gi = g.constant(gg.clone());
        let bi = g.constant(bg.clone());
        let y = g.group_norm(xi, gi, bi, 2, 1e-5).unwrap();
        let w = Tensor::from_fn(g.value(y).shape().to_vec(), |i| ((i % 3) as f64 - 1.0) * 0.4);
        let wn = g.constant(w);
        let m = g.mul(y, wn).unwrap();
        let l = g.sum(m).unwrap();
        let grads = g.backward(l).unwrap();
        let fd = finite_diff_grad(&mut |t: &Tensor<f64>| Ok(eval_gn(t)), &xg, 1e-5).unwrap();
        for (a, b) in grads.wrt(xi).unwrap().data().iter().zip(fd.data()) {
            assert!(close(*a, *b, 1e-5), "gn dx {a} vs {b}");
        }
    }

    #[test]
    fn prelu_slope_gradient_matches_finite_differences() {
        let xv = Tensor::new(vec![4], vec![-2.0f64, -0.5, 0.7, 1.5]).unwrap();
        let eval = |s: &Tensor<f64>| -> f64 {
            let mut g = Graph::new();
            let x = g.constant(xv.clone());
            let sl = g.leaf(s.clone());
            let y = g.prelu(x, sl).unwrap();
            let l = g.sum(y).unwrap();
            g.value(l).data()[0]
        };
        let sv = Tensor::scalar(0.25f64);
        let mut g = Graph::new();
        let x = g.constant(xv.clone());
        let sl = g.leaf(sv.clone());
        let y = g.prelu(x, sl).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        let fd = finite_diff_grad(&mut |t: &Tensor<f64>| Ok(eval(t)), &sv, 1e-6).unwrap();
        assert!(close(grads.wrt(sl).unwrap().data()[0], fd.data()[0], 1e-8));
    }

    #[test]
    fn random_op_instances_match_finite_differences() {
        // A compact version of the 100-instance sweep; the integration suite
        // runs the full count.
        let mut r = rng(101);
        for _ in 0..20 {
            let m = 1 + (r.random::<u32>() % 3) as usize;
            let k = 1 + (r.random::<u32>() % 3) as usize;
            let n = 1 + (r.random::<u32>() % 3) as usize;
            let av = rand_tensor(&[m, k], &mut r);
            let bv = rand_tensor(&[k, n], &mut r);
            let eval = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                let mut g = Graph::new();
                let ai = g.leaf(a.clone());
                let bi = g.leaf(b.clone());
                let mm = g.matmul(ai, bi).unwrap();
                let act = g
                    .activation(ActivationKind::Softplus, mm, Mode::Eval, &mut rng(0))
                    .unwrap();
                let l = g.mean(act).unwrap();
                g.value(l).data()[0]
            };
            let mut g = Graph::new();
            let ai = g.leaf(av.clone());
            let bi = g.leaf(bv.clone());
            let mm = g.matmul(ai, bi).unwrap();
            let act = g
                .activation(ActivationKind::Softplus, mm, Mode::Eval, &mut rng(0))
                .unwrap();
            let l = g.mean(act).unwrap();
            let grads = g.backward(l).unwrap();
            let fd_a =
                finite_diff_grad(&mut |t: &Tensor<f64>| Ok(eval(t, &bv)), &av, 1e-5).unwrap();
            let fd_b =
                finite_diff_grad(&mut |t: &Tensor<f64>| Ok(eval(&av, t)), &bv, 1e-5).unwrap();
            for (x, y) in grads.wrt(ai).unwrap().data().iter().zip(fd_a.data()) {
                assert!(close(*x, *y, 1e-6));
            }
            for (x, y) in grads.wrt(bi).unwrap().data().iter().zip(fd_b.data()) {
                assert!(close(*x, *y, 1e-6));
            }
        }
    }
}
