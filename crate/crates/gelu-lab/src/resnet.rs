//! Pre-activated residual convolutional classifier with pluggable activation
//! and normalization.
//!
//! Layer plan: a stem conv that widens the input, six residual blocks whose
//! sub-layers run norm -> activation -> conv, one final norm + activation,
//! global average pooling, and a dense classifier. Blocks three and five
//! stride by two. The counted census (stem + 12 block convs + dense) is 14;
//! 1x1 projection convs on the strided/widening skips carry weights but sit
//! outside that count, as does the final norm + activation pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activations::{ActivationKind, Mode};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::norm::{BnRunningState, NormKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub width: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub activation: ActivationKind,
    pub norm: NormKind,
    /// Groups for the group-norm kind; must divide every width.
    pub norm_groups: usize,
    pub input_channels: usize,
    pub stem_width: usize,
    pub blocks: Vec<BlockConfig>,
    pub num_classes: usize,
}

impl NetworkConfig {
    /// The CIFAR-scale default: stem 3->64, blocks (64,64,128,128,256,256),
    /// strides (1,1,2,1,2,1).
    pub fn cifar(activation: ActivationKind, num_classes: usize) -> Self {
        NetworkConfig {
            activation,
            norm: NormKind::Batch,
            norm_groups: 8,
            input_channels: 3,
            stem_width: 64,
            blocks: [(64, 1), (64, 1), (128, 2), (128, 1), (256, 2), (256, 1)]
                .into_iter()
                .map(|(width, stride)| BlockConfig { width, stride })
                .collect(),
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        if self.blocks.len() != 6 {
            return Err(Error::Config(format!(
                "expected exactly 6 residual blocks, got {}",
                self.blocks.len()
            )));
        }
        let strides: Vec<usize> = self.blocks.iter().map(|b| b.stride).collect();
        if strides != [1, 1, 2, 1, 2, 1] {
            return Err(Error::Config(format!(
                "block strides must be (1,1,2,1,2,1), got {strides:?}"
            )));
        }
        if self.stem_width == 0 || self.num_classes == 0 || self.input_channels == 0 {
            return Err(Error::Config("zero-sized dimension in config".into()));
        }
        if self.blocks.iter().any(|b| b.width == 0) {
            return Err(Error::Config("zero-width block".into()));
        }
        if self.norm == NormKind::Group {
            let mut widths = vec![self.stem_width];
            widths.extend(self.blocks.iter().map(|b| b.width));
            if let Some(w) = widths.iter().find(|w| **w % self.norm_groups != 0) {
                return Err(Error::Config(format!(
                    "norm_groups {} does not divide width {w}",
                    self.norm_groups
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: usize,
    b: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gamma: usize,
    beta: usize,
    /// Index into the per-site running-state table.
    state: usize,
}

#[derive(Debug, Clone)]
struct BlockIds {
    norm1: NormIds,
    conv1: ConvIds,
    norm2: NormIds,
    conv2: ConvIds,
    proj: Option<ConvIds>,
    slope1: Option<usize>,
    slope2: Option<usize>,
}

/// The network: flat parameter list plus structural indices into it.
#[derive(Debug)]
pub struct Network<T: Scalar> {
    config: NetworkConfig,
    params: Vec<Tensor<T>>,
    param_names: Vec<String>,
    stem: ConvIds,
    blocks: Vec<BlockIds>,
    final_norm: NormIds,
    final_slope: Option<usize>,
    dense_w: usize,
    dense_b: usize,
    bn_states: Vec<BnRunningState<T>>,
}

/// Node handles produced by one forward pass.
pub struct ForwardPass {
    pub logits: NodeId,
    /// Output of each residual block, in order.
    pub block_outputs: Vec<NodeId>,
    /// One leaf per parameter, aligned with the parameter list.
    pub param_nodes: Vec<NodeId>,
}

struct Builder<T: Scalar> {
    params: Vec<Tensor<T>>,
    names: Vec<String>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn normal(&mut self) -> f64 {
        // Box-Muller; the pair's second half is discarded for simplicity
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.params.push(t);
        self.names.push(name);
        self.params.len() - 1
    }

    /// Fan-in-scaled normal with gain sqrt(2), zero bias.
    fn conv(
        &mut self,
        name: &str,
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> ConvIds {
        let fan_in = (in_c * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = Tensor::from_fn(vec![out_c, in_c, k, k], |_| T::from_f64(std * self.normal()));
        let w = self.push(format!("{name}.weight"), w);
        let b = self.push(format!("{name}.bias"), Tensor::zeros(vec![out_c]));
        ConvIds {
            w,
            b,
            stride,
            padding,
        }
    }

    fn norm(&mut self, name: &str, channels: usize, states: &mut Vec<BnRunningState<T>>) -> NormIds {
        let gamma = self.push(format!("{name}.gamma"), Tensor::full(vec![channels], T::ONE));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        states.push(BnRunningState::new(channels));
        NormIds {
            gamma,
            beta,
            state: states.len() - 1,
        }
    }

    fn prelu_slope(&mut self, name: &str, init: f64) -> usize {
        self.push(format!("{name}.slope"), Tensor::scalar(T::from_f64(init)))
    }
}

impl<T: Scalar> Network<T> {
    /// Deterministic construction from a seed.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::<T> {
            params: Vec::new(),
            names: Vec::new(),
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        };
        let mut bn_states = Vec::new();
        let prelu_init = match config.activation {
            ActivationKind::PRelu { init_slope } => Some(init_slope),
            _ => None,
        };

        let stem = b.conv("stem", config.stem_width, config.input_channels, 3, 1, 1);
        let mut blocks = Vec::new();
        let mut in_c = config.stem_width;
        for (i, bc) in config.blocks.iter().enumerate() {
            let name = format!("block{}", i + 1);
            let norm1 = b.norm(&format!("{name}.norm1"), in_c, &mut bn_states);
            let slope1 = prelu_init.map(|s| b.prelu_slope(&format!("{name}.act1"), s));
            let conv1 = b.conv(&format!("{name}.conv1"), bc.width, in_c, 3, bc.stride, 1);
            let norm2 = b.norm(&format!("{name}.norm2"), bc.width, &mut bn_states);
            let slope2 = prelu_init.map(|s| b.prelu_slope(&format!("{name}.act2"), s));
            let conv2 = b.conv(&format!("{name}.conv2"), bc.width, bc.width, 3, 1, 1);
            let proj = if bc.stride != 1 || in_c != bc.width {
                Some(b.conv(&format!("{name}.proj"), bc.width, in_c, 1, bc.stride, 0))
            } else {
                None
            };
            blocks.push(BlockIds {
                norm1,
                conv1,
                norm2,
                conv2,
                proj,
                slope1,
                slope2,
            });
            in_c = bc.width;
        }
        let final_norm = b.norm("final.norm", in_c, &mut bn_states);
        let final_slope = prelu_init.map(|s| b.prelu_slope("final.act", s));
        let fan_in = in_c as f64;
        let std = (2.0 / fan_in).sqrt();
        let dw = Tensor::from_fn(vec![in_c, config.num_classes], |_| {
            T::from_f64(std * b.normal())
        });
        let dense_w = b.push("dense.weight".into(), dw);
        let dense_b = b.push("dense.bias".into(), Tensor::zeros(vec![config.num_classes]));

        Ok(Network {
            config,
            params: b.params,
            param_names: b.names,
            stem,
            blocks,
            final_norm,
            final_slope,
            dense_w,
            dense_b,
            bn_states,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Weight layers in the stated census: stem + 12 block convs + dense.
    pub fn layer_census(&self) -> usize {
        1 + 2 * self.blocks.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<Tensor<T>> {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    /// Zero one block's second conv so its residual branch vanishes (test hook
    /// for the identity-block property).
    pub fn zero_block_branch(&mut self, block: usize) {
        let ids = self.blocks[block].conv2;
        for v in self.params[ids.w].data_mut() {
            *v = T::ZERO;
        }
        for v in self.params[ids.b].data_mut() {
            *v = T::ZERO;
        }
    }

    fn norm_forward(
        &mut self,
        g: &mut Graph<T>,
        ids: NormIds,
        x: NodeId,
        param_nodes: &[NodeId],
        mode: Mode,
    ) -> Result<NodeId> {
        let gamma = param_nodes[ids.gamma];
        let beta = param_nodes[ids.beta];
        let eps = T::from_f64(1e-5);
        match self.config.norm {
            NormKind::Batch => {
                let momentum = T::from_f64(0.1);
                g.batch_norm(
                    x,
                    gamma,
                    beta,
                    &mut self.bn_states[ids.state],
                    eps,
                    momentum,
                    mode,
                )
            }
            // per-sample statistics over (C,H,W) is group norm with one group
            NormKind::Layer => g.group_norm(x, gamma, beta, 1, eps),
            NormKind::Group => g.group_norm(x, gamma, beta, self.config.norm_groups, eps),
        }
    }

    fn act_forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        slope: Option<usize>,
        param_nodes: &[NodeId],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        match slope {
            Some(idx) => g.prelu(x, param_nodes[idx]),
            None => g.activation(self.config.activation, x, mode, rng),
        }
    }

    fn conv_forward(
        &self,
        g: &mut Graph<T>,
        ids: ConvIds,
        x: NodeId,
        param_nodes: &[NodeId],
    ) -> Result<NodeId> {
        g.conv2d(x, param_nodes[ids.w], param_nodes[ids.b], ids.stride, ids.padding)
    }

    fn check_finite(&self, g: &Graph<T>, id: NodeId, layer: &str) -> Result<()> {
        if !g.value(id).is_all_finite() {
            return Err(Error::NonFinite {
                context: format!("forward output of {layer}"),
            });
        }
        Ok(())
    }

    /// Record a full forward pass on `graph`. Parameters are registered as
    /// differentiable leaves; the input batch is a constant.
    pub fn forward(
        &mut self,
        graph: &mut Graph<T>,
        images: &Tensor<T>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass> {
        if images.shape().len() != 4 || images.shape()[1] != self.config.input_channels {
            return Err(Error::InvalidShape {
                op: "Network::forward",
                shape: images.shape().to_vec(),
                reason: format!("expected [N,{},H,W]", self.config.input_channels),
            });
        }
        if images.shape()[2] < 8 || images.shape()[3] < 8 {
            return Err(Error::InvalidShape {
                op: "Network::forward",
                shape: images.shape().to_vec(),
                reason: "spatial extent below 8".into(),
            });
        }
        let param_nodes: Vec<NodeId> = self
            .params
            .iter()
            .cloned()
            .map(|p| graph.leaf(p))
            .collect();
        let x = graph.constant(images.clone());

        let mut h = self.conv_forward(graph, self.stem, x, &param_nodes)?;
        self.check_finite(graph, h, "stem")?;

        let mut block_outputs = Vec::with_capacity(self.blocks.len());
        for i in 0..self.blocks.len() {
            let ids = self.blocks[i].clone();
            let a1 = {
                let n = self.norm_forward(graph, ids.norm1, h, &param_nodes, mode)?;
                self.act_forward(graph, n, ids.slope1, &param_nodes, mode, rng)?
            };
            let c1 = self.conv_forward(graph, ids.conv1, a1, &param_nodes)?;
            let a2 = {
                let n = self.norm_forward(graph, ids.norm2, c1, &param_nodes, mode)?;
                self.act_forward(graph, n, ids.slope2, &param_nodes, mode, rng)?
            };
            let c2 = self.conv_forward(graph, ids.conv2, a2, &param_nodes)?;
            let skip = match ids.proj {
                Some(proj) => self.conv_forward(graph, proj, h, &param_nodes)?,
                None => h,
            };
            h = graph.add(c2, skip)?;
            self.check_finite(graph, h, &format!("block{}", i + 1))?;
            block_outputs.push(h);
        }

        let n = self.norm_forward(graph, self.final_norm, h, &param_nodes, mode)?;
        let a = self.act_forward(graph, n, self.final_slope, &param_nodes, mode, rng)?;
        let pooled = graph.global_avg_pool(a)?;
        let mm = graph.matmul(pooled, param_nodes[self.dense_w])?;
        let logits = graph.dense_bias(mm, param_nodes[self.dense_b])?;
        self.check_finite(graph, logits, "dense")?;

        Ok(ForwardPass {
            logits,
            block_outputs,
            param_nodes,
        })
    }

    /// Expected spatial extent after each block for an HxW input.
    pub fn spatial_plan(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut dims = (h, w);
        self.config
            .blocks
            .iter()
            .map(|b| {
                // 3x3 conv, padding 1: floor((d + 2 - 3) / stride) + 1
                dims = (
                    (dims.0 - 1) / b.stride + 1,
                    (dims.1 - 1) / b.stride + 1,
                );
                dims
            })
            .collect()
    }

    /// Text table of layers, parameter shapes, and counted census.
    pub fn summary(&self, input_h: usize, input_w: usize) -> String {
        let mut out = String::new();
        let mut push = |name: &str, detail: String, counted: bool| {
            out.push_str(&format!(
                "{:<16} {:<36} {}\n",
                name,
                detail,
                if counted { "counted" } else { "" }
            ));
        };
        push(
            "stem",
            format!(
                "conv 3x3 {}->{} stride 1",
                self.config.input_channels, self.config.stem_width
            ),
            true,
        );
        let mut in_c = self.config.stem_width;
        for (i, b) in self.config.blocks.iter().enumerate() {
            let name = format!("block{}", i + 1);
            push(
                &name,
                format!(
                    "norm+act+conv 3x3 {}->{} stride {}",
                    in_c, b.width, b.stride
                ),
                true,
            );
            push(
                "",
                format!("norm+act+conv 3x3 {}->{} stride 1", b.width, b.width),
                true,
            );
            if b.stride != 1 || in_c != b.width {
                push(
                    "",
                    format!("skip proj 1x1 {}->{} stride {}", in_c, b.width, b.stride),
                    false,
                );
            }
            in_c = b.width;
        }
        let (fh, fw) = *self.spatial_plan(input_h, input_w).last().unwrap();
        push("final", format!("norm+act, pool {fh}x{fw}->1x1"), false);
        push(
            "dense",
            format!("{}->{}", in_c, self.config.num_classes),
            true,
        );
        out.push_str(&format!(
            "counted layers: {}   parameters: {}\n",
            self.layer_census(),
            self.param_count()
        ));
        out
    }
}
