//! Feed-forward layer graph with a two-path backward pass.
//!
//! Backward is split per layer into the activation-gradient path (dX), which
//! always runs so that every earlier layer keeps receiving signal, and the
//! weight-gradient path (dW), which only runs for selected layers.

mod checkpoint;
mod loss;
mod preset;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use loss::cross_entropy_loss;
pub use preset::{build_preset, Preset, PresetOptions};

use std::collections::BTreeSet;

use crate::bench::{Phase, PhaseTimer};
use crate::error::{LdbError, Result};
use crate::rng::{Purpose, RngStream};
use crate::tensor::{conv2d, conv2d_backward_input, conv2d_backward_weight, Conv2dGeometry, Tensor};

/// Set of parameterized layer ids.
pub type LayerSet = BTreeSet<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    Flatten,
    ResidualAdd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Dense { in_features: usize, out_features: usize },
    Conv2d(Conv2dGeometry),
    Relu,
    Flatten,
    /// Adds the input of layer `source` to this layer's input.
    ResidualAdd { source: usize },
}

impl LayerOp {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerOp::Dense { .. } => LayerKind::Dense,
            LayerOp::Conv2d(_) => LayerKind::Conv2d,
            LayerOp::Relu => LayerKind::Relu,
            LayerOp::Flatten => LayerKind::Flatten,
            LayerOp::ResidualAdd { .. } => LayerKind::ResidualAdd,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNode {
    pub id: usize,
    pub op: LayerOp,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub weight_grad: Option<Tensor>,
    pub bias_grad: Option<Tensor>,
    cached_input: Option<Tensor>,
}

impl LayerNode {
    pub fn kind(&self) -> LayerKind {
        self.op.kind()
    }

    pub fn is_parameterized(&self) -> bool {
        self.weights.is_some()
    }

    pub fn cached_input(&self) -> Option<&Tensor> {
        self.cached_input.as_ref()
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_ref().map_or(0, Tensor::len) + self.bias.as_ref().map_or(0, Tensor::len)
    }

    fn apply(&self, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
        let wrap = |e: LdbError| LdbError::Layer {
            layer: self.id,
            message: e.to_string(),
        };
        match &self.op {
            LayerOp::Dense { in_features, .. } => {
                if x.rank() != 2 || x.shape()[1] != *in_features {
                    return Err(LdbError::Layer {
                        layer: self.id,
                        message: format!("dense expects [batch, {in_features}], got {:?}", x.shape()),
                    });
                }
                let mut y = x.matmul(self.weights.as_ref().unwrap()).map_err(wrap)?;
                y.add_row_broadcast(self.bias.as_ref().unwrap()).map_err(wrap)?;
                Ok(y)
            }
            LayerOp::Conv2d(g) => {
                conv2d(x, self.weights.as_ref().unwrap(), self.bias.as_ref().unwrap(), g).map_err(wrap)
            }
            LayerOp::Relu => Ok(x.map(|v| v.max(0.0))),
            LayerOp::Flatten => {
                let (n, rest) = (x.rows(), x.row_len());
                x.clone().reshape(&[n, rest]).map_err(wrap)
            }
            LayerOp::ResidualAdd { .. } => x.add(skip.expect("residual source input")).map_err(wrap),
        }
    }

    /// Gradient with respect to this layer's input.
    fn backward_input(&self, grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
        match &self.op {
            LayerOp::Dense { .. } => grad_out.matmul_nt(self.weights.as_ref().unwrap()),
            LayerOp::Conv2d(g) => conv2d_backward_input(grad_out, self.weights.as_ref().unwrap(), input.shape(), g),
            LayerOp::Relu => {
                let mut g = grad_out.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                Ok(g)
            }
            LayerOp::Flatten => grad_out.clone().reshape(input.shape()),
            LayerOp::ResidualAdd { .. } => Ok(grad_out.clone()),
        }
    }

    /// Weight and bias gradients for a parameterized layer.
    fn backward_weights(&self, grad_out: &Tensor, input: &Tensor) -> Result<(Tensor, Tensor)> {
        match &self.op {
            LayerOp::Dense { .. } => Ok((input.matmul_tn(grad_out)?, grad_out.sum_rows()?)),
            LayerOp::Conv2d(g) => conv2d_backward_weight(grad_out, input, g),
            _ => unreachable!("backward_weights on unparameterized layer {}", self.id),
        }
    }
}

/// Incremental network construction that tracks the per-sample shape.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    current: Vec<usize>,
    ops: Vec<LayerOp>,
    input_shapes: Vec<Vec<usize>>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        NetworkBuilder {
            input_shape: input_shape.to_vec(),
            current: input_shape.to_vec(),
            ops: Vec::new(),
            input_shapes: Vec::new(),
        }
    }

    /// Id the next pushed layer will receive.
    pub fn next_id(&self) -> usize {
        self.ops.len()
    }

    pub fn current_shape(&self) -> &[usize] {
        &self.current
    }

    fn push(&mut self, op: LayerOp, out: Vec<usize>) {
        self.input_shapes.push(std::mem::replace(&mut self.current, out));
        self.ops.push(op);
    }

    pub fn dense(mut self, out_features: usize) -> Result<Self> {
        if self.current.len() != 1 {
            return Err(LdbError::Config(format!(
                "dense layer {} needs a flat input, got {:?}",
                self.next_id(),
                self.current
            )));
        }
        let in_features = self.current[0];
        self.push(LayerOp::Dense { in_features, out_features }, vec![out_features]);
        Ok(self)
    }

    pub fn conv2d(mut self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let &[c, h, w] = self.current.as_slice() else {
            return Err(LdbError::Config(format!(
                "conv2d layer {} needs a [C, H, W] input, got {:?}",
                self.next_id(),
                self.current
            )));
        };
        let g = Conv2dGeometry {
            in_channels: c,
            out_channels,
            kernel,
            stride,
            padding,
        };
        let (oh, ow) = g
            .output_hw(h, w)
            .ok_or_else(|| LdbError::Config(format!("conv2d layer {}: kernel larger than input", self.next_id())))?;
        self.push(LayerOp::Conv2d(g), vec![out_channels, oh, ow]);
        Ok(self)
    }

    pub fn relu(mut self) -> Self {
        let s = self.current.clone();
        self.push(LayerOp::Relu, s);
        self
    }

    pub fn flatten(mut self) -> Self {
        let n = self.current.iter().product();
        self.push(LayerOp::Flatten, vec![n]);
        self
    }

    /// Adds the input of layer `source` (which must have the current shape).
    pub fn residual_from(mut self, source: usize) -> Result<Self> {
        let Some(src_shape) = self.input_shapes.get(source) else {
            return Err(LdbError::Config(format!("residual source {source} does not exist yet")));
        };
        if *src_shape != self.current {
            return Err(LdbError::Config(format!(
                "residual source {source} has shape {:?}, current is {:?}",
                src_shape, self.current
            )));
        }
        let s = self.current.clone();
        self.push(LayerOp::ResidualAdd { source }, s);
        Ok(self)
    }

    /// He-normal weights, zero biases. Layer `id` draws from its own stream.
    pub fn build(self, init_seed: u64) -> Network {
        let layers = self
            .ops
            .into_iter()
            .enumerate()
            .map(|(id, op)| {
                let (weights, bias) = match &op {
                    LayerOp::Dense { in_features, out_features } => (
                        Some(he_normal(&[*in_features, *out_features], *in_features, init_seed, id)),
                        Some(Tensor::zeros(&[*out_features])),
                    ),
                    LayerOp::Conv2d(g) => {
                        let fan_in = g.in_channels * g.kernel * g.kernel;
                        (
                            Some(he_normal(&g.weight_shape(), fan_in, init_seed, id)),
                            Some(Tensor::zeros(&[g.out_channels])),
                        )
                    }
                    _ => (None, None),
                };
                LayerNode {
                    id,
                    weight_grad: weights.as_ref().map(|w| Tensor::zeros(w.shape())),
                    bias_grad: bias.as_ref().map(|b| Tensor::zeros(b.shape())),
                    op,
                    weights,
                    bias,
                    cached_input: None,
                }
            })
            .collect::<Vec<_>>();
        let param_layer_ids = layers.iter().filter(|l| l.is_parameterized()).map(|l| l.id).collect();
        Network {
            layers,
            param_layer_ids,
            input_shape: self.input_shape,
            output_shape: self.current,
            dense_grad_fault: None,
        }
    }
}

fn he_normal(shape: &[usize], fan_in: usize, seed: u64, layer: usize) -> Tensor {
    let mut rng = RngStream::derive(seed, Purpose::Init, layer as u64);
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.next_normal() * std).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerNode>,
    param_layer_ids: Vec<usize>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    dense_grad_fault: Option<f64>,
}

impl Network {
    pub fn layers(&self) -> &[LayerNode] {
        &self.layers
    }

    pub fn layer(&self, id: usize) -> &LayerNode {
        &self.layers[id]
    }

    /// Direct parameter access for tests and checkpoint loading.
    pub fn layer_mut(&mut self, id: usize) -> &mut LayerNode {
        &mut self.layers[id]
    }

    pub fn param_layer_ids(&self) -> &[usize] {
        &self.param_layer_ids
    }

    pub fn all_param_layers(&self) -> LayerSet {
        self.param_layer_ids.iter().copied().collect()
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn classes(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerNode::param_count).sum()
    }

    /// Test hook: scales every dense weight gradient by `factor`, so a
    /// gradient check has a known-bad backward to catch.
    #[doc(hidden)]
    pub fn inject_dense_grad_fault(&mut self, factor: f64) {
        self.dense_grad_fault = Some(factor);
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(LdbError::Layer {
                layer: 0,
                message: format!(
                    "input shape {:?} does not match [batch, {:?}]",
                    x.shape(),
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    /// Runs every layer, returning the logits and the input seen by each layer.
    fn run(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_input(x)?;
        let mut inputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let skip = match layer.op {
                LayerOp::ResidualAdd { source } => Some(&inputs[source]),
                _ => None,
            };
            let next = layer.apply(&cur, skip)?;
            inputs.push(cur);
            cur = next;
        }
        Ok((cur, inputs))
    }

    /// Training forward pass: caches each layer's input for the backward pass.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, inputs) = self.run(x)?;
        for (layer, input) in self.layers.iter_mut().zip(inputs) {
            layer.cached_input = Some(input);
        }
        Ok(out)
    }

    /// Inference forward pass. Computes exactly what [`Network::forward`]
    /// computes without touching any cached state.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x).map(|(out, _)| out)
    }

    /// Sign of every ReLU input (`> 0`), in layer order. Two inputs with
    /// equal signatures lie on the same linear piece of the network.
    pub fn relu_signature(&self, x: &Tensor) -> Result<Vec<bool>> {
        let (_, inputs) = self.run(x)?;
        Ok(self
            .layers
            .iter()
            .zip(&inputs)
            .filter(|(l, _)| matches!(l.op, LayerOp::Relu))
            .flat_map(|(_, t)| t.data().iter().map(|&v| v > 0.0))
            .collect())
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|l| l.cached_input = None);
    }

    pub fn zero_grads(&mut self) {
        for l in &mut self.layers {
            if let Some(g) = l.weight_grad.as_mut() {
                g.fill(0.0);
            }
            if let Some(g) = l.bias_grad.as_mut() {
                g.fill(0.0);
            }
        }
    }

    /// Full backpropagation: every parameterized layer gets its gradient.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Tensor> {
        let all = self.all_param_layers();
        self.backward_selective(loss_grad, &all, None)
    }

    /// Backward pass that computes weight gradients only for `selected`.
    ///
    /// Activation gradients flow through every layer down to the input, which
    /// is returned. Parameterized layers outside `selected` end with zero
    /// gradients and their dW work is never executed. Cached inputs are
    /// released as the pass walks back.
    pub fn backward_selective(
        &mut self,
        loss_grad: &Tensor,
        selected: &LayerSet,
        mut timer: Option<&mut PhaseTimer>,
    ) -> Result<Tensor> {
        if let Some(&bad) = selected.iter().find(|&&id| id >= self.layers.len() || !self.layers[id].is_parameterized())
        {
            return Err(LdbError::Config(format!("layer {bad} is not a parameterized layer")));
        }
        if self.layers.iter().any(|l| l.cached_input.is_none()) {
            return Err(LdbError::Config("backward called without a preceding forward".into()));
        }
        self.zero_grads();

        let n = self.layers.len();
        // Gradient contributions routed to the input of a layer by residual adds.
        let mut pending: Vec<Option<Tensor>> = vec![None; n];
        let mut grad = loss_grad.clone();
        for id in (0..n).rev() {
            let input = self.layers[id].cached_input.take().expect("cached input");

            if selected.contains(&id) {
                let t = std::time::Instant::now();
                let layer = &self.layers[id];
                let (mut dw, db) = layer.backward_weights(&grad, &input).map_err(|e| LdbError::Layer {
                    layer: id,
                    message: e.to_string(),
                })?;
                if let (Some(f), LayerKind::Dense) = (self.dense_grad_fault, layer.kind()) {
                    dw = dw.scale(f);
                }
                let layer = &mut self.layers[id];
                layer.weight_grad = Some(dw);
                layer.bias_grad = Some(db);
                if let Some(tm) = timer.as_deref_mut() {
                    tm.stop(Phase::BackwardDw, t);
                }
            }

            let t = std::time::Instant::now();
            let layer = &self.layers[id];
            let mut dx = layer.backward_input(&grad, &input).map_err(|e| LdbError::Layer {
                layer: id,
                message: e.to_string(),
            })?;
            if let LayerOp::ResidualAdd { source } = layer.op {
                let g = grad.clone();
                match &mut pending[source] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
            if let Some(extra) = pending[id].take() {
                dx.add_assign(&extra)?;
            }
            grad = dx;
            if let Some(tm) = timer.as_deref_mut() {
                tm.stop(Phase::BackwardDx, t);
            }
        }
        Ok(grad)
    }

    /// `(id, weights, bias)` for every parameterized layer.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor, &Tensor)> {
        self.layers
            .iter()
            .filter_map(|l| Some((l.id, l.weights.as_ref()?, l.bias.as_ref()?)))
    }
}
