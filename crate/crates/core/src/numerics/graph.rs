use super::ops::{self, Activation, BatchNormMode, Op, Padding, Saved};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel normalization statistics carried between batches.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNormState {
    pub const DEFAULT_EPSILON: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: Self::DEFAULT_EPSILON,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Folds one batch's statistics into the running estimates. `var` is the
    /// population variance over `count` values; the running variance tracks
    /// the unbiased estimate.
    pub fn update(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let m = self.momentum;
        let correction = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for (rm, &bm) in self.running_mean.iter_mut().zip(mean) {
            *rm = (1.0 - m) * *rm + m * bm;
        }
        for (rv, &bv) in self.running_var.iter_mut().zip(var) {
            *rv = ((1.0 - m) * *rv + m * bv * correction).max(0.0);
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    saved: Saved,
    macs: u64,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Reverse-mode tape. Operations are recorded in creation order; a
/// [`Graph::backward`] call walks them in reverse.
///
/// A graph is single-threaded. Build a fresh one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            saved: Saved::None,
            macs: 0,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients accumulate on it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Sum of multiply-accumulates performed by every recorded operation.
    pub fn total_macs(&self) -> u64 {
        self.nodes.iter().map(|n| n.macs).sum()
    }

    /// Names of the recorded operations, in creation order, leaves excluded.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).map(|n| n.op.name()).collect()
    }

    /// Batch mean and population variance computed by a train-mode
    /// `batch_norm` node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match (&self.nodes[v.0].op, &self.nodes[v.0].saved) {
            (Op::BatchNorm { running: None, .. }, Saved::BatchNorm { mean, var, .. }) => Some((mean, var)),
            _ => None,
        }
    }

    fn record(&mut self, op: Op, inputs: Vec<Var>) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let fwd = ops::forward(&op, &values)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: fwd.value,
            op,
            inputs,
            saved: fwd.saved,
            macs: fwd.macs,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Per-channel 2-D cross-correlation. `x` is `[C, H, W]` or
    /// `[N, C, H, W]`, `kernel` is `[C, kH, kW]`.
    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var, stride: (usize, usize), padding: Padding) -> Result<Var> {
        self.record(Op::DepthwiseConv { stride, padding, one_d: false }, vec![x, kernel])
    }

    /// Per-channel cross-correlation along the last axis. `x` is `[C, T]`,
    /// `[N, C, T]` or `[N, C, F, T]`; `kernel` is `[C, kT]`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        self.record(Op::DepthwiseConv { stride: (1, stride), padding, one_d: true }, vec![x, kernel])
    }

    /// Dense 2-D convolution with unit stride.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, padding: Padding) -> Result<Var> {
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record(Op::Conv2d { padding }, inputs)
    }

    /// 1x1 channel mixing of a `[N, C_in, ...]` tensor.
    pub fn pointwise_conv(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record(Op::Pointwise, inputs)
    }

    /// Affine map over the last axis.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        self.record(Op::Linear, vec![x, weight, bias])
    }

    /// Normalizes `[N, C, ...]` per channel. Train mode uses biased batch
    /// statistics (read them back with [`Graph::batch_stats`]); eval mode
    /// uses the running estimates in `state`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState,
        mode: BatchNormMode,
    ) -> Result<Var> {
        if state.epsilon <= 0.0 {
            return Err(Error::arg("batch_norm epsilon must be positive"));
        }
        let c = self.value(x).dims().get(1).copied();
        if c != Some(state.channels()) {
            return Err(Error::shape(format!(
                "batch_norm state has {} channels, input dims are {:?}",
                state.channels(),
                self.value(x).dims()
            )));
        }
        let running = match mode {
            BatchNormMode::Train => None,
            BatchNormMode::Eval => Some((state.running_mean.clone(), state.running_var.clone())),
        };
        self.record(Op::BatchNorm { eps: state.epsilon, running }, vec![x, gamma, beta])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.record(Op::Activation(kind), vec![x])
    }

    /// Mean over the last axis: `[..., T] -> [...]`.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        self.record(Op::MeanLast, vec![x])
    }

    /// Time pooling of a `[.., C, F, T]` map to `[.., C, F]`.
    pub fn global_average_pool_time(&mut self, x: Var) -> Result<Var> {
        if self.value(x).dims().last() == Some(&0) {
            return Err(Error::arg("time pooling over zero frames"));
        }
        self.mean_last(x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add, vec![a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul, vec![a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.record(Op::Scale(factor), vec![x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::SumAll, vec![x])
    }

    /// Multiplies `x` by `w` broadcast over the trailing axes `w` lacks.
    pub fn mul_prefix(&mut self, x: Var, w: Var) -> Result<Var> {
        self.record(Op::MulPrefix, vec![x, w])
    }

    pub fn reshape(&mut self, x: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        self.record(Op::Reshape(dims.into()), vec![x])
    }

    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        self.record(Op::SwapLast2, vec![x])
    }

    /// Mean over rows of `-sum_k w_k log softmax(logits)_k`. Each row of
    /// `targets` must sum to one.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        if targets.rank() == 2 {
            let k = targets.dims()[1];
            for (r, row) in targets.data().chunks(k.max(1)).enumerate() {
                let mass: f64 = row.iter().sum();
                if (mass - 1.0).abs() > 1e-6 || row.iter().any(|w| *w < 0.0) {
                    return Err(Error::arg(format!("target row {r} is not a distribution (mass {mass})")));
                }
            }
        }
        self.record(Op::SoftmaxXent { targets }, vec![logits])
    }

    /// Accumulates d(loss)/d(leaf) into every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.nodes[loss.0].value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.dims().to_vec(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&gout),
                    None => node.grad = Some(gout),
                }
                continue;
            }
            let need: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = ops::backward(&node.op, &inputs, &node.saved, &gout, &need);
            for (v, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match grads[v.0].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => grads[v.0] = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Re-evaluates every recorded operation from its inputs and reports
    /// whether each result is bit-identical to the stored value.
    pub fn replay_matches(&self) -> Result<bool> {
        for node in &self.nodes {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            if !ops::forward(&node.op, &inputs)?.value.bit_eq(&node.value) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
