//! Reverse-mode differentiation over recorded tensor operations.
//!
//! Every operation on a [`Tape`] computes its forward value immediately
//! and appends a node holding operand handles plus whatever forward context
//! its backward rule needs. [`Tape::backward`] walks the nodes in reverse
//! recorded order, applies each rule once, and accumulates gradients that
//! reach [`Param`](crate::param::Param) leaves into the [`ParamStore`].

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvPath};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation kind of a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Constant,
    Input,
    Param,
    Conv2d,
    DepthwiseConv2d,
    AdaptiveAvgPool,
    AdaptiveMaxPool,
    FullyConnected,
    Relu,
    Sigmoid,
    Upsample,
    Add,
    Hadamard,
    BroadcastScale,
    Concat,
    Sum,
    WeightedSum,
    Bce,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 15] = [
        OpKind::Conv2d,
        OpKind::DepthwiseConv2d,
        OpKind::AdaptiveAvgPool,
        OpKind::AdaptiveMaxPool,
        OpKind::FullyConnected,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Upsample,
        OpKind::Add,
        OpKind::Hadamard,
        OpKind::BroadcastScale,
        OpKind::Concat,
        OpKind::Sum,
        OpKind::WeightedSum,
        OpKind::Bce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Constant => "constant",
            OpKind::Input => "input",
            OpKind::Param => "param",
            OpKind::Conv2d => "conv2d",
            OpKind::DepthwiseConv2d => "depthwise_conv2d",
            OpKind::AdaptiveAvgPool => "adaptive_avg_pool",
            OpKind::AdaptiveMaxPool => "adaptive_max_pool",
            OpKind::FullyConnected => "fully_connected",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Upsample => "upsample_nearest2x",
            OpKind::Add => "add",
            OpKind::Hadamard => "hadamard",
            OpKind::BroadcastScale => "broadcast_scale",
            OpKind::Concat => "concat_channels",
            OpKind::Sum => "sum",
            OpKind::WeightedSum => "weighted_sum",
            OpKind::Bce => "bce_loss",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::DIFFERENTIABLE.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize, path: ConvPath },
    Depthwise { input: Var, kernel: Var, dilation: usize, padding: usize },
    AvgPool { input: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    FullyConnected { input: Var, weight: Var, bias: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    Upsample { input: Var },
    Add { a: Var, b: Var },
    Hadamard { a: Var, b: Var },
    BroadcastScale { x: Var, scale: Var },
    Concat { a: Var, b: Var },
    Sum { input: Var },
    WeightedSum { input: Var, weights: Tensor },
    Bce { pred: Var, target: Tensor },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Constant => OpKind::Constant,
            Op::Input => OpKind::Input,
            Op::Param(_) => OpKind::Param,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Depthwise { .. } => OpKind::DepthwiseConv2d,
            Op::AvgPool { .. } => OpKind::AdaptiveAvgPool,
            Op::MaxPool { .. } => OpKind::AdaptiveMaxPool,
            Op::FullyConnected { .. } => OpKind::FullyConnected,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Add { .. } => OpKind::Add,
            Op::Hadamard { .. } => OpKind::Hadamard,
            Op::BroadcastScale { .. } => OpKind::BroadcastScale,
            Op::Concat { .. } => OpKind::Concat,
            Op::Sum { .. } => OpKind::Sum,
            Op::WeightedSum { .. } => OpKind::WeightedSum,
            Op::Bce { .. } => OpKind::Bce,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Summary of one backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes whose backward rule ran (each at most once).
    pub visited: usize,
    /// Param leaves that received gradient.
    pub params_reached: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    fault: Option<OpKind>,
    conv_path: ConvPath,
}

/// Scale applied to every input gradient of a faulted op kind.
const FAULT_SCALE: f64 = 1.25;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_conv_path(path: ConvPath) -> Self {
        Self { conv_path: path, ..Self::default() }
    }

    pub fn conv_path(&self) -> ConvPath {
        self.conv_path
    }

    /// Corrupt the backward rule of one op kind. Test fixture for the
    /// gradient checker; never enabled in training.
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    /// Drop all recorded nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Gradient of the loss with respect to `v`, available after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf whose gradient is kept for [`Tape::grad`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let path = self.conv_path;
        let value = kernels::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
            path,
        )?;
        let needs = self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, stride, padding, path }, needs))
    }

    pub fn depthwise_conv2d(&mut self, input: Var, kernel: Var, dilation: usize, padding: usize) -> Result<Var> {
        let value = kernels::depthwise_conv2d(self.value(input), self.value(kernel), dilation, padding)?;
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(value, Op::Depthwise { input, kernel, dilation, padding }, needs))
    }

    pub fn adaptive_avg_pool(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = kernels::adaptive_avg_pool(self.value(input), out_h, out_w)?;
        Ok(self.push(value, Op::AvgPool { input }, self.needs(input)))
    }

    pub fn adaptive_max_pool(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let r = kernels::adaptive_max_pool(self.value(input), out_h, out_w)?;
        Ok(self.push(r.output, Op::MaxPool { input, argmax: r.argmax }, self.needs(input)))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.adaptive_avg_pool(input, 1, 1)
    }

    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        self.adaptive_max_pool(input, 1, 1)
    }

    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let value = kernels::fully_connected(self.value(input), self.value(weight), self.value(bias))?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(value, Op::FullyConnected { input, weight, bias }, needs))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = kernels::relu(self.value(input));
        self.push(value, Op::Relu { input }, self.needs(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = kernels::sigmoid(self.value(input));
        self.push(value, Op::Sigmoid { input }, self.needs(input))
    }

    pub fn upsample_nearest2x(&mut self, input: Var) -> Var {
        let value = kernels::upsample_nearest2x(self.value(input));
        self.push(value, Op::Upsample { input }, self.needs(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::add(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::hadamard(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Hadamard { a, b }, needs))
    }

    pub fn broadcast_scale(&mut self, x: Var, scale: Var) -> Result<Var> {
        let value = kernels::broadcast_scale(self.value(x), self.value(scale))?;
        let needs = self.needs(x) || self.needs(scale);
        Ok(self.push(value, Op::BroadcastScale { x, scale }, needs))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat { a, b }, needs))
    }

    /// Sum of all elements as a `[1, 1, 1, 1]` scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::Sum { input }, self.needs(input))
    }

    /// `Σ input ⊙ weights` as a scalar, with `weights` held constant.
    pub fn weighted_sum(&mut self, input: Var, weights: &Tensor) -> Result<Var> {
        if weights.dims() != self.value(input).dims() {
            return shape_err("weighted_sum: weights must match input dims");
        }
        let value = Tensor::scalar(kernels::hadamard(self.value(input), weights)?.sum());
        Ok(self.push(value, Op::WeightedSum { input, weights: weights.clone() }, self.needs(input)))
    }

    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let loss = kernels::bce_loss(self.value(pred), target)?;
        Ok(self.push(Tensor::scalar(loss), Op::Bce { pred, target: target.clone() }, self.needs(pred)))
    }

    /// Hash of every relu mask and max-pool argmax on the tape. Two forward
    /// passes with equal signatures lie on the same smooth piece of the
    /// piecewise-smooth network function.
    pub fn activation_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for chunk in self.nodes[input.0].value.data().chunks(64) {
                        let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (u64::from(v > 0.0) << i));
                        mix(bits);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Propagate `d(loss)/d(loss) = 1` back through the tape and accumulate
    /// into the grads of every reachable param. A tape may only be
    /// differentiated once; call [`Tape::reset`] to record a new pass.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<BackwardStats> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let dims = self.value(loss).dims();
        if dims != [1, 1, 1, 1] {
            return Err(Error::NonScalarLoss(dims));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        let mut stats = BackwardStats { visited: 0, params_reached: 0 };
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            stats.visited += 1;
            let kind = node.op.kind();
            let mut parts = self.node_backward(i, &g)?;
            if self.fault == Some(kind) {
                for (_, t) in &mut parts {
                    *t = t.scale(FAULT_SCALE);
                }
            }
            for (v, t) in parts {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t)?,
                    slot @ None => *slot = Some(t),
                }
            }
            if let Op::Param(id) = node.op {
                store.get_mut(id).grad.add_assign(&g)?;
                stats.params_reached += 1;
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(stats)
    }

    /// Gradient contributions of node `i` to its operands.
    fn node_backward(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &self.nodes[i].op {
            Op::Constant | Op::Input | Op::Param(_) => Vec::new(),
            Op::Conv2d { input, kernel, bias, stride, padding, path } => {
                let r = kernels::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    g,
                    *stride,
                    *padding,
                    *path,
                    self.needs(*input),
                )?;
                let mut v = vec![(*kernel, r.kernel)];
                if let Some(gi) = r.input {
                    v.push((*input, gi));
                }
                if let Some(b) = bias {
                    v.push((*b, r.bias.reshape(val(*b).dims())?));
                }
                v
            }
            Op::Depthwise { input, kernel, dilation, padding } => {
                let (gi, gk) = kernels::depthwise_conv2d_backward(val(*input), val(*kernel), g, *dilation, *padding)?;
                vec![(*input, gi), (*kernel, gk)]
            }
            Op::AvgPool { input } => vec![(*input, kernels::adaptive_avg_pool_backward(val(*input).dims(), g))],
            Op::MaxPool { input, argmax } => {
                vec![(*input, kernels::adaptive_max_pool_backward(val(*input).dims(), argmax, g))]
            }
            Op::FullyConnected { input, weight, bias } => {
                let (gi, gw, gb) = kernels::fully_connected_backward(val(*input), val(*weight), g);
                vec![(*input, gi), (*weight, gw), (*bias, gb.reshape(val(*bias).dims())?)]
            }
            Op::Relu { input } => vec![(*input, kernels::relu_backward(val(*input), g))],
            Op::Sigmoid { input } => vec![(*input, kernels::sigmoid_backward(&self.nodes[i].value, g))],
            Op::Upsample { input } => vec![(*input, kernels::upsample_nearest2x_backward(g))],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Hadamard { a, b } => {
                let (ga, gb) = kernels::hadamard_backward(val(*a), val(*b), g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::BroadcastScale { x, scale } => {
                let (gx, gs) = kernels::broadcast_scale_backward(val(*x), val(*scale), g);
                vec![(*x, gx), (*scale, gs)]
            }
            Op::Concat { a, b } => {
                let (ga, gb) = kernels::split_channels(g, val(*a).channels());
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sum { input } => vec![(*input, Tensor::full(val(*input).dims(), g.data()[0]))],
            Op::WeightedSum { input, weights } => vec![(*input, weights.scale(g.data()[0]))],
            Op::Bce { pred, target } => {
                if val(*pred).dims() != target.dims() {
                    return shape_err("bce backward dims");
                }
                vec![(*pred, kernels::bce_loss_backward(val(*pred), target, g.data()[0]))]
            }
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Param;

    fn store_with(name: &str, value: Tensor) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let shape = value.dims().to_vec();
        let id = store.insert(Param::new(name, shape, value).unwrap()).unwrap();
        (store, id)
    }

    #[test]
    fn square_has_derivative_2w() {
        let (mut store, id) = store_with("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.hadamard(w, w).unwrap();
        let loss = tape.sum(sq);
        assert_eq!(tape.value(loss).data(), &[9.0]);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[6.0]);
    }

    #[test]
    fn sum_of_hadamard_grad_is_other_operand() {
        let a_val = Tensor::from_fn([1, 2, 2, 2], |[_, c, y, x]| (c + y) as f64 - x as f64);
        let b_val = Tensor::from_fn([1, 2, 2, 2], |[_, c, y, x]| 0.5 * (c * 3 + y * 2 + x) as f64);
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let a = tape.input(a_val.clone());
        let b = tape.input(b_val.clone());
        let h = tape.hadamard(a, b).unwrap();
        let loss = tape.sum(h);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &b_val);
        assert_eq!(tape.grad(b).unwrap(), &a_val);
    }

    #[test]
    fn second_backward_is_an_error() {
        let (mut store, id) = store_with("w", Tensor::scalar(1.0));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let loss = tape.sum(w);
        tape.backward(loss, &mut store).unwrap();
        assert!(matches!(tape.backward(loss, &mut store), Err(Error::BackwardTwice)));
        assert_eq!(store.get(id).grad.data(), &[1.0]);

        tape.reset();
        let w = tape.param(&store, id);
        let loss = tape.sum(w);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::ones([1, 1, 2, 1]));
        assert!(matches!(tape.backward(x, &mut store), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn untouched_params_keep_zero_grad() {
        let (mut store, id) = store_with("w", Tensor::scalar(4.0));
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let r = tape.relu(c);
        let loss = tape.sum(r);
        let stats = tape.backward(loss, &mut store).unwrap();
        assert_eq!(stats.params_reached, 0);
        assert_eq!(store.get(id).grad.data(), &[0.0]);
    }

    #[test]
    fn every_node_visited_once() {
        let (mut store, id) = store_with("w", Tensor::full([1, 1, 2, 2], 0.5));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let a = tape.add(w, w).unwrap();
        let b = tape.hadamard(a, w).unwrap();
        let s = tape.sigmoid(b);
        let loss = tape.sum(s);
        let stats = tape.backward(loss, &mut store).unwrap();
        assert_eq!(stats.visited, tape.len());
        assert_eq!(stats.params_reached, 1);
    }

    #[test]
    fn op_names_round_trip() {
        for k in OpKind::DIFFERENTIABLE {
            assert_eq!(OpKind::from_name(k.name()), Some(k));
        }
        assert_eq!(OpKind::from_name("nope"), None);
    }
}
