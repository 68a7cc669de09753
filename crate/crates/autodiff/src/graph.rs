use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm behaviour for one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update running statistics.
    Train,
    /// Normalize with running statistics; deterministic.
    Eval,
}

/// Dropout behaviour for one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    /// Stochastic masks at inference time (MC-Dropout).
    McEval,
    Off,
}

impl DropoutMode {
    fn active(self) -> bool {
        !matches!(self, DropoutMode::Off)
    }
}

/// Per-run switches. `sample_seeds` holds one seed per batch item; every
/// item draws its dropout masks from its own stream so results do not
/// depend on how samples are grouped into batches.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub norm: NormMode,
    pub dropout: DropoutMode,
    pub sample_seeds: Vec<u64>,
}

impl RunConfig {
    pub fn train(sample_seeds: Vec<u64>) -> Self {
        Self {
            norm: NormMode::Train,
            dropout: DropoutMode::Train,
            sample_seeds,
        }
    }

    pub fn eval() -> Self {
        Self {
            norm: NormMode::Eval,
            dropout: DropoutMode::Off,
            sample_seeds: Vec::new(),
        }
    }

    pub fn mc(sample_seeds: Vec<u64>) -> Self {
        Self {
            norm: NormMode::Eval,
            dropout: DropoutMode::McEval,
            sample_seeds,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Option<NormMode>,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input { name: String },
    Param { trainable: bool },
    Buffer,
    Constant,
    Dense,
    Conv2d { bias: bool },
    Upsample2x,
    BatchNorm2d { momentum: T, eps: T, cache: BnCache<T> },
    Relu,
    Tanh,
    Reshape { tail: Vec<usize> },
    Add,
    ScaleShift { scale: T, shift: T },
    Dropout2d { p: f32, mask: Vec<T> },
    Sum,
    AbsSum,
    Mse,
}

impl<T> Op<T> {
    fn is_leaf(&self) -> bool {
        matches!(
            self,
            Op::Input { .. } | Op::Param { .. } | Op::Buffer | Op::Constant
        )
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Option<Tensor<T>>,
    label: String,
}

/// A define-then-run computation graph.
///
/// Nodes are appended in topological order: every input of node `k` has an
/// index below `k`. Leaves are named inputs, parameters, buffers (state such
/// as batch-norm running statistics) and constants. Parameter, buffer and
/// constant values persist across runs; op outputs are overwritten.
#[derive(Clone, Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    outputs: Vec<(String, NodeId)>,
    evaluated: Vec<bool>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            outputs: Vec::new(),
            evaluated: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Option<Tensor<T>>, label: String) -> NodeId {
        let id = NodeId(self.nodes.len());
        debug_assert!(inputs.iter().all(|i| i.0 < id.0));
        let label = if label.is_empty() {
            format!("{}#{}", op_name(&op), id.0)
        } else {
            label
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            label,
        });
        self.evaluated.push(false);
        id
    }

    fn check_id(&self, id: NodeId) {
        assert!(id.0 < self.nodes.len(), "node id from another graph");
    }

    /// Renames a node; labels appear in error messages and name parameters.
    pub fn set_label(&mut self, id: NodeId, label: impl Into<String>) -> NodeId {
        self.check_id(id);
        self.nodes[id.0].label = label.into();
        id
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(
            Op::Input {
                name: name.to_string(),
            },
            vec![],
            None,
            name.to_string(),
        )
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>) -> NodeId {
        let value = value.with_requires_grad(true);
        self.push(Op::Param { trainable: true }, vec![], Some(value), name.to_string())
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> NodeId {
        self.push(Op::Buffer, vec![], Some(value), name.to_string())
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, vec![], Some(value), String::new())
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Dense, vec![x, w, b], None, String::new())
    }

    /// Stride-1 convolution with zero "same" padding; `w: [cout, cin, k, k]`
    /// with odd `k`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Op::Conv2d { bias: b.is_some() }, inputs, None, String::new())
    }

    pub fn upsample2x(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Upsample2x, vec![x], None, String::new())
    }

    /// Per-channel batch normalization over `(N, H, W)` with affine
    /// `gamma`/`beta` and running statistics held in two buffers.
    pub fn batch_norm2d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: NodeId,
        running_var: NodeId,
        momentum: f64,
        eps: f64,
    ) -> NodeId {
        self.push(
            Op::BatchNorm2d {
                momentum: T::of(momentum),
                eps: T::of(eps),
                cache: BnCache::default(),
            },
            vec![x, gamma, beta, running_mean, running_var],
            None,
            String::new(),
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, vec![x], None, String::new())
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Tanh, vec![x], None, String::new())
    }

    /// Reshapes every batch item to `tail`, keeping the leading batch axis.
    pub fn reshape(&mut self, x: NodeId, tail: &[usize]) -> NodeId {
        self.push(
            Op::Reshape {
                tail: tail.to_vec(),
            },
            vec![x],
            None,
            String::new(),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b], None, String::new())
    }

    /// `scale·x + shift`.
    pub fn scale_shift(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        self.push(
            Op::ScaleShift {
                scale: T::of(scale),
                shift: T::of(shift),
            },
            vec![x],
            None,
            String::new(),
        )
    }

    /// Channel dropout on a `[N, C, ...]` tensor: each `(n, c)` slice is
    /// zeroed with probability `p`, survivors scaled by `1/(1-p)`.
    pub fn dropout2d(&mut self, x: NodeId, p: f32) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        Ok(self.push(Op::Dropout2d { p, mask: Vec::new() }, vec![x], None, String::new()))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, vec![x], None, String::new())
    }

    /// L1 norm: sum of absolute values.
    pub fn abs_sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::AbsSum, vec![x], None, String::new())
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        self.push(Op::Mse, vec![pred, target], None, String::new())
    }

    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.check_id(id);
        self.outputs.retain(|(n, _)| n != name);
        self.outputs.push((name.to_string(), id));
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].value.as_ref()
    }

    /// Signs of the last-run inputs of every ReLU and absolute-value node.
    /// Two runs with equal patterns lie on one smooth piece of the graph.
    pub fn kink_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu | Op::AbsSum))
            .filter_map(|n| self.nodes[n.inputs[0].0].value.as_ref())
            .flat_map(|v| v.data().iter().map(|x| *x > T::zero()))
            .collect()
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].value.as_ref().and_then(|v| v.grad())
    }

    /// Trainable parameters in creation order.
    pub fn params(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Param { .. }))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Parameters and buffers in creation order: the persistent state.
    pub fn state_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Param { .. } | Op::Buffer))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.label == label).map(NodeId)
    }

    /// Replaces the value of a parameter, buffer or constant.
    pub fn set_value(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[id.0];
        let old = match (&node.op, &node.value) {
            (Op::Param { .. } | Op::Buffer | Op::Constant, Some(v)) => v,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{} does not hold a persistent value",
                    node.label
                )))
            }
        };
        if old.shape() != value.shape() {
            return Err(Error::shape(
                node.label.clone(),
                format!("expected {:?}, got {:?}", old.shape(), value.shape()),
            ));
        }
        let requires_grad = old.requires_grad();
        node.value = Some(value.with_requires_grad(requires_grad));
        Ok(())
    }

    pub fn value_mut(&mut self, id: NodeId) -> Option<&mut Tensor<T>> {
        let node = &mut self.nodes[id.0];
        match node.op {
            Op::Param { .. } | Op::Buffer | Op::Constant => node.value.as_mut(),
            _ => None,
        }
    }

    /// Freezes or unfreezes all parameters. Frozen parameters receive no
    /// gradient, which makes input-only backward passes cheaper.
    pub fn set_params_trainable(&mut self, on: bool) {
        for node in &mut self.nodes {
            if let Op::Param { trainable } = &mut node.op {
                *trainable = on;
                if let Some(v) = &mut node.value {
                    v.set_requires_grad(on);
                }
            }
        }
    }

    /// Evaluates every marked output and returns copies keyed by name.
    pub fn forward(
        &mut self,
        inputs: &HashMap<String, Tensor<T>>,
        cfg: &RunConfig,
    ) -> Result<HashMap<String, Tensor<T>>> {
        let targets: Vec<NodeId> = self.outputs.iter().map(|(_, id)| *id).collect();
        self.run(inputs, &targets, cfg)?;
        Ok(self
            .outputs
            .iter()
            .map(|(name, id)| (name.clone(), self.nodes[id.0].value.clone().expect("evaluated")))
            .collect())
    }

    /// Evaluates the ancestors of `targets`. Inputs not needed by the
    /// targets may be left unbound.
    pub fn run(&mut self, inputs: &HashMap<String, Tensor<T>>, targets: &[NodeId], cfg: &RunConfig) -> Result<()> {
        let mut needed = vec![false; self.nodes.len()];
        for t in targets {
            self.check_id(*t);
            needed[t.0] = true;
        }
        for k in (0..self.nodes.len()).rev() {
            if needed[k] {
                for i in &self.nodes[k].inputs {
                    needed[i.0] = true;
                }
            }
        }
        self.evaluated.iter_mut().for_each(|e| *e = false);
        let mut streams: Option<Vec<ChaCha8Rng>> = None;

        for k in 0..self.nodes.len() {
            if !needed[k] {
                continue;
            }
            let (prev, rest) = self.nodes.split_at_mut(k);
            let node = &mut rest[0];
            if let Op::Input { name } = &node.op {
                let t = inputs
                    .get(name)
                    .ok_or_else(|| Error::UnboundInput(name.clone()))?;
                let mut t = t.clone();
                t.set_grad(None);
                node.value = Some(t);
            } else if !node.op.is_leaf() {
                let out = eval_node(node, prev, cfg, &mut streams)?;
                #[cfg(debug_assertions)]
                if !out.is_finite() {
                    return Err(Error::NumericFault(node.label.clone()));
                }
                node.value = Some(out);
            }
            self.evaluated[k] = true;
        }
        Ok(())
    }

    /// Reverse pass from a scalar node evaluated by the latest run.
    ///
    /// Leaves that require gradients (trainable parameters and inputs bound
    /// with `requires_grad`) receive `∂loss/∂leaf` in their tensor's grad
    /// buffer, summed over every path. Previous gradients are replaced.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check_id(loss);
        let loss_node = &self.nodes[loss.0];
        if !self.evaluated[loss.0] {
            return Err(Error::NotEvaluated(loss_node.label.clone()));
        }
        let lv = loss_node.value.as_ref().expect("evaluated");
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss {
                node: loss_node.label.clone(),
                shape: lv.shape().to_vec(),
            });
        }

        let n = loss.0 + 1;
        let mut needs = vec![false; n];
        for k in 0..n {
            let node = &self.nodes[k];
            needs[k] = match &node.op {
                Op::Input { .. } => self.evaluated[k] && node.value.as_ref().is_some_and(|v| v.requires_grad()),
                Op::Param { trainable } => *trainable,
                Op::Buffer | Op::Constant => false,
                _ => self.evaluated[k] && node.inputs.iter().any(|i| needs[i.0]),
            };
        }

        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        if needs[loss.0] {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for k in (0..n).rev() {
            if self.nodes[k].op.is_leaf() || !needs[k] {
                continue;
            }
            let Some(g) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            let input_grads = backward_node(node, &self.nodes, &g, &needs)?;
            for (inp, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !needs[inp.0] {
                    continue;
                }
                match &mut grads[inp.0] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&ig) {
                            *a += *v;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        for (k, node) in self.nodes.iter_mut().enumerate() {
            let leaf_wants = match &node.op {
                Op::Input { .. } | Op::Param { .. } => node.value.as_ref().is_some_and(|v| v.requires_grad()),
                _ => false,
            };
            if let (true, Some(v)) = (leaf_wants, node.value.as_mut()) {
                let g = if k < n && needs[k] {
                    grads[k].take().unwrap_or_else(|| vec![T::zero(); v.numel()])
                } else {
                    vec![T::zero(); v.numel()]
                };
                v.set_grad(Some(g));
            }
        }
        Ok(())
    }

    /// One Adam update over all trainable parameters, in creation order.
    pub fn adam_step(&mut self, state: &mut AdamState<T>) -> Result<()> {
        let ids = self.params();
        let mut params: Vec<&mut Tensor<T>> = Vec::with_capacity(ids.len());
        for node in self.nodes.iter_mut() {
            if matches!(node.op, Op::Param { .. }) {
                params.push(node.value.as_mut().expect("param value"));
            }
        }
        state.step(&mut params)
    }

    /// Clears cached activations, keeping persistent values.
    pub fn clear_activations(&mut self) {
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Param { .. } | Op::Buffer | Op::Constant) {
                node.value = None;
            }
            match &mut node.op {
                Op::BatchNorm2d { cache, .. } => *cache = BnCache::default(),
                Op::Dropout2d { mask, .. } => mask.clear(),
                _ => {}
            }
        }
        self.evaluated.iter_mut().for_each(|e| *e = false);
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Input { .. } => "input",
        Op::Param { .. } => "param",
        Op::Buffer => "buffer",
        Op::Constant => "constant",
        Op::Dense => "dense",
        Op::Conv2d { .. } => "conv2d",
        Op::Upsample2x => "upsample2x",
        Op::BatchNorm2d { .. } => "batch_norm2d",
        Op::Relu => "relu",
        Op::Tanh => "tanh",
        Op::Reshape { .. } => "reshape",
        Op::Add => "add",
        Op::ScaleShift { .. } => "scale_shift",
        Op::Dropout2d { .. } => "dropout2d",
        Op::Sum => "sum",
        Op::AbsSum => "abs_sum",
        Op::Mse => "mse",
    }
}

fn val<'a, T: Real>(nodes: &'a [Node<T>], id: NodeId) -> &'a Tensor<T> {
    nodes[id.0]
        .value
        .as_ref()
        .expect("inputs are evaluated before their consumers")
}

fn new_tensor<T: Real>(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
    Tensor::from_vec(shape, data).expect("kernel output length matches shape")
}

fn eval_node<T: Real>(
    node: &mut Node<T>,
    prev: &mut [Node<T>],
    cfg: &RunConfig,
    streams: &mut Option<Vec<ChaCha8Rng>>,
) -> Result<Tensor<T>> {
    let label = node.label.clone();
    let ins = node.inputs.clone();
    let out = match &mut node.op {
        Op::Input { .. } | Op::Param { .. } | Op::Buffer | Op::Constant => unreachable!("leaves are not evaluated"),
        Op::Dense => {
            let (x, w, b) = (val(prev, ins[0]), val(prev, ins[1]), val(prev, ins[2]));
            if x.shape().len() != 2 || w.shape().len() != 2 || x.shape()[1] != w.shape()[1] {
                return Err(Error::shape(
                    label,
                    format!("dense expects x [N, in] and W [out, in], got {:?} and {:?}", x.shape(), w.shape()),
                ));
            }
            let (n, fin, fout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
            if b.numel() != fout {
                return Err(Error::shape(label, format!("bias has {} elements, expected {fout}", b.numel())));
            }
            let mut y = vec![T::zero(); n * fout];
            kernels::dense_forward(n, fin, fout, x.data(), w.data(), b.data(), &mut y);
            new_tensor(vec![n, fout], y)
        }
        Op::Conv2d { bias } => {
            let (x, w) = (val(prev, ins[0]), val(prev, ins[1]));
            let d = conv_dims(&label, x, w)?;
            let b = if *bias {
                let b = val(prev, ins[2]);
                if b.numel() != d.cout {
                    return Err(Error::shape(label, format!("bias has {} elements, expected {}", b.numel(), d.cout)));
                }
                Some(b.data())
            } else {
                None
            };
            let mut y = vec![T::zero(); d.n * d.cout * d.h * d.w];
            kernels::conv2d_forward(&d, x.data(), w.data(), b, &mut y);
            new_tensor(vec![d.n, d.cout, d.h, d.w], y)
        }
        Op::Upsample2x => {
            let x = val(prev, ins[0]);
            let s = x.shape();
            if s.len() != 4 {
                return Err(Error::shape(label, format!("upsample expects NCHW, got {s:?}")));
            }
            let mut y = vec![T::zero(); x.numel() * 4];
            kernels::upsample2x_forward(s[0] * s[1], s[2], s[3], x.data(), &mut y);
            new_tensor(vec![s[0], s[1], 2 * s[2], 2 * s[3]], y)
        }
        Op::BatchNorm2d { momentum, eps, cache } => {
            let x = val(prev, ins[0]);
            let s = x.shape().to_vec();
            if s.len() != 4 {
                return Err(Error::shape(label, format!("batch norm expects NCHW, got {s:?}")));
            }
            let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
            for (idx, what) in [(1, "gamma"), (2, "beta"), (3, "running mean"), (4, "running var")] {
                if val(prev, ins[idx]).numel() != c {
                    return Err(Error::shape(
                        label.clone(),
                        format!("{what} has {} channels, input has {c}", val(prev, ins[idx]).numel()),
                    ));
                }
            }
            let xd = x.data();
            let m = n * hw;
            let (mean, var): (Vec<T>, Vec<T>) = match cfg.norm {
                NormMode::Train => {
                    let mut mean = vec![T::zero(); c];
                    let mut var = vec![T::zero(); c];
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for b in 0..n {
                            acc += xd[(b * c + ch) * hw..][..hw].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                        }
                        let mu = acc / m as f64;
                        let mut sq = 0.0f64;
                        for b in 0..n {
                            sq += xd[(b * c + ch) * hw..][..hw]
                                .iter()
                                .map(|v| {
                                    let d = v.to_f64().unwrap() - mu;
                                    d * d
                                })
                                .sum::<f64>();
                        }
                        mean[ch] = T::of(mu);
                        var[ch] = T::of(sq / m as f64);
                    }
                    (mean, var)
                }
                NormMode::Eval => (val(prev, ins[3]).data().to_vec(), val(prev, ins[4]).data().to_vec()),
            };
            let gamma = val(prev, ins[1]).data();
            let beta = val(prev, ins[2]).data();
            let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + *eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); xd.len()];
            let mut y = vec![T::zero(); xd.len()];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        let h = (xd[i] - mean[ch]) * inv_std[ch];
                        xhat[i] = h;
                        y[i] = gamma[ch] * h + beta[ch];
                    }
                }
            }
            if cfg.norm == NormMode::Train {
                let unbias = if m > 1 { T::of(m as f64 / (m as f64 - 1.0)) } else { T::one() };
                let mom = *momentum;
                let rm = prev[ins[3].0].value.as_mut().expect("buffer");
                for (r, mu) in rm.data_mut().iter_mut().zip(&mean) {
                    *r = (T::one() - mom) * *r + mom * *mu;
                }
                let rv = prev[ins[4].0].value.as_mut().expect("buffer");
                for (r, v) in rv.data_mut().iter_mut().zip(&var) {
                    *r = (T::one() - mom) * *r + mom * *v * unbias;
                }
            }
            *cache = BnCache {
                xhat,
                inv_std,
                mode: Some(cfg.norm),
            };
            new_tensor(s, y)
        }
        Op::Relu => {
            let x = val(prev, ins[0]);
            let y = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
            new_tensor(x.shape().to_vec(), y)
        }
        Op::Tanh => {
            let x = val(prev, ins[0]);
            new_tensor(x.shape().to_vec(), x.data().iter().map(|v| v.tanh()).collect())
        }
        Op::Reshape { tail } => {
            let x = val(prev, ins[0]);
            let n = x.shape().first().copied().unwrap_or(1);
            let mut shape = vec![n];
            shape.extend_from_slice(tail);
            if shape.iter().product::<usize>() != x.numel() {
                return Err(Error::shape(label, format!("cannot reshape {:?} to {shape:?}", x.shape())));
            }
            x.clone().reshaped(shape)
        }
        Op::Add => {
            let (a, b) = (val(prev, ins[0]), val(prev, ins[1]));
            if a.shape() != b.shape() {
                return Err(Error::shape(label, format!("add of {:?} and {:?}", a.shape(), b.shape())));
            }
            new_tensor(
                a.shape().to_vec(),
                a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect(),
            )
        }
        Op::ScaleShift { scale, shift } => {
            let x = val(prev, ins[0]);
            let (s, t) = (*scale, *shift);
            new_tensor(x.shape().to_vec(), x.data().iter().map(|v| s * *v + t).collect())
        }
        Op::Dropout2d { p, mask } => {
            let x = val(prev, ins[0]);
            let s = x.shape();
            if s.len() < 2 {
                return Err(Error::shape(label, format!("dropout2d expects [N, C, ...], got {s:?}")));
            }
            let (n, c) = (s[0], s[1]);
            let plane = x.numel() / (n * c).max(1);
            if !cfg.dropout.active() || *p == 0.0 {
                mask.clear();
                x.clone()
            } else {
                if cfg.sample_seeds.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "{label}: {} sample seeds for a batch of {n}",
                        cfg.sample_seeds.len()
                    )));
                }
                let streams = streams.get_or_insert_with(|| cfg.sample_seeds.iter().map(|&s| rng::stream(s)).collect());
                let keep_scale = T::of(1.0 / (1.0 - *p as f64));
                mask.clear();
                for stream in streams.iter_mut() {
                    for _ in 0..c {
                        let u: f32 = stream.random();
                        mask.push(if u < *p { T::zero() } else { keep_scale });
                    }
                }
                let mut y = x.data().to_vec();
                for (slice, &mv) in y.chunks_exact_mut(plane.max(1)).zip(mask.iter()) {
                    for v in slice {
                        *v *= mv;
                    }
                }
                new_tensor(s.to_vec(), y)
            }
        }
        Op::Sum => {
            let x = val(prev, ins[0]);
            Tensor::scalar(x.data().iter().copied().sum())
        }
        Op::AbsSum => {
            let x = val(prev, ins[0]);
            Tensor::scalar(x.data().iter().map(|v| v.abs()).sum())
        }
        Op::Mse => {
            let (a, b) = (val(prev, ins[0]), val(prev, ins[1]));
            if a.shape() != b.shape() {
                return Err(Error::shape(label, format!("mse of {:?} and {:?}", a.shape(), b.shape())));
            }
            let total: T = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| {
                    let d = *x - *y;
                    d * d
                })
                .sum();
            Tensor::scalar(total / T::of(a.numel().max(1) as f64))
        }
    };
    Ok(out)
}

fn conv_dims<T: Real>(label: &str, x: &Tensor<T>, w: &Tensor<T>) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0 {
        return Err(Error::shape(
            label,
            format!("conv2d expects x NCHW and W [cout, cin, k, k] with odd k, got {xs:?} and {ws:?}"),
        ));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(
            label,
            format!("channel mismatch: input has {} channels, kernel expects {}", xs[1], ws[1]),
        ));
    }
    Ok(ConvDims {
        n: xs[0],
        cin: xs[1],
        cout: ws[0],
        h: xs[2],
        w: xs[3],
        k: ws[2],
    })
}

/// Gradients for each input of `node` (None where not needed).
fn backward_node<T: Real>(node: &Node<T>, nodes: &[Node<T>], g: &[T], needs: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
    let ins = &node.inputs;
    let need = |i: usize| needs[ins[i].0];
    let zeros = |i: usize| vec![T::zero(); val(nodes, ins[i]).numel()];
    let out = match &node.op {
        Op::Input { .. } | Op::Param { .. } | Op::Buffer | Op::Constant => Vec::new(),
        Op::Dense => {
            let (x, w) = (val(nodes, ins[0]), val(nodes, ins[1]));
            let (n, fin, fout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
            let mut dx = need(0).then(|| zeros(0));
            let mut dw = need(1).then(|| zeros(1));
            let mut db = need(2).then(|| zeros(2));
            kernels::dense_backward(
                n,
                fin,
                fout,
                x.data(),
                w.data(),
                g,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            vec![dx, dw, db]
        }
        Op::Conv2d { bias } => {
            let (x, w) = (val(nodes, ins[0]), val(nodes, ins[1]));
            let d = conv_dims(&node.label, x, w)?;
            let mut dx = need(0).then(|| zeros(0));
            let mut dw = need(1).then(|| zeros(1));
            let mut db = (*bias && need(2)).then(|| zeros(2));
            kernels::conv2d_backward(&d, x.data(), w.data(), g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
            let mut v = vec![dx, dw];
            if *bias {
                v.push(db);
            }
            v
        }
        Op::Upsample2x => {
            let x = val(nodes, ins[0]);
            let s = x.shape();
            let mut dx = zeros(0);
            kernels::upsample2x_backward(s[0] * s[1], s[2], s[3], g, &mut dx);
            vec![Some(dx)]
        }
        Op::BatchNorm2d { cache, .. } => {
            let x = val(nodes, ins[0]);
            let s = x.shape();
            let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
            let gamma = val(nodes, ins[1]).data();
            let xhat = &cache.xhat;
            let mut sum_g = vec![0.0f64; c];
            let mut sum_gx = vec![0.0f64; c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        let gi = g[i].to_f64().unwrap();
                        sum_g[ch] += gi;
                        sum_gx[ch] += gi * xhat[i].to_f64().unwrap();
                    }
                }
            }
            let dx = need(0).then(|| {
                let mut dx = vec![T::zero(); x.numel()];
                let m = (n * hw) as f64;
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        let scale = gamma[ch] * cache.inv_std[ch];
                        match cache.mode {
                            Some(NormMode::Train) => {
                                let mg = T::of(sum_g[ch] / m);
                                let mgx = T::of(sum_gx[ch] / m);
                                for i in off..off + hw {
                                    dx[i] = scale * (g[i] - mg - xhat[i] * mgx);
                                }
                            }
                            _ => {
                                for i in off..off + hw {
                                    dx[i] = scale * g[i];
                                }
                            }
                        }
                    }
                }
                dx
            });
            let dgamma = need(1).then(|| sum_gx.iter().map(|v| T::of(*v)).collect());
            let dbeta = need(2).then(|| sum_g.iter().map(|v| T::of(*v)).collect());
            vec![dx, dgamma, dbeta, None, None]
        }
        Op::Relu => {
            let x = val(nodes, ins[0]);
            vec![Some(
                x.data()
                    .iter()
                    .zip(g)
                    .map(|(v, gi)| if *v > T::zero() { *gi } else { T::zero() })
                    .collect(),
            )]
        }
        Op::Tanh => {
            let y = node.value.as_ref().expect("evaluated");
            vec![Some(y.data().iter().zip(g).map(|(v, gi)| *gi * (T::one() - *v * *v)).collect())]
        }
        Op::Reshape { .. } => vec![Some(g.to_vec())],
        Op::Add => vec![need(0).then(|| g.to_vec()), need(1).then(|| g.to_vec())],
        Op::ScaleShift { scale, .. } => vec![Some(g.iter().map(|v| *v * *scale).collect())],
        Op::Dropout2d { mask, .. } => {
            if mask.is_empty() {
                vec![Some(g.to_vec())]
            } else {
                let plane = (g.len() / mask.len()).max(1);
                let mut dx = g.to_vec();
                for (slice, &mv) in dx.chunks_exact_mut(plane).zip(mask.iter()) {
                    for v in slice {
                        *v *= mv;
                    }
                }
                vec![Some(dx)]
            }
        }
        Op::Sum => vec![Some(vec![g[0]; val(nodes, ins[0]).numel()])],
        Op::AbsSum => {
            let x = val(nodes, ins[0]);
            vec![Some(x.data().iter().map(|v| g[0] * sign(*v)).collect())]
        }
        Op::Mse => {
            let (a, b) = (val(nodes, ins[0]), val(nodes, ins[1]));
            let k = g[0] * T::of(2.0 / a.numel().max(1) as f64);
            let da: Vec<T> = a.data().iter().zip(b.data()).map(|(x, y)| k * (*x - *y)).collect();
            let db = need(1).then(|| da.iter().map(|v| -*v).collect());
            vec![need(0).then_some(da), db]
        }
    };
    Ok(out)
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
