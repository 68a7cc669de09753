//! Central-difference gradient checks for `f64` graphs, and a case per
//! differentiable op for suites that sweep seeds.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId, RunConfig};
use crate::tensor::Tensor;

pub type Inputs = HashMap<String, Tensor<f64>>;

/// Leaf whose gradient is checked: a parameter node or a named input.
#[derive(Clone, Debug)]
pub enum Leaf {
    Param(NodeId),
    Input(String, NodeId),
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: usize,
    /// Elements whose difference step crossed a ReLU or |·| kink; their
    /// central difference does not estimate the derivative.
    pub skipped: usize,
    /// Largest element-wise [`rel_err`].
    pub worst_rel: f64,
    pub worst_at: String,
    /// Largest per-leaf `‖a − n‖ / max(‖a‖, ‖n‖, floor)` over checked
    /// elements.
    pub worst_leaf_rel: f64,
    pub worst_leaf: String,
}

impl CheckReport {
    pub fn merge(&mut self, other: CheckReport) {
        if other.worst_rel > self.worst_rel || self.worst_at.is_empty() {
            self.worst_rel = other.worst_rel;
            self.worst_at = other.worst_at;
        }
        if other.worst_leaf_rel > self.worst_leaf_rel || self.worst_leaf.is_empty() {
            self.worst_leaf_rel = other.worst_leaf_rel;
            self.worst_leaf = other.worst_leaf;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn loss_value(g: &mut Graph<f64>, inputs: &Inputs, loss: NodeId, cfg: &RunConfig) -> Result<(f64, Vec<bool>)> {
    g.run(inputs, &[loss], cfg)?;
    Ok((g.value(loss).expect("evaluated").data()[0], g.kink_pattern()))
}

/// Compares backward gradients with central differences of step `h` for
/// every element of every leaf. Elements whose `±h` runs differ in kink
/// pattern from the base run are counted as skipped.
pub fn finite_difference_check(
    g: &mut Graph<f64>,
    inputs: &Inputs,
    loss: NodeId,
    leaves: &[Leaf],
    cfg: &RunConfig,
    h: f64,
    floor: f64,
) -> Result<CheckReport> {
    g.run(inputs, &[loss], cfg)?;
    let base = g.kink_pattern();
    g.backward(loss)?;
    // Re-running the graph clears input gradients, so collect them first.
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|leaf| {
            let id = match leaf {
                Leaf::Param(id) | Leaf::Input(_, id) => *id,
            };
            g.grad(id).map(<[f64]>::to_vec).unwrap_or_default()
        })
        .collect();
    let mut report = CheckReport::default();
    let mut inputs = inputs.clone();
    for (leaf, analytic) in leaves.iter().zip(analytic) {
        let label = match leaf {
            Leaf::Param(id) => g.label(*id).to_string(),
            Leaf::Input(name, _) => name.clone(),
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for (i, &a) in analytic.iter().enumerate() {
            let mut eval_at = |delta: f64, g: &mut Graph<f64>| -> Result<(f64, Vec<bool>)> {
                match leaf {
                    Leaf::Param(id) => {
                        let orig = g.value(*id).expect("param").data()[i];
                        g.value_mut(*id).expect("param").data_mut()[i] = orig + delta;
                        let v = loss_value(g, &inputs, loss, cfg);
                        g.value_mut(*id).expect("param").data_mut()[i] = orig;
                        v
                    }
                    Leaf::Input(name, _) => {
                        let t = inputs.get_mut(name).expect("bound input");
                        let orig = t.data()[i];
                        t.data_mut()[i] = orig + delta;
                        let v = loss_value(g, &inputs, loss, cfg);
                        inputs.get_mut(name).expect("bound input").data_mut()[i] = orig;
                        v
                    }
                }
            };
            let ((hi, hi_kinks), (lo, lo_kinks)) = (eval_at(h, g)?, eval_at(-h, g)?);
            if hi_kinks != base || lo_kinks != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (hi - lo) / (2.0 * h);
            let r = rel_err(a, numeric, floor);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            report.checked += 1;
            if r > report.worst_rel || report.worst_at.is_empty() {
                report.worst_rel = r;
                report.worst_at = format!("{label}[{i}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
        let leaf_rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(floor);
        if leaf_rel > report.worst_leaf_rel || report.worst_leaf.is_empty() {
            report.worst_leaf_rel = leaf_rel;
            report.worst_leaf = label;
        }
    }
    Ok(report)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("length matches shape")
}

/// Pushes entries at least `margin` away from zero, keeping ReLU kinks out
/// of reach of the difference step.
fn away_from_zero(t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    let data = t
        .data()
        .iter()
        .map(|&v| if v.abs() < margin { v.signum() * margin + v } else { v })
        .collect();
    Tensor::from_vec(t.shape().to_vec(), data).expect("same shape")
}

/// A graph with bound inputs, a scalar loss and the leaves to check.
pub struct GradCase {
    pub name: &'static str,
    pub graph: Graph<f64>,
    pub inputs: Inputs,
    pub loss: NodeId,
    pub leaves: Vec<Leaf>,
    pub cfg: RunConfig,
}

impl GradCase {
    pub fn check(&mut self, h: f64, floor: f64) -> Result<CheckReport> {
        finite_difference_check(&mut self.graph, &self.inputs, self.loss, &self.leaves, &self.cfg, h, floor)
    }
}

type Build<'a> = dyn FnOnce(&mut Graph<f64>, NodeId, &mut ChaCha8Rng) -> Result<(NodeId, Vec<NodeId>)> + 'a;

/// `mse(build(x), t)` with random `x` and `t`; `x` and the returned
/// parameters are the checked leaves.
fn unary_case(name: &'static str, rng: &mut ChaCha8Rng, x_shape: &[usize], margin: f64, cfg: RunConfig, build: Box<Build<'_>>) -> Result<GradCase> {
    let mut g = Graph::<f64>::new();
    let x = g.input("x");
    let t = g.input("t");
    let (y, params) = build(&mut g, x, rng)?;
    let loss = g.mse(y, t);
    let xv = away_from_zero(random_tensor(rng, x_shape, 1.0), margin).with_requires_grad(true);
    let mut inputs = Inputs::new();
    inputs.insert("x".into(), xv);
    g.run(&inputs, &[y], &cfg)?;
    let y_shape = g.value(y).expect("evaluated").shape().to_vec();
    inputs.insert("t".into(), random_tensor(rng, &y_shape, 1.0));
    let mut leaves = vec![Leaf::Input("x".into(), x)];
    leaves.extend(params.into_iter().map(Leaf::Param));
    Ok(GradCase {
        name,
        graph: g,
        inputs,
        loss,
        leaves,
        cfg,
    })
}

fn batch_norm(g: &mut Graph<f64>, x: NodeId, r: &mut ChaCha8Rng, c: usize) -> (NodeId, Vec<NodeId>) {
    let gamma = g.param("gamma", random_tensor(r, &[c], 1.0));
    let beta = g.param("beta", random_tensor(r, &[c], 1.0));
    let rm = g.buffer("rm", random_tensor(r, &[c], 0.3));
    let rv = g.buffer(
        "rv",
        Tensor::from_vec(vec![c], (0..c).map(|i| 0.5 + i as f64 * 0.25).collect()).expect("length c"),
    );
    (g.batch_norm2d(x, gamma, beta, rm, rv, 0.1, 1e-5), vec![gamma, beta])
}

/// One case per differentiable op, drawn from `seed`: dense, conv2d (1×1,
/// 3×3 with bias), upsample2x, batch norm (train and eval), relu, tanh,
/// reshape, add, scale_shift, dropout2d (train and MC masks), sum,
/// abs_sum and mse in both arguments.
pub fn op_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut r = crate::rng::stream(seed);
    let r = &mut r;
    let eval = RunConfig::eval;
    let mut cases = vec![
        unary_case("dense", r, &[3, 4], 0.0, eval(), Box::new(|g, x, r| {
            let w = g.param("w", random_tensor(r, &[5, 4], 0.5));
            let b = g.param("b", random_tensor(r, &[5], 0.5));
            Ok((g.dense(x, w, b), vec![w, b]))
        }))?,
        unary_case("conv2d 3x3", r, &[2, 2, 5, 4], 0.0, eval(), Box::new(|g, x, r| {
            let w = g.param("w", random_tensor(r, &[3, 2, 3, 3], 0.5));
            let b = g.param("b", random_tensor(r, &[3], 0.5));
            Ok((g.conv2d(x, w, Some(b)), vec![w, b]))
        }))?,
        unary_case("conv2d 1x1", r, &[2, 3, 4, 4], 0.0, eval(), Box::new(|g, x, r| {
            let w = g.param("w", random_tensor(r, &[2, 3, 1, 1], 0.5));
            Ok((g.conv2d(x, w, None), vec![w]))
        }))?,
        unary_case("upsample2x", r, &[2, 2, 3, 3], 0.0, eval(), Box::new(|g, x, _| Ok((g.upsample2x(x), vec![]))))?,
        unary_case("batch_norm2d train", r, &[3, 2, 3, 3], 0.0, RunConfig::train(vec![0; 3]), Box::new(|g, x, r| Ok(batch_norm(g, x, r, 2))))?,
        unary_case("batch_norm2d eval", r, &[2, 3, 2, 2], 0.0, eval(), Box::new(|g, x, r| Ok(batch_norm(g, x, r, 3))))?,
        unary_case("relu", r, &[4, 6], 0.05, eval(), Box::new(|g, x, _| Ok((g.relu(x), vec![]))))?,
        unary_case("tanh", r, &[4, 6], 0.0, eval(), Box::new(|g, x, _| Ok((g.tanh(x), vec![]))))?,
        unary_case("reshape", r, &[2, 12], 0.0, eval(), Box::new(|g, x, _| Ok((g.reshape(x, &[3, 2, 2]), vec![]))))?,
        unary_case("add", r, &[3, 4], 0.0, eval(), Box::new(|g, x, r| {
            let c = g.param("c", random_tensor(r, &[3, 4], 1.0));
            Ok((g.add(x, c), vec![c]))
        }))?,
        unary_case("scale_shift with reuse", r, &[3, 4], 0.0, eval(), Box::new(|g, x, _| {
            let y = g.scale_shift(x, -1.7, 0.3);
            Ok((g.add(y, x), vec![]))
        }))?,
    ];
    let s = seed.wrapping_mul(3);
    for (name, cfg) in [
        ("dropout2d train", RunConfig::train(vec![s, s + 1, s + 2])),
        ("dropout2d mc", RunConfig::mc(vec![s + 3, s + 4, s + 5])),
    ] {
        cases.push(unary_case(name, r, &[3, 4, 2, 2], 0.0, cfg, Box::new(|g, x, _| Ok((g.dropout2d(x, 0.4)?, vec![]))))?);
    }
    for (name, abs) in [("sum", false), ("abs_sum", true)] {
        let mut g = Graph::<f64>::new();
        let x = g.input("x");
        let w = g.param("w", random_tensor(r, &[3, 4], 1.0));
        let b = g.param("b", random_tensor(r, &[3], 1.0));
        let y = g.dense(x, w, b);
        let loss = if abs { g.abs_sum(y) } else { g.sum(y) };
        let mut inputs = Inputs::new();
        inputs.insert("x".into(), random_tensor(r, &[2, 4], 1.0).with_requires_grad(true));
        cases.push(GradCase {
            name,
            graph: g,
            inputs,
            loss,
            leaves: vec![Leaf::Input("x".into(), x), Leaf::Param(w), Leaf::Param(b)],
            cfg: eval(),
        });
    }
    let mut g = Graph::<f64>::new();
    let a = g.input("a");
    let b = g.input("b");
    let loss = g.mse(a, b);
    let mut inputs = Inputs::new();
    inputs.insert("a".into(), random_tensor(r, &[2, 3], 1.0).with_requires_grad(true));
    inputs.insert("b".into(), random_tensor(r, &[2, 3], 1.0).with_requires_grad(true));
    cases.push(GradCase {
        name: "mse",
        graph: g,
        inputs,
        loss,
        leaves: vec![Leaf::Input("a".into(), a), Leaf::Input("b".into(), b)],
        cfg: eval(),
    });
    Ok(cases)
}
