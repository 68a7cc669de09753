//! The view-conditioned synthesis network, its training loop and
//! checkpoints.
//!
//! Topology for `n` residual blocks and channel schedule `c_0 … c_n`:
//!
//! ```text
//! (θ̂, φ̂) → dense+ReLU per fc width → dense → reshape (c_0, 4, 4)
//!   → n × [ up = upsample2x(x)
//!           main = conv3×3 → BN → ReLU → dropout2d(η) → conv3×3 → BN
//!           skip = conv1×1(up) + bias
//!           x = ReLU(main + skip) ]
//!   → conv3×3 (3 channels, bias) → tanh
//! ```
//!
//! `c_{b+1} = max(c_b / 2, min(min_channels, c_b))`.

mod checkpoint;
mod train;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use viewuq_autodiff::gradcheck::{finite_difference_check, CheckReport, Leaf};
use viewuq_autodiff::{rng, Graph, NodeId, Real, RunConfig, Tensor};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::view::ViewPoint;

pub use checkpoint::{Checkpoint, TrainingMeta};
pub use viewuq_autodiff::AdamConfig;
pub use train::{member_seeds, mse_loss, train, train_ensemble, TrainConfig, TrainReport};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// Missing fields deserialize to their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_resolution: usize,
    pub n_res_blocks: usize,
    pub fc_widths: Vec<usize>,
    pub base_channels: usize,
    pub min_channels: usize,
    pub dropout_p: f32,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_resolution: 32,
            n_res_blocks: 3,
            fc_widths: vec![64, 512],
            base_channels: 64,
            min_channels: 16,
            dropout_p: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 128×128 output through five blocks.
    pub fn paper_scale() -> Self {
        Self {
            image_resolution: 128,
            n_res_blocks: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_res_blocks > 16 || 4usize << self.n_res_blocks != self.image_resolution {
            return bad(format!(
                "image_resolution {} must equal 4·2^n_res_blocks (n_res_blocks = {})",
                self.image_resolution, self.n_res_blocks
            ));
        }
        if self.image_resolution < 16 {
            return bad(format!("image_resolution {} is below 16", self.image_resolution));
        }
        if self.fc_widths.contains(&0) || self.base_channels == 0 || self.min_channels == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Channel count entering each block, then the last block's output.
    pub fn channels(&self) -> Vec<usize> {
        let mut c = vec![self.base_channels];
        for _ in 0..self.n_res_blocks {
            let prev = *c.last().unwrap();
            c.push((prev / 2).max(self.min_channels.min(prev)));
        }
        c
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let ch = self.channels();
        let mut widths = vec![2];
        widths.extend(&self.fc_widths);
        widths.push(ch[0] * 16);
        let fc: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let blocks: usize = ch
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                9 * o * i + 2 * o + 9 * o * o + 2 * o + o * i + o
            })
            .sum();
        fc + blocks + 9 * 3 * ch[self.n_res_blocks] + 3
    }
}

/// Dropout behaviour for a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dropout {
    Off,
    /// Stochastic masks from the given seed.
    McEval { seed: u64 },
}

/// The synthesis network over element type `T` (`f32` in production).
#[derive(Clone, Debug)]
pub struct SynthesisModel<T: Real = f32> {
    config: ModelConfig,
    graph: Graph<T>,
    view: NodeId,
    image: NodeId,
    loss: NodeId,
    l1: NodeId,
}

struct Init<R> {
    rng: R,
}

impl<R: Rng> Init<R> {
    fn uniform(&mut self, shape: &[usize], bound: f32) -> Vec<f32> {
        let n = shape.iter().product();
        (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect()
    }
}

fn tensor<T: Real>(shape: &[usize], data: Vec<f32>) -> Tensor<T> {
    Tensor::from_vec(shape.to_vec(), data.into_iter().map(|v| T::of(v as f64)).collect()).expect("shape")
}

impl<T: Real> SynthesisModel<T> {
    /// Builds the network with weights drawn from `rng::stream(config.seed)`:
    /// He-uniform `±√(6/fan_in)` for layers feeding ReLU, Xavier-uniform
    /// `±√(6/(fan_in+fan_out))` for the output conv, zero biases, unit BN
    /// scale. Weights are drawn in f32 so every precision starts equal.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: rng::stream(config.seed),
        };
        let mut g = Graph::<T>::new();
        let view = g.input("view");

        let ch = config.channels();
        let mut widths = vec![2];
        widths.extend(&config.fc_widths);
        widths.push(ch[0] * 16);
        let mut x = view;
        let n_fc = widths.len() - 1;
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wt = init.uniform(&[fan_out, fan_in], (6.0 / fan_in as f32).sqrt());
            let wn = g.param(&format!("fc{l}.w"), tensor(&[fan_out, fan_in], wt));
            let bn = g.param(&format!("fc{l}.b"), Tensor::zeros(&[fan_out]));
            x = g.dense(x, wn, bn);
            if l + 1 < n_fc {
                x = g.relu(x);
            }
        }
        x = g.reshape(x, &[ch[0], 4, 4]);

        for b in 0..config.n_res_blocks {
            let (cin, cout) = (ch[b], ch[b + 1]);
            let mut conv = |g: &mut Graph<T>, name: String, cout: usize, cin: usize, k: usize| {
                let shape = [cout, cin, k, k];
                let data = init.uniform(&shape, (6.0 / (cin * k * k) as f32).sqrt());
                g.param(&name, tensor(&shape, data))
            };
            let w1 = conv(&mut g, format!("block{b}.conv1.w"), cout, cin, 3);
            let w2 = conv(&mut g, format!("block{b}.conv2.w"), cout, cout, 3);
            let ws = conv(&mut g, format!("block{b}.skip.w"), cout, cin, 1);
            let bs = g.param(&format!("block{b}.skip.b"), Tensor::zeros(&[cout]));

            let up = g.upsample2x(x);
            let h = g.conv2d(up, w1, None);
            let h = batch_norm(&mut g, h, &format!("block{b}.bn1"), cout);
            let h = g.relu(h);
            let h = g.dropout2d(h, config.dropout_p)?;
            let h = g.set_label(h, format!("block{b}.dropout"));
            let h = g.conv2d(h, w2, None);
            let h = batch_norm(&mut g, h, &format!("block{b}.bn2"), cout);
            let skip = g.conv2d(up, ws, Some(bs));
            let sum = g.add(h, skip);
            x = g.relu(sum);
            g.set_label(x, format!("block{b}.out"));
        }

        let c_last = ch[config.n_res_blocks];
        let bound = (6.0 / (9 * (c_last + 3)) as f32).sqrt();
        let wo = g.param("out.w", tensor(&[3, c_last, 3, 3], init.uniform(&[3, c_last, 3, 3], bound)));
        let bo = g.param("out.b", Tensor::zeros(&[3]));
        let pre = g.conv2d(x, wo, Some(bo));
        let image = g.tanh(pre);
        g.set_label(image, "image");
        g.mark_output("image", image);

        let target = g.input("target");
        let loss = g.mse(image, target);
        g.set_label(loss, "mse");
        let l1 = g.abs_sum(image);
        g.set_label(l1, "l1");

        Ok(Self {
            config,
            graph: g,
            view,
            image,
            loss,
            l1,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.graph
            .params()
            .iter()
            .map(|&id| self.graph.value(id).expect("param").numel())
            .sum()
    }

    /// Named parameters and batch-norm statistics in creation order.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.graph
            .state_nodes()
            .into_iter()
            .map(|id| {
                let mut t = self.graph.value(id).expect("state").clone();
                t.set_requires_grad(false);
                (self.graph.label(id).to_string(), Tensor::from_vec(t.shape().to_vec(), t.into_data()).unwrap())
            })
            .collect()
    }

    /// Overwrites state by name; every state tensor must be provided.
    pub fn load_state<U: Real>(&mut self, state: &[(String, Tensor<U>)]) -> Result<()> {
        let ids = self.graph.state_nodes();
        if ids.len() != state.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} state tensors, checkpoint has {}",
                ids.len(),
                state.len()
            )));
        }
        let by_name: HashMap<&str, &Tensor<U>> = state.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for id in ids {
            let name = self.graph.label(id).to_string();
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            self.graph
                .set_value(id, t.cast::<T>())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }

    /// Same weights and statistics in another precision.
    pub fn cast<U: Real>(&self) -> Result<SynthesisModel<U>> {
        let mut m = SynthesisModel::<U>::build(self.config.clone())?;
        m.load_state(&self.state())?;
        Ok(m)
    }

    /// Mutable access to a named parameter or buffer.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let id = self.graph.find(name)?;
        self.graph.value_mut(id)
    }

    pub(crate) fn graph_mut(&mut self) -> &mut Graph<T> {
        &mut self.graph
    }

    pub(crate) fn loss_node(&self) -> NodeId {
        self.loss
    }

    pub(crate) fn image_node(&self) -> NodeId {
        self.image
    }

    pub(crate) fn view_node(&self) -> NodeId {
        self.view
    }

    pub(crate) fn l1_node(&self) -> NodeId {
        self.l1
    }

    /// Single-view prediction with batch norm in eval mode.
    pub fn predict(&mut self, view: ViewPoint, dropout: Dropout) -> Result<RgbImage> {
        let cfg = match dropout {
            Dropout::Off => RunConfig::eval(),
            Dropout::McEval { seed } => RunConfig::mc(vec![seed]),
        };
        Ok(self.predict_batch(&[view], &cfg)?.pop().expect("one image"))
    }

    /// Batched inference; `cfg.sample_seeds` must hold one seed per view in
    /// stochastic modes.
    pub fn predict_batch(&mut self, views: &[ViewPoint], cfg: &RunConfig) -> Result<Vec<RgbImage>> {
        let inputs = HashMap::from([("view".to_string(), views_tensor::<T>(views))]);
        self.graph.run(&inputs, &[self.image], cfg)?;
        Ok(self.images_from(self.image, views.len()))
    }

    pub(crate) fn images_from(&self, node: NodeId, n: usize) -> Vec<RgbImage> {
        let r = self.config.image_resolution;
        let out = self.graph.value(node).expect("evaluated");
        out.data()
            .chunks_exact(3 * r * r)
            .take(n)
            .map(|px| {
                let data = px.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
                RgbImage::from_planar(r, r, data).expect("tanh output lies in [-1, 1]")
            })
            .collect()
    }
}

impl SynthesisModel<f64> {
    /// Compares every parameter gradient of the MSE loss on `views` and
    /// `targets` with central differences of step `h`.
    pub fn gradient_check(
        &mut self,
        views: &[ViewPoint],
        targets: &[RgbImage],
        cfg: &RunConfig,
        h: f64,
        floor: f64,
    ) -> Result<CheckReport> {
        if views.len() != targets.len() || views.is_empty() {
            return Err(Error::Shape(format!("{} views for {} targets", views.len(), targets.len())));
        }
        let r = self.config.image_resolution;
        let target: Vec<f64> = targets.iter().flat_map(|t| t.data().iter().map(|&v| v as f64)).collect();
        let inputs = HashMap::from([
            ("view".to_string(), views_tensor::<f64>(views)),
            ("target".to_string(), Tensor::from_vec(vec![views.len(), 3, r, r], target)?),
        ]);
        let leaves: Vec<Leaf> = self.graph.params().into_iter().map(Leaf::Param).collect();
        Ok(finite_difference_check(&mut self.graph, &inputs, self.loss, &leaves, cfg, h, floor)?)
    }
}

fn batch_norm<T: Real>(g: &mut Graph<T>, x: NodeId, name: &str, c: usize) -> NodeId {
    let gamma = g.param(&format!("{name}.gamma"), Tensor::full(&[c], T::one()));
    let beta = g.param(&format!("{name}.beta"), Tensor::zeros(&[c]));
    let mean = g.buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]));
    let var = g.buffer(&format!("{name}.running_var"), Tensor::full(&[c], T::one()));
    let out = g.batch_norm2d(x, gamma, beta, mean, var, BN_MOMENTUM, BN_EPS);
    g.set_label(out, name)
}

/// `[N, 2]` tensor of normalized views.
pub(crate) fn views_tensor<T: Real>(views: &[ViewPoint]) -> Tensor<T> {
    let data = views
        .iter()
        .flat_map(|v| v.normalized())
        .map(|x| T::of(x as f64))
        .collect();
    Tensor::from_vec(vec![views.len(), 2], data).expect("shape")
}
