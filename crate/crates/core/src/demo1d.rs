//! MC-Dropout and ensemble envelopes for a 1-D regression of `x·sin(x)`.
//!
//! The network is `1 → 64 → 64 → 1` with ReLU. The MC variant drops hidden
//! units of the last hidden layer; ensemble members have no dropout. Inputs
//! are mapped from the domain onto `[-1, 1]` and targets standardized with
//! the training mean and deviation; predictions are mapped back.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use viewuq_autodiff::{rng, AdamConfig, AdamState, Graph, NodeId, RunConfig, Tensor};

use crate::error::{Error, IoContext, Result};
use crate::stats::pearson;

const HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Demo1DConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sigma: f32,
    pub domain: (f32, f32),
    /// Adam steps per model.
    pub iterations: usize,
    /// Full batch when at least `n_train`.
    pub batch_size: usize,
    pub lr: f32,
    pub m: usize,
    pub ensemble_size: usize,
    pub seed: u64,
    pub dropout_p: f32,
}

impl Default for Demo1DConfig {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_test: 200,
            noise_sigma: 0.1,
            domain: (0.0, 10.0),
            iterations: 1000,
            batch_size: 100,
            lr: 1e-3,
            m: 100,
            ensemble_size: 50,
            seed: 0,
            dropout_p: 0.1,
        }
    }
}

impl Demo1DConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("demo1d: {msg}")));
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if self.n_train < 2 || self.n_test < 2 {
            return bad("n_train and n_test must be at least 2");
        }
        if !(self.domain.0 < self.domain.1) {
            return bad("domain must be increasing");
        }
        if self.batch_size == 0 || self.ensemble_size == 0 || self.m == 0 {
            return bad("batch_size, ensemble_size and m must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        AdamConfig::with_lr(self.lr).validate()?;
        Ok(())
    }
}

pub fn target_fn(x: f64) -> f64 {
    x * x.sin()
}

/// Noisy training pairs and the noiseless test grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub train_x: Vec<f32>,
    pub train_y: Vec<f32>,
    pub test_x: Vec<f32>,
    pub test_y: Vec<f32>,
}

/// Training `x` are uniform on the domain from stream `mix(seed, 0)`;
/// noise comes from stream `mix(seed, 1)`. The test grid spans the domain
/// inclusive.
pub fn make_synthetic(cfg: &Demo1DConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let (lo, hi) = cfg.domain;
    let mut xr = rng::stream(rng::mix(cfg.seed, 0));
    let mut nr = rng::stream(rng::mix(cfg.seed, 1));
    let noise = Normal::new(0.0f64, cfg.noise_sigma as f64).map_err(|e| Error::Config(e.to_string()))?;
    let train_x: Vec<f32> = (0..cfg.n_train).map(|_| xr.random_range(lo..hi)).collect();
    let train_y = train_x
        .iter()
        .map(|&x| (target_fn(x as f64) + noise.sample(&mut nr)) as f32)
        .collect();
    let step = (hi - lo) as f64 / (cfg.n_test - 1) as f64;
    let test_x: Vec<f32> = (0..cfg.n_test).map(|i| (lo as f64 + i as f64 * step) as f32).collect();
    let test_y = test_x.iter().map(|&x| target_fn(x as f64) as f32).collect();
    Ok(Synthetic {
        train_x,
        train_y,
        test_x,
        test_y,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub method: String,
    pub xs: Vec<f32>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl EnvelopeResult {
    pub fn rmse(&self, truth: &[f32]) -> f64 {
        let sse: f64 = self
            .mean
            .iter()
            .zip(truth)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        (sse / truth.len() as f64).sqrt()
    }
}

struct Mlp {
    graph: Graph<f32>,
    out: NodeId,
    loss: NodeId,
}

struct Scaling {
    x: (f32, f32),
    y_mean: f32,
    y_std: f32,
}

impl Scaling {
    fn input(&self, x: f32) -> f32 {
        2.0 * (x - self.x.0) / (self.x.1 - self.x.0) - 1.0
    }
}

fn build_mlp(seed: u64, dropout_p: f32) -> Result<Mlp> {
    let mut r = rng::stream(seed);
    let mut g = Graph::<f32>::new();
    let x = g.input("x");
    let mut h = x;
    let widths = [1, HIDDEN, HIDDEN, 1];
    for (l, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let last = l == widths.len() - 2;
        if last && dropout_p > 0.0 {
            h = g.dropout2d(h, dropout_p)?;
        }
        let bound = if last {
            (6.0 / (fan_in + fan_out) as f32).sqrt()
        } else {
            (6.0 / fan_in as f32).sqrt()
        };
        let data = (0..fan_in * fan_out).map(|_| r.random_range(-bound..bound)).collect();
        let wn = g.param(&format!("fc{l}.w"), Tensor::from_vec(vec![fan_out, fan_in], data)?);
        let bn = g.param(&format!("fc{l}.b"), Tensor::zeros(&[fan_out]));
        h = g.dense(h, wn, bn);
        if !last {
            h = g.relu(h);
        }
    }
    let target = g.input("y");
    let loss = g.mse(h, target);
    Ok(Mlp { graph: g, out: h, loss })
}

fn column(v: &[f32]) -> Result<Tensor<f32>> {
    Ok(Tensor::from_vec(vec![v.len(), 1], v.to_vec())?)
}

/// Minibatch Adam; each pass over the data reshuffles with stream
/// `mix(seed, epoch)` and item dropout seeds are `mix(mix(seed, step), i)`.
fn fit(mlp: &mut Mlp, xs: &[f32], ys: &[f32], cfg: &Demo1DConfig, seed: u64) -> Result<()> {
    let g = &mut mlp.graph;
    let sizes: Vec<usize> = g.params().iter().map(|&id| g.value(id).expect("param").numel()).collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &sizes)?;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    for step in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(xs.len()) {
            if cursor == order.len() {
                order = (0..xs.len()).collect();
                order.shuffle(&mut rng::stream(rng::mix(seed, epoch)));
                epoch += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let bx: Vec<f32> = batch.iter().map(|&i| xs[i]).collect();
        let by: Vec<f32> = batch.iter().map(|&i| ys[i]).collect();
        let inputs = HashMap::from([("x".to_string(), column(&bx)?), ("y".to_string(), column(&by)?)]);
        let step_seed = rng::mix(seed ^ 0x5eed, step as u64);
        let seeds = (0..batch.len() as u64).map(|i| rng::mix(step_seed, i)).collect();
        g.run(&inputs, &[mlp.loss], &RunConfig::train(seeds))?;
        g.backward(mlp.loss)?;
        g.adam_step(&mut adam)?;
    }
    g.clear_activations();
    Ok(())
}

fn predict(mlp: &mut Mlp, xs: &[f32], cfg: &RunConfig) -> Result<Vec<f32>> {
    let inputs = HashMap::from([("x".to_string(), column(xs)?)]);
    mlp.graph.run(&inputs, &[mlp.out], cfg)?;
    Ok(mlp.graph.value(mlp.out).expect("evaluated").data().to_vec())
}

fn envelope(method: &str, xs: &[f32], samples: &[Vec<f32>], scale: &Scaling) -> EnvelopeResult {
    let n = samples.len() as f64;
    let mut mean = Vec::with_capacity(xs.len());
    let mut std = Vec::with_capacity(xs.len());
    for p in 0..xs.len() {
        let vals: Vec<f64> = samples
            .iter()
            .map(|s| s[p] as f64 * scale.y_std as f64 + scale.y_mean as f64)
            .collect();
        let mu = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean.push(mu as f32);
        std.push(var.sqrt() as f32);
    }
    EnvelopeResult {
        method: method.into(),
        xs: xs.to_vec(),
        mean,
        std,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoOutcome {
    pub mc_dropout: EnvelopeResult,
    pub ensemble: EnvelopeResult,
    pub mc_rmse: f64,
    pub ensemble_rmse: f64,
    /// Pearson r between `|f''(x)|` and the MC deviation on the test grid;
    /// absent when either is constant.
    pub mc_curvature_r: Option<f64>,
}

/// Trains the MC model and `ensemble_size` members and evaluates both
/// envelopes on the test grid.
///
/// The MC model uses init seed `mix(seed, 2)` and train seed `mix(seed, 3)`;
/// its pass `p` uses dropout seed `mix(mix(seed, 4), p)`. Member `k` uses
/// `mix(seed, 10 + 2k)` and `mix(seed, 11 + 2k)`.
pub fn run_demo(cfg: &Demo1DConfig) -> Result<(Synthetic, DemoOutcome)> {
    let data = make_synthetic(cfg)?;
    let n = data.train_y.len() as f64;
    let y_mean = data.train_y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let y_var = data.train_y.iter().map(|&v| (v as f64 - y_mean).powi(2)).sum::<f64>() / n;
    let scale = Scaling {
        x: cfg.domain,
        y_mean: y_mean as f32,
        y_std: if y_var > 0.0 { y_var.sqrt() as f32 } else { 1.0 },
    };
    let xs: Vec<f32> = data.train_x.iter().map(|&x| scale.input(x)).collect();
    let ys: Vec<f32> = data.train_y.iter().map(|&y| (y - scale.y_mean) / scale.y_std).collect();
    let test_in: Vec<f32> = data.test_x.iter().map(|&x| scale.input(x)).collect();

    let mut mc = build_mlp(rng::mix(cfg.seed, 2), cfg.dropout_p)?;
    fit(&mut mc, &xs, &ys, cfg, rng::mix(cfg.seed, 3))?;
    let pass_base = rng::mix(cfg.seed, 4);
    let mut mc_samples = Vec::with_capacity(cfg.m);
    for p in 0..cfg.m {
        let s = rng::mix(pass_base, p as u64);
        let seeds = vec![s; test_in.len()];
        mc_samples.push(predict(&mut mc, &test_in, &RunConfig::mc(seeds))?);
    }
    let mc_env = envelope("mc_dropout", &data.test_x, &mc_samples, &scale);

    let mut ens_samples = Vec::with_capacity(cfg.ensemble_size);
    for k in 0..cfg.ensemble_size as u64 {
        let mut member = build_mlp(rng::mix(cfg.seed, 10 + 2 * k), 0.0)?;
        fit(&mut member, &xs, &ys, cfg, rng::mix(cfg.seed, 11 + 2 * k))?;
        ens_samples.push(predict(&mut member, &test_in, &RunConfig::eval())?);
    }
    let ens_env = envelope("ensemble", &data.test_x, &ens_samples, &scale);

    let curvature: Vec<f64> = data
        .test_x
        .iter()
        .map(|&x| {
            let x = x as f64;
            (2.0 * x.cos() - x * x.sin()).abs()
        })
        .collect();
    let mc_std: Vec<f64> = mc_env.std.iter().map(|&v| v as f64).collect();
    let outcome = DemoOutcome {
        mc_rmse: mc_env.rmse(&data.test_y),
        ensemble_rmse: ens_env.rmse(&data.test_y),
        mc_curvature_r: pearson(&curvature, &mc_std).ok(),
        mc_dropout: mc_env,
        ensemble: ens_env,
    };
    Ok((data, outcome))
}

pub const MC_CSV: &str = "mc_dropout.csv";
pub const ENSEMBLE_CSV: &str = "ensemble.csv";
pub const TRAIN_CSV: &str = "train.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Serialize, Deserialize)]
struct EnvelopeRow {
    x: f32,
    mean: f32,
    std: f32,
    method: String,
}

#[derive(Serialize)]
struct TrainRow {
    x: f32,
    y: f32,
}

fn write_envelope(path: &Path, env: &EnvelopeResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..env.xs.len() {
        w.serialize(EnvelopeRow {
            x: env.xs[i],
            mean: env.mean[i],
            std: env.std[i],
            method: env.method.clone(),
        })?;
    }
    w.flush().at(path)
}

pub fn read_envelope(path: &Path) -> Result<EnvelopeResult> {
    let mut r = csv::Reader::from_path(path)?;
    let mut env = EnvelopeResult {
        method: String::new(),
        xs: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
    };
    for row in r.deserialize() {
        let row: EnvelopeRow = row?;
        env.method = row.method;
        env.xs.push(row.x);
        env.mean.push(row.mean);
        env.std.push(row.std);
    }
    Ok(env)
}

/// Writes `train.csv` (x, y), one envelope CSV per method (x, mean, std,
/// method) and `summary.json`.
pub fn write_demo(dir: &Path, data: &Synthetic, outcome: &DemoOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let train = dir.join(TRAIN_CSV);
    let mut w = csv::Writer::from_path(&train)?;
    for (&x, &y) in data.train_x.iter().zip(&data.train_y) {
        w.serialize(TrainRow { x, y })?;
    }
    w.flush().at(&train)?;
    write_envelope(&dir.join(MC_CSV), &outcome.mc_dropout)?;
    write_envelope(&dir.join(ENSEMBLE_CSV), &outcome.ensemble)?;
    let summary = serde_json::json!({
        "mc_rmse": outcome.mc_rmse,
        "ensemble_rmse": outcome.ensemble_rmse,
        "mc_curvature_r": outcome.mc_curvature_r,
    });
    let path = dir.join(SUMMARY_JSON);
    std::fs::write(&path, serde_json::to_vec_pretty(&summary)?).at(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_exact_and_root_at_zero() {
        let cfg = Demo1DConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let d = make_synthetic(&cfg).unwrap();
        for (&x, &y) in d.train_x.iter().zip(&d.train_y) {
            assert_eq!(y, target_fn(x as f64) as f32);
        }
        assert_eq!(d.test_x[0], 0.0);
        assert_eq!(d.test_y[0], 0.0);
        assert_eq!(*d.test_x.last().unwrap(), 10.0);
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            Demo1DConfig { noise_sigma: -1.0, ..Default::default() },
            Demo1DConfig { n_train: 1, ..Default::default() },
            Demo1DConfig { domain: (1.0, 1.0), ..Default::default() },
            Demo1DConfig { dropout_p: 1.0, ..Default::default() },
        ] {
            assert!(make_synthetic(&cfg).is_err());
        }
    }

    #[test]
    fn zero_dropout_gives_zero_envelope() {
        let cfg = Demo1DConfig {
            iterations: 20,
            m: 5,
            ensemble_size: 2,
            dropout_p: 0.0,
            ..Default::default()
        };
        let (_, out) = run_demo(&cfg).unwrap();
        assert!(out.mc_dropout.std.iter().all(|&s| s == 0.0));
        assert!(out.mc_curvature_r.is_none());
    }
}
