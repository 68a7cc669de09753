use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use viewuq_autodiff::{rng, AdamConfig, AdamState, Real, RunConfig, Tensor};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::render::Dataset;

use super::{views_tensor, ModelConfig, SynthesisModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean MSE of each epoch's batches.
    pub loss_history: Vec<f32>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f32> {
        self.loss_history.last().copied()
    }
}

/// Mean squared difference over all `3·H·W` values.
pub fn mse_loss(pred: &RgbImage, target: &RgbImage) -> Result<f32> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "{}x{} prediction vs {}x{} target",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| {
            let d = (*a - *b) as f64;
            d * d
        })
        .sum();
    Ok((sum / pred.data().len() as f64) as f32)
}

/// Minibatch Adam on the MSE loss with batch norm in train mode.
///
/// Epoch `e` shuffles with stream `mix(mix(seed, e), 0)`; item `i` of batch
/// `b` draws dropout masks from seed `mix(mix(mix(seed, e), b + 1), i)`.
pub fn train<T: Real>(model: &mut SynthesisModel<T>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.resolution() != model.config().image_resolution {
        return Err(Error::Shape(format!(
            "dataset resolution {} does not match model resolution {}",
            data.resolution(),
            model.config().image_resolution
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let sizes: Vec<usize> = {
        let g = model.graph_mut();
        g.params().iter().map(|&id| g.value(id).expect("param").numel()).collect()
    };
    let mut adam = AdamState::<T>::new(cfg.adam, &sizes)?;
    let per_image = 3 * data.resolution() * data.resolution();
    let (loss_id, target_len) = (model.loss_node(), per_image);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let epoch_seed = rng::mix(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(rng::mix(epoch_seed, 0)));

        let mut total = 0.0f64;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = rng::mix(epoch_seed, b as u64 + 1);
            let views: Vec<_> = batch.iter().map(|&i| data.views()[i]).collect();
            let mut target = Vec::with_capacity(batch.len() * target_len);
            for &i in batch {
                target.extend(data.images()[i].data().iter().map(|&v| T::of(v as f64)));
            }
            let r = data.resolution();
            let inputs = HashMap::from([
                ("view".to_string(), views_tensor::<T>(&views)),
                ("target".to_string(), Tensor::from_vec(vec![batch.len(), 3, r, r], target)?),
            ]);
            let seeds = (0..batch.len() as u64).map(|i| rng::mix(batch_seed, i)).collect();
            let g = model.graph_mut();
            g.run(&inputs, &[loss_id], &RunConfig::train(seeds))?;
            let loss = g.value(loss_id).expect("evaluated").data()[0];
            total += loss.to_f64().unwrap_or(f64::NAN) * batch.len() as f64;
            g.backward(loss_id)?;
            g.adam_step(&mut adam)?;
        }
        history.push((total / data.len() as f64) as f32);
    }
    model.graph_mut().clear_activations();
    Ok(TrainReport { loss_history: history })
}

/// Seeds of ensemble member `k`: `(model_seed, train_seed)` =
/// `(mix(root, 2k), mix(root, 2k + 1))`, so members differ in both
/// initialization and shuffle order.
pub fn member_seeds(root: u64, k: usize) -> (u64, u64) {
    (rng::mix(root, 2 * k as u64), rng::mix(root, 2 * k as u64 + 1))
}

/// Trains `k` members from `config` with seeds from [`member_seeds`].
/// Members are independent, so they run on up to `threads` threads without
/// changing any result.
pub fn train_ensemble(
    config: &ModelConfig,
    data: &Dataset,
    cfg: &TrainConfig,
    k: usize,
    root_seed: u64,
    threads: usize,
) -> Result<Vec<(SynthesisModel, TrainReport)>> {
    if k == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let one = |member: usize| -> Result<(SynthesisModel, TrainReport)> {
        let (model_seed, train_seed) = member_seeds(root_seed, member);
        let mut model = SynthesisModel::build(ModelConfig {
            seed: model_seed,
            ..config.clone()
        })?;
        let report = train(&mut model, data, &TrainConfig { seed: train_seed, ..cfg.clone() })?;
        Ok((model, report))
    };
    let threads = threads.clamp(1, k);
    if threads == 1 {
        return (0..k).map(one).collect();
    }
    let mut slots: Vec<Option<Result<(SynthesisModel, TrainReport)>>> = (0..k).map(|_| None).collect();
    std::thread::scope(|s| {
        for (t, chunk) in slots.chunks_mut(k.div_ceil(threads)).enumerate() {
            let one = &one;
            let start = t * k.div_ceil(threads);
            s.spawn(move || {
                for (off, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(one(start + off));
                }
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every member trained")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::render::{builtin_volume, generate_dataset, TfPreset, TransferFunction, VolumeKind};

    fn tiny_model(seed: u64) -> SynthesisModel {
        SynthesisModel::build(ModelConfig {
            image_resolution: 16,
            n_res_blocks: 2,
            fc_widths: vec![16],
            base_channels: 8,
            min_channels: 4,
            dropout_p: 0.1,
            seed,
        })
        .unwrap()
    }

    fn tiny_data(n: usize) -> Dataset {
        let vol = builtin_volume(VolumeKind::Blobs, [16; 3], 2).unwrap();
        generate_dataset(&vol, &TransferFunction::preset(TfPreset::Warm), n, 16, 5).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = RgbImage::filled(2, 2, 0.25).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = RgbImage::filled(2, 2, -0.25).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap(), 0.25);
        let c = RgbImage::filled(2, 3, 0.0).unwrap();
        assert!(mse_loss(&a, &c).is_err());
    }

    #[test]
    fn overfits_single_sample() {
        let mut m = tiny_model(1);
        let data = tiny_data(1);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 64,
            adam: AdamConfig::with_lr(1e-3),
            seed: 4,
        };
        let report = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(report.loss_history.len(), 200);
        assert!(report.final_loss().unwrap() < report.loss_history[0]);
    }

    #[test]
    fn training_is_reproducible() {
        let data = tiny_data(6);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            adam: AdamConfig::with_lr(1e-3),
            seed: 8,
        };
        let (mut a, mut b) = (tiny_model(2), tiny_model(2));
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn rejects_mismatched_resolution() {
        let vol = builtin_volume(VolumeKind::Blobs, [16; 3], 2).unwrap();
        let data = generate_dataset(&vol, &TransferFunction::preset(TfPreset::Warm), 2, 8, 5).unwrap();
        assert!(train(&mut tiny_model(0), &data, &TrainConfig::default()).is_err());
    }
}
