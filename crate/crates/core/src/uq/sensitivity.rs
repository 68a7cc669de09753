use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use viewuq_autodiff::{Real, RunConfig, Tensor};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::{views_tensor, Dropout, SynthesisModel};
use crate::view::ViewPoint;

use super::{ensemble_passes, mc_passes, mean_std, EnsembleSet};

/// Aggregate of per-pass sensitivities `|∂s/∂θ̂| + |∂s/∂φ̂|`, where `s` is
/// the sum of absolute pixel values and `θ̂, φ̂` are the normalized inputs.
/// One raw degree of azimuth is `1/180` of `θ̂` and one of elevation `1/90`
/// of `φ̂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub mean: f32,
    /// Population deviation over reps; 0 when `reps == 1`.
    pub std: f32,
    pub reps: usize,
    pub per_rep: Vec<f32>,
    /// Set when a single rep makes `std` meaningless.
    pub single_rep: bool,
}

impl SensitivityResult {
    pub fn from_reps(per_rep: &[f64]) -> Result<Self> {
        if per_rep.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let mut buf = per_rep.to_vec();
        let (mean, std) = mean_std(&mut buf);
        Ok(Self {
            mean: mean as f32,
            std: if per_rep.len() == 1 { 0.0 } else { std as f32 },
            reps: per_rep.len(),
            per_rep: per_rep.iter().map(|&v| v as f32).collect(),
            single_rep: per_rep.len() == 1,
        })
    }
}

/// Runs `inputs` (rows of normalized views) and backpropagates `s` to them
/// with parameters frozen. Returns images, per-row `s` and per-row input
/// gradients.
pub(crate) fn input_pass<T: Real>(
    model: &mut SynthesisModel<T>,
    inputs: Tensor<T>,
    cfg: &RunConfig,
) -> Result<(Vec<RgbImage>, Vec<f64>, Vec<[f64; 2]>)> {
    let n = inputs.shape()[0];
    let (l1, image, view) = (model.l1_node(), model.image_node(), model.view_node());
    let bound = HashMap::from([("view".to_string(), inputs.with_requires_grad(true))]);
    let g = model.graph_mut();
    g.set_params_trainable(false);
    let res = g.run(&bound, &[l1], cfg).and_then(|_| g.backward(l1));
    g.set_params_trainable(true);
    res?;
    let img = g.value(image).expect("evaluated");
    let per = img.numel() / n;
    let norms = img
        .data()
        .chunks_exact(per)
        .map(|px| px.iter().map(|v| v.abs().to_f64().unwrap_or(f64::NAN)).sum())
        .collect();
    let grads = g
        .grad(view)
        .expect("input gradient")
        .chunks_exact(2)
        .map(|d| [d[0].to_f64().unwrap_or(f64::NAN), d[1].to_f64().unwrap_or(f64::NAN)])
        .collect();
    Ok((model.images_from(image, n), norms, grads))
}

pub(crate) fn batch_sensitivity(
    model: &mut SynthesisModel,
    views: &[ViewPoint],
    cfg: &RunConfig,
) -> Result<(Vec<RgbImage>, Vec<f64>)> {
    let (images, _, grads) = input_pass(model, views_tensor(views), cfg)?;
    Ok((images, grads.iter().map(|d| d[0].abs() + d[1].abs()).collect()))
}

/// `s` and `(∂s/∂θ̂, ∂s/∂φ̂)` at a normalized input with dropout off.
pub fn l1_and_gradient<T: Real>(model: &mut SynthesisModel<T>, input: [f64; 2]) -> Result<(f64, [f64; 2])> {
    let t = Tensor::from_vec(vec![1, 2], vec![T::of(input[0]), T::of(input[1])])?;
    let (_, norms, grads) = input_pass(model, t, &RunConfig::eval())?;
    Ok((norms[0], grads[0]))
}

/// Sensitivity of one model. With [`Dropout::McEval`] rep `i` uses pass seed
/// `mix(seed, i)`, matching [`super::mc_sample`]; with [`Dropout::Off`] all
/// reps coincide and one pass is evaluated.
pub fn sensitivity(model: &mut SynthesisModel, view: ViewPoint, dropout: Dropout, reps: usize) -> Result<SensitivityResult> {
    if reps == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let per_rep = match dropout {
        Dropout::McEval { seed } => mc_passes(model, view, reps, seed, true)?.1,
        Dropout::Off => {
            let (_, s) = batch_sensitivity(model, &[view], &RunConfig::eval())?;
            vec![s[0]; reps]
        }
    };
    SensitivityResult::from_reps(&per_rep)
}

/// One deterministic rep per member.
pub fn ensemble_sensitivity(ensemble: &mut EnsembleSet, view: ViewPoint) -> Result<SensitivityResult> {
    let (_, per_rep) = ensemble_passes(ensemble, view, true)?;
    SensitivityResult::from_reps(&per_rep)
}
