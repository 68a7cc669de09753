use viewuq_autodiff::{rng, RunConfig};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::{ModelConfig, SynthesisModel};
use crate::view::ViewPoint;

use super::PASS_CHUNK;

#[derive(Clone, Debug, PartialEq)]
pub enum SampleSource {
    McDropout { m: usize, eta: f32, seed: u64 },
    Ensemble { members: Vec<usize> },
}

/// Equal-sized predictions of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStack {
    samples: Vec<RgbImage>,
    source: SampleSource,
}

impl SampleStack {
    pub fn new(samples: Vec<RgbImage>, source: SampleSource) -> Result<Self> {
        let first = samples.first().ok_or(Error::TooFewSamples { needed: 1, got: 0 })?;
        if samples.iter().any(|s| !s.same_shape(first)) {
            return Err(Error::Shape("stack images differ in size".into()));
        }
        Ok(Self { samples, source })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[RgbImage] {
        &self.samples
    }

    pub fn source(&self) -> &SampleSource {
        &self.source
    }

    /// Copy with samples reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len() || perm.iter().any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Shape("not a permutation of the stack".into()));
        }
        Ok(Self {
            samples: perm.iter().map(|&i| self.samples[i].clone()).collect(),
            source: self.source.clone(),
        })
    }
}

/// `m` passes of one view with pass `i` seeded by `mix(seed, i)`, optionally
/// returning per-pass sensitivities.
pub(crate) fn mc_passes(
    model: &mut SynthesisModel,
    view: ViewPoint,
    m: usize,
    seed: u64,
    with_sensitivity: bool,
) -> Result<(Vec<RgbImage>, Vec<f64>)> {
    let mut images = Vec::with_capacity(m);
    let mut sens = Vec::new();
    for start in (0..m).step_by(PASS_CHUNK) {
        let n = PASS_CHUNK.min(m - start);
        let seeds = (start..start + n).map(|i| rng::mix(seed, i as u64)).collect();
        let views = vec![view; n];
        let cfg = RunConfig::mc(seeds);
        if with_sensitivity {
            let (imgs, s) = super::sensitivity::batch_sensitivity(model, &views, &cfg)?;
            images.extend(imgs);
            sens.extend(s);
        } else {
            images.extend(model.predict_batch(&views, &cfg)?);
        }
    }
    Ok((images, sens))
}

/// `m` stochastic predictions with dropout active at inference.
pub fn mc_sample(model: &mut SynthesisModel, view: ViewPoint, m: usize, seed: u64) -> Result<SampleStack> {
    let eta = model.config().dropout_p;
    if eta == 0.0 {
        return Err(Error::ZeroDropout);
    }
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let (images, _) = mc_passes(model, view, m, seed, false)?;
    SampleStack::new(images, SampleSource::McDropout { m, eta, seed })
}

/// Independently trained members sharing one architecture.
#[derive(Clone, Debug)]
pub struct EnsembleSet {
    members: Vec<SynthesisModel>,
}

fn same_architecture(a: &ModelConfig, b: &ModelConfig) -> bool {
    a.image_resolution == b.image_resolution
        && a.n_res_blocks == b.n_res_blocks
        && a.fc_widths == b.fc_widths
        && a.base_channels == b.base_channels
        && a.min_channels == b.min_channels
}

impl EnsembleSet {
    pub fn new(members: Vec<SynthesisModel>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyEnsemble)?;
        if members.iter().any(|m| !same_architecture(m.config(), first.config())) {
            return Err(Error::Config("ensemble members must share one architecture".into()));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[SynthesisModel] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [SynthesisModel] {
        &mut self.members
    }

    /// The first `k` members.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        Self::new(self.members[..k.min(self.len())].to_vec())
    }

    pub fn image_resolution(&self) -> usize {
        self.members[0].config().image_resolution
    }
}

pub(crate) fn ensemble_passes(
    ensemble: &mut EnsembleSet,
    view: ViewPoint,
    with_sensitivity: bool,
) -> Result<(Vec<RgbImage>, Vec<f64>)> {
    let mut images = Vec::with_capacity(ensemble.len());
    let mut sens = Vec::new();
    for member in ensemble.members_mut() {
        if with_sensitivity {
            let (mut img, s) = super::sensitivity::batch_sensitivity(member, &[view], &RunConfig::eval())?;
            images.push(img.pop().expect("one image"));
            sens.extend(s);
        } else {
            images.push(member.predict(view, crate::model::Dropout::Off)?);
        }
    }
    Ok((images, sens))
}

/// One deterministic prediction per member, in member order.
pub fn ensemble_sample(ensemble: &mut EnsembleSet, view: ViewPoint) -> Result<SampleStack> {
    let (images, _) = ensemble_passes(ensemble, view, false)?;
    SampleStack::new(
        images,
        SampleSource::Ensemble {
            members: (0..ensemble.len()).collect(),
        },
    )
}
