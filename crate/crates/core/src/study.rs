//! Test-set evaluation, parameter studies and sweep correlations.
//!
//! Test-set PSNR pools the squared error of every test image per channel
//! before converting to decibels, so one perfect image cannot make the
//! result infinite.

use serde::{Deserialize, Serialize};
use viewuq_autodiff::rng;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::{Dropout, SynthesisModel};
use crate::render::Dataset;
use crate::stats::{pearson, pixel_mean, Psnr};
use crate::sweep::SweepRecord;
use crate::uq::{ensemble_passes, mc_passes, EnsembleSet, SampleSource, SampleStack};

/// Per-channel squared error in display space, summed over images.
#[derive(Clone, Debug, Default)]
pub struct PsnrAccumulator {
    sum: [f64; 3],
    count: usize,
}

impl PsnrAccumulator {
    pub fn add(&mut self, pred: &RgbImage, gt: &RgbImage) -> Result<()> {
        let p = crate::stats::psnr(pred, gt)?;
        for c in 0..3 {
            self.sum[c] += p.mse[c] as f64;
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<Psnr> {
        if self.count == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(crate::stats::psnr_from_mse(self.sum.map(|s| s / self.count as f64)))
    }
}

/// Pass seed base of test view `v`: passes use `mix(mix(seed, v), p)`, so a
/// larger `m` extends rather than replaces a smaller one.
fn view_seed(seed: u64, v: usize) -> u64 {
    rng::mix(seed, v as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub psnr: Psnr,
    /// Test-set mean of the per-view pixel-mean combined uncertainty;
    /// absent for deterministic rows.
    pub mean_uncertainty: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTable {
    pub rows: Vec<EvalRow>,
}

impl EvaluationTable {
    pub fn row(&self, label: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Rows named `member_{k}`.
    pub fn members(&self) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(|r| r.label.starts_with("member_"))
    }
}

/// Mean image and pixel-mean combined uncertainty of one stack.
fn stack_summary(images: Vec<RgbImage>, source: SampleSource) -> Result<(RgbImage, f32)> {
    let stack = SampleStack::new(images, source)?;
    let maps = crate::uq::spread(&stack);
    Ok((maps.mean_image, pixel_mean(&maps.combined_uncertainty)))
}

/// Deterministic predictions of `model` over the test set.
pub fn deterministic_psnr(model: &mut SynthesisModel, test: &Dataset) -> Result<Psnr> {
    let mut acc = PsnrAccumulator::default();
    for (view, gt) in test.views().iter().zip(test.images()) {
        acc.add(&model.predict(*view, Dropout::Off)?, gt)?;
    }
    acc.finish()
}

/// PSNR of the MC mean image over the test set and the mean uncertainty.
pub fn mc_eval(model: &mut SynthesisModel, test: &Dataset, m: usize, seed: u64) -> Result<(Psnr, f32)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eta = model.config().dropout_p;
    let mut acc = PsnrAccumulator::default();
    let mut unc = 0.0f64;
    for (v, (view, gt)) in test.views().iter().zip(test.images()).enumerate() {
        let s = view_seed(seed, v);
        let (images, _) = mc_passes(model, *view, m, s, false)?;
        let (mean, u) = stack_summary(images, SampleSource::McDropout { m, eta, seed: s })?;
        acc.add(&mean, gt)?;
        unc += u as f64;
    }
    Ok((acc.finish()?, (unc / test.len() as f64) as f32))
}

/// PSNR of the ensemble mean image and the mean uncertainty; one member
/// gives zero uncertainty.
pub fn ensemble_eval(ensemble: &mut EnsembleSet, test: &Dataset) -> Result<(Psnr, f32)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = PsnrAccumulator::default();
    let mut unc = 0.0f64;
    for (view, gt) in test.views().iter().zip(test.images()) {
        let (images, _) = ensemble_passes(ensemble, *view, false)?;
        let members = (0..images.len()).collect();
        let (mean, u) = stack_summary(images, SampleSource::Ensemble { members })?;
        acc.add(&mean, gt)?;
        unc += u as f64;
    }
    Ok((acc.finish()?, (unc / test.len() as f64) as f32))
}

/// Rows: `no_dropout` (when an η = 0 model is given), `mc_dropout`,
/// `ensemble`, then `member_{k}` for every member.
pub fn evaluate(
    no_dropout: Option<&mut SynthesisModel>,
    mc_model: &mut SynthesisModel,
    ensemble: &mut EnsembleSet,
    test: &Dataset,
    m: usize,
    seed: u64,
) -> Result<EvaluationTable> {
    let mut rows = Vec::new();
    if let Some(model) = no_dropout {
        rows.push(EvalRow {
            label: "no_dropout".into(),
            psnr: deterministic_psnr(model, test)?,
            mean_uncertainty: None,
        });
    }
    let (psnr, u) = mc_eval(mc_model, test, m, seed)?;
    rows.push(EvalRow {
        label: "mc_dropout".into(),
        psnr,
        mean_uncertainty: Some(u),
    });
    let (psnr, u) = ensemble_eval(ensemble, test)?;
    rows.push(EvalRow {
        label: "ensemble".into(),
        psnr,
        mean_uncertainty: Some(u),
    });
    for (k, member) in ensemble.members_mut().iter_mut().enumerate() {
        rows.push(EvalRow {
            label: format!("member_{k}"),
            psnr: deterministic_psnr(member, test)?,
            mean_uncertainty: None,
        });
    }
    Ok(EvaluationTable { rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyAxis {
    McSamples,
    EnsembleSize,
    DropoutP,
}

impl std::str::FromStr for StudyAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc_samples" => Ok(Self::McSamples),
            "ensemble_size" => Ok(Self::EnsembleSize),
            "dropout_p" => Ok(Self::DropoutP),
            _ => Err(Error::Unknown {
                kind: "study axis",
                name: s.into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    pub value: f64,
    pub mean_uncertainty: f32,
    pub psnr: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCurve {
    pub axis: StudyAxis,
    pub points: Vec<StudyPoint>,
}

fn check_values<T: PartialOrd>(values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("study needs at least one value".into()));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("study values must be sorted ascending".into()));
    }
    Ok(())
}

/// MC mean PSNR and uncertainty for each sample count.
pub fn mc_samples_study(model: &mut SynthesisModel, test: &Dataset, values: &[usize], seed: u64) -> Result<StudyCurve> {
    check_values(values)?;
    let points = values
        .iter()
        .map(|&m| {
            let (p, u) = mc_eval(model, test, m, seed)?;
            Ok(StudyPoint {
                value: m as f64,
                mean_uncertainty: u,
                psnr: p.average,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StudyCurve {
        axis: StudyAxis::McSamples,
        points,
    })
}

/// Ensemble mean PSNR and uncertainty for each member-list prefix.
pub fn ensemble_size_study(ensemble: &EnsembleSet, test: &Dataset, values: &[usize]) -> Result<StudyCurve> {
    check_values(values)?;
    let points = values
        .iter()
        .map(|&k| {
            if k == 0 || k > ensemble.len() {
                return Err(Error::Config(format!("ensemble size {k} outside 1..={}", ensemble.len())));
            }
            let (p, u) = ensemble_eval(&mut ensemble.prefix(k)?, test)?;
            Ok(StudyPoint {
                value: k as f64,
                mean_uncertainty: u,
                psnr: p.average,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StudyCurve {
        axis: StudyAxis::EnsembleSize,
        points,
    })
}

/// MC mean PSNR and uncertainty of models trained at different dropout
/// probabilities; the value of each point is the model's own η.
pub fn dropout_study(models: &mut [SynthesisModel], test: &Dataset, m: usize, seed: u64) -> Result<StudyCurve> {
    let etas: Vec<f32> = models.iter().map(|md| md.config().dropout_p).collect();
    check_values(&etas)?;
    let points = models
        .iter_mut()
        .map(|model| {
            let (p, u) = mc_eval(model, test, m, seed)?;
            Ok(StudyPoint {
                value: model.config().dropout_p as f64,
                mean_uncertainty: u,
                psnr: p.average,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StudyCurve {
        axis: StudyAxis::DropoutP,
        points,
    })
}

/// Pearson r over all sweep records of the combined aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub mc_un_mc_err: f64,
    pub ens_un_ens_err: f64,
    pub mc_un_ens_un: f64,
    pub mc_err_ens_err: f64,
    pub mc_sen_ens_sen: f64,
}

impl CorrelationReport {
    pub fn from_records(records: &[SweepRecord]) -> Result<Self> {
        let col = |f: fn(&SweepRecord) -> f32| -> Vec<f64> { records.iter().map(|r| f(r) as f64).collect() };
        let (mc_un, mc_err) = (col(|r| r.mc.uncertainty[3]), col(|r| r.mc.error[3]));
        let (ens_un, ens_err) = (col(|r| r.ens.uncertainty[3]), col(|r| r.ens.error[3]));
        let (mc_sen, ens_sen) = (col(|r| r.mc.sensitivity), col(|r| r.ens.sensitivity));
        Ok(Self {
            mc_un_mc_err: pearson(&mc_un, &mc_err)?,
            ens_un_ens_err: pearson(&ens_un, &ens_err)?,
            mc_un_ens_un: pearson(&mc_un, &ens_un)?,
            mc_err_ens_err: pearson(&mc_err, &ens_err)?,
            mc_sen_ens_sen: pearson(&mc_sen, &ens_sen)?,
        })
    }
}
