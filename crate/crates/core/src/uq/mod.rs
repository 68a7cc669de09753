//! MC-Dropout and ensemble sampling, per-pixel statistics and view
//! sensitivity.
//!
//! All standard deviations are population (divide-by-m) deviations, so a
//! stack of identical samples has exactly zero spread.

mod bundle;
mod sample;
mod sensitivity;

pub use bundle::{compute_bundle, uncertainty_only, PredictionBundle, UncertaintyMaps};
pub use sample::{ensemble_sample, mc_sample, EnsembleSet, SampleSource, SampleStack};
pub use sensitivity::{ensemble_sensitivity, l1_and_gradient, sensitivity, SensitivityResult};

pub(crate) use bundle::spread;
pub(crate) use sample::{ensemble_passes, mc_passes};

/// Batch size for stochastic passes; results do not depend on it.
pub(crate) const PASS_CHUNK: usize = 32;

/// Population mean and standard deviation of `xs`, sorted first so the
/// result is independent of input order.
pub(crate) fn mean_std(xs: &mut [f64]) -> (f64, f64) {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
