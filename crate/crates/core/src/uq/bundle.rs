use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::image::RgbImage;

use super::{mean_std, SampleStack};

/// Per-pixel statistics of a stack against a ground truth.
///
/// Maps are row-major `H×W`. Combined maps are the f32 sums of the three
/// channel maps.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBundle {
    pub mean_image: RgbImage,
    pub channel_uncertainty: [Vec<f32>; 3],
    pub combined_uncertainty: Vec<f32>,
    pub channel_error: [Vec<f32>; 3],
    pub combined_error: Vec<f32>,
    pub channel_error_std: [Vec<f32>; 3],
    pub combined_error_std: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMaps {
    pub mean_image: RgbImage,
    pub channel_uncertainty: [Vec<f32>; 3],
    pub combined_uncertainty: Vec<f32>,
}

pub(crate) fn combine(ch: &[Vec<f32>; 3]) -> Vec<f32> {
    (0..ch[0].len()).map(|p| ch[0][p] + ch[1][p] + ch[2][p]).collect()
}

fn require_two(stack: &SampleStack) -> Result<()> {
    if stack.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: stack.len(),
        });
    }
    Ok(())
}

/// Mean image and per-channel spread; a single sample yields zero spread.
pub(crate) fn spread(stack: &SampleStack) -> UncertaintyMaps {
    let first = &stack.samples()[0];
    let (h, w) = (first.height(), first.width());
    let n = h * w;
    let mut mean = vec![0.0f32; 3 * n];
    let mut unc: [Vec<f32>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    let mut buf = Vec::with_capacity(stack.len());
    for c in 0..3 {
        for p in 0..n {
            buf.clear();
            buf.extend(stack.samples().iter().map(|s| s.data()[c * n + p] as f64));
            let (m, sd) = mean_std(&mut buf);
            mean[c * n + p] = (m as f32).clamp(-1.0, 1.0);
            unc[c][p] = sd as f32;
        }
    }
    let combined = combine(&unc);
    UncertaintyMaps {
        mean_image: RgbImage::from_planar(h, w, mean).expect("mean of in-range samples"),
        channel_uncertainty: unc,
        combined_uncertainty: combined,
    }
}

/// Mean and spread without ground truth.
pub fn uncertainty_only(stack: &SampleStack) -> Result<UncertaintyMaps> {
    require_two(stack)?;
    Ok(spread(stack))
}

/// Mean image, spread, mean absolute error and spread of the absolute error.
pub fn compute_bundle(stack: &SampleStack, ground_truth: &RgbImage) -> Result<PredictionBundle> {
    require_two(stack)?;
    if !stack.samples()[0].same_shape(ground_truth) {
        return Err(Error::Shape("ground truth and samples differ in size".into()));
    }
    let UncertaintyMaps {
        mean_image,
        channel_uncertainty,
        combined_uncertainty,
    } = spread(stack);
    let n = ground_truth.pixels();
    let mut err: [Vec<f32>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    let mut err_std: [Vec<f32>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    let mut buf = Vec::with_capacity(stack.len());
    for c in 0..3 {
        for p in 0..n {
            let gt = ground_truth.data()[c * n + p] as f64;
            buf.clear();
            buf.extend(stack.samples().iter().map(|s| (s.data()[c * n + p] as f64 - gt).abs()));
            let (m, sd) = mean_std(&mut buf);
            err[c][p] = m as f32;
            err_std[c][p] = sd as f32;
        }
    }
    Ok(PredictionBundle {
        mean_image,
        channel_uncertainty,
        combined_uncertainty,
        combined_error: combine(&err),
        channel_error: err,
        combined_error_std: combine(&err_std),
        channel_error_std: err_std,
    })
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    format: String,
    height: usize,
    width: usize,
    /// Order of the `H×W` f32 maps in `bundle.bin`, after the planar mean image.
    maps: Vec<String>,
}

const BUNDLE_FORMAT: &str = "viewuq-bundle-1";
const MAP_NAMES: [&str; 12] = [
    "uncertainty_r",
    "uncertainty_g",
    "uncertainty_b",
    "uncertainty",
    "error_r",
    "error_g",
    "error_b",
    "error",
    "error_std_r",
    "error_std_g",
    "error_std_b",
    "error_std",
];

impl PredictionBundle {
    pub fn height(&self) -> usize {
        self.mean_image.height()
    }

    pub fn width(&self) -> usize {
        self.mean_image.width()
    }

    fn maps(&self) -> [&Vec<f32>; 12] {
        let (u, e, s) = (&self.channel_uncertainty, &self.channel_error, &self.channel_error_std);
        [
            &u[0],
            &u[1],
            &u[2],
            &self.combined_uncertainty,
            &e[0],
            &e[1],
            &e[2],
            &self.combined_error,
            &s[0],
            &s[1],
            &s[2],
            &self.combined_error_std,
        ]
    }

    /// Writes `bundle.json` and `bundle.bin` (little-endian f32: the planar
    /// mean image followed by the maps in manifest order).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let mut blob = Vec::new();
        for v in self.mean_image.data().iter().chain(self.maps().into_iter().flatten()) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let bin = dir.join("bundle.bin");
        std::fs::write(&bin, blob).at(&bin)?;
        let manifest = BundleManifest {
            format: BUNDLE_FORMAT.into(),
            height: self.height(),
            width: self.width(),
            maps: MAP_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        let json = dir.join("bundle.json");
        std::fs::write(&json, serde_json::to_vec_pretty(&manifest)?).at(&json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json = dir.join("bundle.json");
        let m: BundleManifest = serde_json::from_slice(&std::fs::read(&json).at(&json)?)?;
        if m.format != BUNDLE_FORMAT || m.maps != MAP_NAMES {
            return Err(Error::Config(format!("{}: unsupported bundle layout", json.display())));
        }
        let n = m.height * m.width;
        let bin = dir.join("bundle.bin");
        let bytes = std::fs::read(&bin).at(&bin)?;
        let expected = (15 * n * 4) as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::RawSize {
                path: bin,
                expected,
                actual: bytes.len() as u64,
            });
        }
        let f: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let map = |k: usize| f[3 * n + k * n..3 * n + (k + 1) * n].to_vec();
        Ok(Self {
            mean_image: RgbImage::from_planar(m.height, m.width, f[..3 * n].to_vec())?,
            channel_uncertainty: [map(0), map(1), map(2)],
            combined_uncertainty: map(3),
            channel_error: [map(4), map(5), map(6)],
            combined_error: map(7),
            channel_error_std: [map(8), map(9), map(10)],
            combined_error_std: map(11),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uq::SampleSource;

    fn stack(samples: Vec<RgbImage>) -> SampleStack {
        SampleStack::new(samples, SampleSource::Ensemble { members: vec![] }).unwrap()
    }

    fn px(r: f32) -> RgbImage {
        RgbImage::from_planar(1, 1, vec![r, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn two_sample_hand_example() {
        let b = compute_bundle(&stack(vec![px(0.0), px(1.0)]), &px(0.0)).unwrap();
        assert_eq!(b.mean_image.data()[0], 0.5);
        assert_eq!(b.channel_uncertainty[0], vec![0.5]);
        assert_eq!(b.channel_error[0], vec![0.5]);
        assert_eq!(b.channel_error_std[0], vec![0.5]);
        assert_eq!(b.combined_uncertainty, vec![0.5]);
    }

    #[test]
    fn degenerate_stacks() {
        let img = RgbImage::from_planar(1, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let s = stack(vec![img.clone(); 4]);
        let b = compute_bundle(&s, &img).unwrap();
        assert_eq!(b.mean_image, img);
        assert!(b.combined_uncertainty.iter().all(|&v| v == 0.0));
        assert!(b.combined_error.iter().all(|&v| v == 0.0));
        assert!(b.combined_error_std.iter().all(|&v| v == 0.0));
        assert_eq!(uncertainty_only(&s).unwrap().combined_uncertainty, vec![0.0, 0.0]);
    }

    #[test]
    fn requires_two_samples_and_matching_shapes() {
        assert!(matches!(
            compute_bundle(&stack(vec![px(0.0)]), &px(0.0)),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
        assert!(uncertainty_only(&stack(vec![px(0.0)])).is_err());
        let big = RgbImage::filled(2, 2, 0.0).unwrap();
        assert!(compute_bundle(&stack(vec![px(0.0), px(1.0)]), &big).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let b = compute_bundle(&stack(vec![px(0.0), px(1.0), px(-0.3)]), &px(0.2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        assert_eq!(PredictionBundle::load(dir.path()).unwrap(), b);
    }
}
