use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use viewuq_autodiff::rng;

use crate::error::{Error, IoContext, Result};
use crate::image::RgbImage;
use crate::view::ViewPoint;

use super::raycast::render;
use super::transfer::TransferFunction;
use super::volume::ScalarVolume;

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const DATASET_IMAGES: &str = "images.bin";

/// Rendered (view, image) pairs at a single resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    views: Vec<ViewPoint>,
    images: Vec<RgbImage>,
    resolution: usize,
    pub seed: u64,
    pub volume_id: String,
    pub tf_id: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    seed: u64,
    volume_id: String,
    tf_id: String,
    resolution: usize,
    count: usize,
    /// `images.bin` holds `count` planar `3×R×R` little-endian f32 images.
    images: String,
    views: Vec<ViewPoint>,
}

const FORMAT: &str = "viewuq-dataset-1";

impl Dataset {
    pub fn new(entries: Vec<(ViewPoint, RgbImage)>, seed: u64) -> Result<Self> {
        let first = entries.first().ok_or(Error::EmptyDataset)?;
        let resolution = first.1.height();
        if entries
            .iter()
            .any(|(_, img)| img.height() != resolution || img.width() != resolution)
        {
            return Err(Error::Shape(format!("dataset images must all be {resolution}x{resolution}")));
        }
        let (views, images) = entries.into_iter().unzip();
        Ok(Self {
            views,
            images,
            resolution,
            seed,
            volume_id: "custom".into(),
            tf_id: "custom".into(),
        })
    }

    pub fn with_ids(mut self, volume_id: impl Into<String>, tf_id: impl Into<String>) -> Self {
        self.volume_id = volume_id.into();
        self.tf_id = tf_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn views(&self) -> &[ViewPoint] {
        &self.views
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    pub fn entry(&self, i: usize) -> (ViewPoint, &RgbImage) {
        (self.views[i], &self.images[i])
    }

    /// First `n` entries (all of them if `n >= len`).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let entries = self.views[..n].iter().copied().zip(self.images[..n].iter().cloned()).collect();
        Ok(Self::new(entries, self.seed)?.with_ids(self.volume_id.clone(), self.tf_id.clone()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let mut blob = Vec::with_capacity(self.images.iter().map(|i| i.data().len() * 4).sum());
        for img in &self.images {
            for v in img.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let img_path = dir.join(DATASET_IMAGES);
        std::fs::write(&img_path, blob).at(&img_path)?;
        let manifest = Manifest {
            format: FORMAT.into(),
            seed: self.seed,
            volume_id: self.volume_id.clone(),
            tf_id: self.tf_id.clone(),
            resolution: self.resolution,
            count: self.len(),
            images: DATASET_IMAGES.into(),
            views: self.views.clone(),
        };
        let path = dir.join(DATASET_MANIFEST);
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_MANIFEST);
        let m: Manifest = serde_json::from_slice(&std::fs::read(&path).at(&path)?)?;
        if m.format != FORMAT {
            return Err(Error::Config(format!("{}: unsupported dataset format `{}`", path.display(), m.format)));
        }
        if m.views.len() != m.count {
            return Err(Error::Shape(format!("manifest lists {} views for count {}", m.views.len(), m.count)));
        }
        let img_path = dir.join(&m.images);
        let bytes = std::fs::read(&img_path).at(&img_path)?;
        let per = 3 * m.resolution * m.resolution;
        let expected = (m.count * per * 4) as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::RawSize {
                path: img_path,
                expected,
                actual: bytes.len() as u64,
            });
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let entries = m
            .views
            .iter()
            .zip(floats.chunks_exact(per))
            .map(|(v, px)| Ok((*v, RgbImage::from_planar(m.resolution, m.resolution, px.to_vec())?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(entries, m.seed)?.with_ids(m.volume_id, m.tf_id))
    }
}

/// Renders `n` views drawn uniformly from `θ ∈ [0, 360)`, `φ ∈ [-90, 90]`.
///
/// Views come from stream `mix(seed, 0)`; the order is then shuffled with
/// stream `mix(seed, 1)`.
pub fn generate_dataset(
    volume: &ScalarVolume,
    tf: &TransferFunction,
    n: usize,
    resolution: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut draw = rng::stream(rng::mix(seed, 0));
    let mut views = (0..n)
        .map(|_| {
            let theta = draw.random_range(0.0f32..360.0);
            let phi = draw.random_range(-90.0f32..=90.0);
            ViewPoint::new(theta, phi)
        })
        .collect::<Result<Vec<_>>>()?;
    views.shuffle(&mut rng::stream(rng::mix(seed, 1)));
    let entries = views
        .into_iter()
        .map(|v| Ok((v, render(volume, tf, v, resolution)?)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(entries, seed)
}
