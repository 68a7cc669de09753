//! Pipeline configuration, read from one TOML file whose sections are all
//! optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use viewuq_core::demo1d::Demo1DConfig;
use viewuq_core::model::{AdamConfig, ModelConfig, TrainConfig};
use viewuq_core::render::{builtin_volume, load_raw_volume, RawDtype, ScalarVolume, TfPreset, TransferFunction, VolumeKind};
use viewuq_core::sweep::GridSpec;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Built-in volume id (`blobs`, `shell`, `turbulence-like`); ignored
    /// when `raw_path` is set.
    pub volume: String,
    pub dims: [usize; 3],
    pub volume_seed: u64,
    pub raw_path: Option<String>,
    pub raw_dtype: Option<String>,
    pub tf: String,
    pub resolution: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            volume: "blobs".into(),
            dims: [64; 3],
            volume_seed: 1,
            raw_path: None,
            raw_dtype: None,
            tf: "warm".into(),
            resolution: 32,
            n_train: 512,
            n_test: 128,
            seed: 1,
        }
    }
}

impl DataConfig {
    pub fn volume_id(&self) -> String {
        match &self.raw_path {
            Some(p) => Path::new(p)
                .file_stem()
                .map_or_else(|| "raw".into(), |s| s.to_string_lossy().into_owned()),
            None => self.volume.clone(),
        }
    }

    pub fn load_volume(&self) -> CliResult<ScalarVolume> {
        Ok(match &self.raw_path {
            Some(p) => {
                let dtype = match self.raw_dtype.as_deref().unwrap_or("u8") {
                    "u8" => RawDtype::U8,
                    "f32" => RawDtype::F32,
                    other => return Err(CliError::Usage(format!("unknown raw dtype `{other}` (u8 or f32)"))),
                };
                load_raw_volume(Path::new(p), self.dims, dtype)?
            }
            None => builtin_volume(self.volume.parse::<VolumeKind>()?, self.dims, self.volume_seed)?,
        })
    }

    pub fn transfer_function(&self) -> CliResult<TransferFunction> {
        Ok(TransferFunction::preset(self.tf.parse::<TfPreset>()?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub k: usize,
    pub root_seed: u64,
    pub threads: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            k: 8,
            root_seed: 100,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub grid: String,
    pub m: usize,
    pub seed: u64,
    pub write_images: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid: "36x18".into(),
            m: 50,
            seed: 7,
            write_images: true,
        }
    }
}

impl SweepSection {
    pub fn grid(&self) -> CliResult<GridSpec> {
        Ok(self.grid.parse()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySection {
    pub m: usize,
    pub seed: u64,
}

impl Default for StudySection {
    fn default() -> Self {
        Self { m: 50, seed: 9 }
    }
}

/// Desk defaults: 32×32 images through three blocks, batch 16, Adam at 2e-3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub sweep: SweepSection,
    pub study: StudySection,
    pub demo1d: Demo1DConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig {
                base_channels: 32,
                min_channels: 8,
                fc_widths: vec![64, 256],
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 40,
                batch_size: 16,
                adam: AdamConfig::with_lr(2e-3),
                ..TrainConfig::default()
            },
            ensemble: EnsembleConfig::default(),
            sweep: SweepSection::default(),
            study: StudySection::default(),
            demo1d: Demo1DConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shipped(name: &str) -> PipelineConfig {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        PipelineConfig::load(Some(&path)).unwrap()
    }

    #[test]
    fn desk_file_spells_out_the_defaults() {
        assert_eq!(shipped("desk.toml"), PipelineConfig::default());
    }

    #[test]
    fn paper_file_is_valid() {
        let cfg = shipped("paper.toml");
        cfg.model.validate().unwrap();
        assert_eq!(cfg.model.image_resolution, cfg.data.resolution);
        assert_eq!(cfg.train.adam.lr, 1e-4);
        assert_eq!(cfg.train.adam.beta1, AdamConfig::default().beta1);
        cfg.sweep.grid().unwrap();
    }

    #[test]
    fn missing_sections_take_defaults() {
        let cfg: PipelineConfig = toml::from_str("[sweep]\nm = 10\n").unwrap();
        assert_eq!(cfg.sweep.m, 10);
        assert_eq!(cfg.sweep.grid, "36x18");
        assert_eq!(cfg.train, PipelineConfig::default().train);
    }
}
