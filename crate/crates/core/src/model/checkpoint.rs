use std::path::Path;

use serde::{Deserialize, Serialize};
use viewuq_autodiff::{Real, Tensor, TensorFile};

use crate::error::{Error, Result};

use super::{ModelConfig, SynthesisModel};

const KIND: &str = "viewuq-synthesis-model";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: Option<f32>,
    pub data_seed: u64,
    pub train_seed: u64,
    pub batch_size: usize,
    pub lr: f32,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: ModelConfig,
    param_count: usize,
    training: Option<TrainingMeta>,
}

/// Weights, batch-norm statistics, config and training metadata in the
/// tensor container format. Optimizer moments are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub training: Option<TrainingMeta>,
    state: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &SynthesisModel<T>, training: Option<TrainingMeta>) -> Self {
        Self {
            config: model.config().clone(),
            training,
            state: model.state().into_iter().map(|(n, t)| (n, t.cast())).collect(),
        }
    }

    pub fn to_model(&self) -> Result<SynthesisModel> {
        let mut m = SynthesisModel::build(self.config.clone())?;
        m.load_state(&self.state)?;
        Ok(m)
    }

    fn to_file(&self) -> Result<TensorFile> {
        let meta = Meta {
            kind: KIND.into(),
            config: self.config.clone(),
            param_count: self.config.param_count(),
            training: self.training.clone(),
        };
        Ok(TensorFile {
            seed: self.config.seed,
            meta: serde_json::to_value(meta)?,
            tensors: self.state.clone(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_file()?.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file()?.save(path)?;
        Ok(())
    }

    /// Reads a checkpoint and cross-checks the stored parameter count
    /// against both the tensors present and the count implied by the config.
    pub fn load(path: &Path) -> Result<Self> {
        let file = TensorFile::load(path)?;
        let meta: Meta = serde_json::from_value(file.meta)
            .map_err(|e| Error::Checkpoint(format!("{}: bad metadata: {e}", path.display())))?;
        if meta.kind != KIND {
            return Err(Error::Checkpoint(format!("{}: not a model checkpoint", path.display())));
        }
        meta.config.validate()?;
        let expected = meta.config.param_count();
        if meta.param_count != expected {
            return Err(Error::Checkpoint(format!(
                "header records {} parameters, config implies {expected}",
                meta.param_count
            )));
        }
        let ckpt = Self {
            config: meta.config,
            training: meta.training,
            state: file.tensors,
        };
        // Building the model checks names and shapes of every tensor.
        let model = ckpt.to_model()?;
        if model.param_count() != expected {
            return Err(Error::Checkpoint(format!(
                "tensors hold {} parameters, config implies {expected}",
                model.param_count()
            )));
        }
        Ok(ckpt)
    }
}
