use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainMode};
use crate::diffcore::{BlockShape, ParameterBlock};
use crate::error::{Error, Result};
use crate::nets::{IcnnParameters, LyapunovParameters, MlpParameters};
use crate::stability::{ControlSpec, ProjectedModel, ProjectionMode, RMap, WeightSpec};

/// Newest checkpoint format this build reads and writes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// One parameter block with explicit shape metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

impl BlockRecord {
    pub fn from_block(block: &ParameterBlock) -> Self {
        Self {
            name: block.name.clone(),
            shape: block.shape().dims(),
            values: block.flat(),
            trainable: block.trainable,
        }
    }

    pub fn to_block(&self) -> Result<ParameterBlock> {
        let shape = BlockShape::from_dims(&self.shape)?;
        let mut block = ParameterBlock::from_flat(self.name.clone(), shape, self.values.clone())?;
        block.trainable = self.trainable;
        Ok(block)
    }
}

/// Per-epoch loss summary; epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch objectives seen during the epoch.
    pub batch_loss: f64,
    /// Objective on the full dataset after the epoch.
    pub full_loss: f64,
    /// Mean squared fit residual on the full dataset after the epoch.
    pub fit_loss: f64,
    /// Mean squared HJI residual on the full dataset (HJI mode only).
    pub hje_residual: Option<f64>,
}

/// Trained parameters plus everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: TrainMode,
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
    pub weight_spec: WeightSpec,
    pub blocks: Vec<BlockRecord>,
    pub history: Vec<EpochRecord>,
    pub converged: bool,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn from_model(
        model: &ProjectedModel,
        config: &TrainConfig,
        history: Vec<EpochRecord>,
        converged: bool,
    ) -> Self {
        let (blocks, _) = model.collect_blocks();
        Self {
            version: CHECKPOINT_VERSION,
            mode: config.mode,
            n: model.n(),
            m: model.m(),
            epsilon: model.lyap.epsilon(),
            weight_spec: model.weight.clone(),
            blocks: blocks.iter().map(BlockRecord::from_block).collect(),
            history,
            converged,
            config: config.clone(),
        }
    }

    fn group(&self, prefix: &str) -> Result<Vec<ParameterBlock>> {
        self.blocks
            .iter()
            .filter(|b| b.name.split('.').next() == Some(prefix))
            .map(BlockRecord::to_block)
            .collect()
    }

    /// Rebuilds the projected model.
    pub fn model(&self) -> Result<ProjectedModel> {
        let fhat = MlpParameters::from_blocks(self.group("fhat")?)?;
        let icnn = IcnnParameters::from_blocks(self.group("V")?)?;
        let lyap = LyapunovParameters::new(icnn, self.epsilon)?;
        let alpha = self.group("alpha")?;
        let (control, mode) = match self.mode {
            TrainMode::Autonomous => (ControlSpec::Zero, ProjectionMode::Autonomous),
            TrainMode::Stabilizable => (
                ControlSpec::FreeNetwork(MlpParameters::from_blocks(alpha)?),
                ProjectionMode::Stabilizable,
            ),
            TrainMode::HjiStructured => (
                ControlSpec::Structured(RMap::Constant(self.config.control_weight_matrix())),
                ProjectionMode::Stabilizable,
            ),
        };
        let model = ProjectedModel::new(
            fhat,
            lyap,
            control,
            self.weight_spec.clone(),
            self.config.input_map.clone(),
            mode,
        )?;
        if model.n() != self.n || model.m() != self.m {
            return Err(Error::Malformed(format!(
                "checkpoint declares n = {}, m = {} but parameters give n = {}, m = {}",
                self.n,
                self.m,
                model.n(),
                model.m()
            )));
        }
        Ok(model)
    }

    /// Final full-data objective, if any epoch was recorded.
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|h| h.full_loss)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Malformed(format!("checkpoint: {e}")))?;
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Malformed("checkpoint has no numeric `version` field".into()))?;
        if found > CHECKPOINT_VERSION as u64 {
            return Err(Error::Version {
                found: found.min(u32::MAX as u64) as u32,
                supported: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::Malformed(format!("checkpoint: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
