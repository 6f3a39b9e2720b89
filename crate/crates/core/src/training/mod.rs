//! Minibatch Adam training of the projected model, the HJE-augmented loss,
//! and checkpoint files.

mod adam;
mod checkpoint;
mod loss;

pub use adam::{adam_update, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, BlockRecord, Checkpoint, EpochRecord, CHECKPOINT_VERSION,
};
pub use loss::{
    batch_hje_residual, batch_loss, batch_loss_hje, loss_and_gradient, loss_graph, LossNodes,
};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::nets::Architecture;
use crate::simdata::Dataset;
use crate::stability::{
    random_model, ControlKind, ControlSpec, InputMap, ProjectedModel, RMap, WeightSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Stable autonomous dynamics; no controller.
    Autonomous,
    /// Drift, Lyapunov function and controller network learned jointly.
    Stabilizable,
    /// Controller fixed to `−½R⁻¹L_gᵀV`, optional HJE penalty.
    HjiStructured,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epsilon: f64,
    pub weight: WeightSpec,
    /// Adam step size θ, in (0, 1).
    pub step_size: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight `a` of the HJE penalty; only used in HJI mode.
    pub hje_weight: f64,
    pub architecture: Architecture,
    pub input_map: InputMap,
    /// Constant `R` for HJI mode; identity when absent.
    pub control_weight: Option<Array2<f64>>,
    /// Keep the controller network at zero output and untrained.
    pub freeze_control: bool,
    pub convergence_tolerance: f64,
    pub convergence_window: usize,
}

impl TrainConfig {
    /// Defaults: ε = 1, θ = 0.005, batch 100, 500 epochs, seed 0, default architecture.
    pub fn new(mode: TrainMode, input_map: InputMap, weight: WeightSpec) -> Self {
        Self {
            mode,
            epsilon: 1.0,
            weight,
            step_size: 0.005,
            batch_size: 100,
            epochs: 500,
            seed: 0,
            hje_weight: 0.0,
            architecture: Architecture::default(),
            input_map,
            control_weight: None,
            freeze_control: false,
            convergence_tolerance: 1e-6,
            convergence_window: 10,
        }
    }

    pub fn n(&self) -> usize {
        self.input_map.dims().0
    }

    pub fn m(&self) -> usize {
        self.input_map.dims().1
    }

    pub fn control_weight_matrix(&self) -> Array2<f64> {
        self.control_weight
            .clone()
            .unwrap_or_else(|| Array2::eye(self.m()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.step_size > 0.0 && self.step_size < 1.0) {
            return Err(Error::Config(format!(
                "step size must lie in (0, 1), got {}",
                self.step_size
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epoch budget must be positive".into(),
            ));
        }
        if !(self.hje_weight >= 0.0) || !self.hje_weight.is_finite() {
            return Err(Error::Config(format!(
                "HJE weight must be nonnegative, got {}",
                self.hje_weight
            )));
        }
        if self.hje_weight > 0.0 && self.mode != TrainMode::HjiStructured {
            return Err(Error::Config(
                "the HJE weight applies only in HJI mode".into(),
            ));
        }
        if self.convergence_window == 0 || !(self.convergence_tolerance >= 0.0) {
            return Err(Error::Config(
                "convergence window must be positive and tolerance nonnegative".into(),
            ));
        }
        if self.mode == TrainMode::HjiStructured {
            crate::stability::spd_inverse(&self.control_weight_matrix())?;
        }
        self.weight.validate()
    }

    fn hje_weight_in_use(&self) -> f64 {
        match self.mode {
            TrainMode::HjiStructured => self.hje_weight,
            _ => 0.0,
        }
    }
}

/// Builds the untrained model. Initialization draws `f̂`, then `V`, then `α`
/// from one stream, so the first two agree across modes for a fixed seed.
pub fn initial_model(config: &TrainConfig) -> Result<ProjectedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kind = match config.mode {
        TrainMode::Autonomous => ControlKind::Autonomous,
        TrainMode::Stabilizable => ControlKind::Network,
        TrainMode::HjiStructured => {
            ControlKind::Structured(RMap::Constant(config.control_weight_matrix()))
        }
    };
    let mut model = random_model(
        config.n(),
        &config.architecture,
        config.epsilon,
        config.weight.clone(),
        config.input_map.clone(),
        kind,
        &mut rng,
    )?;
    if config.freeze_control {
        if let ControlSpec::FreeNetwork(net) = &model.control {
            model.control = ControlSpec::FreeNetwork(net.clone().zero_output().freeze());
        }
    }
    Ok(model)
}

/// Epoch-by-epoch training session.
#[derive(Debug)]
pub struct Trainer<'d> {
    config: TrainConfig,
    data: &'d Dataset,
    model: ProjectedModel,
    adam: AdamState,
    shuffle: ChaCha8Rng,
    order: Vec<usize>,
    history: Vec<EpochRecord>,
    converged: bool,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, data: &'d Dataset) -> Result<Self> {
        config.validate()?;
        if data.n() != config.n() {
            return Err(Error::shape(
                "dataset state dimension",
                config.n(),
                data.n(),
            ));
        }
        if data.len() < config.batch_size {
            return Err(Error::Config(format!(
                "dataset has {} samples, fewer than the batch size {}",
                data.len(),
                config.batch_size
            )));
        }
        let model = initial_model(&config)?;
        let (blocks, _) = model.collect_blocks();
        let adam = AdamState::new(&blocks);
        let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle.set_stream(1);
        let mut trainer = Self {
            order: (0..data.len()).collect(),
            config,
            data,
            model,
            adam,
            shuffle,
            history: Vec::new(),
            converged: false,
        };
        let initial = trainer.full_record(0, f64::NAN)?;
        trainer.history.push(EpochRecord {
            batch_loss: initial.full_loss,
            ..initial
        });
        Ok(trainer)
    }

    pub fn model(&self) -> &ProjectedModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.history.len() - 1
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            &self.config,
            self.history.clone(),
            self.converged,
        )
    }

    fn full_record(&self, epoch: usize, batch_loss: f64) -> Result<EpochRecord> {
        let (blocks, layout) = self.model.collect_blocks();
        let mut g = Graph::new(&blocks);
        let nodes = loss_graph(
            &mut g,
            &self.model,
            &layout,
            self.data.states(),
            self.data.derivatives(),
            self.config.hje_weight_in_use(),
        )?;
        let hje_residual = match self.config.mode {
            TrainMode::HjiStructured => Some(match nodes.hje {
                Some(h) => g.scalar(h),
                None => {
                    let margins = self
                        .data
                        .states()
                        .rows()
                        .into_iter()
                        .map(|x| self.model.eval(x).map(|p| p.decrease_margin().powi(2)));
                    margins.sum::<Result<f64>>()? / (self.data.len() * self.data.n()) as f64
                }
            }),
            _ => None,
        };
        Ok(EpochRecord {
            epoch,
            batch_loss,
            full_loss: g.scalar(nodes.total),
            fit_loss: g.scalar(nodes.fit),
            hje_residual,
        })
    }

    fn diverged(&self) -> Error {
        Error::TrainingDiverged {
            epoch: self.epoch() + 1,
            last: Box::new(self.checkpoint()),
        }
    }

    /// One pass over a fresh random partition of the data.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        self.order.shuffle(&mut self.shuffle);
        let a = self.config.hje_weight_in_use();
        let mut weighted = 0.0;
        let order = std::mem::take(&mut self.order);
        for chunk in order.chunks(self.config.batch_size) {
            let x = self.data.states().select(Axis(0), chunk);
            let xdot = self.data.derivatives().select(Axis(0), chunk);
            let (mut blocks, layout, bundle) = match loss_and_gradient(&self.model, &x, &xdot, a) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    self.order = order;
                    return Err(self.diverged());
                }
                Err(e) => return Err(e),
            };
            if !bundle.loss.is_finite() || !bundle.all_finite() {
                self.order = order;
                return Err(self.diverged());
            }
            let mut adam = self.adam.clone();
            adam_update(&mut adam, &mut blocks, &bundle, self.config.step_size)?;
            if blocks.iter().any(|b| !b.all_finite()) {
                self.order = order;
                return Err(self.diverged());
            }
            self.adam = adam;
            self.model.distribute_blocks(&blocks, &layout);
            weighted += bundle.loss * chunk.len() as f64;
        }
        self.order = order;
        let epoch = self.epoch() + 1;
        let record = match self.full_record(epoch, weighted / self.data.len() as f64) {
            Ok(r) if r.full_loss.is_finite() => r,
            Ok(_) | Err(Error::NonFinite { .. }) => return Err(self.diverged()),
            Err(e) => return Err(e),
        };
        self.history.push(record);
        self.update_convergence();
        Ok(self.history.last().expect("just pushed"))
    }

    fn update_convergence(&mut self) {
        let w = self.config.convergence_window;
        let len = self.history.len();
        if len <= w {
            return;
        }
        let now = self.history[len - 1].full_loss;
        let before = self.history[len - 1 - w].full_loss;
        let scale = before.abs().max(f64::MIN_POSITIVE);
        self.converged = (before - now).abs() / scale < self.config.convergence_tolerance;
    }

    /// Trains until the epoch budget is spent or the loss plateaus.
    pub fn run(mut self) -> Result<Checkpoint> {
        while self.epoch() < self.config.epochs && !self.converged {
            self.run_epoch()?;
        }
        Ok(self.checkpoint())
    }
}

/// Initializes and trains a model on `data`.
pub fn train(config: TrainConfig, data: &Dataset) -> Result<Checkpoint> {
    Trainer::new(config, data)?.run()
}
