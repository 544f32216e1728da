use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{adam_step, sgd_step, AdamHyper, OptimizerKind, OptimizerState};
use super::{SamplePair, TrainError};
use crate::fcn::{softmax_pixel_loss, FcnModel, LabelMask};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(TrainError::Config(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(TrainError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FcnModel,
    pub optimizer: OptimizerState,
    /// Mean per-pixel loss of each epoch, averaged over its samples.
    pub history: Vec<f64>,
}

/// Train from a fresh optimizer state.
pub fn train(model: FcnModel, dataset: &[SamplePair], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let state = OptimizerState::new(config.optimizer, model.parameters());
    train_with(model, state, dataset, config, |_, _| {})
}

/// Train continuing from `state`, reporting `(epoch, mean loss)` after each epoch.
pub fn train_with(
    mut model: FcnModel,
    mut state: OptimizerState,
    dataset: &[SamplePair],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if state.kind() != config.optimizer {
        return Err(TrainError::Config(format!(
            "optimizer state is {} but configuration asks for {}",
            state.kind(),
            config.optimizer
        )));
    }
    let inputs: Vec<Tensor> = dataset.iter().map(SamplePair::input_tensor).collect();
    let labels: Vec<LabelMask> = dataset.iter().map(SamplePair::labels).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = Tensor::stack(&chunk.iter().map(|&i| &inputs[i]).collect::<Vec<_>>())?;
            let y = LabelMask::stack(&chunk.iter().map(|&i| &labels[i]).collect::<Vec<_>>())?;
            let logits = model.forward(&x)?;
            let (loss, grad) = softmax_pixel_loss(&logits, &y)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            let grads = model.backward(&grad)?;
            match &mut state {
                OptimizerState::Sgd { step } => {
                    sgd_step(model.parameters_mut(), &grads, config.learning_rate)?;
                    *step += 1;
                }
                OptimizerState::Adam { step, moments } => {
                    *step += 1;
                    adam_step(model.parameters_mut(), &grads, moments, *step, &config.adam())?;
                    moments.first.iter_mut().chain(moments.second.iter_mut()).for_each(Tensor::round_to_f32);
                }
            }
            model.parameters_mut().iter_mut().for_each(Tensor::round_to_f32);
        }
        let mean = epoch_loss / dataset.len() as f64;
        history.push(mean);
        on_epoch(epoch, mean);
    }
    model.clear_cache();
    Ok(TrainOutcome { model, optimizer: state, history })
}
