use super::TrainError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamMoments {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { first: zeros(), second: zeros() }
    }
}

/// Optimizer bookkeeping carried between steps and through checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd { step: u64 },
    Adam { step: u64, moments: AdamMoments },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[Tensor]) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd { step: 0 },
            OptimizerKind::Adam => Self::Adam { step: 0, moments: AdamMoments::zeros_like(params) },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Self::Sgd { .. } => OptimizerKind::Sgd,
            Self::Adam { .. } => OptimizerKind::Adam,
        }
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        match self {
            Self::Sgd { step } | Self::Adam { step, .. } => *step,
        }
    }
}

fn check_shapes(params: &[Tensor], grads: &[Tensor]) -> Result<(), TrainError> {
    if params.len() != grads.len() {
        return Err(TrainError::Optimizer(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TrainError::Optimizer(format!(
                "gradient {i} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    Ok(())
}

/// θ ← θ − lr·g
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], learning_rate: f64) -> Result<(), TrainError> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (v, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *v -= learning_rate * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// One bias-corrected Adam update; `step` is the 1-based index of this update.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    moments: &mut AdamMoments,
    step: u64,
    hyper: &AdamHyper,
) -> Result<(), TrainError> {
    if step < 1 {
        return Err(TrainError::Optimizer("adam step count must be at least 1".into()));
    }
    check_shapes(params, grads)?;
    check_shapes(params, &moments.first)?;
    check_shapes(params, &moments.second)?;
    let AdamHyper { learning_rate, beta1, beta2, epsilon } = *hyper;
    let t = step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = moments.first[i].data_mut();
        let v = moments.second[i].data_mut();
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
