use crate::engine::ParamSet;
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum, L2 weight decay and a step learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step_decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            momentum: 0.9,
            weight_decay: 1e-4,
            step_decay_epochs: vec![15],
            decay_factor: 0.1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::Config(format!(
                "decay factor {} must be positive",
                self.decay_factor
            )));
        }
        if self.step_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "step decay epochs {:?} must be strictly increasing",
                self.step_decay_epochs
            )));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`: the base rate times
    /// `decay_factor` once for every decay boundary already reached.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = self
            .step_decay_epochs
            .iter()
            .filter(|&&e| e <= epoch)
            .count();
        self.learning_rate * self.decay_factor.powi(steps as i32)
    }
}

/// One update of every parameter in `params` from its accumulated gradient.
///
/// `v ← momentum·v + grad + weight_decay·w`, then `w ← w − lr(epoch)·v`.
pub fn sgd_step(params: &mut ParamSet, config: &OptimConfig, epoch: usize) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad().is_none()) {
        return Err(Error::MissingGrad(p.name().to_string()));
    }
    let lr = config.lr_at(epoch);
    for p in params.iter_mut() {
        let grad = p.grad().expect("checked above").clone();
        let w = p.value().clone();
        let v = p.momentum_mut();
        for ((vi, &gi), &wi) in v.data_mut().iter_mut().zip(grad.data()).zip(w.data()) {
            *vi = config.momentum * *vi + gi + config.weight_decay * wi;
        }
        let v = v.clone();
        for (wi, &vi) in p.value_mut().data_mut().iter_mut().zip(v.data()) {
            *wi -= lr * vi;
        }
    }
    Ok(())
}
