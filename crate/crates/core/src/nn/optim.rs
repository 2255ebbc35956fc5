use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Multiply the learning rate by `factor` from `epoch` onward (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub epoch: usize,
    pub factor: f64,
}

/// SGD with classical momentum (`v ← μv + g`, `w ← w − lr·v`) and a step
/// learning-rate schedule.
#[derive(Debug, Clone)]
pub struct Sgd {
    base_lr: f64,
    momentum: f64,
    schedule: Vec<LrStep>,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(base_lr: f64, momentum: f64, schedule: Vec<LrStep>) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {base_lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if schedule.windows(2).any(|w| w[0].epoch >= w[1].epoch) {
            return Err(Error::Config("schedule epochs must be strictly increasing".into()));
        }
        Ok(Self {
            base_lr,
            momentum,
            schedule,
            velocity: Vec::new(),
        })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|s| epoch >= s.epoch)
            .fold(self.base_lr, |lr, s| lr * s.factor)
    }

    /// Applies one update and zeroes every gradient. `params` must be passed
    /// in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param], epoch: usize) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::shape(
                "sgd_step",
                format!("{} params, {} velocity buffers", params.len(), self.velocity.len()),
            ));
        }
        let lr = self.lr_at(epoch);
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            p.grad.same_shape(v, "sgd_step")?;
            for ((w, g), vel) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(v.data_mut())
            {
                *vel = self.momentum * *vel + g;
                *w -= lr * *vel;
            }
            p.zero_grad();
        }
        Ok(())
    }
}
