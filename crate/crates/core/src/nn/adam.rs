//! Adam with classic L2 weight decay folded into the raw gradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Optimizer state for one parameter list. Moment buffers mirror the
/// parameter shapes; `step_count` advances by exactly one per update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step_count: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor], learning_rate: f64, weight_decay: f64) -> Result<Self> {
        Self::with_hyperparams(
            params,
            learning_rate,
            weight_decay,
            DEFAULT_BETA1,
            DEFAULT_BETA2,
            DEFAULT_EPSILON,
        )
    }

    pub fn with_hyperparams(
        params: &[Tensor],
        learning_rate: f64,
        weight_decay: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if weight_decay < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "weight decay must be nonnegative, got {weight_decay}"
            )));
        }
        Ok(Self {
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Restores moment buffers (checkpoint loading).
    pub(crate) fn restore(
        &mut self,
        step_count: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Result<()> {
        if first.len() != self.first_moment.len() || second.len() != self.second_moment.len() {
            return Err(Error::Format("moment buffer count mismatch".into()));
        }
        for (slot, buf) in self.first_moment.iter().zip(&first) {
            if slot.len() != buf.len() {
                return Err(Error::Format("first-moment buffer length mismatch".into()));
            }
        }
        for (slot, buf) in self.second_moment.iter().zip(&second) {
            if slot.len() != buf.len() {
                return Err(Error::Format("second-moment buffer length mismatch".into()));
            }
        }
        self.step_count = step_count;
        self.first_moment = first;
        self.second_moment = second;
        Ok(())
    }

    /// One Adam update with bias correction. L2 weight decay is added to the
    /// raw gradient (`g + wd * theta`) before the moment updates; gradients
    /// are zeroed afterwards.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::InvalidState(format!(
                "optimizer tracks {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            match p.grad() {
                None => {
                    return Err(Error::InvalidState(format!(
                        "parameter {i} has no gradient; run backward before stepping"
                    )));
                }
                Some(g) if g.len() != p.len() => {
                    return Err(Error::InvalidState(format!(
                        "parameter {i} gradient length mismatch"
                    )));
                }
                _ => {}
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let wd = self.weight_decay;
            let theta_grad: Vec<f64> = {
                let g = p.grad().unwrap();
                p.data()
                    .iter()
                    .zip(g)
                    .map(|(&theta, &gi)| gi + wd * theta)
                    .collect()
            };
            for (((theta, g), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(theta_grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *theta -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
