use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Adam with decoupled weight decay. Moment buffers are allocated lazily
/// per parameter slot on the first step that sees a gradient for it.
#[derive(Clone, Debug)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, num_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![None; num_params],
            v: vec![None; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> Option<&Tensor> {
        self.m[i].as_ref()
    }

    pub fn second_moment(&self, i: usize) -> Option<&Tensor> {
        self.v[i].as_ref()
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. `grads[i] == None` leaves parameter `i` (and its
    /// moments) untouched, which is how frozen parameters are skipped.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) -> Result<(), TensorError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TensorError::Shape(format!(
                "adamw: {} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if self.config.lr <= 0.0 {
            return Err(TensorError::Shape(format!("adamw: lr must be positive, got {}", self.config.lr)));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(TensorError::Shape(format!(
                        "adamw: grad {i} shape {:?} vs param {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
                if !g.is_finite() {
                    return Err(TensorError::Divergence(format!("non-finite gradient for parameter {i}")));
                }
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pj, &gj), mj), vj) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *pj -= lr * weight_decay * *pj;
                *pj -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Two-level step schedule: `initial` before `drop_epoch`, `dropped` from
/// `drop_epoch` on (epochs are zero-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub dropped: f64,
    pub drop_epoch: usize,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-4,
            dropped: 1e-5,
            drop_epoch: 800,
        }
    }
}

impl StepSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.drop_epoch {
            self.initial
        } else {
            self.dropped
        }
    }
}
