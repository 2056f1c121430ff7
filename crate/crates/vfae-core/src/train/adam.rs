//! Adam with bias correction over a parameter set.

use crate::tensor::{ParamSet, Tensor};

use super::TrainError;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moment accumulators and the step counter.
pub struct AdamState {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let m = params.ids().map(|id| vec![0.0; params.value(id).numel()]).collect();
        let v = params.ids().map(|id| vec![0.0; params.value(id).numel()]).collect();
        AdamState { cfg, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update from the currently accumulated gradients; gradients are
    /// zeroed afterwards. A non-finite gradient aborts, naming the parameter.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), TrainError> {
        for id in params.ids() {
            if let Some(bad) = params.grad(id).iter().find(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    param: params.name(id).to_string(),
                    value: *bad,
                });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (k, &id) in ids.iter().enumerate() {
            // Copy grads out first: the value borrow below is exclusive.
            let grads: Vec<f64> = params.grad(id).to_vec();
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let values: &mut Tensor = params.value_mut(id);
            for ((slot, g), (mi, vi)) in
                values.data_mut().iter_mut().zip(&grads).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *slot -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        params.zero_grad();
        Ok(())
    }
}
