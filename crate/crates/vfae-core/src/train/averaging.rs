//! Temporal parameter averaging: a bias-corrected exponential moving
//! average of every parameter, used for prediction and evaluation while raw
//! parameters keep training.

use crate::tensor::{ParamSet, Tensor};

pub struct AveragedParams {
    ema: Vec<Vec<f64>>,
    decay: f64,
    t: u64,
}

impl AveragedParams {
    pub fn new(params: &ParamSet, decay: f64) -> Self {
        assert!((0.0..1.0).contains(&decay) || decay == 0.0, "decay must be in [0, 1), got {decay}");
        let ema = params.ids().map(|id| vec![0.0; params.value(id).numel()]).collect();
        AveragedParams { ema, decay, t: 0 }
    }

    pub fn update(&mut self, params: &ParamSet) {
        self.t += 1;
        for (buf, id) in self.ema.iter_mut().zip(params.ids()) {
            for (e, v) in buf.iter_mut().zip(params.value(id).iter()) {
                *e = self.decay * *e + (1.0 - self.decay) * v;
            }
        }
    }

    pub fn updates(&self) -> u64 {
        self.t
    }

    /// Bias-corrected averages, shaped like the given template set.
    pub fn snapshot(&self, template: &ParamSet) -> Vec<Tensor> {
        assert!(self.t > 0, "snapshot before any update");
        let correction = 1.0 - self.decay.powi(self.t as i32);
        template
            .ids()
            .zip(&self.ema)
            .map(|(id, buf)| {
                let shape = template.value(id).shape().to_vec();
                Tensor::from_vec(shape, buf.iter().map(|e| e / correction).collect())
            })
            .collect()
    }
}
