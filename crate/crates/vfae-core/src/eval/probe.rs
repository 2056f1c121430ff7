//! Probe classifiers measuring residual information in embeddings: a
//! multinomial logistic probe (deterministic full-batch descent) and a small
//! one-hidden-layer perceptron probe for nonlinear leakage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::CategoricalDist;
use crate::model::one_hot;
use crate::tensor::{ParamSet, Tape, Tensor};
use crate::train::{AdamConfig, AdamState};

use super::EvalError;

const LINEAR_L2: f64 = 1e-4;
const LINEAR_MAX_ITERS: usize = 4000;
const LINEAR_GRAD_TOL: f64 = 1e-7;

/// Feature standardization fitted on probe training data.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(z: &Tensor) -> Self {
        let (n, d) = (z.rows(), z.cols());
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(z.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (c, v) in z.row(r).iter().enumerate() {
                var[c] += (v - mean[c]) * (v - mean[c]);
            }
        }
        let inv_std = var
            .into_iter()
            .map(|v| 1.0 / (v / n as f64).sqrt().max(1e-9))
            .collect();
        Standardizer { mean, inv_std }
    }

    fn apply(&self, z: &Tensor) -> Tensor {
        let (n, d) = (z.rows(), z.cols());
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            for (c, v) in z.row(r).iter().enumerate() {
                out.push((v - self.mean[c]) * self.inv_std[c]);
            }
        }
        Tensor::matrix(n, d, out)
    }
}

fn check_classes(labels: &[usize]) -> Result<usize, EvalError> {
    let &max = labels.iter().max().ok_or(EvalError::EmptyInput)?;
    let classes = max + 1;
    let mut present = vec![false; classes];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(EvalError::SingleClass);
    }
    Ok(classes)
}

/// Multinomial logistic regression trained to convergence by full-batch
/// gradient descent with momentum and an L2 weight penalty. Deterministic
/// given the data.
pub struct LinearProbe {
    standardizer: Standardizer,
    /// [(d+1) × C], last row is the bias.
    weights: Tensor,
    pub classes: usize,
}

impl LinearProbe {
    pub fn fit(z: &Tensor, labels: &[usize]) -> Result<Self, EvalError> {
        assert_eq!(z.rows(), labels.len(), "probe: {} rows vs {} labels", z.rows(), labels.len());
        let classes = check_classes(labels)?;
        let standardizer = Standardizer::fit(z);
        let phi = standardizer.apply(z);
        let (n, d) = (phi.rows(), phi.cols());

        // Gradient step size from the softmax smoothness bound.
        let max_sq = (0..n)
            .map(|r| phi.row(r).iter().map(|v| v * v).sum::<f64>() + 1.0)
            .fold(0.0f64, f64::max);
        let lr = 1.0 / (0.5 * max_sq + LINEAR_L2);
        let momentum = 0.9;

        let mut w = vec![0.0; (d + 1) * classes];
        let mut velocity = vec![0.0; w.len()];
        let mut logits = vec![0.0; classes];
        let mut grad = vec![0.0; w.len()];
        for _ in 0..LINEAR_MAX_ITERS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for r in 0..n {
                let row = phi.row(r);
                for c in 0..classes {
                    let mut t = w[d * classes + c]; // bias
                    for (j, v) in row.iter().enumerate() {
                        t += v * w[j * classes + c];
                    }
                    logits[c] = t;
                }
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let zsum: f64 = logits.iter().map(|t| (t - mx).exp()).sum();
                for c in 0..classes {
                    let p = (logits[c] - mx).exp() / zsum;
                    let err = p - if labels[r] == c { 1.0 } else { 0.0 };
                    for (j, v) in row.iter().enumerate() {
                        grad[j * classes + c] += err * v;
                    }
                    grad[d * classes + c] += err;
                }
            }
            let scale = 1.0 / n as f64;
            let mut max_g = 0.0f64;
            for (idx, g) in grad.iter_mut().enumerate() {
                *g *= scale;
                if idx < d * classes {
                    *g += LINEAR_L2 * w[idx]; // penalty on weights, not bias
                }
                max_g = max_g.max(g.abs());
            }
            if max_g < LINEAR_GRAD_TOL {
                break;
            }
            for ((wi, v), g) in w.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = momentum * *v - lr * g;
                *wi += *v;
            }
        }
        Ok(LinearProbe {
            standardizer,
            weights: Tensor::matrix(d + 1, classes, w),
            classes,
        })
    }

    fn logits(&self, z: &Tensor) -> Tensor {
        let phi = self.standardizer.apply(z);
        let (n, d) = (phi.rows(), phi.cols());
        assert_eq!(d + 1, self.weights.rows(), "probe input width changed");
        let mut out = Vec::with_capacity(n * self.classes);
        for r in 0..n {
            let row = phi.row(r);
            for c in 0..self.classes {
                let mut t = self.weights.get2(d, c);
                for (j, v) in row.iter().enumerate() {
                    t += v * self.weights.get2(j, c);
                }
                out.push(t);
            }
        }
        Tensor::matrix(n, self.classes, out)
    }

    pub fn predict(&self, z: &Tensor) -> Vec<usize> {
        argmax_rows(&self.logits(z))
    }

    /// Per-row class probabilities.
    pub fn predict_proba(&self, z: &Tensor) -> Tensor {
        let logits = self.logits(z);
        let (n, c) = (logits.rows(), logits.cols());
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            let row = logits.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let zsum: f64 = row.iter().map(|t| (t - mx).exp()).sum();
            out.extend(row.iter().map(|t| (t - mx).exp() / zsum));
        }
        Tensor::matrix(n, c, out)
    }

    pub fn accuracy(&self, z: &Tensor, labels: &[usize]) -> f64 {
        accuracy_of(&self.predict(z), labels)
    }

    #[cfg(test)]
    pub(crate) fn raw_weights(&self) -> &Tensor {
        &self.weights
    }
}

/// One-hidden-layer (64 tanh units) perceptron probe trained by Adam with
/// early stopping on a held-out fifth of its training data. Seed-pinned.
pub struct NonlinearProbe {
    standardizer: Standardizer,
    params: ParamSet,
    classes: usize,
    hidden: usize,
}

pub const NONLINEAR_HIDDEN: usize = 64;
const NONLINEAR_MAX_EPOCHS: usize = 400;
const NONLINEAR_PATIENCE: usize = 30;

impl NonlinearProbe {
    pub fn fit(z: &Tensor, labels: &[usize], seed: u64) -> Result<Self, EvalError> {
        assert_eq!(z.rows(), labels.len(), "probe: {} rows vs {} labels", z.rows(), labels.len());
        let classes = check_classes(labels)?;
        let standardizer = Standardizer::fit(z);
        let phi = standardizer.apply(z);
        let (n, d) = (phi.rows(), phi.cols());
        let hidden = NONLINEAR_HIDDEN;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let held = (n / 5).max(1).min(n.saturating_sub(1));
        let (val_rows, fit_rows) = order.split_at(held);

        let glorot = |fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::matrix(
                fan_in,
                fan_out,
                (0..fan_in * fan_out).map(|_| rng.random_range(-b..b)).collect(),
            )
        };
        let mut params = ParamSet::new();
        let w1 = params.add("probe/w1", glorot(d, hidden, &mut rng));
        let b1 = params.add("probe/b1", Tensor::zeros(vec![hidden]));
        let w2 = params.add("probe/w2", glorot(hidden, classes, &mut rng));
        let b2 = params.add("probe/b2", Tensor::zeros(vec![classes]));

        let fit_x = phi.take_rows(fit_rows);
        let fit_y: Vec<usize> = fit_rows.iter().map(|&r| labels[r]).collect();
        let val_x = phi.take_rows(val_rows);
        let val_y: Vec<usize> = val_rows.iter().map(|&r| labels[r]).collect();
        let fit_onehot = one_hot(&fit_y, classes);

        let mut adam = AdamState::new(
            &params,
            AdamConfig { learning_rate: 1e-2, ..Default::default() },
        );
        let mut best = (f64::INFINITY, params.snapshot());
        let mut since_best = 0;
        for _ in 0..NONLINEAR_MAX_EPOCHS {
            let mut tape = Tape::new();
            let x = tape.constant(fit_x.clone());
            let w1v = tape.param(&params, w1);
            let b1v = tape.param(&params, b1);
            let w2v = tape.param(&params, w2);
            let b2v = tape.param(&params, b2);
            let h_pre = tape.matmul(x, w1v);
            let h_aff = tape.add_row(h_pre, b1v);
            let h = tape.tanh(h_aff);
            let o_pre = tape.matmul(h, w2v);
            let logits = tape.add_row(o_pre, b2v);
            let dist = CategoricalDist::new(logits);
            let oh = tape.constant(fit_onehot.clone());
            let lp = dist.log_prob_onehot(&mut tape, oh);
            let mean_lp = tape.mean(lp, None);
            let loss = tape.neg(mean_lp);
            tape.backward(loss, &mut params).map_err(crate::model::ModelError::from)?;
            adam.step(&mut params).map_err(|e| EvalError::ProbeTraining(e.to_string()))?;

            let val_ce = Self::cross_entropy(&params, (w1, b1, w2, b2), &val_x, &val_y);
            if val_ce < best.0 {
                best = (val_ce, params.snapshot());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= NONLINEAR_PATIENCE {
                    break;
                }
            }
        }
        params.restore(&best.1);
        Ok(NonlinearProbe { standardizer, params, classes, hidden })
    }

    fn cross_entropy(
        params: &ParamSet,
        ids: (crate::tensor::ParamId, crate::tensor::ParamId, crate::tensor::ParamId, crate::tensor::ParamId),
        x: &Tensor,
        labels: &[usize],
    ) -> f64 {
        let logits = Self::raw_logits(params, ids, x);
        let mut ce = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = logits.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
            ce -= row[l] - lse;
        }
        ce / labels.len().max(1) as f64
    }

    fn raw_logits(
        params: &ParamSet,
        (w1, b1, w2, b2): (
            crate::tensor::ParamId,
            crate::tensor::ParamId,
            crate::tensor::ParamId,
            crate::tensor::ParamId,
        ),
        x: &Tensor,
    ) -> Tensor {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w1v = tape.param(params, w1);
        let b1v = tape.param(params, b1);
        let w2v = tape.param(params, w2);
        let b2v = tape.param(params, b2);
        let h_pre = tape.matmul(xv, w1v);
        let h_aff = tape.add_row(h_pre, b1v);
        let h = tape.tanh(h_aff);
        let o_pre = tape.matmul(h, w2v);
        let logits = tape.add_row(o_pre, b2v);
        tape.value(logits).clone()
    }

    fn ids(&self) -> (crate::tensor::ParamId, crate::tensor::ParamId, crate::tensor::ParamId, crate::tensor::ParamId) {
        let ids: Vec<_> = self.params.ids().collect();
        (ids[0], ids[1], ids[2], ids[3])
    }

    pub fn predict(&self, z: &Tensor) -> Vec<usize> {
        let phi = self.standardizer.apply(z);
        argmax_rows(&Self::raw_logits(&self.params, self.ids(), &phi))
    }

    pub fn accuracy(&self, z: &Tensor, labels: &[usize]) -> f64 {
        accuracy_of(&self.predict(z), labels)
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }
}

pub(crate) fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn accuracy_of(preds: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(preds.len(), labels.len());
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64
}

/// Per-class accuracy (empty classes report 0).
pub(crate) fn per_class_accuracy(preds: &[usize], labels: &[usize], classes: usize) -> Vec<f64> {
    let mut hit = vec![0usize; classes];
    let mut tot = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        tot[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    hit.iter()
        .zip(&tot)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect()
}
