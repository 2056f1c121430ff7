//! Shared helpers for integration tests: a plain-f64 re-implementation of
//! the network forward math (independent of the tape), Monte-Carlo utilities
//! and parameter surgery.

#![allow(clippy::needless_range_loop)]

#![allow(dead_code)]


use vfae_core::tensor::{ParamId, ParamSet, Tensor};

pub const LN_2PI: f64 = 1.8378770664093453;
pub const LOG_SIGMA_CLAMP: f64 = 7.0;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn find_param(ps: &ParamSet, name: &str) -> Option<ParamId> {
    ps.ids().find(|&id| ps.name(id) == name)
}

pub fn param_tensor<'a>(ps: &'a ParamSet, name: &str) -> &'a Tensor {
    let id = find_param(ps, name).unwrap_or_else(|| panic!("no parameter named {name}"));
    ps.value(id)
}

/// Overwrite a parameter's values (shape must match).
pub fn set_param(ps: &mut ParamSet, name: &str, values: &[f64]) {
    let id = find_param(ps, name).unwrap_or_else(|| panic!("no parameter named {name}"));
    assert_eq!(ps.value(id).numel(), values.len(), "size mismatch for {name}");
    ps.value_mut(id).data_mut().copy_from_slice(values);
}

/// Zero every parameter whose name starts with `prefix`.
pub fn zero_params_with_prefix(ps: &mut ParamSet, prefix: &str) {
    let ids: Vec<ParamId> = ps.ids().filter(|&id| ps.name(id).starts_with(prefix)).collect();
    for id in ids {
        ps.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Forward math of the networks re-implemented with scalar loops, reading
/// weights straight out of the parameter registry. Used as an independent
/// oracle against the tape path.
pub struct PlainNet<'a> {
    pub ps: &'a ParamSet,
}

impl<'a> PlainNet<'a> {
    pub fn new(ps: &'a ParamSet) -> Self {
        PlainNet { ps }
    }

    /// y = x·W + b for a single input row, by parameter name prefix.
    pub fn affine(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        let w = param_tensor(self.ps, &format!("{prefix}/w"));
        let b = param_tensor(self.ps, &format!("{prefix}/b"));
        assert_eq!(w.rows(), x.len(), "affine input width mismatch at {prefix}");
        let mut out = b.data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for j in 0..w.cols() {
                out[j] += xi * w.get2(i, j);
            }
        }
        out
    }

    /// MLP body with softplus activations; layers found by name probing.
    pub fn body(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut i = 0;
        while find_param(self.ps, &format!("{prefix}/layer{i}/w")).is_some() {
            h = self
                .affine(&format!("{prefix}/layer{i}"), &h)
                .into_iter()
                .map(softplus)
                .collect();
            i += 1;
        }
        h
    }

    /// Gaussian net: body then μ and clamped log σ heads.
    pub fn gaussian(&self, prefix: &str, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.body(&format!("{prefix}/body"), input);
        let mu = self.affine(&format!("{prefix}/mu"), &h);
        let ls = self
            .affine(&format!("{prefix}/log_sigma"), &h)
            .into_iter()
            .map(|v| v.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))
            .collect();
        (mu, ls)
    }

    /// Raw decoder head for x (logits / log rates / pre-sigmoid means).
    pub fn decoder_x_head(&self, input: &[f64]) -> Vec<f64> {
        let h = self.body("decoder_x/body", input);
        self.affine("decoder_x/head", &h)
    }

    /// Gaussian decoder's log σ head (only present for that likelihood).
    pub fn decoder_x_log_sigma(&self, input: &[f64]) -> Vec<f64> {
        let h = self.body("decoder_x/body", input);
        self.affine("decoder_x/log_sigma", &h)
            .into_iter()
            .map(|v| v.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))
            .collect()
    }

    pub fn classifier_logits(&self, z1: &[f64]) -> Vec<f64> {
        self.affine("classifier_y", z1)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn diag_gaussian_logpdf(z: &[f64], mu: &[f64], log_sigma: &[f64]) -> f64 {
    z.iter()
        .zip(mu)
        .zip(log_sigma)
        .map(|((zi, mi), lsi)| {
            let d = (zi - mi) / lsi.exp();
            -0.5 * LN_2PI - lsi - 0.5 * d * d
        })
        .sum()
}

pub fn kl_std_normal(mu: &[f64], log_sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(log_sigma)
        .map(|(m, ls)| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .sum()
}

pub fn bernoulli_logpdf(logits: &[f64], x: &[f64]) -> f64 {
    logits
        .iter()
        .zip(x)
        .map(|(t, xi)| -xi * softplus(-t) - (1.0 - xi) * softplus(*t))
        .sum()
}

pub fn poisson_logpdf(log_rate: &[f64], x: &[f64]) -> f64 {
    log_rate
        .iter()
        .zip(x)
        .map(|(t, xi)| {
            let mut lg = 0.0; // ln Γ(x+1) = ln x! by direct product
            let mut k = 2.0;
            while k <= *xi {
                lg += k.ln();
                k += 1.0;
            }
            xi * t - t.exp() - lg
        })
        .sum()
}

/// Standard-normal draws replicating the tape path's row-major draw order.
pub fn normal_draws(rng: &mut impl rand::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}
