//! Distributions used by the variational bounds: reparameterized diagonal
//! Gaussians, categoricals over class logits, and the three data likelihoods.
//!
//! Everything here is a pure function over tape variables; per-row outputs
//! have shape `[batch]` so bounds can be assembled row-wise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, Var};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Bound applied to every log-σ head before use; raw `exp` heads can
/// overflow early in training, and σ ∈ [e⁻⁷, e⁷] never binds at convergence.
pub const LOG_SIGMA_CLAMP: f64 = 7.0;

/// Diagonal Gaussian with mean and (clamped) log standard deviation heads,
/// both `[batch × d]`.
#[derive(Clone, Copy)]
pub struct DiagGaussian {
    pub mu: Var,
    pub log_sigma: Var,
}

impl DiagGaussian {
    /// Clamps `log_sigma` on construction so every consumer sees the
    /// bounded value.
    pub fn new(tape: &mut Tape, mu: Var, log_sigma: Var) -> Self {
        assert_eq!(
            tape.value(mu).shape(),
            tape.value(log_sigma).shape(),
            "DiagGaussian: mu and log_sigma shapes differ"
        );
        let clamped = tape.clamp(log_sigma, -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP);
        DiagGaussian { mu, log_sigma: clamped }
    }

    pub fn batch(&self, tape: &Tape) -> usize {
        tape.value(self.mu).rows()
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.value(self.mu).cols()
    }
}

/// z = μ + e^{logσ} ⊙ ε with ε ~ N(0, I); gradients flow into both heads.
pub fn sample_reparam(tape: &mut Tape, d: &DiagGaussian, rng: &mut impl Rng) -> Var {
    let shape = tape.value(d.mu).shape().to_vec();
    let n = shape.iter().product();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let eps = tape.constant(Tensor::from_vec(shape, eps));
    let sigma = tape.exp(d.log_sigma);
    let scaled = tape.mul(sigma, eps);
    tape.add(d.mu, scaled)
}

/// Per-row KL(q ‖ N(0, I)) = ½ Σᵢ (μᵢ² + σᵢ² − 1 − 2 logσᵢ).
pub fn kl_diag_gaussian_std(tape: &mut Tape, d: &DiagGaussian) -> Var {
    let mu_sq = tape.square(d.mu);
    let two_ls = tape.mul_const(d.log_sigma, 2.0);
    let sigma_sq = tape.exp(two_ls);
    let s1 = tape.add(mu_sq, sigma_sq);
    let s2 = tape.sub(s1, two_ls);
    let s3 = tape.add_const(s2, -1.0);
    let row = tape.sum(s3, Some(1));
    tape.mul_const(row, 0.5)
}

/// Per-row log N(z; μ, σ) for an observed point `z` of matching shape.
pub fn gaussian_log_prob(tape: &mut Tape, d: &DiagGaussian, z: Var) -> Var {
    assert_eq!(
        tape.value(z).shape(),
        tape.value(d.mu).shape(),
        "gaussian_log_prob: point and distribution shapes differ"
    );
    let diff = tape.sub(z, d.mu);
    let neg_ls = tape.neg(d.log_sigma);
    let inv_sigma = tape.exp(neg_ls);
    let standardized = tape.mul(diff, inv_sigma);
    let sq = tape.square(standardized);
    let sq_sum = tape.sum(sq, Some(1));
    let ls_sum = tape.sum(d.log_sigma, Some(1));
    let dim = tape.value(d.mu).cols() as f64;
    let half_sq = tape.mul_const(sq_sum, -0.5);
    let t = tape.sub(half_sq, ls_sum);
    tape.add_const(t, -0.5 * dim * LN_2PI)
}

/// Categorical posterior/prior over class logits `[batch × C]`.
#[derive(Clone, Copy)]
pub struct CategoricalDist {
    pub logits: Var,
}

impl CategoricalDist {
    pub fn new(logits: Var) -> Self {
        CategoricalDist { logits }
    }

    pub fn classes(&self, tape: &Tape) -> usize {
        tape.value(self.logits).cols()
    }

    /// Row-normalized log-probabilities `[batch × C]` (overflow-safe).
    pub fn log_probs(&self, tape: &mut Tape) -> Var {
        let c = self.classes(tape);
        let lse = tape.logsumexp(self.logits, Some(1));
        let full = tape.broadcast_col(lse, c);
        tape.sub(self.logits, full)
    }

    /// Row-normalized probabilities `[batch × C]`.
    pub fn probs(&self, tape: &mut Tape) -> Var {
        let lp = self.log_probs(tape);
        tape.exp(lp)
    }

    /// Per-row Σ_c π_c (log π_c − log(1/C)): KL to the uniform prior,
    /// equal to log C minus the entropy.
    pub fn kl_to_uniform(&self, tape: &mut Tape) -> Var {
        let c = self.classes(tape) as f64;
        let lp = self.log_probs(tape);
        let p = tape.exp(lp);
        let plogp = tape.mul(p, lp);
        let ent = tape.sum(plogp, Some(1));
        tape.add_const(ent, c.ln())
    }

    /// Per-row log π at observed one-hot labels `[batch × C]`.
    pub fn log_prob_onehot(&self, tape: &mut Tape, onehot: Var) -> Var {
        let lp = self.log_probs(tape);
        let picked = tape.mul(lp, onehot);
        tape.sum(picked, Some(1))
    }
}

/// Which decoder family models the observed features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    /// Binary features; decoder head gives Bernoulli logits.
    Bernoulli,
    /// Count features; decoder head gives log rates (λ = e^t > 0).
    Poisson,
    /// Intensities in [0,1]; mean squashed by a sigmoid, plus a log-σ head.
    GaussianSigmoidMean,
}

impl std::fmt::Display for LikelihoodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LikelihoodKind::Bernoulli => write!(f, "bernoulli"),
            LikelihoodKind::Poisson => write!(f, "poisson"),
            LikelihoodKind::GaussianSigmoidMean => write!(f, "gaussian_sigmoid_mean"),
        }
    }
}

/// Decoder output distribution over the data, parameterized by raw heads.
pub enum Likelihood {
    Bernoulli { logits: Var },
    Poisson { log_rate: Var },
    GaussianSigmoidMean { gaussian: DiagGaussian },
}

impl Likelihood {
    pub fn kind(&self) -> LikelihoodKind {
        match self {
            Likelihood::Bernoulli { .. } => LikelihoodKind::Bernoulli,
            Likelihood::Poisson { .. } => LikelihoodKind::Poisson,
            Likelihood::GaussianSigmoidMean { .. } => LikelihoodKind::GaussianSigmoidMean,
        }
    }

    /// Per-row sum of coordinate log-densities at observed data `x`
    /// (a constant `[batch × d]` tensor).
    ///
    /// Support is validated per kind: binary for Bernoulli, nonnegative
    /// integers for Poisson. Violations panic naming the coordinate.
    pub fn log_prob(&self, tape: &mut Tape, x: &Tensor) -> Var {
        match self {
            Likelihood::Bernoulli { logits } => {
                check_support(x, "bernoulli", |v| v == 0.0 || v == 1.0);
                // log π = −softplus(−t) and log(1−π) = −softplus(t), so the
                // density never evaluates log of a saturated sigmoid.
                let xc = tape.constant(x.clone());
                let neg_t = tape.neg(*logits);
                let sp_neg = tape.softplus(neg_t);
                let sp_pos = tape.softplus(*logits);
                let on = tape.mul(xc, sp_neg);
                let x_minus_one = tape.add_const(xc, -1.0); // ∈ {−1, 0}
                let off = tape.mul(x_minus_one, sp_pos); // −(1−x)·softplus(t)
                let neg_on = tape.neg(on);
                let per_coord = tape.add(neg_on, off);
                tape.sum(per_coord, Some(1))
            }
            Likelihood::Poisson { log_rate } => {
                check_support(x, "poisson", |v| v >= 0.0 && v.fract() == 0.0);
                // x·log λ − λ − log Γ(x+1), with log λ the raw head
                let xc = tape.constant(x.clone());
                let x_logl = tape.mul(xc, *log_rate);
                let lambda = tape.exp(*log_rate);
                let t = tape.sub(x_logl, lambda);
                let lgamma: Vec<f64> = x.iter().map(|&v| ln_gamma(v + 1.0)).collect();
                let lg = tape.constant(Tensor::from_vec(x.shape().to_vec(), lgamma));
                let per_coord = tape.sub(t, lg);
                tape.sum(per_coord, Some(1))
            }
            Likelihood::GaussianSigmoidMean { gaussian } => {
                let xc = tape.constant(x.clone());
                gaussian_log_prob(tape, gaussian, xc)
            }
        }
    }
}

fn check_support(x: &Tensor, kind: &str, ok: impl Fn(f64) -> bool) {
    if let Some((i, bad)) = x.iter().enumerate().find(|(_, v)| !ok(**v)) {
        panic!("{kind} likelihood: value {bad} at flat coordinate {i} is outside the support");
    }
}

/// log Γ(x): exact factorial summation for small integer arguments, Stirling
/// series (with argument shift) otherwise. Accurate to ~1e-12 on the count
/// arguments it is used for.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma: argument must be positive, got {x}");
    if x.fract() == 0.0 && x <= 21.0 {
        // Γ(n) = (n−1)!
        let mut acc = 0.0;
        let mut k = 2.0;
        while k < x {
            acc += k.ln();
            k += 1.0;
        }
        return acc;
    }
    // Push the argument above 10, then apply the Stirling series.
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift -= z.ln();
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series =
        inv / 12.0 - inv * inv2 / 360.0 + inv * inv2 * inv2 / 1260.0
            - inv * inv2 * inv2 * inv2 / 1680.0;
    shift + (z - 0.5) * z.ln() - z + 0.5 * LN_2PI + series
}
