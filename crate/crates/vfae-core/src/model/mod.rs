//! The stacked generative/inference networks and their variational
//! objectives.
//!
//! Five components share one parameter registry and are optimized jointly:
//! an encoder q(z₁|x,s), a linear classifier head q(y|z₁), a second-stage
//! encoder q(z₂|z₁,y), a prior network p(z₁|z₂,y) and a data decoder
//! p(x|z₁,s).

mod bounds;
mod checkpoint;
mod infer;

pub use bounds::{
    elbo_unsupervised, supervised_bound, unlabeled_bound, vfae_loss, LossComponents, LossOutput,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_BUNDLE_MAGIC};
pub use infer::{embed, predict, SampleMode};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DiagGaussian, Likelihood, LikelihoodKind};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("objective uses the MMD penalty but no feature projection was supplied")]
    MissingProjection,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hidden-layer activation for all network bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Smooth default; keeps finite-difference gradient checks clean.
    #[default]
    Softplus,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Softplus => tape.softplus(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Relu => tape.relu(v),
            Activation::Sigmoid => tape.sigmoid(v),
        }
    }
}

/// Architecture of one model; serialized alongside every checkpoint so that
/// evaluation is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub x_dim: usize,
    /// Number of states of the sensitive/nuisance factor (one-hot width).
    pub s_groups: usize,
    /// Number of label classes.
    pub y_classes: usize,
    pub z1_dim: usize,
    pub z2_dim: usize,
    pub encoder_z1_hidden: Vec<usize>,
    pub encoder_z2_hidden: Vec<usize>,
    pub decoder_z1_hidden: Vec<usize>,
    pub decoder_x_hidden: Vec<usize>,
    pub likelihood: LikelihoodKind,
    #[serde(default)]
    pub activation: Activation,
    /// When false the one-hot s input is zeroed everywhere (ablation:
    /// representations learned "without s"), leaving dimensions unchanged.
    #[serde(default = "default_true")]
    pub use_s: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (what, v) in [
            ("x_dim", self.x_dim),
            ("s_groups", self.s_groups),
            ("y_classes", self.y_classes),
            ("z1_dim", self.z1_dim),
            ("z2_dim", self.z2_dim),
        ] {
            if v == 0 {
                problems.push(format!("{what} must be positive"));
            }
        }
        if self.s_groups < 2 {
            problems.push("s_groups must be at least 2".into());
        }
        problems
    }
}

/// Loss-side weights and component toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    /// Scale of the supervised classification term.
    pub alpha: f64,
    /// Scale of the MMD penalty (further multiplied by the minibatch size).
    pub beta: f64,
    #[serde(default = "default_true")]
    pub use_mmd: bool,
    /// When false the objective collapses to the single-stage unsupervised
    /// bound: labels, the classifier and the z₂ machinery are ignored.
    #[serde(default = "default_true")]
    pub use_label_stage: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Objective { alpha: 1.0, beta: 1.0, use_mmd: true, use_label_stage: true }
    }
}

impl Objective {
    pub fn validate(&self) {
        assert!(self.alpha >= 0.0, "alpha must be nonnegative, got {}", self.alpha);
        assert!(self.beta >= 0.0, "beta must be nonnegative, got {}", self.beta);
    }

    pub fn mmd_active(&self) -> bool {
        self.use_mmd && self.beta > 0.0
    }
}

/// One minibatch: design matrix, sensitive factor per row, and labels where
/// observed (the mask is carried by the `Option`s, never a sentinel class).
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub s: Vec<usize>,
    pub y: Vec<Option<usize>>,
}

impl Batch {
    pub fn new(x: Tensor, s: Vec<usize>, y: Vec<Option<usize>>) -> Self {
        assert_eq!(x.rows(), s.len(), "batch: {} rows vs {} s labels", x.rows(), s.len());
        assert_eq!(x.rows(), y.len(), "batch: {} rows vs {} y entries", x.rows(), y.len());
        Batch { x, s, y }
    }

    /// Fully labeled batch.
    pub fn labeled(x: Tensor, s: Vec<usize>, y: Vec<usize>) -> Self {
        let y = y.into_iter().map(Some).collect();
        Batch::new(x, s, y)
    }

    /// Batch with no labels at all.
    pub fn unlabeled(x: Tensor, s: Vec<usize>) -> Self {
        let y = vec![None; s.len()];
        Batch::new(x, s, y)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i].is_some()).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i].is_none()).collect()
    }

    pub fn labeled_mask(&self) -> Vec<bool> {
        self.y.iter().map(|y| y.is_some()).collect()
    }

    fn check_against(&self, config: &ModelConfig) {
        assert_eq!(
            self.x.cols(),
            config.x_dim,
            "batch has {} feature columns, model expects {}",
            self.x.cols(),
            config.x_dim
        );
        assert!(
            self.s.iter().all(|&s| s < config.s_groups),
            "batch s label outside 0..{}",
            config.s_groups
        );
        assert!(
            self.y.iter().flatten().all(|&y| y < config.y_classes),
            "batch y label outside 0..{}",
            config.y_classes
        );
    }
}

/// One-hot encode integer labels into an [n × classes] matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < classes, "label {l} out of range for {classes} classes");
        data[i * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

// ── Network building blocks ──────────────────────────────────────────

/// Initial scale of log-σ heads: near-zero weights start every Gaussian at
/// σ ≈ 1, keeping the density terms of freshly initialized stacked models
/// bounded.
const LOG_SIGMA_INIT_SCALE: f64 = 0.01;

struct LinearHead {
    w: ParamId,
    b: ParamId,
}

impl LinearHead {
    fn new(ps: &mut ParamSet, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self::scaled(ps, prefix, in_dim, out_dim, 1.0, rng)
    }

    fn scaled(
        ps: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = glorot(in_dim, out_dim, rng);
        if scale != 1.0 {
            w.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let w = ps.add(&format!("{prefix}/w"), w);
        let b = ps.add(&format!("{prefix}/b"), Tensor::zeros(vec![out_dim]));
        LinearHead { w, b }
    }

    fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let w = tape.param(ps, self.w);
        let b = tape.param(ps, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Multilayer perceptron body: affine + activation per hidden layer. Heads
/// are attached separately so μ and log σ stay linear.
pub(crate) struct Mlp {
    layers: Vec<LinearHead>,
    activation: Activation,
}

impl Mlp {
    fn new(
        ps: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(LinearHead::new(ps, &format!("{prefix}/layer{i}"), prev, h, rng));
            prev = h;
        }
        Mlp { layers, activation }
    }

    fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let mut h = x;
        for layer in &self.layers {
            let a = layer.forward(tape, ps, h);
            h = self.activation.apply(tape, a);
        }
        h
    }
}

/// MLP body plus linear μ and log σ heads; log σ is clamped downstream by
/// [`DiagGaussian::new`].
struct GaussianNet {
    body: Mlp,
    mu: LinearHead,
    log_sigma: LinearHead,
}

impl GaussianNet {
    fn new(
        ps: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let body = Mlp::new(ps, &format!("{prefix}/body"), in_dim, hidden, activation, rng);
        let body_out = hidden.last().copied().unwrap_or(in_dim);
        let mu = LinearHead::new(ps, &format!("{prefix}/mu"), body_out, out_dim, rng);
        let log_sigma = LinearHead::scaled(
            ps,
            &format!("{prefix}/log_sigma"),
            body_out,
            out_dim,
            LOG_SIGMA_INIT_SCALE,
            rng,
        );
        GaussianNet { body, mu, log_sigma }
    }

    fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> DiagGaussian {
        let h = self.body.forward(tape, ps, x);
        let mu = self.mu.forward(tape, ps, h);
        let ls = self.log_sigma.forward(tape, ps, h);
        DiagGaussian::new(tape, mu, ls)
    }
}

/// Decoder over the data: MLP body plus likelihood-specific heads.
struct DecoderX {
    body: Mlp,
    head: LinearHead,
    log_sigma: Option<LinearHead>,
    kind: LikelihoodKind,
}

impl DecoderX {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        hidden: &[usize],
        x_dim: usize,
        kind: LikelihoodKind,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let body = Mlp::new(ps, &format!("{prefix}/body"), in_dim, hidden, activation, rng);
        let body_out = hidden.last().copied().unwrap_or(in_dim);
        let head = LinearHead::new(ps, &format!("{prefix}/head"), body_out, x_dim, rng);
        let log_sigma = match kind {
            LikelihoodKind::GaussianSigmoidMean => Some(LinearHead::scaled(
                ps,
                &format!("{prefix}/log_sigma"),
                body_out,
                x_dim,
                LOG_SIGMA_INIT_SCALE,
                rng,
            )),
            _ => None,
        };
        DecoderX { body, head, log_sigma, kind }
    }

    fn forward(&self, tape: &mut Tape, ps: &ParamSet, input: Var) -> Likelihood {
        let h = self.body.forward(tape, ps, input);
        let raw = self.head.forward(tape, ps, h);
        match self.kind {
            LikelihoodKind::Bernoulli => Likelihood::Bernoulli { logits: raw },
            LikelihoodKind::Poisson => Likelihood::Poisson { log_rate: raw },
            LikelihoodKind::GaussianSigmoidMean => {
                let mu = tape.sigmoid(raw);
                let ls = self
                    .log_sigma
                    .as_ref()
                    .expect("gaussian decoder has a log_sigma head")
                    .forward(tape, ps, h);
                Likelihood::GaussianSigmoidMean { gaussian: DiagGaussian::new(tape, mu, ls) }
            }
        }
    }
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
}

// ── The model ────────────────────────────────────────────────────────

/// All encoder and decoder weights of one stacked model, in a single
/// jointly optimized parameter registry.
pub struct VfaeModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    encoder_z1: GaussianNet,
    classifier_y: LinearHead,
    encoder_z2: GaussianNet,
    decoder_z1: GaussianNet,
    decoder_x: DecoderX,
}

impl VfaeModel {
    /// Build a freshly initialized model (scaled-uniform fan-based init,
    /// pinned by `seed`).
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let problems = config.validate();
        assert!(problems.is_empty(), "invalid model config: {}", problems.join("; "));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let act = config.activation;
        let encoder_z1 = GaussianNet::new(
            &mut ps,
            "encoder_z1",
            config.x_dim + config.s_groups,
            &config.encoder_z1_hidden,
            config.z1_dim,
            act,
            &mut rng,
        );
        let classifier_y = LinearHead::new(
            &mut ps,
            "classifier_y",
            config.z1_dim,
            config.y_classes,
            &mut rng,
        );
        let encoder_z2 = GaussianNet::new(
            &mut ps,
            "encoder_z2",
            config.z1_dim + config.y_classes,
            &config.encoder_z2_hidden,
            config.z2_dim,
            act,
            &mut rng,
        );
        let decoder_z1 = GaussianNet::new(
            &mut ps,
            "decoder_z1",
            config.z2_dim + config.y_classes,
            &config.decoder_z1_hidden,
            config.z1_dim,
            act,
            &mut rng,
        );
        let decoder_x = DecoderX::new(
            &mut ps,
            "decoder_x",
            config.z1_dim + config.s_groups,
            &config.decoder_x_hidden,
            config.x_dim,
            config.likelihood,
            act,
            &mut rng,
        );
        VfaeModel { config, params: ps, encoder_z1, classifier_y, encoder_z2, decoder_z1, decoder_x }
    }

    /// One-hot s rows, zeroed when the model is configured without s.
    fn s_input(&self, s: &[usize]) -> Tensor {
        if self.config.use_s {
            one_hot(s, self.config.s_groups)
        } else {
            Tensor::zeros(vec![s.len(), self.config.s_groups])
        }
    }

    fn encode_z1(&self, tape: &mut Tape, x: &Tensor, s: &[usize]) -> DiagGaussian {
        let s_oh = self.s_input(s);
        let xv = tape.constant(x.clone());
        let sv = tape.constant(s_oh);
        let joint = tape.concat_cols(&[xv, sv]);
        self.encoder_z1.forward(tape, &self.params, joint)
    }

    fn classify(&self, tape: &mut Tape, z1: Var) -> crate::distributions::CategoricalDist {
        let logits = self.classifier_y.forward(tape, &self.params, z1);
        crate::distributions::CategoricalDist::new(logits)
    }

    fn encode_z2(&self, tape: &mut Tape, z1: Var, y_onehot: Var) -> DiagGaussian {
        let joint = tape.concat_cols(&[z1, y_onehot]);
        self.encoder_z2.forward(tape, &self.params, joint)
    }

    fn decode_z1(&self, tape: &mut Tape, z2: Var, y_onehot: Var) -> DiagGaussian {
        let joint = tape.concat_cols(&[z2, y_onehot]);
        self.decoder_z1.forward(tape, &self.params, joint)
    }

    fn decode_x(&self, tape: &mut Tape, z1: Var, s: &[usize]) -> Likelihood {
        let s_oh = tape.constant(self.s_input(s));
        let joint = tape.concat_cols(&[z1, s_oh]);
        self.decoder_x.forward(tape, &self.params, joint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config(likelihood: LikelihoodKind) -> ModelConfig {
        ModelConfig {
            x_dim: 4,
            s_groups: 2,
            y_classes: 2,
            z1_dim: 3,
            z2_dim: 2,
            encoder_z1_hidden: vec![6],
            encoder_z2_hidden: vec![5],
            decoder_z1_hidden: vec![5],
            decoder_x_hidden: vec![6],
            likelihood,
            activation: Activation::Softplus,
            use_s: true,
        }
    }

    #[test]
    fn model_builds_and_registers_all_components() {
        let m = VfaeModel::new(tiny_config(LikelihoodKind::Bernoulli), 0);
        let names: Vec<&str> = m.params.ids().map(|id| m.params.name(id)).collect();
        for prefix in ["encoder_z1", "classifier_y", "encoder_z2", "decoder_z1", "decoder_x"] {
            assert!(
                names.iter().any(|n| n.starts_with(prefix)),
                "missing parameters for {prefix}"
            );
        }
    }

    #[test]
    fn init_is_reproducible_under_seed() {
        let a = VfaeModel::new(tiny_config(LikelihoodKind::Bernoulli), 9);
        let b = VfaeModel::new(tiny_config(LikelihoodKind::Bernoulli), 9);
        for (ia, ib) in a.params.ids().zip(b.params.ids()) {
            assert_eq!(a.params.value(ia).data(), b.params.value(ib).data());
        }
    }

    #[test]
    fn one_hot_layout() {
        let oh = one_hot(&[1, 0, 2], 3);
        assert_eq!(oh.data(), &[0., 1., 0., 1., 0., 0., 0., 0., 1.]);
    }

    #[test]
    fn disabled_s_input_is_zeroed() {
        let mut cfg = tiny_config(LikelihoodKind::Bernoulli);
        cfg.use_s = false;
        let m = VfaeModel::new(cfg, 1);
        let si = m.s_input(&[0, 1]);
        assert!(si.iter().all(|v| *v == 0.0));
    }
}
