//! The variational objectives: single-stage unsupervised bound, supervised
//! and label-imputing bounds for the stacked model, and the full training
//! loss with the group-matching MMD penalty.

use rand::Rng;

use crate::distributions::{
    gaussian_log_prob, kl_diag_gaussian_std, sample_reparam, DiagGaussian,
};
use crate::mmd::{mmd_penalty, RffProjection};
use crate::tensor::{Tape, Tensor, Var};

use super::{one_hot, Batch, ModelError, Objective, VfaeModel};

/// Per-batch loss pieces, evaluated for logging. Sums run over the batch.
/// For a single-stage (unsupervised) objective the `kl_z2` slot carries the
/// one latent KL and the label-related slots are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    /// Σ log p(x|z₁,s) over all rows.
    pub reconstruction: f64,
    /// Σ KL(q(z₂|z₁,y) ‖ p(z₂)), class-weighted on unlabeled rows.
    pub kl_z2: f64,
    /// Σ KL(q(y|z₁) ‖ p(y)) over unlabeled rows.
    pub kl_y: f64,
    /// α · Σ −log q(y|z₁) over labeled rows.
    pub classification: f64,
    /// β · n · group-matching penalty.
    pub mmd: f64,
}

/// Scalar loss plus everything needed for logging and cross-checks.
pub struct LossOutput {
    pub loss: Var,
    pub components: LossComponents,
    /// The z₁ sample the loss (and its MMD term) was computed on.
    pub z1_sample: Tensor,
    /// Groups absent from this batch, whose penalty contribution was zero.
    pub skipped_mmd_groups: usize,
}

struct Encoded {
    q_z1: DiagGaussian,
    z1: Var,
}

fn encode_and_sample(
    tape: &mut Tape,
    model: &VfaeModel,
    x: &Tensor,
    s: &[usize],
    rng: &mut impl Rng,
) -> Encoded {
    let q_z1 = model.encode_z1(tape, x, s);
    let z1 = sample_reparam(tape, &q_z1, rng);
    Encoded { q_z1, z1 }
}

fn gather_gaussian(tape: &mut Tape, d: &DiagGaussian, rows: &[usize]) -> DiagGaussian {
    DiagGaussian {
        mu: tape.gather_rows(d.mu, rows),
        log_sigma: tape.gather_rows(d.log_sigma, rows),
    }
}

struct SupervisedTerms {
    /// Per-row Lₛ.
    bound: Var,
    recon: Var,
    kl_z2: Var,
}

/// Terms for rows with observed labels: one z₂ sample per row,
/// Lₛ = −KL(q(z₂|z₁,y)‖p(z₂)) + log p(x|z₁,s) + log p(z₁|z₂,y) − log q(z₁|x,s).
#[allow(clippy::too_many_arguments)]
fn supervised_terms(
    tape: &mut Tape,
    model: &VfaeModel,
    z1: Var,
    log_q_z1: Var,
    x: &Tensor,
    s: &[usize],
    y: &[usize],
    rng: &mut impl Rng,
) -> SupervisedTerms {
    let y_oh = tape.constant(one_hot(y, model.config.y_classes));
    let q_z2 = model.encode_z2(tape, z1, y_oh);
    let kl_z2 = kl_diag_gaussian_std(tape, &q_z2);
    let z2 = sample_reparam(tape, &q_z2, rng);
    let p_z1 = model.decode_z1(tape, z2, y_oh);
    let log_p_z1 = gaussian_log_prob(tape, &p_z1, z1);
    let lik = model.decode_x(tape, z1, s);
    let recon = lik.log_prob(tape, x);

    let a = tape.sub(recon, kl_z2);
    let b = tape.add(a, log_p_z1);
    let bound = tape.sub(b, log_q_z1);
    SupervisedTerms { bound, recon, kl_z2 }
}

struct UnlabeledTerms {
    /// Per-row Lᵤ.
    bound: Var,
    recon: Var,
    /// Σ_c q(y=c|z₁)·KL_c per row.
    kl_z2: Var,
    kl_y: Var,
}

/// Terms for unlabeled rows: the class posterior q(y|z₁) imputes y by
/// exact enumeration, with one z₂ sample per class.
fn unlabeled_terms(
    tape: &mut Tape,
    model: &VfaeModel,
    z1: Var,
    log_q_z1: Var,
    x: &Tensor,
    s: &[usize],
    rng: &mut impl Rng,
) -> UnlabeledTerms {
    let n = x.rows();
    let classes = model.config.y_classes;
    let q_y = model.classify(tape, z1);
    let kl_y = q_y.kl_to_uniform(tape);
    let probs = q_y.probs(tape);
    let lik = model.decode_x(tape, z1, s);
    let recon = lik.log_prob(tape, x);

    let mut class_sum: Option<Var> = None;
    let mut kl_acc: Option<Var> = None;
    for c in 0..classes {
        let y_oh = tape.constant(one_hot(&vec![c; n], classes));
        let q_z2 = model.encode_z2(tape, z1, y_oh);
        let kl_z2_c = kl_diag_gaussian_std(tape, &q_z2);
        let z2 = sample_reparam(tape, &q_z2, rng);
        let p_z1 = model.decode_z1(tape, z2, y_oh);
        let log_p_z1 = gaussian_log_prob(tape, &p_z1, z1);

        // inner_c = −KL_c + log p(z₁|z₂,c) − log q(z₁|x,s)
        let a = tape.sub(log_p_z1, kl_z2_c);
        let inner = tape.sub(a, log_q_z1);
        let w = tape.select_col(probs, c);
        let weighted = tape.mul(w, inner);
        class_sum = Some(match class_sum {
            None => weighted,
            Some(acc) => tape.add(acc, weighted),
        });
        let klw = tape.mul(w, kl_z2_c);
        kl_acc = Some(match kl_acc {
            None => klw,
            Some(acc) => tape.add(acc, klw),
        });
    }
    let class_sum = class_sum.expect("at least one class");
    let a = tape.sub(recon, kl_y);
    let bound = tape.add(a, class_sum);
    UnlabeledTerms { bound, recon, kl_z2: kl_acc.expect("at least one class"), kl_y }
}

/// Per-row supervised lower bound Lₛ for fully labeled rows.
///
/// Draws one z₁ and one z₂ sample per row from `rng`.
pub fn supervised_bound(
    tape: &mut Tape,
    model: &VfaeModel,
    x: &Tensor,
    s: &[usize],
    y: &[usize],
    rng: &mut impl Rng,
) -> Result<Var, ModelError> {
    let enc = encode_and_sample(tape, model, x, s, rng);
    let log_q = gaussian_log_prob(tape, &enc.q_z1, enc.z1);
    let terms = supervised_terms(tape, model, enc.z1, log_q, x, s, y, rng);
    tape.healthy()?;
    Ok(terms.bound)
}

/// Per-row imputed lower bound Lᵤ for unlabeled rows.
pub fn unlabeled_bound(
    tape: &mut Tape,
    model: &VfaeModel,
    x: &Tensor,
    s: &[usize],
    rng: &mut impl Rng,
) -> Result<Var, ModelError> {
    let enc = encode_and_sample(tape, model, x, s, rng);
    let log_q = gaussian_log_prob(tape, &enc.q_z1, enc.z1);
    let terms = unlabeled_terms(tape, model, enc.z1, log_q, x, s, rng);
    tape.healthy()?;
    Ok(terms.bound)
}

/// Single-stage unsupervised loss: −Σₙ [E_q log p(x|z,s) − KL(q(z|x,s)‖p(z))]
/// with one reparameterized sample and the KL taken analytically.
pub fn elbo_unsupervised(
    tape: &mut Tape,
    model: &VfaeModel,
    batch: &Batch,
    rng: &mut impl Rng,
) -> Result<LossOutput, ModelError> {
    let (loss, components, z1) = unsupervised_core(tape, model, batch, rng);
    tape.healthy()?;
    Ok(LossOutput {
        loss,
        components,
        z1_sample: tape.value(z1).clone(),
        skipped_mmd_groups: 0,
    })
}

fn unsupervised_core(
    tape: &mut Tape,
    model: &VfaeModel,
    batch: &Batch,
    rng: &mut impl Rng,
) -> (Var, LossComponents, Var) {
    let enc = encode_and_sample(tape, model, &batch.x, &batch.s, rng);
    let kl = kl_diag_gaussian_std(tape, &enc.q_z1);
    let lik = model.decode_x(tape, enc.z1, &batch.s);
    let recon = lik.log_prob(tape, &batch.x);
    let per_row = tape.sub(kl, recon); // −(recon − KL)
    let loss = tape.sum(per_row, None);

    let recon_sum = tape.value(recon).iter().sum();
    let kl_sum = tape.value(kl).iter().sum();
    let components = LossComponents {
        total: tape.scalar_value(loss),
        reconstruction: recon_sum,
        kl_z2: kl_sum,
        ..Default::default()
    };
    (loss, components, enc.z1)
}

/// The full training loss over a possibly mixed batch:
///
/// −[Σ_labeled Lₛ + Σ_unlabeled Lᵤ + α·Σ_labeled log q(y|z₁)] + β·n·penalty,
///
/// where the penalty matches the marginal z₁ posteriors across s groups and
/// is scaled by the minibatch size n. With `use_label_stage` off this is the
/// unsupervised loss plus the same penalty.
pub fn vfae_loss(
    tape: &mut Tape,
    model: &VfaeModel,
    batch: &Batch,
    objective: &Objective,
    rff: Option<&RffProjection>,
    rng: &mut impl Rng,
) -> Result<LossOutput, ModelError> {
    objective.validate();
    batch.check_against(&model.config);
    if objective.mmd_active() && rff.is_none() {
        return Err(ModelError::MissingProjection);
    }

    let (core_loss, mut components, z1) = if objective.use_label_stage {
        stacked_core(tape, model, batch, objective, rng)
    } else {
        unsupervised_core(tape, model, batch, rng)
    };

    let (loss, skipped_mmd_groups) = if objective.mmd_active() {
        let outcome = mmd_penalty(
            tape,
            z1,
            &batch.s,
            model.config.s_groups,
            rff.expect("presence checked above"),
        );
        let scale = objective.beta * batch.len() as f64;
        let term = tape.mul_const(outcome.value, scale);
        components.mmd = tape.scalar_value(term);
        (tape.add(core_loss, term), outcome.skipped_groups)
    } else {
        (core_loss, 0)
    };
    components.total = tape.scalar_value(loss);

    tape.healthy()?;
    Ok(LossOutput {
        loss,
        components,
        z1_sample: tape.value(z1).clone(),
        skipped_mmd_groups,
    })
}

fn stacked_core(
    tape: &mut Tape,
    model: &VfaeModel,
    batch: &Batch,
    objective: &Objective,
    rng: &mut impl Rng,
) -> (Var, LossComponents, Var) {
    let enc = encode_and_sample(tape, model, &batch.x, &batch.s, rng);
    let labeled = batch.labeled_indices();
    let unlabeled = batch.unlabeled_indices();

    let mut neg_bound = tape.scalar(0.0);
    let mut components = LossComponents::default();

    if !labeled.is_empty() {
        let z1_l = tape.gather_rows(enc.z1, &labeled);
        let q_l = gather_gaussian(tape, &enc.q_z1, &labeled);
        let log_q_l = gaussian_log_prob(tape, &q_l, z1_l);
        let x_l = batch.x.take_rows(&labeled);
        let s_l: Vec<usize> = labeled.iter().map(|&i| batch.s[i]).collect();
        let y_l: Vec<usize> =
            labeled.iter().map(|&i| batch.y[i].expect("labeled row")).collect();
        let terms = supervised_terms(tape, model, z1_l, log_q_l, &x_l, &s_l, &y_l, rng);
        let bound_sum = tape.sum(terms.bound, None);
        neg_bound = tape.sub(neg_bound, bound_sum);
        components.reconstruction += tape.value(terms.recon).iter().sum::<f64>();
        components.kl_z2 += tape.value(terms.kl_z2).iter().sum::<f64>();

        if objective.alpha > 0.0 {
            let q_y = model.classify(tape, z1_l);
            let y_oh = tape.constant(one_hot(&y_l, model.config.y_classes));
            let log_q_y = q_y.log_prob_onehot(tape, y_oh);
            let sum_log_q = tape.sum(log_q_y, None);
            let weighted = tape.mul_const(sum_log_q, objective.alpha);
            // loss −= α Σ log q(y|z₁), i.e. += α Σ −log q
            neg_bound = tape.sub(neg_bound, weighted);
            components.classification = -objective.alpha * tape.scalar_value(sum_log_q);
        }
    }

    if !unlabeled.is_empty() {
        let z1_u = tape.gather_rows(enc.z1, &unlabeled);
        let q_u = gather_gaussian(tape, &enc.q_z1, &unlabeled);
        let log_q_u = gaussian_log_prob(tape, &q_u, z1_u);
        let x_u = batch.x.take_rows(&unlabeled);
        let s_u: Vec<usize> = unlabeled.iter().map(|&i| batch.s[i]).collect();
        let terms = unlabeled_terms(tape, model, z1_u, log_q_u, &x_u, &s_u, rng);
        let bound_sum = tape.sum(terms.bound, None);
        neg_bound = tape.sub(neg_bound, bound_sum);
        components.reconstruction += tape.value(terms.recon).iter().sum::<f64>();
        components.kl_z2 += tape.value(terms.kl_z2).iter().sum::<f64>();
        components.kl_y = tape.value(terms.kl_y).iter().sum::<f64>();
    }

    components.total = tape.scalar_value(neg_bound);
    (neg_bound, components, enc.z1)
}
