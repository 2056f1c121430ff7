//! Central finite-difference gradient checking for losses built on the tape.
//!
//! The loss closure is re-evaluated at perturbed parameter values, so any
//! sampling inside it must be driven by a seed the closure re-derives on each
//! call (same draws at every evaluation point).

use crate::tensor::{ParamSet, TensorError};

/// Worst deviation found by a gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// max over entries of |ad − fd| / max(1, |fd|)
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare tape gradients of `loss` against central differences with the
/// given `step`, over every entry of every parameter.
///
/// `loss` must populate gradients exactly once per call (it runs forward and
/// backward itself and returns the loss value). `params_of` locates the
/// parameter set inside whatever owns it — a bare [`ParamSet`], a model, a
/// probe — so the closure can keep borrowing the owner.
pub fn check_gradients_in<M>(
    target: &mut M,
    params_of: impl Fn(&mut M) -> &mut ParamSet,
    step: f64,
    mut loss: impl FnMut(&mut M) -> Result<f64, TensorError>,
) -> Result<GradReport, TensorError> {
    params_of(target).zero_grad();
    loss(target)?;
    let ps = params_of(target);
    let ids: Vec<_> = ps.ids().collect();
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| ps.grad(id).to_vec()).collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (pi, &id) in ids.iter().enumerate() {
        for j in 0..params_of(target).value(id).numel() {
            let ps = params_of(target);
            let orig = ps.value(id).data()[j];
            ps.value_mut(id).data_mut()[j] = orig + step;
            ps.zero_grad();
            let up = loss(target)?;
            let ps = params_of(target);
            ps.value_mut(id).data_mut()[j] = orig - step;
            ps.zero_grad();
            let down = loss(target)?;
            params_of(target).value_mut(id).data_mut()[j] = orig;

            let fd = (up - down) / (2.0 * step);
            let ad = analytic[pi][j];
            let rel = (ad - fd).abs() / fd.abs().max(1.0);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = params_of(target).name(id).to_string();
                report.worst_index = j;
                report.analytic = ad;
                report.numeric = fd;
            }
        }
    }
    // Leave the analytic gradients of the unperturbed point in place.
    params_of(target).zero_grad();
    loss(target)?;
    Ok(report)
}

/// [`check_gradients_in`] specialized to a bare parameter set.
pub fn check_gradients(
    params: &mut ParamSet,
    step: f64,
    loss: impl FnMut(&mut ParamSet) -> Result<f64, TensorError>,
) -> Result<GradReport, TensorError> {
    check_gradients_in(params, |p| p, step, loss)
}
