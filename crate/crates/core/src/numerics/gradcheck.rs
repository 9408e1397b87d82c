use crate::error::{Error, Result};
use crate::numerics::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub components: usize,
}

/// Compares the analytic gradients currently held in `params` against central
/// finite differences of `loss_fn`, component by component.
///
/// The relative error of a component is `|a − n| / max(|a|, |n|, 1e-8)`; the
/// report carries the maximum. Parameter values are restored exactly.
pub fn grad_check<F>(params: &mut ParamStore, mut loss_fn: F, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let analytic: Vec<Vec<f64>> = params.grads().iter().map(|g| g.data().to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        components: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for k in 0..params.value(id).len() {
            let original = params.value(id).data()[k];

            params.value_mut(id).data_mut()[k] = original + eps;
            let plus = loss_fn(params)?;
            params.value_mut(id).data_mut()[k] = original - eps;
            let minus = loss_fn(params)?;
            params.value_mut(id).data_mut()[k] = original;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while perturbing {}[{k}]",
                    params.name(id)
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.index()][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.components += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), k));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
