use super::params::ParamSet;
use crate::error::Result;

pub const DEFAULT_EPS: f64 = 1e-4;

/// Relative error with the denominator floored at 1e-8.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central finite differences for every
/// scalar parameter and returns the largest relative error.
///
/// `objective` must return the loss and leave the analytic gradient in the
/// parameter set's gradient buffers (it is expected to zero them first).
pub fn grad_check<F>(params: &mut ParamSet, eps: f64, mut objective: F) -> Result<f64>
where
    F: FnMut(&mut ParamSet) -> Result<f64>,
{
    params.zero_grad();
    objective(params)?;
    let analytic: Vec<Vec<f64>> = (0..params.len()).map(|i| params.grad_data(i).to_vec()).collect();

    let mut worst = 0.0f64;
    for (p, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = params.value_data_mut(p)[j];
            params.value_data_mut(p)[j] = orig + eps;
            let plus = objective(params)?;
            params.value_data_mut(p)[j] = orig - eps;
            let minus = objective(params)?;
            params.value_data_mut(p)[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    params.zero_grad();
    Ok(worst)
}
