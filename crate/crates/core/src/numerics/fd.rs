use crate::error::{Error, Result};

/// Default central-difference step for unit-scaled parameters.
pub const FD_STEP: f64 = 1e-6;

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient<F>(objective: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = objective(&probe);
        probe[i] = x[i] - step;
        let minus = objective(&probe);
        probe[i] = x[i];
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFiniteObjective { index: i });
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
