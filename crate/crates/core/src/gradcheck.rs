//! Central-finite-difference gradient checking.
//!
//! This is the independent oracle for every analytic gradient in
//! [`crate::loss`]: it only ever calls [`loss_value`], never the gradient
//! path. The perturbation actually applied to an f32 parameter is measured
//! after rounding, so the divided difference uses the true step size.

use crate::error::Result;
use crate::loss::{loss_value, LossSpec};
use crate::params::ParameterVector;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_TOL: f64 = 1e-6;

/// Numerical gradient of the loss at `params`, entry by entry.
pub fn finite_difference_gradient(
    params: &ParameterVector,
    spec: &LossSpec<'_>,
) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(params.len());
    let mut work = params.clone();
    for i in 0..params.len() {
        let w = params.values[i] as f64;
        let up = (w + FD_STEP) as f32;
        let down = (w - FD_STEP) as f32;

        work.values[i] = up;
        let loss_up = loss_value(&work, spec)?;
        work.values[i] = down;
        let loss_down = loss_value(&work, spec)?;
        work.values[i] = params.values[i];

        let actual_step = up as f64 - down as f64;
        grad.push((loss_up - loss_down) / actual_step);
    }
    Ok(grad)
}

/// Worst mismatch between an analytic gradient and its finite-difference
/// estimate, as (index, analytic, numeric, excess over tolerance).
#[derive(Debug, Clone, Copy)]
pub struct GradMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub excess: f64,
}

/// Compares entrywise under the "relative or absolute" rule: a pair passes
/// if |a - n| <= max(FD_ABS_TOL, FD_REL_TOL * max(|a|, |n|)).
pub fn compare_gradients(analytic: &[f32], numeric: &[f64]) -> Option<GradMismatch> {
    let mut worst: Option<GradMismatch> = None;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let a = a as f64;
        let diff = (a - n).abs();
        let allowed = FD_ABS_TOL.max(FD_REL_TOL * a.abs().max(n.abs()));
        let excess = diff - allowed;
        if excess > 0.0 && worst.map_or(true, |w| excess > w.excess) {
            worst = Some(GradMismatch {
                index: i,
                analytic: a,
                numeric: n,
                excess,
            });
        }
    }
    worst
}

/// Runs the full check; Ok(()) when every entry is within tolerance.
pub fn assert_gradients_match(params: &ParameterVector, spec: &LossSpec<'_>) -> Result<()> {
    let (_, analytic) = crate::loss::loss_and_grad(params, spec)?;
    let numeric = finite_difference_gradient(params, spec)?;
    if let Some(m) = compare_gradients(&analytic.values, &numeric) {
        return Err(crate::error::Error::InvalidArgument(format!(
            "gradient mismatch at index {}: analytic {} vs numeric {} (excess {:.3e})",
            m.index, m.analytic, m.numeric, m.excess
        )));
    }
    Ok(())
}
