//! Central finite-difference gradient checking.
//!
//! The backward pass in this crate is written by hand against the forward
//! formulas, so numeric differentiation is a genuinely independent oracle:
//! it only ever calls the loss as a black box over the flat parameter
//! vector.

use alloc::vec::Vec;

use crate::math;

/// Default perturbation step for central differences.
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖₂ / max(‖numeric‖₂, 1e-12)`.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
}

/// Central-difference gradient of `f` around `params`.
///
/// `f` must be a pure function of the parameter vector; it is evaluated
/// `2·len` times on a scratch copy.
pub fn central_difference<F>(params: &[f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut scratch = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = scratch[i];
        scratch[i] = orig + step;
        let plus = f(&scratch);
        scratch[i] = orig - step;
        let minus = f(&scratch);
        scratch[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Compares an analytic gradient against a numeric one.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff_sq = 0.0;
    let mut ref_sq = 0.0;
    let mut max_abs = 0.0;
    let mut worst = 0;
    for i in 0..analytic.len() {
        let d = math::abs(analytic[i] - numeric[i]);
        diff_sq += d * d;
        ref_sq += numeric[i] * numeric[i];
        if d > max_abs {
            max_abs = d;
            worst = i;
        }
    }
    let denom = math::sqrt(ref_sq).max(1e-12);
    GradCheckReport {
        rel_err: math::sqrt(diff_sq) / denom,
        max_abs_err: max_abs,
        worst_index: worst,
    }
}

/// Convenience wrapper: numeric gradient of `f`, compared to `analytic`.
pub fn check<F>(params: &[f64], analytic: &[f64], step: f64, f: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_difference(params, step, f);
    compare(analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_gradient_is_recovered() {
        // f(x) = Σ i·x_i², ∇f = 2·i·x_i
        let params = vec![0.5, -1.0, 2.0, 0.25];
        let f = |p: &[f64]| p.iter().enumerate().map(|(i, &x)| i as f64 * x * x).sum();
        let analytic: Vec<f64> = params
            .iter()
            .enumerate()
            .map(|(i, &x)| 2.0 * i as f64 * x)
            .collect();
        let report = check(&params, &analytic, DEFAULT_STEP, f);
        assert!(report.rel_err < 1e-8, "rel_err={}", report.rel_err);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let params = vec![1.0, 2.0];
        let f = |p: &[f64]| p[0] * p[0] + p[1];
        let wrong = vec![2.0, 0.0]; // d/dp1 should be 1
        let report = check(&params, &wrong, DEFAULT_STEP, f);
        assert!(report.rel_err > 0.1);
        assert_eq!(report.worst_index, 1);
    }
}
