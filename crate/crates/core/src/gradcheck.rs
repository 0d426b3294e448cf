//! Central finite-difference gradient checking.

/// Denominator floor for the relative error so that components whose true
/// gradient is zero are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient returned by `f` at `x` with central
/// differences and returns the largest relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
///
/// `f` returns the scalar value and its gradient with respect to `x`.
pub fn grad_check<F>(mut f: F, x: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, alloc::vec::Vec<f64>),
{
    grad_check_report(&mut f, x, eps).max_rel_error
}

/// Worst coordinate found by [`grad_check_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn grad_check_report<F>(f: &mut F, x: &[f64], eps: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, alloc::vec::Vec<f64>),
{
    assert!(
        (1e-7..=1e-3).contains(&eps),
        "finite-difference step {eps} outside [1e-7, 1e-3]"
    );
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length");
    let mut point = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let (plus, _) = f(&point);
        point[i] = orig - eps;
        let (minus, _) = f(&point);
        point[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        let err = (a - numeric).abs() / denom;
        if err > report.max_rel_error || err.is_nan() {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    report
}
