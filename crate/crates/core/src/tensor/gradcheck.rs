//! Central finite-difference verification of analytic gradients.
//!
//! The checker only ever calls the supplied forward closure, so it stays
//! independent of the backward pass it is used to validate.

use crate::tensor::Tensor4;

/// Outcome of probing one parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub parameter_name: String,
    pub probe_count: usize,
    pub max_relative_error: f64,
}

/// Central difference of `f` at coordinate `idx` of `at`.
pub fn central_diff<F>(f: F, at: &Tensor4, idx: usize, step: f64) -> f64
where
    F: Fn(&Tensor4) -> f64,
{
    let mut plus = at.clone();
    plus.data_mut()[idx] += step;
    let mut minus = at.clone();
    minus.data_mut()[idx] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// Relative error with an absolute floor, so near-zero gradient pairs
/// are compared absolutely at the 1e-3 scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Probe `indices` of one parameter: compares the analytic gradient at
/// each index against a central difference of `f`.
pub fn check_indices<F>(
    name: &str,
    f: F,
    at: &Tensor4,
    analytic: &Tensor4,
    indices: &[usize],
    step: f64,
) -> GradCheckReport
where
    F: Fn(&Tensor4) -> f64,
{
    let mut max_rel = 0.0f64;
    for &idx in indices {
        let numeric = central_diff(&f, at, idx, step);
        let rel = relative_error(analytic.data()[idx], numeric);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    GradCheckReport {
        parameter_name: name.to_string(),
        probe_count: indices.len(),
        max_relative_error: max_rel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn central_diff_matches_quadratic_slope() {
        let at = Tensor4::from_vec(Shape4::new(1, 1, 1, 2), vec![1.5, -0.5]).unwrap();
        let f = |t: &Tensor4| t.data().iter().map(|v| v * v).sum::<f64>();
        let d0 = central_diff(f, &at, 0, 1e-5);
        let d1 = central_diff(f, &at, 1, 1e-5);
        assert!((d0 - 3.0).abs() < 1e-9);
        assert!((d1 + 1.0).abs() < 1e-9);
    }

    #[test]
    fn report_carries_max_error() {
        let at = Tensor4::from_vec(Shape4::new(1, 1, 1, 2), vec![2.0, 3.0]).unwrap();
        let f = |t: &Tensor4| t.data().iter().map(|v| v * v).sum::<f64>();
        // correct gradient on idx 0, corrupted on idx 1
        let analytic = Tensor4::from_vec(Shape4::new(1, 1, 1, 2), vec![4.0, 7.0]).unwrap();
        let report = check_indices("p", f, &at, &analytic, &[0, 1], 1e-5);
        assert_eq!(report.probe_count, 2);
        assert!(report.max_relative_error > 0.1);
    }
}
