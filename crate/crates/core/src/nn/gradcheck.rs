//! Central-difference verification of analytic gradients.

use super::Tensor;

/// Worst disagreement found by a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// max over entries of `|analytic - numeric| / max(1, |numeric|)`
    pub max_relative_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares `analytic` against central differences of `loss` for every entry
/// of every parameter tensor. `loss` is evaluated with the perturbed params.
///
/// `stride` > 1 checks every `stride`-th entry only.
pub fn check_gradients(
    params: &mut [Tensor],
    analytic: &[Tensor],
    epsilon: f64,
    stride: usize,
    mut loss: impl FnMut(&[Tensor]) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_param: 0,
        worst_index: 0,
    };
    for p in 0..params.len() {
        for i in (0..params[p].len()).step_by(stride.max(1)) {
            let original = params[p].data()[i];
            params[p].data_mut()[i] = original + epsilon;
            let up = loss(params);
            params[p].data_mut()[i] = original - epsilon;
            let down = loss(params);
            params[p].data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = (analytic[p].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = p;
                report.worst_index = i;
            }
        }
    }
    report
}
