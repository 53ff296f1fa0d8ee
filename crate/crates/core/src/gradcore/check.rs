use super::ops::Param;

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Magnitude floor in the relative-error denominator, so entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// A differentiable piece of a model with its input captured.
pub trait GradFragment {
    fn params_mut(&mut self) -> Vec<&mut Param>;
    /// Forward pass only.
    fn loss(&self) -> f64;
    /// Forward and backward pass, accumulating into every `Param::grad`.
    fn loss_and_grad(&mut self) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares every parameter entry's analytic gradient to a central finite
/// difference with step [`FD_STEP`].
pub fn grad_check<F: GradFragment + ?Sized>(fragment: &mut F, tolerance: f64) -> GradCheckReport {
    for p in fragment.params_mut() {
        p.zero_grad();
    }
    fragment.loss_and_grad();
    let analytic: Vec<Vec<f64>> = fragment
        .params_mut()
        .into_iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
        tolerance,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (ei, &g) in grads.iter().enumerate() {
            let original = fragment.params_mut()[pi].value.data()[ei];
            fragment.params_mut()[pi].value.data_mut()[ei] = original + FD_STEP;
            let plus = fragment.loss();
            fragment.params_mut()[pi].value.data_mut()[ei] = original - FD_STEP;
            let minus = fragment.loss();
            fragment.params_mut()[pi].value.data_mut()[ei] = original;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(g, numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((pi, ei));
            }
        }
    }
    for p in fragment.params_mut() {
        p.zero_grad();
    }
    report
}
