//! Central finite differences of `ln|psi|`, used to validate [`BackflowNet::log_grad`].

use super::{BackflowNet, ParamGroup};
use crate::determinant::OccupationConfig;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub worst_group: ParamGroup,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares every component of the analytic gradient against
/// `(ln|psi(theta + h e_i)| - ln|psi(theta - h e_i)|) / 2h` for each configuration.
pub fn check_gradients(net: &BackflowNet, configs: &[OccupationConfig], step: f64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        worst_group: ParamGroup::Embedding,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
    };
    let mut probe = net.clone();
    for c in configs {
        let (_, grad) = net.log_grad(c)?;
        for i in 0..net.n_params() {
            let base = net.params()[i];
            probe.params_mut()[i] = base + step;
            let plus = probe.amplitude(c).log_abs;
            probe.params_mut()[i] = base - step;
            let minus = probe.amplitude(c).log_abs;
            probe.params_mut()[i] = base;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad[i], numeric);
            report.n_checked += 1;
            if err > report.max_relative_error || !err.is_finite() {
                report.max_relative_error = err;
                report.worst_index = i;
                report.worst_group = net.layout().group_of(i);
                report.analytic = grad[i];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
