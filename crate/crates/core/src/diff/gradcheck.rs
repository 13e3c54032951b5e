//! Central finite-difference verification of reverse-mode gradients.

use crate::diff::ops::l2_norm;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub label: String,
    /// `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖, 1e-12)`
    pub relative_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub rtol: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: rel err {:.3e} (rtol {:.0e}), max abs {:.3e} at [{}]",
            if self.passed { "PASS" } else { "FAIL" },
            self.label,
            self.relative_error,
            self.rtol,
            self.max_abs_error,
            self.worst_index
        )
    }
}

/// Finite-difference step for unit-scaled inputs.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Compares `analytic` to the central-difference gradient of `loss` at `x`.
///
/// Failures are reported, never raised.
pub fn grad_check(
    label: &str,
    x: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    rtol: f64,
) -> GradCheckReport {
    let numeric = numeric_gradient(x, &mut loss, DEFAULT_STEP);
    compare(label, analytic, &numeric, rtol)
}

pub fn numeric_gradient(x: &[f64], loss: &mut impl FnMut(&[f64]) -> f64, h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = loss(&probe);
            probe[i] = orig - h;
            let down = loss(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn compare(label: &str, analytic: &[f64], numeric: &[f64], rtol: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = l2_norm(analytic).max(l2_norm(numeric)).max(1e-12);
    let relative_error = l2_norm(&diff) / denom;
    let (worst_index, max_abs_error) = diff
        .iter()
        .map(|d| d.abs())
        .enumerate()
        .fold((0, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    GradCheckReport {
        label: label.to_string(),
        relative_error,
        max_abs_error,
        worst_index,
        rtol,
        passed: relative_error.is_finite() && relative_error <= rtol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let x = [0.3, -1.2, 2.0];
        let f = |v: &[f64]| v.iter().map(|a| a * a * a).sum::<f64>();
        let good: Vec<f64> = x.iter().map(|a| 3.0 * a * a).collect();
        assert!(grad_check("cube", &x, &good, f, 1e-3).passed);
        let bad: Vec<f64> = x.iter().map(|a| 2.0 * a).collect();
        let report = grad_check("cube", &x, &bad, f, 1e-3);
        assert!(!report.passed);
        assert!(report.to_string().starts_with("FAIL"));
    }
}
