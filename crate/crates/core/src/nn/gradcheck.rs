use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of `|a − n| / max(1, |a|, |n|)`
    pub max_rel_error: f64,
    /// coordinate achieving the maximum
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares `analytic` against central differences of `f` at every coordinate of `x`.
pub fn grad_check<F>(x: &Tensor<f64>, analytic: &[f64], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(x, analytic, eps, &all, f)
}

/// Like [`grad_check`] but only probes the listed coordinates; `analytic` still
/// covers the whole tensor.
pub fn grad_check_at<F>(
    x: &Tensor<f64>,
    analytic: &[f64],
    eps: f64,
    indices: &[usize],
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-6, 1e-3]")));
    }
    if analytic.len() != x.len() {
        return Err(Error::dim("grad_check", "analytic gradient length"));
    }
    let mut probe = x.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() || !analytic[i].is_finite() {
            return Err(Error::Numeric(format!("grad_check coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}
