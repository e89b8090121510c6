use super::Parameterized;

/// Magnitude below which errors are measured absolutely rather than relative
/// to the gradient size.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`; zero when both are zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` (same shape as `model`) against central differences of
/// `loss` with the given step, one parameter at a time.
pub fn gradient_check<M, F>(model: &M, analytic: &M, loss: F, step: f64) -> GradCheckReport
where
    M: Parameterized + Clone,
    F: Fn(&M) -> f64,
{
    let mut probe = model.clone();
    let grads: Vec<(String, Vec<f64>)> = analytic.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, checked: 0 };
    for (tensor, (name, g)) in grads.iter().enumerate() {
        for (k, &gk) in g.iter().enumerate() {
            let orig = probe.tensors_mut()[tensor].1[k];
            probe.tensors_mut()[tensor].1[k] = orig + step;
            let plus = loss(&probe);
            probe.tensors_mut()[tensor].1[k] = orig - step;
            let minus = loss(&probe);
            probe.tensors_mut()[tensor].1[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(gk, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), k));
                report.analytic = gk;
                report.numeric = numeric;
            }
        }
    }
    report
}
