/// Central-difference step used by the checker.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn line(&self) -> String {
        format!(
            "{:<28} max_rel_error {:>12.3e}  {}",
            self.op_name,
            self.max_rel_error,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

/// Compares an analytic gradient against central finite differences at one
/// point. `f` evaluates the scalar objective, `analytic` returns its full
/// gradient at the same point. The relative error per component is
/// `|g_a - g_n| / max(1, |g_a|, |g_n|)`; the report carries the maximum.
///
/// The caller is responsible for picking a point where the objective is
/// differentiable (away from ReLU kinks and pooling ties).
pub fn grad_check<F, G>(
    op_name: &str,
    mut f: F,
    analytic: G,
    point: &[f64],
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
    G: FnOnce(&[f64]) -> Vec<f64>,
{
    let ga = analytic(point);
    assert_eq!(
        ga.len(),
        point.len(),
        "analytic gradient length must match the point"
    );
    let mut x = point.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = f(&x);
        x[i] = orig - FD_STEP;
        let down = f(&x);
        x[i] = orig;
        let gn = (up - down) / (2.0 * FD_STEP);
        let rel = (ga[i] - gn).abs() / 1.0_f64.max(ga[i].abs()).max(gn.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: max_rel,
        passed: max_rel < tolerance,
    }
}
