//! Central-difference gradient verification against the autodiff engine.

use crate::error::Result;
use crate::graph::{Graph, TensorId};

/// Outcome of one gradient check: worst relative error and where it occurred.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub autodiff_value: f64,
    pub numeric_value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gradcheck {}: max rel err {:.3e} (tol {:.1e}) at {}[{}] autodiff={:.6e} numeric={:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.worst_param,
            self.worst_coord,
            self.autodiff_value,
            self.numeric_value,
        )
    }
}

fn eval_scalar<F>(g: &mut Graph, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<TensorId>,
{
    g.reset_intermediates();
    let loss = f(g)?;
    Ok(g.data(loss)[0])
}

/// Run forward + backward once and collect the gradient of every parameter.
pub fn autodiff_grads<F>(g: &mut Graph, f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph) -> Result<TensorId>,
{
    g.reset_intermediates();
    g.zero_grad();
    let loss = f(g)?;
    g.backward(loss)?;
    Ok(g.param_ids()
        .to_vec()
        .iter()
        .map(|&p| g.grad(p).to_vec())
        .collect())
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` per parameter coordinate.
pub fn finite_diff_grads<F>(g: &mut Graph, f: &F, h: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph) -> Result<TensorId>,
{
    let ids = g.param_ids().to_vec();
    let mut all = Vec::with_capacity(ids.len());
    for &p in &ids {
        let n = g.data(p).len();
        let mut fd = vec![0.0; n];
        for i in 0..n {
            let orig = g.data(p)[i];
            g.param_value_mut(p)[i] = orig + h;
            let plus = eval_scalar(g, f)?;
            g.param_value_mut(p)[i] = orig - h;
            let minus = eval_scalar(g, f)?;
            g.param_value_mut(p)[i] = orig;
            fd[i] = (plus - minus) / (2.0 * h);
        }
        all.push(fd);
    }
    g.reset_intermediates();
    Ok(all)
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn compare_grads(
    autodiff: &[Vec<f64>],
    numeric: &[Vec<f64>],
    names: &[String],
    tolerance: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        autodiff_value: 0.0,
        numeric_value: 0.0,
        tolerance,
        passed: true,
    };
    for (pi, (ad, fd)) in autodiff.iter().zip(numeric).enumerate() {
        for (i, (&a, &n)) in ad.iter().zip(fd).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-8);
            let rel = (a - n).abs() / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = names.get(pi).cloned().unwrap_or_default();
                report.worst_coord = i;
                report.autodiff_value = a;
                report.numeric_value = n;
            }
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    report
}

/// Full check of a scalar function of the graph's parameters: autodiff
/// gradients against central differences with step `h`.
pub fn finite_diff_check<F>(g: &mut Graph, f: F, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<TensorId>,
{
    let ad = autodiff_grads(g, &f)?;
    let fd = finite_diff_grads(g, &f, h)?;
    let names: Vec<String> = g
        .param_ids()
        .iter()
        .map(|&p| g.param_name(p).to_string())
        .collect();
    Ok(compare_grads(&ad, &fd, &names, tolerance))
}
