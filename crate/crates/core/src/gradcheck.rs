//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::error::{Error, Result};

/// A flattened parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub values: Vec<f64>,
}

impl NamedParam {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub coordinates: usize,
    pub max_abs_error: f64,
    /// `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`, zero when both vanish.
    pub relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Group-wise relative error between analytic and numeric gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let max_abs = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    let rel = if scale == 0.0 { 0.0 } else { max_abs / scale };
    (max_abs, rel)
}

/// Compares `analytic` against central differences of `objective` at `params`.
///
/// `objective` receives the full parameter list with one coordinate perturbed.
pub fn gradient_check<F>(
    mut objective: F,
    params: &[NamedParam],
    analytic: &[NamedParam],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[NamedParam]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape("parameter and gradient group counts differ".into()));
    }
    let mut work = params.to_vec();
    let mut groups = Vec::with_capacity(params.len());
    for (g, grad) in analytic.iter().enumerate() {
        if grad.name != params[g].name || grad.values.len() != params[g].values.len() {
            return Err(Error::Shape(format!("gradient group `{}` does not match parameters", grad.name)));
        }
        let mut numeric = Vec::with_capacity(grad.values.len());
        for i in 0..grad.values.len() {
            let x0 = work[g].values[i];
            work[g].values[i] = x0 + step;
            let plus = objective(&work);
            work[g].values[i] = x0 - step;
            let minus = objective(&work);
            work[g].values[i] = x0;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFiniteObjective { param: grad.name.clone(), index: i });
            }
            numeric.push((plus - minus) / (2.0 * step));
        }
        let (max_abs_error, relative_error) = relative_error(&grad.values, &numeric);
        groups.push(GroupReport {
            name: grad.name.clone(),
            coordinates: numeric.len(),
            max_abs_error,
            relative_error,
            passed: relative_error <= tolerance,
        });
    }
    let max_relative_error = groups.iter().map(|g| g.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        step,
        tolerance,
        passed: groups.iter().all(|g| g.passed),
        groups,
        max_relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_sq(p: &[NamedParam]) -> f64 {
        p.iter().flat_map(|g| g.values.iter()).map(|x| x * x).sum()
    }

    #[test]
    fn quadratic_is_exact() {
        let params = vec![NamedParam::new("x", vec![0.5, -1.25, 3.0]), NamedParam::new("y", vec![2.0])];
        let grads: Vec<_> = params
            .iter()
            .map(|g| NamedParam::new(g.name.clone(), g.values.iter().map(|x| 2.0 * x).collect()))
            .collect();
        let r = gradient_check(sum_sq, &params, &grads, 1e-6, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let params = vec![NamedParam::new("x", vec![1.0, 2.0])];
        let grads = vec![NamedParam::new("x", vec![0.0, 0.0])];
        let r = gradient_check(|_| 4.2, &params, &grads, 1e-6, 1e-12).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn wrong_gradient_fails() {
        let params = vec![NamedParam::new("x", vec![1.0])];
        let grads = vec![NamedParam::new("x", vec![3.0])];
        let r = gradient_check(sum_sq, &params, &grads, 1e-6, 1e-6).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_objective_aborts() {
        let params = vec![NamedParam::new("x", vec![0.0])];
        let grads = vec![NamedParam::new("x", vec![0.0])];
        let err = gradient_check(|p| 1.0 / p[0].values[0].abs().min(0.0), &params, &grads, 1e-6, 1e-6);
        assert!(matches!(err, Err(Error::NonFiniteObjective { .. })));
    }
}
