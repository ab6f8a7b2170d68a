use nalgebra::DVector;

use super::Estimates;
use crate::error::{Error, Result};

/// A linear combination `cᵀβ̂` with its standard error and confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinComResult {
    pub estimate: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
}

impl LinComResult {
    pub fn map(&self, f: impl Fn(f64) -> f64) -> LinComResult {
        LinComResult {
            estimate: f(self.estimate),
            std_error: self.std_error,
            ci: (f(self.ci.0), f(self.ci.1)),
        }
    }
}

/// Estimate, standard error `√(cᵀΣc)` and CI of a named combination of
/// coefficients. Repeated names accumulate.
pub fn lincom<E: Estimates + ?Sized>(model: &E, combo: &[(&str, f64)], level: f64) -> Result<LinComResult> {
    let names = model.coef_names();
    let mut c = vec![0.0; names.len()];
    for &(name, w) in combo {
        let j = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Sensitivity(format!("coefficient `{name}` not in model")))?;
        c[j] += w;
    }
    let c = DVector::from_vec(c);
    let estimate = c.dot(model.coef_values());
    let var = c.dot(&(model.coef_vcov() * &c));
    let std_error = var.max(0.0).sqrt();
    let q = model.coef_inference().critical(level);
    Ok(LinComResult {
        estimate,
        std_error,
        ci: (estimate - q * std_error, estimate + q * std_error),
    })
}
