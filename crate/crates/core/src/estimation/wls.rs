use nalgebra::{DMatrix, DVector};

use super::{check_weights, compute_vcov, inference_for, weighted_solve, Convergence, FittedModel, VcovRequest};
use crate::design::{Design, Family, Link};
use crate::error::{Error, Result};

/// Weighted least squares on an identity-link design.
///
/// Model-based covariance is `σ̂²(XᵀWX)⁻¹` with `σ̂² = Σwᵢrᵢ²/(n−p)`, which is
/// invariant to rescaling the weights. With `VcovRequest::Auto` a weighted
/// fit reports the HC1 sandwich.
pub fn fit_wls(design: &Design, weights: Option<&[f64]>, vcov: &VcovRequest) -> Result<FittedModel> {
    let n = design.n_obs();
    let p = design.n_coef();
    let w: Vec<f64> = match weights {
        Some(w) => {
            check_weights(w, n)?;
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let n_eff = w.iter().filter(|&&v| v > 0.0).count();
    if n_eff <= p {
        return Err(Error::Fit(format!(
            "{n_eff} observations with positive weight for {p} coefficients"
        )));
    }
    let (beta, bread) = weighted_solve(&design.x, &design.y, &w)?;
    let fitted = &design.x * &beta;
    let resid = &design.y - &fitted;
    let rss: f64 = resid.iter().zip(&w).map(|(r, wi)| wi * r * r).sum();
    let scale = rss / (n_eff - p) as f64;
    let scores = DMatrix::from_fn(n, p, |i, j| w[i] * resid[i] * design.x[(i, j)]);
    let weighted = weights.is_some();
    let (kind, vc) = compute_vcov(&bread, &scores, scale, weighted, vcov)?;
    Ok(FittedModel {
        names: design.names.clone(),
        coefficients: beta,
        vcov: vc,
        vcov_kind: kind,
        link: Link::Identity,
        family: Family::Gaussian,
        n_obs: n_eff,
        weights_used: weighted,
        inference: inference_for(Link::Identity, kind, weighted, n_eff, p),
        convergence: Convergence {
            iterations: 1,
            criterion: 0.0,
            deviance_trace: vec![rss],
        },
        boundary: false,
        fitted,
        scale,
        bread,
        scores,
    })
}

/// Residuals `y − Xβ` of a fitted identity-link model.
pub fn residuals(design: &Design, model: &FittedModel) -> DVector<f64> {
    &design.y - &design.x * &model.coefficients
}
