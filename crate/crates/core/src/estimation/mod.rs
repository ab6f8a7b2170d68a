//! Model fitting: weighted least squares, IRLS for logit/log links, weighted
//! random-intercepts maximum likelihood, coefficient covariances and linear
//! combinations.

mod glm;
mod lincom;
mod mixed;
mod report;
mod wls;

pub use glm::{fit_glm, fit_glm_irls, IrlsControl};
pub use lincom::{lincom, LinComResult};
pub use mixed::{fit_random_intercepts, MixedFit};
pub use report::{coefficient_rows, coefficient_table, sig6, CoefRow};
pub use wls::{fit_wls, residuals};

use nalgebra::{DMatrix, DVector};

use crate::design::{Family, Link};
use crate::error::{Error, Result};
use crate::stats::Inference;

/// Which coefficient covariance estimator was used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcovKind {
    ModelBased,
    Sandwich,
    ClusterSandwich,
}

impl VcovKind {
    pub fn label(&self) -> &'static str {
        match self {
            VcovKind::ModelBased => "model-based",
            VcovKind::Sandwich => "sandwich (HC1)",
            VcovKind::ClusterSandwich => "cluster sandwich",
        }
    }
}

/// Covariance request for a fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum VcovRequest {
    /// Model-based when unweighted, sandwich when weighted.
    #[default]
    Auto,
    ModelBased,
    Sandwich,
    /// Cluster-robust; one cluster label per observation.
    Cluster(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub iterations: usize,
    /// Final relative deviance change (0 for closed-form fits).
    pub criterion: f64,
    /// Deviance after each iteration.
    pub deviance_trace: Vec<f64>,
}

/// Coefficient estimates from a single-level model.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub vcov_kind: VcovKind,
    pub link: Link,
    pub family: Family,
    pub n_obs: usize,
    pub weights_used: bool,
    pub inference: Inference,
    pub convergence: Convergence,
    /// Log-binomial fits whose fitted probabilities touched the cap.
    pub boundary: bool,
    pub fitted: DVector<f64>,
    /// Dispersion (σ² for Gaussian, 1 otherwise).
    pub scale: f64,
    /// Unscaled inverse information `(XᵀWX)⁻¹`.
    bread: DMatrix<f64>,
    /// Per-observation score contributions (n × p).
    scores: DMatrix<f64>,
}

impl FittedModel {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.coefficients[j])
    }

    pub fn std_errors(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.vcov.nrows(),
            (0..self.vcov.nrows()).map(|j| self.vcov[(j, j)].max(0.0).sqrt()),
        )
    }

    /// Same point estimates with a different covariance estimator.
    pub fn with_vcov(&self, request: &VcovRequest) -> Result<FittedModel> {
        let mut out = self.clone();
        let (kind, vcov) = compute_vcov(&self.bread, &self.scores, self.scale, self.weights_used, request)?;
        out.vcov = vcov;
        out.vcov_kind = kind;
        out.inference = inference_for(self.link, kind, self.weights_used, self.n_obs, self.names.len());
        Ok(out)
    }
}

pub(crate) fn inference_for(link: Link, kind: VcovKind, weighted: bool, n: usize, p: usize) -> Inference {
    if link == Link::Identity && kind == VcovKind::ModelBased && !weighted {
        Inference::T { df: (n - p) as f64 }
    } else {
        Inference::Z
    }
}

pub(crate) fn compute_vcov(
    bread: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    scale: f64,
    weighted: bool,
    request: &VcovRequest,
) -> Result<(VcovKind, DMatrix<f64>)> {
    let n = scores.nrows();
    let p = scores.ncols();
    let resolved = match request {
        VcovRequest::Auto if weighted => VcovRequest::Sandwich,
        VcovRequest::Auto => VcovRequest::ModelBased,
        other => other.clone(),
    };
    let out = match resolved {
        VcovRequest::ModelBased => (VcovKind::ModelBased, bread * scale),
        VcovRequest::Sandwich => {
            let meat = scores.transpose() * scores;
            let adj = n as f64 / (n - p) as f64;
            (VcovKind::Sandwich, symmetrize(bread * meat * bread * adj))
        }
        VcovRequest::Cluster(labels) => {
            if labels.len() != n {
                return Err(Error::Fit(format!(
                    "{} cluster labels for {n} observations",
                    labels.len()
                )));
            }
            let g = labels.iter().max().map_or(0, |m| m + 1);
            let mut sums = DMatrix::<f64>::zeros(g, p);
            for (i, &c) in labels.iter().enumerate() {
                let mut row = sums.row_mut(c);
                row += scores.row(i);
            }
            let used = (0..g).filter(|&c| labels.contains(&c)).count().max(2);
            let meat = sums.transpose() * &sums;
            let adj = used as f64 / (used - 1) as f64 * (n - 1) as f64 / (n - p) as f64;
            (VcovKind::ClusterSandwich, symmetrize(bread * meat * bread * adj))
        }
        VcovRequest::Auto => unreachable!(),
    };
    Ok(out)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Inverse of `XᵀWX` and the WLS solution, via QR of `√W X`.
pub(crate) fn weighted_solve(x: &DMatrix<f64>, z: &DVector<f64>, w: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.nrows();
    let p = x.ncols();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let xs = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * sw[i]);
    let zs = DVector::from_fn(n, |i, _| z[i] * sw[i]);
    let qr = xs.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..p).any(|j| r[(j, j)].abs() <= 1e-12 * max_diag) || max_diag == 0.0 {
        return Err(Error::Singular);
    }
    let qtz = qr.q().transpose() * zs;
    let beta = r.solve_upper_triangular(&qtz).ok_or(Error::Singular)?;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::Singular)?;
    let bread = &rinv * rinv.transpose();
    Ok((beta, bread))
}

/// Shared read access to fitted coefficients, used by [`lincom`] and the
/// sensitivity analyses.
pub trait Estimates {
    fn coef_names(&self) -> &[String];
    fn coef_values(&self) -> &DVector<f64>;
    fn coef_vcov(&self) -> &DMatrix<f64>;
    fn coef_inference(&self) -> Inference;
    fn model_link(&self) -> Link;
    fn model_family(&self) -> Family;
}

impl Estimates for FittedModel {
    fn coef_names(&self) -> &[String] {
        &self.names
    }
    fn coef_values(&self) -> &DVector<f64> {
        &self.coefficients
    }
    fn coef_vcov(&self) -> &DMatrix<f64> {
        &self.vcov
    }
    fn coef_inference(&self) -> Inference {
        self.inference
    }
    fn model_link(&self) -> Link {
        self.link
    }
    fn model_family(&self) -> Family {
        self.family
    }
}

/// Either kind of fitted model, as produced by the analysis pipeline.
#[derive(Debug, Clone)]
pub enum AnyFit {
    Single(FittedModel),
    Mixed(MixedFit),
}

impl AnyFit {
    pub fn as_estimates(&self) -> &dyn Estimates {
        match self {
            AnyFit::Single(m) => m,
            AnyFit::Mixed(m) => m,
        }
    }
}

impl Estimates for AnyFit {
    fn coef_names(&self) -> &[String] {
        self.as_estimates().coef_names()
    }
    fn coef_values(&self) -> &DVector<f64> {
        self.as_estimates().coef_values()
    }
    fn coef_vcov(&self) -> &DMatrix<f64> {
        self.as_estimates().coef_vcov()
    }
    fn coef_inference(&self) -> Inference {
        self.as_estimates().coef_inference()
    }
    fn model_link(&self) -> Link {
        self.as_estimates().model_link()
    }
    fn model_family(&self) -> Family {
        self.as_estimates().model_family()
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Fit(format!("{} weights for {n} observations", w.len())));
    }
    if let Some(i) = w.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Fit(format!("negative or invalid weight {} at row {i}", w[i])));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::Fit("all weights are zero".into()));
    }
    Ok(())
}
