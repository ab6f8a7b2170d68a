//! Random-intercepts model for two measurements per subject.
//!
//! `Y_ij = x_ijᵀβ + c_i + e_ij` with `c_i ~ N(0, τ²)`, `e_ij ~ N(0, σ²)`.
//! With two rows per subject the within-subject sum and difference are
//! independent with variances `σ²(1 + 2ρ)` and `σ²`, where `ρ = τ²/σ²`, so for
//! fixed `ρ` the GLS estimate of `β` is a weighted least-squares fit on the
//! rotated rows. The profile log-likelihood is maximised over `ρ ≥ 0` by a
//! bounded one-dimensional search.

use nalgebra::{DMatrix, DVector};

use super::{symmetrize, weighted_solve, Estimates, VcovKind, VcovRequest};
use crate::data::LongData;
use crate::design::{build_design, Design, Family, Link, ModelSpec};
use crate::error::{Error, Result};
use crate::stats::Inference;

#[derive(Debug, Clone)]
pub struct MixedFit {
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub vcov_kind: VcovKind,
    /// Between-subject (random intercept) variance τ².
    pub between_var: f64,
    /// Residual variance σ².
    pub residual_var: f64,
    /// Set when the unconstrained optimum has τ² < 0 and τ² was truncated to 0.
    pub between_truncated: bool,
    pub inference: Inference,
    pub n_subjects: usize,
    pub n_obs: usize,
    pub loglik: f64,
    pub weights_used: bool,
}

impl MixedFit {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.coefficients[j])
    }

    pub fn std_errors(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.vcov.nrows(),
            (0..self.vcov.nrows()).map(|j| self.vcov[(j, j)].max(0.0).sqrt()),
        )
    }
}

impl Estimates for MixedFit {
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
        Link::Identity
    }
    fn model_family(&self) -> Family {
        Family::Gaussian
    }
}

/// Rotated data: row `i` is the scaled sum, row `G + i` the scaled difference.
struct Rotated {
    x: DMatrix<f64>,
    y: DVector<f64>,
    w: Vec<f64>,
    g: usize,
    /// Weighted cross-products of the sum rows and of the difference rows:
    /// `XᵀWX`, `XᵀWy`, `yᵀWy`.
    sums: (DMatrix<f64>, DVector<f64>, f64),
    diffs: (DMatrix<f64>, DVector<f64>, f64),
}

struct Profile {
    beta: DVector<f64>,
    bread: DMatrix<f64>,
    sigma2: f64,
    loglik: f64,
    resid: DVector<f64>,
}

impl Rotated {
    fn new(design: &Design, pairs: &[(usize, usize)], w: Vec<f64>) -> Self {
        let g = pairs.len();
        let p = design.n_coef();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = DMatrix::from_fn(2 * g, p, |r, j| {
            let (a, b) = pairs[r % g];
            if r < g {
                (design.x[(a, j)] + design.x[(b, j)]) * s
            } else {
                (design.x[(b, j)] - design.x[(a, j)]) * s
            }
        });
        let y = DVector::from_fn(2 * g, |r, _| {
            let (a, b) = pairs[r % g];
            if r < g {
                (design.y[a] + design.y[b]) * s
            } else {
                (design.y[b] - design.y[a]) * s
            }
        });
        let cross = |rows: std::ops::Range<usize>| {
            let xs = x.rows(rows.start, rows.len());
            let ys = y.rows(rows.start, rows.len());
            let mut xw = xs.clone_owned();
            for (i, mut row) in xw.row_iter_mut().enumerate() {
                row *= w[i];
            }
            let yw: f64 = ys.iter().zip(&w).map(|(v, wi)| wi * v * v).sum();
            (xw.transpose() * xs, xw.transpose() * ys, yw)
        };
        let sums = cross(0..g);
        let diffs = cross(g..2 * g);
        Rotated {
            x,
            y,
            w,
            g,
            sums,
            diffs,
        }
    }

    fn loglik_at(&self, q: f64, lambda: f64) -> f64 {
        let wsum: f64 = self.w.iter().sum();
        let sigma2 = q / (2.0 * wsum);
        -0.5 * (2.0 * wsum * (2.0 * std::f64::consts::PI * sigma2).ln() + wsum * lambda.ln() + 2.0 * wsum)
    }

    /// Profile log-likelihood from the cross-products alone; used by the search.
    fn profile_loglik(&self, lambda: f64) -> Result<f64> {
        let m = &self.sums.0 / lambda + &self.diffs.0;
        let b = &self.sums.1 / lambda + &self.diffs.1;
        let c = self.sums.2 / lambda + self.diffs.2;
        let beta = m.cholesky().ok_or(Error::Singular)?.solve(&b);
        let q = (c - b.dot(&beta)).max(f64::MIN_POSITIVE);
        Ok(self.loglik_at(q, lambda))
    }

    /// GLS fit and profile log-likelihood at `lambda = 1 + 2ρ`.
    fn profile(&self, lambda: f64) -> Result<Profile> {
        let g = self.g;
        let ww: Vec<f64> = (0..2 * g)
            .map(|r| if r < g { self.w[r] / lambda } else { self.w[r - g] })
            .collect();
        let (beta, bread) = weighted_solve(&self.x, &self.y, &ww)?;
        let resid = &self.y - &self.x * &beta;
        let wsum: f64 = self.w.iter().sum();
        let q: f64 = resid.iter().zip(&ww).map(|(r, w)| w * r * r).sum();
        let sigma2 = q / (2.0 * wsum);
        let loglik = self.loglik_at(q, lambda);
        Ok(Profile {
            beta,
            bread,
            sigma2,
            loglik,
            resid,
        })
    }
}

/// Maximises `f` on `[lo, hi]`: coarse grid then golden-section refinement.
fn maximise(f: &dyn Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<f64> {
    const GRID: usize = 80;
    let h = (hi - lo) / GRID as f64;
    let mut best = (lo, f(lo)?);
    for k in 1..=GRID {
        let u = lo + h * k as f64;
        let v = f(u)?;
        if v > best.1 {
            best = (u, v);
        }
    }
    let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > 1e-12 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    // Endpoints are candidates too (boundary optimum at ρ = 0).
    let candidates = [mid, lo, best.0];
    let mut arg = mid;
    let mut val = f(mid)?;
    for &u in &candidates[1..] {
        let v = f(u)?;
        if v > val {
            arg = u;
            val = v;
        }
    }
    Ok(arg)
}

/// Fits the random-intercepts model by (weighted pseudo-) maximum likelihood.
///
/// `subject_weights` holds one weight per subject. Unweighted fits report the
/// model-based covariance with t inference on `n_subjects − p_within` df, where
/// `p_within` counts fixed-effect columns that change between a subject's two
/// rows; weighted
/// fits default to a subject-clustered sandwich with z inference.
pub fn fit_random_intercepts(
    long: &LongData,
    spec: &ModelSpec,
    subject_weights: Option<&[f64]>,
    vcov: &VcovRequest,
) -> Result<MixedFit> {
    if spec.link != Link::Identity {
        return Err(Error::Model("random-intercepts models use the identity link".into()));
    }
    let design = build_design(&long.table, spec)?;
    let time = long.table.numeric(&long.time)?;
    let g = long.n_subjects;
    let mut pairs = vec![(usize::MAX, usize::MAX); g];
    for (r, &s) in long.subject_of.iter().enumerate() {
        let slot = if time[r] == 0.0 {
            &mut pairs[s].0
        } else {
            &mut pairs[s].1
        };
        if *slot != usize::MAX {
            return Err(Error::Roles(format!(
                "subject {s} has more than one row at one time point"
            )));
        }
        *slot = r;
    }
    if pairs.iter().any(|&(a, b)| a == usize::MAX || b == usize::MAX) {
        return Err(Error::Roles(
            "every subject needs exactly one pre and one post row".into(),
        ));
    }
    let w = match subject_weights {
        Some(w) => {
            if w.len() != g {
                return Err(Error::Fit(format!("{} subject weights for {g} subjects", w.len())));
            }
            if w.iter().any(|&v| !(v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
                return Err(Error::Fit(
                    "subject weights must be nonnegative and not all zero".into(),
                ));
            }
            w.to_vec()
        }
        None => vec![1.0; g],
    };
    let p = design.n_coef();
    let n_pos = w.iter().filter(|&&v| v > 0.0).count();
    if n_pos <= p / 2 {
        return Err(Error::Fit("too few subjects for the fixed effects".into()));
    }
    let rot = Rotated::new(&design, &pairs, w.clone());

    // Search over u = ln λ ∈ [0, 16], i.e. ρ from 0 to ~4.4e6.
    let obj = |u: f64| rot.profile_loglik(u.exp());
    let u_hat = maximise(&obj, 0.0, 16.0)?;
    let fit = rot.profile(u_hat.exp())?;
    let truncated = u_hat < 1e-9 && rot.profile((-1e-4f64).exp())?.loglik > fit.loglik;
    let lambda = u_hat.exp();
    let rho = (lambda - 1.0) / 2.0;

    let weighted = subject_weights.is_some();
    let resolved = match vcov {
        VcovRequest::Auto if weighted => VcovRequest::Cluster(vec![]),
        VcovRequest::Auto => VcovRequest::ModelBased,
        other => other.clone(),
    };
    let (kind, vc) = match resolved {
        VcovRequest::ModelBased => (VcovKind::ModelBased, &fit.bread * fit.sigma2),
        VcovRequest::Sandwich | VcovRequest::Cluster(_) => {
            // Subject-clustered score: sum of its rotated rows' contributions.
            let mut meat = DMatrix::<f64>::zeros(p, p);
            for i in 0..g {
                let us = rot.x.row(i) * (w[i] / lambda * fit.resid[i]);
                let ud = rot.x.row(g + i) * (w[i] * fit.resid[g + i]);
                let u = (us + ud).transpose();
                meat += &u * u.transpose();
            }
            let gg = n_pos as f64;
            let n = 2.0 * gg;
            let adj = gg / (gg - 1.0) * (n - 1.0) / (n - p as f64);
            (
                VcovKind::ClusterSandwich,
                symmetrize(&fit.bread * meat * &fit.bread * adj),
            )
        }
        VcovRequest::Auto => unreachable!(),
    };
    // Containment df for coefficients that vary within subject: with two
    // rows per subject, N − G − p_within = G − p_within.
    let p_within = (0..p).filter(|&j| (0..g).any(|i| rot.x[(g + i, j)] != 0.0)).count();
    let inference = if kind == VcovKind::ModelBased && !weighted {
        Inference::T {
            df: n_pos.saturating_sub(p_within).max(1) as f64,
        }
    } else {
        Inference::Z
    };
    Ok(MixedFit {
        names: design.names.clone(),
        coefficients: fit.beta,
        vcov: vc,
        vcov_kind: kind,
        between_var: rho * fit.sigma2,
        residual_var: fit.sigma2,
        between_truncated: truncated,
        inference,
        n_subjects: g,
        n_obs: 2 * g,
        loglik: fit.loglik,
        weights_used: weighted,
    })
}
