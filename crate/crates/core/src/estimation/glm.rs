use nalgebra::{DMatrix, DVector};

use super::{check_weights, compute_vcov, inference_for, weighted_solve, Convergence, FittedModel, VcovRequest};
use crate::design::{Design, Family, Link};
use crate::error::{Error, Result};
use crate::stats::logistic;

/// Fitted probabilities of log-binomial models are capped here.
const PROB_CAP: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsControl {
    pub max_iter: usize,
    /// Relative deviance change `|Δdev| / (|dev| + 0.1)` at convergence,
    /// required on two consecutive iterations.
    pub tol: f64,
    /// Separation is declared once any |β̂ⱼ| exceeds this.
    pub max_abs_coef: f64,
    pub max_halvings: usize,
}

impl Default for IrlsControl {
    fn default() -> Self {
        IrlsControl {
            max_iter: 100,
            tol: 1e-10,
            max_abs_coef: 30.0,
            max_halvings: 30,
        }
    }
}

fn inv_link(link: Link, eta: f64) -> f64 {
    match link {
        Link::Identity => eta,
        Link::Logit => logistic(eta),
        Link::Log => eta.exp(),
    }
}

/// dμ/dη
fn mu_eta(link: Link, mu: f64) -> f64 {
    match link {
        Link::Identity => 1.0,
        Link::Logit => mu * (1.0 - mu),
        Link::Log => mu,
    }
}

fn variance(family: Family, mu: f64) -> f64 {
    match family {
        Family::Gaussian => 1.0,
        Family::Binomial => mu * (1.0 - mu),
        Family::Poisson => mu,
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn deviance(family: Family, y: &DVector<f64>, mu: &[f64], w: &[f64]) -> f64 {
    let mut d = 0.0;
    for i in 0..mu.len() {
        let (yi, m) = (y[i], mu[i]);
        d += w[i]
            * match family {
                Family::Gaussian => (yi - m) * (yi - m),
                Family::Binomial => 2.0 * (xlogy(yi, yi / m) + xlogy(1.0 - yi, (1.0 - yi) / (1.0 - m))),
                Family::Poisson => 2.0 * (xlogy(yi, yi / m) - (yi - m)),
            };
    }
    d
}

struct Eval {
    mu: Vec<f64>,
    dev: f64,
    capped: bool,
}

fn evaluate(x: &DMatrix<f64>, beta: &DVector<f64>, link: Link, family: Family, y: &DVector<f64>, w: &[f64]) -> Eval {
    let eta = x * beta;
    let mut capped = false;
    let mu: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let mut m = inv_link(link, e);
            if family == Family::Binomial {
                if m > PROB_CAP {
                    m = PROB_CAP;
                    if link == Link::Log {
                        capped = true;
                    }
                }
                m = m.max(1e-300);
            }
            m
        })
        .collect();
    let dev = deviance(family, y, &mu, w);
    Eval { mu, dev, capped }
}

fn check_response(y: &DVector<f64>, family: Family) -> Result<()> {
    for (i, &v) in y.iter().enumerate() {
        let ok = match family {
            Family::Binomial => v == 0.0 || v == 1.0,
            Family::Poisson => v >= 0.0 && v.fract() == 0.0,
            Family::Gaussian => v.is_finite(),
        };
        if !ok {
            return Err(Error::Fit(format!(
                "response value {v} at row {i} invalid for {family:?}"
            )));
        }
    }
    Ok(())
}

fn separation_term(design: &Design, beta: &DVector<f64>) -> String {
    let j = beta.iamax();
    design.names[j].clone()
}

/// Iteratively reweighted least squares for logit and log links.
///
/// Step-halving keeps the deviance non-increasing; log-binomial fitted
/// probabilities are capped at `1 − 1e-10` and the fit is flagged as on the
/// boundary when a fitted probability ends within 1e-6 of 1.
pub fn fit_glm_irls(
    design: &Design,
    link: Link,
    family: Family,
    weights: Option<&[f64]>,
    vcov: &VcovRequest,
    control: &IrlsControl,
) -> Result<FittedModel> {
    let n = design.n_obs();
    let p = design.n_coef();
    let x = &design.x;
    let y = &design.y;
    check_response(y, family)?;
    let pw: Vec<f64> = match weights {
        Some(w) => {
            check_weights(w, n)?;
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let n_eff = pw.iter().filter(|&&v| v > 0.0).count();
    if n_eff <= p {
        return Err(Error::Fit(format!(
            "{n_eff} observations with positive weight for {p} coefficients"
        )));
    }

    // Starting values from the data, as in the usual glm initialisation.
    let mut mu: Vec<f64> = y
        .iter()
        .map(|&v| match family {
            Family::Binomial => (v + 0.5) / 2.0,
            Family::Poisson => v + 0.1,
            Family::Gaussian => v,
        })
        .collect();
    let mut eta: Vec<f64> = mu
        .iter()
        .map(|&m| match link {
            Link::Identity => m,
            Link::Logit => (m / (1.0 - m)).ln(),
            Link::Log => m.ln(),
        })
        .collect();
    let mut dev_old = deviance(family, y, &mu, &pw);
    let mut beta_old: Option<DVector<f64>> = None;
    if family == Family::Binomial && link == Link::Log {
        // Data-based starting values put μ above 1; start from constant risk instead.
        let ybar = pw.iter().zip(y.iter()).map(|(w, v)| w * v).sum::<f64>() / pw.iter().sum::<f64>();
        let target = DVector::from_element(n, ybar.clamp(1e-3, 0.9).ln());
        let (b0, _) = weighted_solve(x, &target, &pw)?;
        let ev = evaluate(x, &b0, link, family, y, &pw);
        if !ev.capped {
            eta = (x * &b0).iter().copied().collect();
            mu = ev.mu;
            dev_old = ev.dev;
            beta_old = Some(b0);
        }
    }
    let mut trace = Vec::new();
    let mut boundary;
    let mut boundary_capped = false;
    let mut change = f64::INFINITY;
    let mut settled = false;

    for iter in 1..=control.max_iter {
        let mut wz = Vec::with_capacity(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let d = mu_eta(link, mu[i]);
            let v = variance(family, mu[i]).max(1e-300);
            z[i] = eta[i] + (y[i] - mu[i]) / d;
            wz.push(pw[i] * d * d / v);
        }
        let newton = match (&beta_old, family, link) {
            (Some(prev), Family::Binomial, Link::Log) => log_binomial_newton_step(x, y, &pw, prev, &mu),
            _ => None,
        };
        // Under the cap, overshooting μ = 1 costs nothing, so once an iterate is
        // feasible its successors must be too.
        let was_feasible = beta_old.is_some() && !boundary_capped;
        let halved = |start: DVector<f64>| {
            let mut beta = start;
            let mut ev = evaluate(x, &beta, link, family, y, &pw);
            // Step-halving toward the previous iterate.
            if let Some(prev) = &beta_old {
                let mut halvings = 0;
                while !(ev.dev.is_finite() && ev.dev <= dev_old * (1.0 + 1e-12) + 1e-12 && !(was_feasible && ev.capped))
                {
                    if halvings == control.max_halvings {
                        return None;
                    }
                    beta = (&beta + prev) * 0.5;
                    ev = evaluate(x, &beta, link, family, y, &pw);
                    halvings += 1;
                }
            }
            Some((beta, ev))
        };
        let (beta, ev) = match newton.and_then(&halved) {
            Some(step) => step,
            None => halved(weighted_solve(x, &z, &wz)?.0)
                .ok_or_else(|| Error::Fit("step-halving failed to reduce the deviance".into()))?,
        };
        if beta.amax() > control.max_abs_coef {
            return Err(Error::Separation {
                term: separation_term(design, &beta),
            });
        }
        trace.push(ev.dev);
        boundary_capped = ev.capped;
        // A fit creeping toward μ = 1 is on the boundary even before the cap binds.
        boundary =
            ev.capped || (family == Family::Binomial && link == Link::Log && ev.mu.iter().any(|&m| m > 1.0 - 1e-6));
        change = (ev.dev - dev_old).abs() / (ev.dev.abs() + 0.1);
        eta = (x * &beta).iter().copied().collect();
        mu = ev.mu;
        dev_old = ev.dev;
        beta_old = Some(beta);
        // One more step once the deviance has settled: near the optimum it
        // squares the coefficient error at almost no cost.
        let converged = settled && change < control.tol;
        settled = change < control.tol;
        if converged {
            let beta = beta_old.expect("set above");
            if family == Family::Binomial && link == Link::Logit && eta.iter().any(|e| e.abs() > control.max_abs_coef) {
                return Err(Error::Separation {
                    term: separation_term(design, &beta),
                });
            }
            return finish(
                design,
                link,
                family,
                beta,
                &mu,
                &pw,
                weights.is_some(),
                vcov,
                iter,
                change,
                trace,
                boundary,
                n_eff,
            );
        }
    }
    Err(Error::NoConvergence {
        iterations: control.max_iter,
        change,
    })
}

/// Fisher scoring converges only linearly for the log-binomial model, slowly
/// enough that the deviance rule stops it while the coefficients still move.
/// Its log-likelihood is concave, so a Newton step with the observed
/// information is used instead whenever that matrix is positive definite.
fn log_binomial_newton_step(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    pw: &[f64],
    beta: &DVector<f64>,
    mu: &[f64],
) -> Option<DVector<f64>> {
    let p = x.ncols();
    let mut g = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let xi = x.row(i).transpose();
        let q = 1.0 - mu[i];
        g += &xi * (pw[i] * (y[i] - mu[i]) / q);
        h.ger(pw[i] * mu[i] * (1.0 - y[i]) / (q * q), &xi, &xi, 1.0);
    }
    let step = h.cholesky()?.solve(&g);
    step.iter().all(|v| v.is_finite()).then(|| beta + step)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    design: &Design,
    link: Link,
    family: Family,
    beta: DVector<f64>,
    mu: &[f64],
    pw: &[f64],
    weighted: bool,
    vcov: &VcovRequest,
    iterations: usize,
    criterion: f64,
    trace: Vec<f64>,
    boundary: bool,
    n_eff: usize,
) -> Result<FittedModel> {
    let n = design.n_obs();
    let p = design.n_coef();
    let x = &design.x;
    let mut wz = Vec::with_capacity(n);
    let mut score_w = Vec::with_capacity(n);
    for i in 0..n {
        let d = mu_eta(link, mu[i]);
        let v = variance(family, mu[i]).max(1e-300);
        wz.push(pw[i] * d * d / v);
        score_w.push(pw[i] * (design.y[i] - mu[i]) * d / v);
    }
    let (_, bread) = weighted_solve(x, &DVector::zeros(n), &wz)?;
    let scores = DMatrix::from_fn(n, p, |i, j| score_w[i] * x[(i, j)]);
    let (kind, vc) = compute_vcov(&bread, &scores, 1.0, weighted, vcov)?;
    Ok(FittedModel {
        names: design.names.clone(),
        coefficients: beta,
        vcov: vc,
        vcov_kind: kind,
        link,
        family,
        n_obs: n_eff,
        weights_used: weighted,
        inference: inference_for(link, kind, weighted, n_eff, p),
        convergence: Convergence {
            iterations,
            criterion,
            deviance_trace: trace,
        },
        boundary,
        fitted: DVector::from_column_slice(mu),
        scale: 1.0,
        bread,
        scores,
    })
}

/// Dispatches on the link: WLS for identity, IRLS otherwise.
pub fn fit_glm(
    design: &Design,
    link: Link,
    family: Family,
    weights: Option<&[f64]>,
    vcov: &VcovRequest,
) -> Result<FittedModel> {
    match link {
        Link::Identity => super::fit_wls(design, weights, vcov),
        _ => fit_glm_irls(design, link, family, weights, vcov, &IrlsControl::default()),
    }
}
