//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tatesens::design::{Design, Family, Link, Term};
use tatesens::estimation::Estimates;
use tatesens::stats::Inference;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gaussian elimination with partial pivoting on plain vectors.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

/// `XᵀWX` and `XᵀWy` accumulated row by row.
pub fn normal_equations(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (n, p) = (x.nrows(), x.ncols());
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            b[j] += w[i] * x[(i, j)] * y[i];
            for k in 0..p {
                a[j][k] += w[i] * x[(i, j)] * x[(i, k)];
            }
        }
    }
    (a, b)
}

pub fn wls_oracle(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    let (a, b) = normal_equations(x, y, w);
    solve(&a, &b)
}

/// Exact weighted log-likelihood of a GLM (up to constants in y).
pub fn loglik(link: Link, family: Family, x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..x.nrows() {
        let eta: f64 = (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum();
        ll += w[i]
            * match (link, family) {
                (Link::Logit, Family::Binomial) => y[i] * eta - (1.0 + eta.exp()).ln(),
                (Link::Log, Family::Poisson) => y[i] * eta - eta.exp(),
                (Link::Log, Family::Binomial) => {
                    let mu = eta.exp();
                    if mu >= 1.0 {
                        return f64::NEG_INFINITY;
                    }
                    y[i] * eta + (1.0 - y[i]) * (1.0 - mu).ln()
                }
                _ => unreachable!("oracle covers non-identity links"),
            };
    }
    ll
}

/// Log-binomial log-likelihood with fitted probabilities capped at `1 − 1e-10`.
pub fn capped_log_binomial_loglik(x: &DMatrix<f64>, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    (0..x.nrows())
        .map(|i| {
            let mu = (0..x.ncols())
                .map(|j| x[(i, j)] * beta[j])
                .sum::<f64>()
                .exp()
                .min(1.0 - 1e-10);
            w[i] * (y[i] * mu.ln() + (1.0 - y[i]) * (1.0 - mu).ln())
        })
        .sum()
}

/// Newton–Raphson on the exact log-likelihood with the observed Hessian and
/// step halving on the log-likelihood.
pub fn newton_oracle(link: Link, family: Family, x: &DMatrix<f64>, y: &[f64], w: &[f64], start: &[f64]) -> Vec<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut beta = start.to_vec();
    let mut ll = loglik(link, family, x, y, w, &beta);
    assert!(ll.is_finite(), "infeasible start");
    for _ in 0..200 {
        let mut g = vec![0.0; p];
        let mut h = vec![vec![0.0; p]; p];
        for i in 0..n {
            let eta: f64 = (0..p).map(|j| x[(i, j)] * beta[j]).sum();
            let (d1, d2) = match (link, family) {
                (Link::Logit, Family::Binomial) => {
                    let mu = 1.0 / (1.0 + (-eta).exp());
                    (y[i] - mu, mu * (1.0 - mu))
                }
                (Link::Log, Family::Poisson) => {
                    let mu = eta.exp();
                    (y[i] - mu, mu)
                }
                (Link::Log, Family::Binomial) => {
                    let mu = eta.exp();
                    ((y[i] - mu) / (1.0 - mu), mu * (1.0 - y[i]) / (1.0 - mu).powi(2))
                }
                _ => unreachable!(),
            };
            for j in 0..p {
                g[j] += w[i] * d1 * x[(i, j)];
                for k in 0..p {
                    h[j][k] += w[i] * d2 * x[(i, j)] * x[(i, k)];
                }
            }
        }
        let step = solve(&h, &g);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let l = loglik(link, family, x, y, w, &cand);
            if t < 1e-12 {
                return beta;
            }
            if l.is_finite() && l >= ll - 1e-15 * ll.abs() {
                let done = step.iter().map(|s| (t * s).abs()).fold(0.0, f64::max) < 1e-14;
                beta = cand;
                ll = l;
                if done {
                    return beta;
                }
                break;
            }
            t *= 0.5;
        }
    }
    beta
}

/// Design with an intercept and `p − 1` standard normal regressors.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize, y: Vec<f64>) -> Design {
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { normal(rng) });
    design_from(x, y)
}

pub fn design_from(x: DMatrix<f64>, y: Vec<f64>) -> Design {
    let p = x.ncols();
    let mut names = vec!["(Intercept)".to_string()];
    names.extend((1..p).map(|j| format!("x{j}")));
    let term_map = (1..p).map(|j| (Term::main(&names[j]), j..j + 1)).collect();
    Design {
        x,
        y: DVector::from_vec(y),
        names,
        term_map,
    }
}

/// Responses for a random GLM problem; coefficients kept small so fitted
/// probabilities stay away from 0 and 1.
pub fn glm_problem(rng: &mut ChaCha8Rng, link: Link, family: Family) -> (Design, Vec<f64>, Vec<f64>) {
    let n = if (link, family) == (Link::Log, Family::Binomial) {
        rng.random_range(150..=200)
    } else {
        rng.random_range(60..=200)
    };
    let p = rng.random_range(2..=8);
    // Log-binomial optima with unbounded regressors often sit on μ = 1.
    let bounded = (link, family) == (Link::Log, Family::Binomial);
    let x = DMatrix::from_fn(n, p, |_, j| match j {
        0 => 1.0,
        _ if bounded => rng.random_range(-1.0..1.0),
        _ => normal(rng),
    });
    let beta: Vec<f64> = (0..p)
        .map(|j| match (link, j) {
            (Link::Log, 0) if family == Family::Binomial => -1.2,
            (Link::Log, _) if family == Family::Binomial => 0.1 * normal(rng),
            (_, 0) => 0.3,
            _ => 0.4 * normal(rng),
        })
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eta: f64 = (0..p).map(|j| x[(i, j)] * beta[j]).sum();
            match (link, family) {
                (Link::Logit, _) => f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())),
                (Link::Log, Family::Binomial) => f64::from(rng.random::<f64>() < eta.exp().min(0.9)),
                (Link::Log, _) => poisson(rng, eta.exp()),
                _ => unreachable!(),
            }
        })
        .collect();
    let w: Vec<f64> = if rng.random::<bool>() {
        (0..n).map(|_| rng.random_range(0.5..2.0)).collect()
    } else {
        vec![1.0; n]
    };
    (design_from(x, y), beta, w)
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> f64 {
    let l = (-lambda).exp();
    let (mut k, mut prod) = (0.0, rng.random::<f64>());
    while prod > l {
        k += 1.0;
        prod *= rng.random::<f64>();
    }
    k
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Fixed coefficients and covariance, for checking formulas without a fit.
pub struct FixedModel {
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub inference: Inference,
    pub link: Link,
    pub family: Family,
}

impl FixedModel {
    pub fn new(coefs: &[(&str, f64)], vcov: DMatrix<f64>) -> Self {
        FixedModel {
            names: coefs.iter().map(|c| c.0.to_string()).collect(),
            beta: DVector::from_iterator(coefs.len(), coefs.iter().map(|c| c.1)),
            vcov,
            inference: Inference::Z,
            link: Link::Identity,
            family: Family::Gaussian,
        }
    }

    /// Random coefficients with a random positive definite covariance.
    pub fn random(rng: &mut ChaCha8Rng, names: &[&str]) -> Self {
        let p = names.len();
        let l = DMatrix::from_fn(p, p, |i, j| if j <= i { normal(rng) } else { 0.0 });
        let vcov = &l * l.transpose() + DMatrix::identity(p, p) * 0.01;
        let coefs: Vec<(&str, f64)> = names.iter().map(|n| (*n, normal(rng))).collect();
        FixedModel::new(&coefs, vcov)
    }

    pub fn with_link(mut self, link: Link, family: Family) -> Self {
        self.link = link;
        self.family = family;
        self
    }
}

impl Estimates for FixedModel {
    fn coef_names(&self) -> &[String] {
        &self.names
    }
    fn coef_values(&self) -> &DVector<f64> {
        &self.beta
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
