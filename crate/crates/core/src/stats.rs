//! Small numeric helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
}

/// Sample variance with denominator `n - 1`.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Weighted variance `Σw(x−m)²/Σw` (frequency-free, no small-sample correction).
pub fn weighted_variance(x: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(x, w);
    let sw: f64 = w.iter().sum();
    x.iter().zip(w).map(|(a, b)| b * (a - m) * (a - m)).sum::<f64>() / sw
}

pub fn sd(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Kish effective sample size `(Σw)² / Σw²`.
pub fn kish_ess(w: &[f64]) -> f64 {
    if w.first().is_some_and(|&a| a > 0.0 && w.iter().all(|&b| b == a)) {
        return w.len() as f64;
    }
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 == 0.0 {
        0.0
    } else {
        (s * s / s2).min(w.len() as f64)
    }
}

pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Basis for Wald-type intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inference {
    /// Student t with the given residual degrees of freedom.
    T { df: f64 },
    /// Standard normal.
    Z,
}

impl Inference {
    /// Two-sided critical value for confidence `level`.
    pub fn critical(&self, level: f64) -> f64 {
        let p = 0.5 + level / 2.0;
        match *self {
            Inference::Z => Normal::standard().inverse_cdf(p),
            Inference::T { df } => StudentsT::new(0.0, 1.0, df)
                .map(|d| d.inverse_cdf(p))
                .unwrap_or_else(|_| Normal::standard().inverse_cdf(p)),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Inference::T { .. } => "t",
            Inference::Z => "z",
        }
    }

    pub fn df(&self) -> Option<f64> {
        match *self {
            Inference::T { df } => Some(df),
            Inference::Z => None,
        }
    }

    pub fn two_sided_p(&self, stat: f64) -> f64 {
        if !stat.is_finite() {
            return f64::NAN;
        }
        let tail = match *self {
            Inference::Z => Normal::standard().sf(stat.abs()),
            Inference::T { df } => StudentsT::new(0.0, 1.0, df)
                .map(|d| d.sf(stat.abs()))
                .unwrap_or_else(|_| Normal::standard().sf(stat.abs())),
        };
        2.0 * tail
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}
