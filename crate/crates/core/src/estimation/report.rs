use std::fmt::Write as _;

use super::Estimates;
use crate::stats::Inference;

/// One line of a coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub statistic: f64,
    /// Residual df for t inference, `None` for z.
    pub df: Option<f64>,
    pub p_value: f64,
    pub ci: (f64, f64),
}

pub fn coefficient_rows<E: Estimates + ?Sized>(model: &E, level: f64) -> Vec<CoefRow> {
    let inf = model.coef_inference();
    let q = inf.critical(level);
    let b = model.coef_values();
    let v = model.coef_vcov();
    model
        .coef_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = v[(j, j)].max(0.0).sqrt();
            let stat = if se > 0.0 { b[j] / se } else { f64::NAN };
            CoefRow {
                name: name.clone(),
                estimate: b[j],
                std_error: se,
                statistic: stat,
                df: inf.df(),
                p_value: inf.two_sided_p(stat),
                ci: (b[j] - q * se, b[j] + q * se),
            }
        })
        .collect()
}

/// Six-significant-digit number formatting used by every text report.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NA".into()
        } else if x > 0.0 {
            "Inf".into()
        } else {
            "-Inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=9).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Plain-text coefficient table: name, estimate, SE, t or z, df, p, CI.
pub fn coefficient_table<E: Estimates + ?Sized>(model: &E, level: f64) -> String {
    let rows = coefficient_rows(model, level);
    let stat = match model.coef_inference() {
        Inference::T { .. } => "t",
        Inference::Z => "z",
    };
    let pct = sig6(level * 100.0);
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>12}  {:>10}  {:>6}  {:>10}  {:>12}  {:>12}",
        "term",
        "estimate",
        "std.err",
        stat,
        "df",
        "p",
        format!("lo{pct}"),
        format!("hi{pct}"),
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>12}  {:>10}  {:>6}  {:>10}  {:>12}  {:>12}",
            r.name,
            sig6(r.estimate),
            sig6(r.std_error),
            sig6(r.statistic),
            r.df.map_or("-".to_string(), sig6),
            sig6(r.p_value),
            sig6(r.ci.0),
            sig6(r.ci.1),
        );
    }
    out
}
