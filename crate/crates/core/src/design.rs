//! Model specifications and design-matrix construction.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::data::{ColumnData, DataTable};
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

/// A main effect (one factor) or an interaction (several factors).
///
/// Term lists need not be hierarchical: an interaction may appear without
/// its main effects.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    pub factors: Vec<String>,
}

impl Term {
    pub fn main(column: &str) -> Self {
        Term {
            factors: vec![column.to_string()],
        }
    }

    pub fn interaction(columns: &[&str]) -> Self {
        Term {
            factors: columns.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Equal up to factor order.
    pub fn same_factors(&self, other: &Term) -> bool {
        let mut a: Vec<&str> = self.factors.iter().map(String::as_str).collect();
        let mut b: Vec<&str> = other.factors.iter().map(String::as_str).collect();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    /// Parses `a`, `a:b`, `a:b:c`.
    pub fn parse(s: &str) -> Result<Self> {
        let factors: Vec<String> = s.split(':').map(|f| f.trim().to_string()).collect();
        if factors.iter().any(String::is_empty) {
            return Err(Error::Model(format!("malformed term `{s}`")));
        }
        Ok(Term { factors })
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.factors.join(":"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub response: String,
    pub link: Link,
    pub family: Family,
    pub terms: Vec<Term>,
}

impl ModelSpec {
    pub fn linear(response: &str, terms: &[&str]) -> Result<Self> {
        Self::new(response, Link::Identity, Family::Gaussian, terms)
    }

    pub fn logistic(response: &str, terms: &[&str]) -> Result<Self> {
        Self::new(response, Link::Logit, Family::Binomial, terms)
    }

    pub fn new(response: &str, link: Link, family: Family, terms: &[&str]) -> Result<Self> {
        let spec = ModelSpec {
            response: response.to_string(),
            link,
            family,
            terms: terms.iter().map(|t| Term::parse(t)).collect::<Result<_>>()?,
        };
        spec.check_link()?;
        Ok(spec)
    }

    pub fn check_link(&self) -> Result<()> {
        let ok = matches!(
            (self.link, self.family),
            (Link::Identity, Family::Gaussian)
                | (Link::Logit, Family::Binomial)
                | (Link::Log, Family::Binomial)
                | (Link::Log, Family::Poisson)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Model(format!(
                "unsupported link/family combination {:?}/{:?}",
                self.link, self.family
            )))
        }
    }

    pub fn with_terms(&self, extra: impl IntoIterator<Item = Term>) -> ModelSpec {
        let mut s = self.clone();
        for t in extra {
            if !s.terms.iter().any(|u| u.same_factors(&t)) {
                s.terms.push(t);
            }
        }
        s
    }
}

/// Design matrix with intercept first and a record of which columns each term owns.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub term_map: Vec<(Term, Range<usize>)>,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    /// Term owning matrix column `j`.
    pub fn term_of(&self, j: usize) -> String {
        if j == 0 {
            return INTERCEPT.to_string();
        }
        self.term_map
            .iter()
            .find(|(_, r)| r.contains(&j))
            .map(|(t, _)| t.to_string())
            .unwrap_or_else(|| self.names[j].clone())
    }
}

/// Expanded columns for one factor: (name suffix, values).
fn expand_factor(table: &DataTable, name: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let col = table.column(name)?;
    Ok(match &col.data {
        ColumnData::Numeric(v) | ColumnData::Binary(v) => vec![(name.to_string(), v.clone())],
        ColumnData::Categorical { codes, levels } => levels
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, lev)| {
                let v = codes.iter().map(|&c| if c == k { 1.0 } else { 0.0 }).collect();
                (format!("{name}[{lev}]"), v)
            })
            .collect(),
    })
}

/// Builds the design for `spec` on `table`.
///
/// Categorical factors are dummy-coded against their first level;
/// interactions are elementwise products of expanded columns. Exact or
/// near-exact collinearity is reported as [`Error::RankDeficient`].
pub fn build_design(table: &DataTable, spec: &ModelSpec) -> Result<Design> {
    let n = table.n_rows();
    let y = DVector::from_column_slice(table.numeric(&spec.response)?);
    let mut names = vec![INTERCEPT.to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut term_map = Vec::with_capacity(spec.terms.len());

    for term in &spec.terms {
        let mut expanded: Vec<(String, Vec<f64>)> = vec![(String::new(), vec![1.0; n])];
        for f in &term.factors {
            let fx = expand_factor(table, f)?;
            expanded = expanded
                .iter()
                .flat_map(|(pn, pv)| {
                    fx.iter().map(move |(fname, fv)| {
                        let name = if pn.is_empty() {
                            fname.clone()
                        } else {
                            format!("{pn}:{fname}")
                        };
                        (name, pv.iter().zip(fv).map(|(a, b)| a * b).collect())
                    })
                })
                .collect();
        }
        let start = cols.len();
        for (name, v) in expanded {
            names.push(name);
            cols.push(v);
        }
        term_map.push((term.clone(), start..cols.len()));
    }

    let p = cols.len();
    let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
    let design = Design { x, y, names, term_map };
    if n <= p {
        return Err(Error::Model(format!("{n} observations for {p} coefficients")));
    }
    check_rank(&design)?;
    Ok(design)
}

/// Sequential modified Gram-Schmidt; the first column whose residual norm
/// collapses relative to its original norm names the offending term.
pub fn check_rank(design: &Design) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..design.x.ncols() {
        let col = design.x.column(j).into_owned();
        let norm0 = col.norm();
        let mut r = col;
        for q in &basis {
            let d = q.dot(&r);
            r.axpy(-d, q, 1.0);
        }
        let norm = r.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            return Err(Error::RankDeficient {
                term: design.names[j].clone(),
            });
        }
        basis.push(r / norm);
    }
    Ok(())
}
