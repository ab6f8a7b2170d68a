//! TATE formulas and the two sensitivity analyses.
//!
//! The target-population effect is a linear combination of outcome-model
//! coefficients: the treatment coefficient plus each modifier-by-treatment
//! coefficient times the population mean of its modifier. Means of Z come
//! from the population data; means of V are unknown and are swept over a
//! range (the sensitivity parameter).
//!
//! When a modifier enters through cross-classified cells (for example race by
//! severity), each cell coefficient is weighted by a product of quantities
//! such as `nonwhite * (1 - sis)`, which is what [`TateFormula`] encodes.
//!
//! Method 1 fits the outcome model to the unweighted trial. Method 2 fits the
//! same model to the trial weighted to resemble the population on X and Z.

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;

use crate::data::{AnalysisContext, DataTable, MeanEstimate, OutcomeRole, PopulationTarget, LONG_TIME};
use crate::design::{build_design, Family, Link, ModelSpec, Term};
use crate::error::{Error, Result};
use crate::estimation::{fit_glm, fit_random_intercepts, lincom, sig6, AnyFit, Estimates, LinComResult, VcovRequest};
use crate::stats::weighted_mean;
use crate::weighting::{compose_two_step, diagnostics, BalanceTable, WeightSet, WeightingPlan};

/// Scale on which TATE is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectScale {
    #[default]
    Additive,
    LogOr,
    Or,
    LogRr,
    Rr,
    LogRateRatio,
    RateRatio,
}

impl EffectScale {
    /// Ratio scales are the exponential of the matching log scale.
    pub fn exponentiated(&self) -> bool {
        matches!(self, EffectScale::Or | EffectScale::Rr | EffectScale::RateRatio)
    }

    pub fn label(&self) -> &'static str {
        match self {
            EffectScale::Additive => "additive",
            EffectScale::LogOr => "log_or",
            EffectScale::Or => "or",
            EffectScale::LogRr => "log_rr",
            EffectScale::Rr => "rr",
            EffectScale::LogRateRatio => "log_rate_ratio",
            EffectScale::RateRatio => "rate_ratio",
        }
    }

    /// Checks that the scale matches the model's link and family.
    pub fn check_model(&self, link: Link, family: Family) -> Result<()> {
        let ok = match self {
            EffectScale::Additive => link == Link::Identity,
            EffectScale::LogOr | EffectScale::Or => link == Link::Logit,
            EffectScale::LogRr | EffectScale::Rr => link == Link::Log && family == Family::Binomial,
            EffectScale::LogRateRatio | EffectScale::RateRatio => link == Link::Log && family == Family::Poisson,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Sensitivity(format!(
                "effect scale `{}` does not match a {link:?}/{family:?} model",
                self.label()
            )))
        }
    }

    /// The natural log-linear scale of a model.
    pub fn natural(link: Link, family: Family) -> EffectScale {
        match (link, family) {
            (Link::Identity, _) => EffectScale::Additive,
            (Link::Logit, _) => EffectScale::LogOr,
            (Link::Log, Family::Poisson) => EffectScale::LogRateRatio,
            (Link::Log, _) => EffectScale::LogRr,
        }
    }

    fn apply(&self, r: LinComResult) -> LinComResult {
        if self.exponentiated() {
            r.map(f64::exp)
        } else {
            r
        }
    }
}

impl fmt::Display for EffectScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A population mean that enters the TATE formula: the mean of a numeric or
/// binary column, or the proportion at one level of a categorical column.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    pub name: String,
    pub column: String,
    #[serde(default)]
    pub level: Option<String>,
}

impl Quantity {
    pub fn new(name: &str, column: &str, level: Option<&str>) -> Self {
        Quantity {
            name: name.to_string(),
            column: column.to_string(),
            level: level.map(str::to_string),
        }
    }

    /// Design-matrix name of the modifier: `column` or `column[level]`.
    pub fn coef_factor(&self) -> String {
        match &self.level {
            Some(l) => format!("{}[{l}]", self.column),
            None => self.column.clone(),
        }
    }

    /// Mean of the quantity in `table`, optionally weighted.
    pub fn mean_in(&self, table: &DataTable, weights: Option<&[f64]>) -> Result<f64> {
        let v = match &self.level {
            Some(l) => table.indicator(&self.column, l)?,
            None => table.numeric(&self.column)?.to_vec(),
        };
        Ok(match weights {
            Some(w) => weighted_mean(&v, w),
            None => crate::stats::mean(&v),
        })
    }
}

/// One factor of a coefficient weight.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Value(String),
    /// `1 − value`
    Complement(String),
    Constant(f64),
}

/// A modifier-by-treatment coefficient and the product of quantities that
/// multiplies it in the TATE formula.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefWeight {
    pub coefficient: String,
    pub factors: Vec<Factor>,
}

impl CoefWeight {
    /// Parses `a * (1 - b) * 0.5` style products.
    pub fn parse(coefficient: &str, expr: &str) -> Result<CoefWeight> {
        let bad = || Error::Sensitivity(format!("cannot parse weight expression `{expr}` for `{coefficient}`"));
        let mut factors = Vec::new();
        for raw in expr.split('*') {
            let mut s = raw.trim();
            while s.starts_with('(') && s.ends_with(')') {
                s = s[1..s.len() - 1].trim();
            }
            if s.is_empty() {
                return Err(bad());
            }
            if let Ok(c) = s.parse::<f64>() {
                factors.push(Factor::Constant(c));
            } else if let Some(rest) = s
                .strip_prefix('1')
                .map(str::trim_start)
                .and_then(|r| r.strip_prefix('-'))
            {
                let name = rest.trim();
                if !is_identifier(name) {
                    return Err(bad());
                }
                factors.push(Factor::Complement(name.to_string()));
            } else if is_identifier(s) {
                factors.push(Factor::Value(s.to_string()));
            } else {
                return Err(bad());
            }
        }
        Ok(CoefWeight {
            coefficient: coefficient.to_string(),
            factors,
        })
    }

    fn weight(&self, values: &BTreeMap<String, f64>) -> Result<f64> {
        let get = |n: &str| {
            values
                .get(n)
                .copied()
                .ok_or_else(|| Error::Sensitivity(format!("no value for quantity `{n}`")))
        };
        self.factors.iter().try_fold(1.0, |acc, f| {
            Ok(acc
                * match f {
                    Factor::Value(n) => get(n)?,
                    Factor::Complement(n) => 1.0 - get(n)?,
                    Factor::Constant(c) => *c,
                })
        })
    }

    fn names(&self) -> impl Iterator<Item = &str> {
        self.factors.iter().filter_map(|f| match f {
            Factor::Value(n) | Factor::Complement(n) => Some(n.as_str()),
            Factor::Constant(_) => None,
        })
    }
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.')
        && !s.chars().next().is_some_and(|c| c.is_ascii_digit())
}

/// `TATE = β_treat + Σ_k w_k(values) β_k` on the model's link scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TateFormula {
    pub treatment: String,
    pub terms: Vec<CoefWeight>,
}

impl TateFormula {
    /// One interaction per quantity: coefficient `treatment:modifier` with
    /// weight equal to the quantity.
    pub fn automatic(treatment_factors: &[String], quantities: &[&Quantity]) -> TateFormula {
        let treatment = treatment_factors.join(":");
        let terms = quantities
            .iter()
            .map(|q| CoefWeight {
                coefficient: format!("{treatment}:{}", q.coef_factor()),
                factors: vec![Factor::Value(q.name.clone())],
            })
            .collect();
        TateFormula { treatment, terms }
    }

    /// Maps every coefficient reference to the model's exact name, matching
    /// interaction factors in any order.
    pub fn resolve(&self, names: &[String]) -> Result<TateFormula> {
        let find = |target: &str| -> Result<String> {
            if names.iter().any(|n| n == target) {
                return Ok(target.to_string());
            }
            let key = factor_set(target);
            names.iter().find(|n| factor_set(n) == key).cloned().ok_or_else(|| {
                Error::Sensitivity(format!(
                    "the outcome model has no coefficient `{target}`; add the matching interaction term"
                ))
            })
        };
        Ok(TateFormula {
            treatment: find(&self.treatment)?,
            terms: self
                .terms
                .iter()
                .map(|t| {
                    Ok(CoefWeight {
                        coefficient: find(&t.coefficient)?,
                        factors: t.factors.clone(),
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    /// Quantity names used by the formula.
    pub fn quantity_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.terms.iter().flat_map(|t| t.names().map(str::to_string)).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Named combination weights at the given quantity values.
    pub fn combination(&self, values: &BTreeMap<String, f64>) -> Result<Vec<(String, f64)>> {
        let mut combo = vec![(self.treatment.clone(), 1.0)];
        for t in &self.terms {
            combo.push((t.coefficient.clone(), t.weight(values)?));
        }
        Ok(combo)
    }
}

fn factor_set(name: &str) -> Vec<&str> {
    let mut v: Vec<&str> = name.split(':').collect();
    v.sort_unstable();
    v
}

/// Link-scale lincom of the TATE formula at fixed quantity values.
pub fn tate_lincom<E: Estimates + ?Sized>(
    model: &E,
    formula: &TateFormula,
    values: &BTreeMap<String, f64>,
    level: f64,
) -> Result<LinComResult> {
    let combo = formula.combination(values)?;
    let refs: Vec<(&str, f64)> = combo.iter().map(|(n, w)| (n.as_str(), *w)).collect();
    lincom(model, &refs, level)
}

/// TATE at fixed quantity values on the requested scale. Ratio scales are
/// the exponential of the log-scale lincom and its limits.
pub fn tate_point<E: Estimates + ?Sized>(
    model: &E,
    formula: &TateFormula,
    values: &BTreeMap<String, f64>,
    scale: EffectScale,
    level: f64,
) -> Result<LinComResult> {
    scale.check_model(model.model_link(), model.model_family())?;
    Ok(scale.apply(tate_lincom(model, formula, values, level)?))
}

/// Point estimate and confidence limits of a TATE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TateEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Most corners evaluated for Z means with confidence limits (2^12).
const MAX_CORNER_DIMS: usize = 12;

/// TATE with confidence limits that account for uncertainty in the Z means.
///
/// The point estimate uses the Z point estimates. Lincoms are evaluated at
/// every corner of the Z confidence limits; the TATE lower limit is the
/// smallest corner lower limit and the upper limit the largest corner upper
/// limit. Z means without limits are held at their point value.
pub fn tate_ci<E: Estimates + ?Sized>(
    model: &E,
    formula: &TateFormula,
    z: &[(String, MeanEstimate)],
    v: &BTreeMap<String, f64>,
    scale: EffectScale,
    level: f64,
) -> Result<TateEstimate> {
    scale.check_model(model.model_link(), model.model_family())?;
    let mut values = v.clone();
    for (name, m) in z {
        values.insert(name.clone(), m.point);
    }
    let centre = tate_lincom(model, formula, &values, level)?;
    let uncertain: Vec<&(String, MeanEstimate)> = z.iter().filter(|(_, m)| m.has_ci()).collect();
    if uncertain.len() > MAX_CORNER_DIMS {
        return Err(Error::Sensitivity(format!(
            "{} Z means with confidence limits; at most {MAX_CORNER_DIMS} are supported",
            uncertain.len()
        )));
    }
    let (mut lo, mut hi) = centre.ci;
    for mask in 0..(1usize << uncertain.len()) {
        if uncertain.is_empty() {
            break;
        }
        for (k, (name, m)) in uncertain.iter().enumerate() {
            let (a, b) = m.limits();
            values.insert(name.clone(), if mask >> k & 1 == 0 { a } else { b });
        }
        let r = tate_lincom(model, formula, &values, level)?;
        lo = lo.min(r.ci.0);
        hi = hi.max(r.ci.1);
    }
    let out = LinComResult {
        estimate: centre.estimate,
        std_error: centre.std_error,
        ci: (lo, hi),
    };
    let out = scale.apply(out);
    Ok(TateEstimate {
        point: out.estimate,
        lo: out.ci.0,
        hi: out.ci.1,
    })
}

/// A sensitivity parameter: the unknown population mean of a V quantity.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VAxis {
    #[serde(flatten)]
    pub quantity: Quantity,
    /// Plausible range of the population mean.
    pub range: (f64, f64),
    /// Value held while another axis is swept.
    #[serde(default)]
    pub fixed: Option<f64>,
}

/// A Z quantity and, optionally, its population mean. Without a mean it is
/// taken from the population data.
#[derive(Debug, Clone, PartialEq)]
pub struct ZQuantity {
    pub quantity: Quantity,
    pub mean: Option<MeanEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityConfig {
    pub z: Vec<ZQuantity>,
    pub v: Vec<VAxis>,
    /// Name of the V quantity swept; defaults to the only V.
    pub sweep: Option<String>,
    /// Explicit coefficient weights; `None` uses [`TateFormula::automatic`].
    pub coefficients: Option<Vec<CoefWeight>>,
    pub grid_points: usize,
    pub scale: EffectScale,
    pub ci_level: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            z: vec![],
            v: vec![],
            sweep: None,
            coefficients: None,
            grid_points: 9,
            scale: EffectScale::Additive,
            ci_level: 0.95,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(Error::Sensitivity("grid_points must be at least 2".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Sensitivity(format!(
                "ci_level {} is not in (0, 1)",
                self.ci_level
            )));
        }
        for a in &self.v {
            if !(a.range.0 <= a.range.1) {
                return Err(Error::Sensitivity(format!(
                    "range of `{}` has low {} above high {}",
                    a.quantity.name, a.range.0, a.range.1
                )));
            }
        }
        let mut names: Vec<&str> = self
            .z
            .iter()
            .map(|z| z.quantity.name.as_str())
            .chain(self.v.iter().map(|v| v.quantity.name.as_str()))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Sensitivity(format!("quantity `{}` declared twice", w[0])));
        }
        Ok(())
    }

    pub fn formula(&self, treatment_factors: &[String]) -> TateFormula {
        match &self.coefficients {
            Some(c) => TateFormula {
                treatment: treatment_factors.join(":"),
                terms: c.clone(),
            },
            None => {
                let q: Vec<&Quantity> = self
                    .z
                    .iter()
                    .map(|z| &z.quantity)
                    .chain(self.v.iter().map(|v| &v.quantity))
                    .collect();
                TateFormula::automatic(treatment_factors, &q)
            }
        }
    }

    fn sweep_axis(&self) -> Result<Option<usize>> {
        match (&self.sweep, self.v.len()) {
            (_, 0) => Ok(None),
            (None, 1) => Ok(Some(0)),
            (None, _) => Err(Error::Sensitivity("several V quantities: name the one to sweep".into())),
            (Some(name), _) => self
                .v
                .iter()
                .position(|a| &a.quantity.name == name)
                .map(Some)
                .ok_or_else(|| Error::Sensitivity(format!("sweep axis `{name}` is not a declared V"))),
        }
    }
}

/// `n` evenly spaced values from `lo` to `hi`, both included exactly.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    /// Outcome model fit to the unweighted trial.
    Method1,
    /// Outcome model fit to the trial weighted to the population.
    Method2,
}

impl MethodKind {
    pub fn label(&self) -> &'static str {
        match self {
            MethodKind::Method1 => "M1",
            MethodKind::Method2 => "M2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensRow {
    pub ev: f64,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    pub method: MethodKind,
    pub scale: EffectScale,
    /// Name of the swept quantity; `None` when there is no V.
    pub axis: Option<String>,
    pub rows: Vec<SensRow>,
    /// Values of V quantities held fixed.
    pub fixed: BTreeMap<String, f64>,
    /// Z means used.
    pub z: Vec<(String, MeanEstimate)>,
    /// Model-implied trial effect (formula at trial means).
    pub sate_reference: Option<TateEstimate>,
    pub notes: Vec<String>,
}

impl SensitivityResult {
    /// Rows as `ev_value,estimate,lower,upper,method,scale`.
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    sig6(r.ev),
                    sig6(r.point),
                    sig6(r.lo),
                    sig6(r.hi),
                    self.method.label(),
                    self.scale
                )
            })
            .collect()
    }

    pub const CSV_HEADER: &'static str = "ev_value,estimate,lower,upper,method,scale";
}

/// Z means: from the configuration, else from the population.
pub fn resolve_z_means(cfg: &SensitivityConfig, pop: &PopulationTarget) -> Result<Vec<(String, MeanEstimate)>> {
    cfg.z
        .iter()
        .map(|z| {
            let m = match z.mean {
                Some(m) => m,
                None => pop
                    .mean_of(&z.quantity.name, &z.quantity.column, z.quantity.level.as_deref())
                    .map_err(|e| match e {
                        Error::MissingColumn(c) => {
                            Error::Sensitivity(format!("no population mean for Z quantity `{}` ({c})", z.quantity.name))
                        }
                        e => e,
                    })?,
            };
            Ok((z.quantity.name.clone(), m))
        })
        .collect()
}

/// Evaluates [`tate_ci`] along the sweep axis.
pub fn sweep<E: Estimates + ?Sized>(
    model: &E,
    cfg: &SensitivityConfig,
    formula: &TateFormula,
    z: &[(String, MeanEstimate)],
    method: MethodKind,
) -> Result<SensitivityResult> {
    cfg.validate()?;
    let formula = formula.resolve(model.coef_names())?;
    let axis = cfg.sweep_axis()?;
    let mut fixed = BTreeMap::new();
    for (k, a) in cfg.v.iter().enumerate() {
        if Some(k) == axis {
            continue;
        }
        let v = a.fixed.ok_or_else(|| {
            Error::Sensitivity(format!(
                "V quantity `{}` is not swept and needs a fixed value",
                a.quantity.name
            ))
        })?;
        fixed.insert(a.quantity.name.clone(), v);
    }
    let evs = match axis {
        Some(k) => grid(cfg.v[k].range.0, cfg.v[k].range.1, cfg.grid_points),
        None => vec![f64::NAN],
    };
    let mut rows = Vec::with_capacity(evs.len());
    for ev in evs {
        let mut values = fixed.clone();
        if let Some(k) = axis {
            values.insert(cfg.v[k].quantity.name.clone(), ev);
        }
        let t = tate_ci(model, &formula, z, &values, cfg.scale, cfg.ci_level)?;
        rows.push(SensRow {
            ev,
            point: t.point,
            lo: t.lo,
            hi: t.hi,
        });
    }
    let mut notes = Vec::new();
    if z.iter().filter(|(_, m)| m.has_ci()).count() > 1 {
        notes.push("confidence limits take the extremes over all corners of several Z confidence intervals".into());
    }
    Ok(SensitivityResult {
        method,
        scale: cfg.scale,
        axis: axis.map(|k| cfg.v[k].quantity.name.clone()),
        rows,
        fixed,
        z: z.to_vec(),
        sate_reference: None,
        notes,
    })
}

/// One cell of a two-parameter sensitivity grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub v1: f64,
    pub v2: f64,
    pub estimate: TateEstimate,
}

/// Full grid over exactly two V quantities.
pub fn sweep_2d<E: Estimates + ?Sized>(
    model: &E,
    cfg: &SensitivityConfig,
    formula: &TateFormula,
    z: &[(String, MeanEstimate)],
) -> Result<Vec<GridCell>> {
    cfg.validate()?;
    if cfg.v.len() != 2 {
        return Err(Error::Sensitivity(format!(
            "a two-parameter grid needs exactly two V quantities, found {}",
            cfg.v.len()
        )));
    }
    let formula = formula.resolve(model.coef_names())?;
    let (a, b) = (&cfg.v[0], &cfg.v[1]);
    let mut out = Vec::new();
    for v1 in grid(a.range.0, a.range.1, cfg.grid_points) {
        for v2 in grid(b.range.0, b.range.1, cfg.grid_points) {
            let values = BTreeMap::from([(a.quantity.name.clone(), v1), (b.quantity.name.clone(), v2)]);
            out.push(GridCell {
                v1,
                v2,
                estimate: tate_ci(model, &formula, z, &values, cfg.scale, cfg.ci_level)?,
            });
        }
    }
    Ok(out)
}

/// Factors of the treatment-effect term: `A`, or `F:A` for pre/post data.
pub fn treatment_factors(ctx: &AnalysisContext) -> Vec<String> {
    let a = ctx.roles().treatment.clone();
    match &ctx.roles().outcome {
        Some(OutcomeRole::Long { time, .. }) => vec![time.clone(), a],
        Some(OutcomeRole::PrePost { .. }) => vec![LONG_TIME.to_string(), a],
        _ => vec![a],
    }
}

/// Fits the outcome model: random intercepts for pre/post data, a GLM
/// otherwise. `weights` hold one weight per subject.
pub fn fit_outcome(
    ctx: &AnalysisContext,
    spec: &ModelSpec,
    weights: Option<&[f64]>,
    vcov: &VcovRequest,
) -> Result<AnyFit> {
    if ctx.is_long() {
        let long = ctx.long()?;
        Ok(AnyFit::Mixed(fit_random_intercepts(&long, spec, weights, vcov)?))
    } else {
        let design = build_design(ctx.table(), spec)?;
        Ok(AnyFit::Single(fit_glm(&design, spec.link, spec.family, weights, vcov)?))
    }
}

/// Trial (optionally weighted) means of every quantity in the configuration.
fn trial_means(
    ctx: &AnalysisContext,
    cfg: &SensitivityConfig,
    weights: Option<&[f64]>,
) -> Result<BTreeMap<String, f64>> {
    let subjects = ctx.subjects();
    cfg.z
        .iter()
        .map(|z| &z.quantity)
        .chain(cfg.v.iter().map(|v| &v.quantity))
        .map(|q| Ok((q.name.clone(), q.mean_in(&subjects, weights)?)))
        .collect()
}

/// Options shared by both methods.
#[derive(Debug, Clone, Default)]
pub struct MethodOptions {
    /// Covariance request for the outcome fit (default: model-based when
    /// unweighted, sandwich when weighted).
    pub vcov: VcovRequest,
    /// Within-trial weights for the balance-adjusted variant of Method 1.
    pub within_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub fit: AnyFit,
    pub result: SensitivityResult,
}

/// Method 1: fit the outcome model to the unweighted trial (or to the
/// within-trial balanced trial) and sweep the TATE formula.
pub fn run_method1(
    ctx: &AnalysisContext,
    pop: &PopulationTarget,
    spec: &ModelSpec,
    cfg: &SensitivityConfig,
    opts: &MethodOptions,
) -> Result<MethodRun> {
    cfg.validate()?;
    let z = resolve_z_means(cfg, pop)?;
    let w = opts.within_weights.as_deref();
    let fit = fit_outcome(ctx, spec, w, &opts.vcov)?;
    let formula = cfg.formula(&treatment_factors(ctx));
    let mut result = sweep(&fit, cfg, &formula, &z, MethodKind::Method1)?;
    result.sate_reference = Some(reference_at_means(&fit, cfg, &formula, &trial_means(ctx, cfg, w)?)?);
    if w.is_some() {
        result
            .notes
            .push("outcome model fit to the within-trial balanced trial".into());
    }
    Ok(MethodRun { fit, result })
}

fn reference_at_means(
    fit: &AnyFit,
    cfg: &SensitivityConfig,
    formula: &TateFormula,
    means: &BTreeMap<String, f64>,
) -> Result<TateEstimate> {
    let formula = formula.resolve(fit.coef_names())?;
    let r = tate_point(fit, &formula, means, cfg.scale, cfg.ci_level)?;
    Ok(TateEstimate {
        point: r.estimate,
        lo: r.ci.0,
        hi: r.ci.1,
    })
}

#[derive(Debug, Clone)]
pub struct Method2Run {
    pub weights: WeightSet,
    pub balance: BalanceTable,
    pub fit: AnyFit,
    pub result: SensitivityResult,
    /// TATE formula at the weighted trial means: the (X, Z)-adjusted ATE.
    pub adjusted_ate: TateEstimate,
}

/// Method 2: two-step weights, then the outcome model fit to the weighted
/// trial and the same sweep.
pub fn run_method2(
    ctx: &AnalysisContext,
    pop: &PopulationTarget,
    spec: &ModelSpec,
    cfg: &SensitivityConfig,
    plan: &WeightingPlan,
    opts: &MethodOptions,
) -> Result<Method2Run> {
    cfg.validate()?;
    let z = resolve_z_means(cfg, pop)?;
    let subjects = ctx.subjects();
    let treatment = &ctx.roles().treatment;
    let ws = compose_two_step(&subjects, treatment, pop, plan)?;
    let balance_covars: Vec<&str> = plan
        .within_covars
        .iter()
        .chain(&plan.population_covars)
        .map(String::as_str)
        .collect();
    let balance = diagnostics(&ws.weights, &subjects, treatment, &balance_covars, Some(pop))?;
    let fit = fit_outcome(ctx, spec, Some(&ws.weights), &opts.vcov)?;
    let formula = cfg.formula(&treatment_factors(ctx));
    let mut result = sweep(&fit, cfg, &formula, &z, MethodKind::Method2)?;
    let weighted_means = trial_means(ctx, cfg, Some(&ws.weights))?;
    let adjusted_ate = reference_at_means(&fit, cfg, &formula, &weighted_means)?;
    result.sate_reference = Some(adjusted_ate);
    result.notes.push(format!("weights: {}", ws.procedure.label()));
    result.notes.extend(ws.warnings.iter().cloned());
    Ok(Method2Run {
        weights: ws,
        balance,
        fit,
        result,
        adjusted_ate,
    })
}

/// Whether the two methods agree at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    /// Per grid value: each method's point estimate lies in the other's CI.
    pub per_point: Vec<(f64, bool)>,
    pub agree: bool,
    pub recommendation: String,
}

/// Compares Method 1 and Method 2 point estimates. Method 2 is preferred
/// unless the two agree, in which case the unweighted results may be used.
pub fn compare_methods(m1: &SensitivityResult, m2: &SensitivityResult) -> Result<Agreement> {
    if m1.rows.len() != m2.rows.len() {
        return Err(Error::Sensitivity("the two results use different grids".into()));
    }
    let per_point: Vec<(f64, bool)> = m1
        .rows
        .iter()
        .zip(&m2.rows)
        .map(|(a, b)| {
            let ok = a.point >= b.lo && a.point <= b.hi && b.point >= a.lo && b.point <= a.hi;
            (a.ev, ok)
        })
        .collect();
    let agree = per_point.iter().all(|p| p.1);
    let recommendation = if agree {
        "methods agree: the unweighted (Method 1) results can be used".to_string()
    } else {
        "methods disagree: use the weighted (Method 2) results".to_string()
    };
    Ok(Agreement {
        per_point,
        agree,
        recommendation,
    })
}

/// A candidate effect modifier for the interaction scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Candidate {
    Single(String),
    /// Product of two columns.
    Pair(String, String),
    /// Cross-classification of categorical (or binary) columns.
    Cross(Vec<String>),
}

impl Candidate {
    pub fn label(&self) -> String {
        match self {
            Candidate::Single(c) => c.clone(),
            Candidate::Pair(a, b) => format!("{a}*{b}"),
            Candidate::Cross(cols) => cols.join("-"),
        }
    }

    /// Singles, all pairs and all two-way cross-classifications of the
    /// categorical columns among `columns`.
    pub fn enumerate(table: &DataTable, columns: &[String]) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = columns.iter().cloned().map(Candidate::Single).collect();
        for (i, a) in columns.iter().enumerate() {
            for b in &columns[i + 1..] {
                out.push(Candidate::Pair(a.clone(), b.clone()));
            }
        }
        let discrete = |c: &String| {
            table
                .column(c)
                .is_ok_and(|col| col.is_categorical() || matches!(col.data, crate::data::ColumnData::Binary(_)))
        };
        let cats: Vec<&String> = columns.iter().filter(|c| discrete(c)).collect();
        for (i, a) in cats.iter().enumerate() {
            for b in &cats[i + 1..] {
                out.push(Candidate::Cross(vec![(*a).clone(), (*b).clone()]));
            }
        }
        out
    }
}

/// Scan result for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanEntry {
    pub candidate: String,
    /// Candidate-by-treatment coefficients: (name, estimate, SE, statistic).
    pub coefficients: Vec<(String, f64, f64, f64)>,
    pub max_abs_statistic: f64,
    pub flagged: bool,
    /// Set when the candidate could not be fit.
    pub skipped: Option<String>,
}

/// Advisory threshold on |statistic| for flagging a candidate.
pub const SCAN_THRESHOLD: f64 = 1.96;

/// Fits the base model augmented with each candidate and its interactions
/// with the treatment term, and ranks candidates by the largest |statistic|
/// of their treatment interactions.
///
/// The ranking is advisory: trials are rarely powered to detect effect
/// modification, so borderline candidates are worth treating as modifiers.
pub fn scan_effect_modifiers(
    ctx: &AnalysisContext,
    base: &ModelSpec,
    candidates: &[Candidate],
) -> Result<Vec<ScanEntry>> {
    let tf = treatment_factors(ctx);
    let mut entries = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let label = cand.label();
        let (table, factors): (DataTable, Vec<String>) = match cand {
            Candidate::Single(c) => (ctx.table().clone(), vec![c.clone()]),
            Candidate::Pair(a, b) => (ctx.table().clone(), vec![a.clone(), b.clone()]),
            Candidate::Cross(cols) => {
                let name = format!("__scan_{}", cols.join("_"));
                let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
                let col = ctx.table().cross_classify(&name, &refs)?;
                (ctx.table().clone().add_column(col)?, vec![name])
            }
        };
        let sub = match ctx.with_table(table) {
            Ok(s) => s,
            Err(e) => {
                entries.push(skipped(label, e));
                continue;
            }
        };
        let mut extra = Vec::new();
        // Every subset of the treatment factors, so the candidate enters hierarchically.
        for mask in 0..(1usize << tf.len()) {
            let mut f = factors.clone();
            f.extend(
                tf.iter()
                    .enumerate()
                    .filter(|(k, _)| mask >> k & 1 == 1)
                    .map(|(_, t)| t.clone()),
            );
            extra.push(Term { factors: f });
        }
        let mut reduced = base.clone();
        if let Candidate::Cross(cols) = cand {
            // The crossed factor spans every term built only from its sources.
            reduced.terms.retain(|t| {
                let own: Vec<&String> = t.factors.iter().filter(|f| !tf.contains(f)).collect();
                own.is_empty() || !own.iter().all(|f| cols.contains(f))
            });
        }
        let spec = reduced.with_terms(extra);
        let fit = match fit_outcome(&sub, &spec, None, &VcovRequest::Auto) {
            Ok(f) => f,
            Err(e) => {
                entries.push(skipped(label, e));
                continue;
            }
        };
        let names = fit.coef_names();
        let b = fit.coef_values();
        let v = fit.coef_vcov();
        let mut target: Vec<&str> = tf.iter().map(String::as_str).collect();
        target.sort_unstable();
        let mut coefficients = Vec::new();
        for (j, n) in names.iter().enumerate() {
            let parts: Vec<&str> = n.split(':').collect();
            let mut tp: Vec<&str> = parts.iter().copied().filter(|p| tf.iter().any(|t| t == p)).collect();
            tp.sort_unstable();
            let rest = parts.len() - tp.len();
            if tp == target && rest == factors.len() && rest > 0 {
                let se = v[(j, j)].max(0.0).sqrt();
                let display = match cand {
                    Candidate::Cross(_) => n.replace(&factors[0], &label),
                    _ => n.clone(),
                };
                coefficients.push((display, b[j], se, b[j] / se));
            }
        }
        let max_abs = coefficients.iter().map(|c| c.3.abs()).fold(0.0, f64::max);
        entries.push(ScanEntry {
            candidate: label,
            coefficients,
            max_abs_statistic: max_abs,
            flagged: max_abs >= SCAN_THRESHOLD,
            skipped: None,
        });
    }
    entries.sort_by(|a, b| {
        a.skipped
            .is_some()
            .cmp(&b.skipped.is_some())
            .then(b.max_abs_statistic.total_cmp(&a.max_abs_statistic))
    });
    Ok(entries)
}

fn skipped(label: String, e: Error) -> ScanEntry {
    ScanEntry {
        candidate: label,
        coefficients: vec![],
        max_abs_statistic: 0.0,
        flagged: false,
        skipped: Some(e.to_string()),
    }
}

/// Average treatment effect from a model without modifier interactions:
/// the treatment coefficient's lincom.
pub fn estimate_ate(
    ctx: &AnalysisContext,
    spec: &ModelSpec,
    weights: Option<&[f64]>,
    level: f64,
) -> Result<TateEstimate> {
    let fit = fit_outcome(ctx, spec, weights, &VcovRequest::Auto)?;
    let formula = TateFormula {
        treatment: treatment_factors(ctx).join(":"),
        terms: vec![],
    }
    .resolve(fit.coef_names())?;
    let r = tate_lincom(&fit, &formula, &BTreeMap::new(), level)?;
    let scale = EffectScale::natural(fit.model_link(), fit.model_family());
    let r = scale.apply(r);
    Ok(TateEstimate {
        point: r.estimate,
        lo: r.ci.0,
        hi: r.ci.1,
    })
}
