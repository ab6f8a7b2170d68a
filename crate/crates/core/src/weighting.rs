//! Trial-to-population weights, within-trial balancing weights and balance
//! diagnostics.
//!
//! Which trial-to-population procedure is legal depends on the population
//! data available:
//!
//! | population data                         | procedure                 |
//! |-----------------------------------------|---------------------------|
//! | dataset, trial members not identifiable | [`weight_by_odds`]        |
//! | dataset with a trial-membership column  | [`weight_inverse_probability`] |
//! | joint cell probabilities of {X, Z}      | [`weight_ratio_of_probability`] |
//!
//! [`compose_two_step`] balances the trial arms first and then weights the
//! balanced trial to the population. Weighting each arm to the population
//! on its own ([`weight_arms_separately`]) is kept only to demonstrate why it
//! should not be used: it can break the between-arm balance of trial-only
//! modifiers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::data::{Column, ColumnData, DataTable, JointCells, PopulationData, PopulationKind, PopulationTarget};
use crate::design::{build_design, ModelSpec, Term};
use crate::error::{Error, Result};
use crate::estimation::{fit_glm_irls, sig6, IrlsControl, VcovRequest};
use crate::stats::{kish_ess, median, weighted_mean, weighted_variance};

const IN_SAMPLE: &str = "__in_sample";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    ByOdds,
    InverseProbability,
    RatioOfProbability,
    WithinTrialPropensity,
    TwoStep,
    PerArmSeparate,
}

impl Procedure {
    pub fn label(&self) -> &'static str {
        match self {
            Procedure::ByOdds => "weighting by the odds",
            Procedure::InverseProbability => "inverse probability weighting",
            Procedure::RatioOfProbability => "ratio of probability weighting",
            Procedure::WithinTrialPropensity => "within-trial propensity weighting",
            Procedure::TwoStep => "two-step (within-trial, then to population)",
            Procedure::PerArmSeparate => "per-arm separate weighting (not recommended)",
        }
    }

    /// The trial-to-population procedure that fits the population data.
    pub fn for_population(pop: &PopulationTarget) -> Result<Procedure> {
        match (&pop.data, pop.trial_identifiable) {
            (PopulationData::Table(_), true) => Ok(Procedure::InverseProbability),
            (PopulationData::Table(_), false) => Ok(Procedure::ByOdds),
            (PopulationData::Summary(s), _) if s.joint_cells.is_some() => Ok(Procedure::RatioOfProbability),
            (PopulationData::Summary(_), _) => Err(Error::Weighting(
                "population summary has no joint cell probabilities; weighting needs a dataset or joint cells".into(),
            )),
        }
    }

    /// Rejects a procedure the population data cannot support.
    pub fn check_legal(&self, pop: &PopulationTarget) -> Result<()> {
        let ok = match self {
            Procedure::ByOdds | Procedure::PerArmSeparate => {
                matches!(
                    pop.kind,
                    PopulationKind::FullDataset | PopulationKind::RepresentativeSample
                ) && !pop.trial_identifiable
            }
            Procedure::InverseProbability => pop.trial_identifiable && pop.table().is_some(),
            Procedure::RatioOfProbability => matches!(
                &pop.data,
                PopulationData::Summary(s) if s.joint_cells.is_some()
            ),
            Procedure::WithinTrialPropensity | Procedure::TwoStep => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Weighting(format!(
                "{} is not applicable to a {:?} population{}",
                self.label(),
                pop.kind,
                if pop.trial_identifiable {
                    " with identifiable trial members"
                } else {
                    ""
                }
            )))
        }
    }
}

/// Per-row nonnegative weights with provenance and diagnostics.
#[derive(Debug, Clone)]
pub struct WeightSet {
    pub weights: Vec<f64>,
    /// Fitted participation (or treatment propensity) scores, when a model was fit.
    pub participation_scores: Option<Vec<f64>>,
    pub procedure: Procedure,
    pub ess: f64,
    pub warnings: Vec<String>,
    /// Within-trial and trial-to-population factors of a two-step weight.
    pub components: Option<(Vec<f64>, Vec<f64>)>,
}

impl WeightSet {
    fn new(weights: Vec<f64>, scores: Option<Vec<f64>>, procedure: Procedure) -> Result<WeightSet> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Weighting(format!(
                "{} produced an invalid weight",
                procedure.label()
            )));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Weighting(format!(
                "{} produced all-zero weights",
                procedure.label()
            )));
        }
        let mut ws = WeightSet {
            ess: kish_ess(&weights),
            weights,
            participation_scores: scores,
            procedure,
            warnings: Vec::new(),
            components: None,
        };
        ws.warnings = extreme_weight_warnings(&ws);
        Ok(ws)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Returns `table` with the weights appended as a numeric column.
    pub fn append_to(&self, table: &DataTable, name: &str) -> Result<DataTable> {
        if table.n_rows() != self.weights.len() {
            return Err(Error::Weighting(format!(
                "{} weights for a table of {} rows",
                self.weights.len(),
                table.n_rows()
            )));
        }
        table.clone().add_column(Column::numeric(name, self.weights.clone()))
    }
}

/// Extreme weights are only warned about, never truncated.
fn extreme_weight_warnings(ws: &WeightSet) -> Vec<String> {
    let mut out = Vec::new();
    let positive: Vec<f64> = ws.weights.iter().copied().filter(|&w| w > 0.0).collect();
    let med = median(&positive);
    let max = positive.iter().copied().fold(0.0, f64::max);
    if med > 0.0 && max > 10.0 * med {
        out.push(format!(
            "largest weight {} exceeds 10 times the median weight {}",
            sig6(max),
            sig6(med)
        ));
    }
    // In stacked by-odds fits the score scale is set by the sample-size ratio,
    // so the small-score rule applies to the other model-based procedures.
    if matches!(
        ws.procedure,
        Procedure::InverseProbability | Procedure::WithinTrialPropensity
    ) {
        if let Some(ps) = &ws.participation_scores {
            let n_small = ps.iter().filter(|&&p| p < 0.01 || p > 0.99).count();
            if n_small > 0 {
                out.push(format!("{n_small} rows have a fitted score below 0.01 (or above 0.99)"));
            }
        }
    }
    for w in &out {
        log::warn!("{}: {w}", ws.procedure.label());
    }
    out
}

/// Main-effect terms when `covars` are plain column names; `a:b` adds an
/// interaction.
fn factor_columns(terms: &[&str]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in terms {
        for f in t.split(':') {
            let f = f.trim().to_string();
            if seen.insert(f.clone()) {
                out.push(f);
            }
        }
    }
    out
}

/// Stacks `first` over `second` on the given columns plus a 0/1 indicator
/// that is 1 for rows of `first`.
fn stack(first: &DataTable, second: &DataTable, columns: &[String]) -> Result<DataTable> {
    let n1 = first.n_rows();
    let n2 = second.n_rows();
    let mut cols = Vec::with_capacity(columns.len() + 1);
    for name in columns {
        let a = first.column(name)?;
        let b = second
            .column(name)
            .map_err(|_| Error::MissingColumn(format!("{name} (population data)")))?;
        let col = match (&a.data, &b.data) {
            (ColumnData::Categorical { levels: la, .. }, ColumnData::Categorical { .. }) => {
                let labels: Vec<String> = (0..n1).map(|r| a.label(r)).chain((0..n2).map(|r| b.label(r))).collect();
                let known: BTreeSet<&String> = la.iter().collect();
                if let Some(extra) = (n1..n1 + n2).map(|r| &labels[r]).find(|l| !known.contains(l)) {
                    return Err(Error::Coverage(format!(
                        "population level `{extra}` of `{name}` never occurs in the trial"
                    )));
                }
                Column::categorical(name, &labels, Some(la.clone()))?
            }
            (ColumnData::Categorical { .. }, _) | (_, ColumnData::Categorical { .. }) => {
                return Err(Error::Invalid(format!(
                    "column `{name}` is categorical in one table and numeric in the other"
                )))
            }
            (ColumnData::Binary(x), ColumnData::Binary(y)) => {
                Column::binary(name, x.iter().chain(y).copied().collect())
            }
            _ => {
                let x = a.values().expect("numeric");
                let y = b.values().expect("numeric");
                Column::numeric(name, x.iter().chain(y).copied().collect())
            }
        };
        cols.push(col);
    }
    let s: Vec<f64> = (0..n1 + n2).map(|i| if i < n1 { 1.0 } else { 0.0 }).collect();
    cols.push(Column::binary(IN_SAMPLE, s));
    DataTable::new(cols)
}

/// Fitted probabilities of a logistic model `response ~ terms`, optionally
/// with prior weights.
fn fit_scores(table: &DataTable, response: &str, terms: &[&str], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let spec = ModelSpec::logistic(response, terms)?;
    let design = build_design(table, &spec)?;
    let fit = fit_glm_irls(
        &design,
        spec.link,
        spec.family,
        weights,
        &VcovRequest::ModelBased,
        &IrlsControl::default(),
    )?;
    Ok(fit.fitted.iter().copied().collect())
}

fn by_odds_inner(
    trial: &DataTable,
    pop: &DataTable,
    covars: &[&str],
    trial_prior: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let columns = factor_columns(covars);
    let stacked = stack(trial, pop, &columns)?;
    let n = trial.n_rows();
    let prior: Option<Vec<f64>> = trial_prior.map(|w| {
        w.iter()
            .copied()
            .chain(std::iter::repeat_n(1.0, pop.n_rows()))
            .collect()
    });
    let ps = fit_scores(&stacked, IN_SAMPLE, covars, prior.as_deref())?;
    let ps = ps[..n].to_vec();
    let w = ps.iter().map(|p| (1.0 - p) / p).collect();
    Ok((w, ps))
}

/// Weighting by the odds: stack trial and population with a trial indicator,
/// fit a logistic participation model on `covars` and weight trial row `i`
/// by `(1 − psᵢ)/psᵢ`.
pub fn weight_by_odds(trial: &DataTable, pop: &DataTable, covars: &[&str]) -> Result<WeightSet> {
    let (w, ps) = by_odds_inner(trial, pop, covars, None)?;
    WeightSet::new(w, Some(ps), Procedure::ByOdds)
}

fn ipw_inner(
    pop: &DataTable,
    membership: &str,
    covars: &[&str],
    member_prior: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = pop.numeric(membership)?;
    let members: Vec<usize> = (0..m.len()).filter(|&i| m[i] == 1.0).collect();
    if members.len() < 2 {
        return Err(Error::Weighting(format!(
            "inverse probability weighting needs at least 2 trial members, found {}",
            members.len()
        )));
    }
    let prior = match member_prior {
        Some(w) => {
            if w.len() != members.len() {
                return Err(Error::Weighting(format!(
                    "{} prior weights for {} trial members",
                    w.len(),
                    members.len()
                )));
            }
            let mut full = vec![1.0; m.len()];
            for (k, &i) in members.iter().enumerate() {
                full[i] = w[k];
            }
            Some(full)
        }
        None => None,
    };
    let ps = fit_scores(pop, membership, covars, prior.as_deref())?;
    let ps: Vec<f64> = members.iter().map(|&i| ps[i]).collect();
    Ok((ps.iter().map(|p| 1.0 / p).collect(), ps))
}

/// Inverse probability weighting for trials nested in the population data.
///
/// `membership` is a 0/1 column of `pop` marking trial members. The returned
/// weights follow the order of the members in `pop`.
pub fn weight_inverse_probability(pop: &DataTable, membership: &str, covars: &[&str]) -> Result<WeightSet> {
    let (w, ps) = ipw_inner(pop, membership, covars, None)?;
    WeightSet::new(w, Some(ps), Procedure::InverseProbability)
}

fn cell_key(table: &DataTable, columns: &[String], row: usize) -> Result<Vec<String>> {
    columns.iter().map(|c| Ok(table.column(c)?.label(row))).collect()
}

fn ratio_inner(trial: &DataTable, cells: &JointCells, prior: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = trial.n_rows();
    let keys: Vec<Vec<String>> = (0..n)
        .map(|r| cell_key(trial, &cells.columns, r))
        .collect::<Result<_>>()?;
    let prior: Vec<f64> = prior.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let total: f64 = prior.iter().sum();
    let mut trial_mass: HashMap<&Vec<String>, f64> = HashMap::new();
    for (k, w) in keys.iter().zip(&prior) {
        *trial_mass.entry(k).or_default() += w;
    }
    for (cell, &p) in &cells.cells {
        if p > 0.0 && trial_mass.get(cell).copied().unwrap_or(0.0) == 0.0 {
            return Err(Error::Coverage(format!(
                "population cell {} (probability {}) has no trial members; the coverage (A3) condition fails",
                cell.join("/"),
                sig6(p)
            )));
        }
    }
    keys.iter()
        .map(|k| {
            let p_pop =
                cells.cells.get(k).copied().ok_or_else(|| {
                    Error::Weighting(format!("trial cell {} has no population probability", k.join("/")))
                })?;
            Ok(p_pop / (trial_mass[k] / total))
        })
        .collect()
}

/// Ratio-of-probability weights `Pr(cell | population) / Pr(cell | trial)`
/// over the categorical cells of `cells.columns`.
pub fn weight_ratio_of_probability(trial: &DataTable, cells: &JointCells) -> Result<WeightSet> {
    WeightSet::new(ratio_inner(trial, cells, None)?, None, Procedure::RatioOfProbability)
}

/// Inverse treatment-propensity weights inside the trial: `1/ps` for treated
/// rows and `1/(1 − ps)` for controls, rescaled so each arm's weights sum to
/// the arm size.
pub fn adjust_within_trial_balance(trial: &DataTable, treatment: &str, covars: &[&str]) -> Result<WeightSet> {
    let a = trial.numeric(treatment)?;
    let ps = fit_scores(trial, treatment, covars, None)?;
    let mut w: Vec<f64> = a
        .iter()
        .zip(&ps)
        .map(|(&ai, &p)| if ai == 1.0 { 1.0 / p } else { 1.0 / (1.0 - p) })
        .collect();
    for arm in [0.0, 1.0] {
        let idx: Vec<usize> = (0..a.len()).filter(|&i| a[i] == arm).collect();
        let s: f64 = idx.iter().map(|&i| w[i]).sum();
        let scale = idx.len() as f64 / s;
        for i in idx {
            w[i] *= scale;
        }
    }
    WeightSet::new(w, Some(ps), Procedure::WithinTrialPropensity)
}

/// Which covariates each step of [`compose_two_step`] uses.
#[derive(Debug, Clone, Default)]
pub struct WeightingPlan {
    /// Participation-model terms (X and Z). Ignored by ratio-of-probability
    /// weighting, which uses the joint cells' columns.
    pub population_covars: Vec<String>,
    /// Treatment-propensity terms (X, Z and V). Empty skips the within-trial step.
    pub within_covars: Vec<String>,
    /// Overrides the procedure implied by the population data.
    pub procedure: Option<Procedure>,
}

fn to_population(
    trial: &DataTable,
    pop: &PopulationTarget,
    procedure: Procedure,
    covars: &[&str],
    prior: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    procedure.check_legal(pop)?;
    match (procedure, &pop.data) {
        (Procedure::ByOdds, PopulationData::Table(t)) => {
            let (w, ps) = by_odds_inner(trial, t, covars, prior)?;
            Ok((w, Some(ps)))
        }
        (Procedure::InverseProbability, PopulationData::Table(t)) => {
            let membership = pop
                .membership
                .as_deref()
                .expect("identifiable population has a membership column");
            let (w, ps) = ipw_inner(t, membership, covars, prior)?;
            if w.len() != trial.n_rows() {
                return Err(Error::Weighting(format!(
                    "population marks {} trial members but the trial has {} rows",
                    w.len(),
                    trial.n_rows()
                )));
            }
            Ok((w, Some(ps)))
        }
        (Procedure::RatioOfProbability, PopulationData::Summary(s)) => {
            let cells = s.joint_cells.as_ref().expect("checked legal");
            Ok((ratio_inner(trial, cells, prior)?, None))
        }
        (p, _) => Err(Error::Weighting(format!(
            "{} cannot weight a trial to a population",
            p.label()
        ))),
    }
}

/// Two-step weighting: balance the arms within the trial, then weight the
/// balanced trial to the population. The participation model of the second
/// step is fit with the first step's weights, and the final weight is the
/// product of the two.
pub fn compose_two_step(
    trial: &DataTable,
    treatment: &str,
    pop: &PopulationTarget,
    plan: &WeightingPlan,
) -> Result<WeightSet> {
    let procedure = match plan.procedure {
        Some(p) => p,
        None => Procedure::for_population(pop)?,
    };
    let within = if plan.within_covars.is_empty() {
        vec![1.0; trial.n_rows()]
    } else {
        let covars: Vec<&str> = plan.within_covars.iter().map(String::as_str).collect();
        adjust_within_trial_balance(trial, treatment, &covars)?.weights
    };
    let covars: Vec<&str> = plan.population_covars.iter().map(String::as_str).collect();
    let prior = (!plan.within_covars.is_empty()).then_some(within.as_slice());
    let (outer, ps) = to_population(trial, pop, procedure, &covars, prior)?;
    let w: Vec<f64> = within.iter().zip(&outer).map(|(a, b)| a * b).collect();
    let mut ws = WeightSet::new(w, ps, Procedure::TwoStep)?;
    ws.components = Some((within, outer));
    Ok(ws)
}

/// Weights each arm to the population on its own by the odds.
///
/// This is the procedure the two-step protocol replaces. Each arm is made to
/// resemble the population on X and Z separately, which shifts a trial-only
/// modifier V differently in the two arms whenever V is associated with the
/// weighting covariates, so randomization balance on V is lost.
pub fn weight_arms_separately(
    trial: &DataTable,
    treatment: &str,
    pop: &DataTable,
    covars: &[&str],
) -> Result<WeightSet> {
    let a = trial.numeric(treatment)?;
    let mut w = vec![0.0; trial.n_rows()];
    for arm in [0.0, 1.0] {
        let idx: Vec<usize> = (0..a.len()).filter(|&i| a[i] == arm).collect();
        let sub = trial.select_rows(&idx);
        let (wa, _) = by_odds_inner(&sub, pop, covars, None)?;
        for (k, i) in idx.into_iter().enumerate() {
            w[i] = wa[k];
        }
    }
    WeightSet::new(w, None, Procedure::PerArmSeparate)
}

/// One balance item: a numeric column's mean or one level's proportion.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    /// `column` or `column[level]`.
    pub item: String,
    pub is_proportion: bool,
    pub treated: f64,
    pub control: f64,
    pub trial: f64,
    pub population: Option<f64>,
    /// Treated minus control over the pooled arm SD.
    pub std_diff_arms: f64,
    /// Trial minus population over the pooled trial/population SD.
    pub std_diff_population: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
    pub ess_treated: f64,
    pub ess_control: f64,
    pub ess: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

impl BalanceTable {
    pub fn max_abs_std_diff_arms(&self) -> f64 {
        self.rows.iter().map(|r| r.std_diff_arms.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_std_diff_population(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.std_diff_population)
            .map(f64::abs)
            .fold(0.0, f64::max)
    }

    pub fn row(&self, item: &str) -> Option<&BalanceRow> {
        self.rows.iter().find(|r| r.item == item)
    }

    /// Delimited text: item, treated, control, trial, population, std diffs.
    pub fn to_delimited(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {title}");
        let _ = writeln!(
            out,
            "# n treated {}, n control {}, ESS treated {}, ESS control {}, ESS {}",
            self.n_treated,
            self.n_control,
            sig6(self.ess_treated),
            sig6(self.ess_control),
            sig6(self.ess)
        );
        let _ = writeln!(
            out,
            "item,treated,control,trial,population,std_diff_arms,std_diff_population"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.item,
                sig6(r.treated),
                sig6(r.control),
                sig6(r.trial),
                r.population.map_or("NA".into(), sig6),
                sig6(r.std_diff_arms),
                r.std_diff_population.map_or("NA".into(), sig6)
            );
        }
        out
    }
}

/// Expands covariate columns into balance items.
fn balance_items(
    table: &DataTable,
    columns: &[String],
) -> Result<Vec<(String, Vec<f64>, bool, String, Option<String>)>> {
    let mut out = Vec::new();
    for name in columns {
        let col = table.column(name)?;
        match &col.data {
            ColumnData::Categorical { levels, .. } => {
                for l in levels {
                    out.push((
                        format!("{name}[{l}]"),
                        table.indicator(name, l)?,
                        true,
                        name.clone(),
                        Some(l.clone()),
                    ));
                }
            }
            ColumnData::Binary(v) => out.push((name.clone(), v.clone(), true, name.clone(), None)),
            ColumnData::Numeric(v) => out.push((name.clone(), v.clone(), false, name.clone(), None)),
        }
    }
    Ok(out)
}

/// Population mean and variance of one balance item.
fn population_moments(
    pop: &PopulationTarget,
    item: &str,
    column: &str,
    level: Option<&str>,
    is_prop: bool,
) -> Option<(f64, f64)> {
    match &pop.data {
        PopulationData::Table(t) => {
            let v = match level {
                Some(l) => t.indicator(column, l).ok()?,
                None => t.numeric(column).ok()?.to_vec(),
            };
            let ones = vec![1.0; v.len()];
            Some((weighted_mean(&v, &ones), weighted_variance(&v, &ones)))
        }
        PopulationData::Summary(s) => {
            let p = if let Some(m) = s.z_means.get(item) {
                m.point
            } else if let Some(cells) = &s.joint_cells {
                let k = cells.columns.iter().position(|c| c == column)?;
                let target = level.map_or("1".to_string(), str::to_string);
                cells
                    .cells
                    .iter()
                    .filter(|(key, _)| key[k] == target)
                    .map(|(_, p)| p)
                    .sum()
            } else {
                return None;
            };
            Some((p, if is_prop { p * (1.0 - p) } else { f64::NAN }))
        }
    }
}

/// Weighted covariate means per arm and overall against population targets,
/// with arm and population standardized differences and Kish ESS.
///
/// `pop` rows that are trial members (identifiable population) are not
/// removed; the population means describe the whole target population.
pub fn diagnostics(
    weights: &[f64],
    trial: &DataTable,
    treatment: &str,
    covars: &[&str],
    pop: Option<&PopulationTarget>,
) -> Result<BalanceTable> {
    let n = trial.n_rows();
    if weights.len() != n {
        return Err(Error::Weighting(format!(
            "{} weights for {n} trial rows",
            weights.len()
        )));
    }
    let a = trial.numeric(treatment)?;
    let w1: Vec<f64> = (0..n).map(|i| if a[i] == 1.0 { weights[i] } else { 0.0 }).collect();
    let w0: Vec<f64> = (0..n).map(|i| if a[i] == 1.0 { 0.0 } else { weights[i] }).collect();
    let columns = factor_columns(covars);
    let mut rows = Vec::new();
    for (item, v, is_prop, column, level) in balance_items(trial, &columns)? {
        let (m1, m0, mt) = (
            weighted_mean(&v, &w1),
            weighted_mean(&v, &w0),
            weighted_mean(&v, weights),
        );
        let (v1, v0, vt) = (
            weighted_variance(&v, &w1),
            weighted_variance(&v, &w0),
            weighted_variance(&v, weights),
        );
        let arms_sd = ((v1 + v0) / 2.0).sqrt();
        let std_diff_arms = if arms_sd > 0.0 { (m1 - m0) / arms_sd } else { 0.0 };
        let moments = pop.and_then(|p| population_moments(p, &item, &column, level.as_deref(), is_prop));
        let std_diff_population = moments.map(|(mp, vp)| {
            let s = if vp.is_finite() {
                ((vt + vp) / 2.0).sqrt()
            } else {
                vt.sqrt()
            };
            if s > 0.0 {
                (mt - mp) / s
            } else {
                0.0
            }
        });
        rows.push(BalanceRow {
            item,
            is_proportion: is_prop,
            treated: m1,
            control: m0,
            trial: mt,
            population: moments.map(|m| m.0),
            std_diff_arms,
            std_diff_population,
        });
    }
    let pos = |w: &[f64]| -> Vec<f64> { w.iter().copied().filter(|&x| x > 0.0).collect() };
    Ok(BalanceTable {
        rows,
        ess_treated: kish_ess(&pos(&w1)),
        ess_control: kish_ess(&pos(&w0)),
        ess: kish_ess(&pos(weights)),
        n_treated: a.iter().filter(|&&x| x == 1.0).count(),
        n_control: a.iter().filter(|&&x| x != 1.0).count(),
    })
}

/// Terms of a main-effects participation model.
pub fn main_effect_terms(columns: &[String]) -> Vec<Term> {
    columns.iter().map(|c| Term::main(c)).collect()
}

/// Population cell probabilities of categorical columns, from a dataset.
pub fn joint_cells_from_table(pop: &DataTable, columns: &[String]) -> Result<JointCells> {
    let n = pop.n_rows();
    let mut counts: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for r in 0..n {
        *counts.entry(cell_key(pop, columns, r)?).or_default() += 1.0;
    }
    for p in counts.values_mut() {
        *p /= n as f64;
    }
    JointCells::new(columns.to_vec(), counts)
}
