//! Monte Carlo comparison of Method 1 and Method 2.
//!
//! Covariates in the population are multivariate normal with unit variances:
//! `X` independent of `(Z, V)` and `corr(Z, V) = rho_zv`. Trial members are
//! drawn from the population density tilted by `exp(γₓx + γ_z z + γ_v v)`,
//! which for normal covariates shifts the means by `Σγ` and leaves the
//! covariance unchanged. The participation log-odds are therefore exactly
//! linear in `(X, Z)` once `V` is marginalised, so a main-effects logistic
//! participation model is correctly specified.
//!
//! Outcomes follow
//! `Y = b0 + ba·A + bx·X + bz·Z + bza·Z·A + bv·V + bva·V·A + cz·Z²·A + cv·V²·A + σε`
//! with `A ~ Bernoulli(1/2)`. The analysis model is always linear in `Z` and
//! `V`, so nonzero `cz` or `cv` misspecify it.
//!
//! Random numbers come from ChaCha20 seeded with `seed` and using the
//! replicate index as the stream number, so every replicate is reproducible
//! on its own and parallel execution gives identical results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::data::{declare_roles, Column, DataTable, OutcomeRole, PopulationKind, PopulationTarget, VariableRoles};
use crate::design::ModelSpec;
use crate::error::{Error, Result};
use crate::estimation::{AnyFit, VcovRequest};
use crate::sensitivity::{
    run_method1, run_method2, tate_lincom, treatment_factors, MethodOptions, Quantity, SensitivityConfig, VAxis,
    ZQuantity,
};
use crate::stats::{mean, sd};
use crate::weighting::WeightingPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misspecification {
    #[default]
    None,
    /// The true effect has a `Z²·A` term the analysis model omits.
    ZMisspec,
    /// The true effect has a `V²·A` term the analysis model omits.
    VMisspec,
}

/// True outcome-model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrueModel {
    pub b0: f64,
    pub ba: f64,
    pub bx: f64,
    pub bz: f64,
    pub bza: f64,
    pub bv: f64,
    pub bva: f64,
    /// Coefficient of `Z²·A`.
    pub cz: f64,
    /// Coefficient of `V²·A`.
    pub cv: f64,
    pub sigma: f64,
}

impl Default for TrueModel {
    fn default() -> Self {
        TrueModel {
            b0: 0.0,
            ba: 1.0,
            bx: 0.5,
            bz: 0.5,
            bza: 0.5,
            bv: 0.5,
            bva: 0.5,
            cz: 0.0,
            cv: 0.0,
            sigma: 1.0,
        }
    }
}

/// Population means, `corr(Z, V)` and the selection tilt.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Covariates {
    pub mean_x: f64,
    pub mean_z: f64,
    pub mean_v: f64,
    pub rho_zv: f64,
    pub gamma_x: f64,
    pub gamma_z: f64,
    pub gamma_v: f64,
}

impl Default for Covariates {
    fn default() -> Self {
        Covariates {
            mean_x: 0.0,
            mean_z: 0.0,
            mean_v: 0.0,
            rho_zv: 0.5,
            gamma_x: -0.3,
            gamma_z: -0.5,
            gamma_v: 0.0,
        }
    }
}

impl Covariates {
    /// Trial means `μ + Σγ`.
    pub fn trial_means(&self) -> (f64, f64, f64) {
        (
            self.mean_x + self.gamma_x,
            self.mean_z + self.gamma_z + self.rho_zv * self.gamma_v,
            self.mean_v + self.rho_zv * self.gamma_z + self.gamma_v,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub model: TrueModel,
    pub covariates: Covariates,
    pub misspecification: Misspecification,
    pub n_trial: usize,
    pub n_pop: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Balance the arms within the trial before weighting to the population.
    pub within_trial_step: bool,
    pub ci_level: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            name: "none".into(),
            model: TrueModel::default(),
            covariates: Covariates::default(),
            misspecification: Misspecification::None,
            n_trial: 500,
            n_pop: 5000,
            replicates: 2000,
            seed: 20181227,
            within_trial_step: true,
            ci_level: 0.95,
        }
    }
}

impl ScenarioSpec {
    /// Representative settings for each misspecification case.
    pub fn preset(kind: Misspecification) -> ScenarioSpec {
        let mut s = ScenarioSpec {
            misspecification: kind,
            ..ScenarioSpec::default()
        };
        match kind {
            Misspecification::None => {}
            Misspecification::ZMisspec => {
                s.name = "z_misspec".into();
                s.model.cz = 0.25;
            }
            Misspecification::VMisspec => {
                s.name = "v_misspec".into();
                s.model.cv = 0.5;
                s.covariates.gamma_z = -0.8;
                s.covariates.gamma_v = -0.2;
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<ScenarioSpec> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Simulation(format!("scenario: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.covariates;
        if !(-1.0..=1.0).contains(&c.rho_zv) {
            return Err(Error::Simulation(format!("rho_zv {} is outside [-1, 1]", c.rho_zv)));
        }
        if self.replicates == 0 {
            return Err(Error::Simulation("replicates must be at least 1".into()));
        }
        if self.n_trial < 20 || self.n_pop < 20 {
            return Err(Error::Simulation("n_trial and n_pop must be at least 20".into()));
        }
        if !(self.model.sigma > 0.0) {
            return Err(Error::Simulation("sigma must be positive".into()));
        }
        let misspec_ok = match self.misspecification {
            Misspecification::None => self.model.cz == 0.0 && self.model.cv == 0.0,
            Misspecification::ZMisspec => self.model.cz != 0.0 && self.model.cv == 0.0,
            Misspecification::VMisspec => self.model.cv != 0.0 && self.model.cz == 0.0,
        };
        if !misspec_ok {
            return Err(Error::Simulation(
                "misspecification does not match the nonlinear coefficients cz and cv".into(),
            ));
        }
        let finite = [
            c.mean_x,
            c.mean_z,
            c.mean_v,
            c.gamma_x,
            c.gamma_z,
            c.gamma_v,
            self.model.b0,
            self.model.ba,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation("non-finite parameter".into()));
        }
        Ok(())
    }

    /// `E[Y(1) − Y(0) | P = 1]` from the true coefficients and the population
    /// covariate distribution.
    pub fn true_tate(&self) -> f64 {
        let m = &self.model;
        let c = &self.covariates;
        m.ba + m.bza * c.mean_z
            + m.bva * c.mean_v
            + m.cz * (c.mean_z * c.mean_z + 1.0)
            + m.cv * (c.mean_v * c.mean_v + 1.0)
    }
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub trial: DataTable,
    pub pop: DataTable,
    pub true_tate: f64,
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn covariates(rng: &mut ChaCha20Rng, means: (f64, f64, f64), rho: f64) -> (f64, f64, f64) {
    let x = means.0 + normal(rng);
    let e1 = normal(rng);
    let e2 = normal(rng);
    let z = means.1 + e1;
    let v = means.2 + rho * e1 + (1.0 - rho * rho).sqrt() * e2;
    (x, z, v)
}

pub fn generate_replicate(spec: &ScenarioSpec, rep: u64) -> Result<Replicate> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(rep);
    let c = &spec.covariates;
    let m = &spec.model;

    let tm = c.trial_means();
    let n = spec.n_trial;
    let (mut xs, mut zs, mut vs, mut a, mut y) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let (x, z, v) = covariates(&mut rng, tm, c.rho_zv);
        let ai = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let effect = m.ba + m.bza * z + m.bva * v + m.cz * z * z + m.cv * v * v;
        let yi = m.b0 + m.bx * x + m.bz * z + m.bv * v + ai * effect + m.sigma * normal(&mut rng);
        xs.push(x);
        zs.push(z);
        vs.push(v);
        a.push(ai);
        y.push(yi);
    }
    let trial = DataTable::new(vec![
        Column::numeric("X", xs),
        Column::numeric("Z", zs),
        Column::numeric("V", vs),
        Column::binary("A", a),
        Column::numeric("Y", y),
    ])?;

    let pm = (c.mean_x, c.mean_z, c.mean_v);
    let (mut px, mut pz) = (Vec::with_capacity(spec.n_pop), Vec::with_capacity(spec.n_pop));
    for _ in 0..spec.n_pop {
        let (x, z, _) = covariates(&mut rng, pm, c.rho_zv);
        px.push(x);
        pz.push(z);
    }
    let pop = DataTable::new(vec![Column::numeric("X", px), Column::numeric("Z", pz)])?;
    Ok(Replicate {
        trial,
        pop,
        true_tate: spec.true_tate(),
    })
}

/// Per-replicate results for one method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodDraw {
    pub estimate: f64,
    pub se: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateOutcome {
    pub m1: MethodDraw,
    /// Method 2 with the sandwich covariance.
    pub m2: MethodDraw,
    /// Method 2 with the model-based covariance.
    pub m2_model_based: MethodDraw,
}

fn analyse(spec: &ScenarioSpec, rep: &Replicate) -> Result<ReplicateOutcome> {
    let roles = VariableRoles {
        treatment: "A".into(),
        outcome: Some(OutcomeRole::Single("Y".into())),
        x_covars: vec!["X".into()],
        z_modifiers: vec!["Z".into()],
        v_modifiers: vec!["V".into()],
    };
    let ctx = declare_roles(rep.trial.clone(), roles)?;
    let pop = PopulationTarget::dataset(PopulationKind::FullDataset, rep.pop.clone())?;
    let model = ModelSpec::linear("Y", &["A", "X", "Z", "Z:A", "V", "V:A"])?;
    let ev = spec.covariates.mean_v;
    let cfg = SensitivityConfig {
        z: vec![ZQuantity {
            quantity: Quantity::new("z", "Z", None),
            mean: None,
        }],
        v: vec![VAxis {
            quantity: Quantity::new("v", "V", None),
            range: (ev, ev),
            fixed: None,
        }],
        grid_points: 2,
        ci_level: spec.ci_level,
        ..SensitivityConfig::default()
    };
    let truth = rep.true_tate;
    let m1 = run_method1(&ctx, &pop, &model, &cfg, &MethodOptions::default())?;
    let plan = WeightingPlan {
        population_covars: vec!["X".into(), "Z".into()],
        within_covars: if spec.within_trial_step {
            vec!["X".into(), "Z".into(), "V".into()]
        } else {
            vec![]
        },
        procedure: None,
    };
    let m2 = run_method2(&ctx, &pop, &model, &cfg, &plan, &MethodOptions::default())?;

    let values = BTreeMap::from([
        ("z".to_string(), crate::stats::mean(rep.pop.numeric("Z")?)),
        ("v".to_string(), ev),
    ]);
    let formula = cfg.formula(&treatment_factors(&ctx));
    let draw = |fit: &AnyFit| -> Result<MethodDraw> {
        let f = formula.resolve(crate::estimation::Estimates::coef_names(fit))?;
        let r = tate_lincom(fit, &f, &values, spec.ci_level)?;
        Ok(MethodDraw {
            estimate: r.estimate,
            se: r.std_error,
            covered: r.ci.0 <= truth && truth <= r.ci.1,
        })
    };
    let m2_mb = match &m2.fit {
        AnyFit::Single(f) => AnyFit::Single(f.with_vcov(&VcovRequest::ModelBased)?),
        AnyFit::Mixed(_) => unreachable!("single-outcome scenario"),
    };
    let out = ReplicateOutcome {
        m1: draw(&m1.fit)?,
        m2: draw(&m2.fit)?,
        m2_model_based: draw(&m2_mb)?,
    };
    debug_assert!((out.m1.estimate - m1.result.rows[0].point).abs() < 1e-9);
    Ok(out)
}

/// Runs one replicate end to end.
pub fn run_replicate(spec: &ScenarioSpec, rep: u64) -> Result<ReplicateOutcome> {
    analyse(spec, &generate_replicate(spec, rep)?)
}

/// Aggregate operating characteristics of one method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSummary {
    pub bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub mcse_bias: f64,
    pub mcse_sd: f64,
    pub mcse_mean_se: f64,
    pub mcse_coverage: f64,
}

impl MethodSummary {
    fn from_draws(draws: &[MethodDraw], truth: f64) -> MethodSummary {
        let r = draws.len() as f64;
        let est: Vec<f64> = draws.iter().map(|d| d.estimate).collect();
        let se: Vec<f64> = draws.iter().map(|d| d.se).collect();
        let cov = draws.iter().filter(|d| d.covered).count() as f64 / r;
        let emp_sd = if draws.len() > 1 { sd(&est) } else { f64::NAN };
        let se_sd = if draws.len() > 1 { sd(&se) } else { f64::NAN };
        MethodSummary {
            bias: mean(&est) - truth,
            sd: emp_sd,
            mean_se: mean(&se),
            coverage: cov,
            mcse_bias: emp_sd / r.sqrt(),
            mcse_sd: emp_sd / (2.0 * (r - 1.0)).sqrt(),
            mcse_mean_se: se_sd / r.sqrt(),
            mcse_coverage: if draws.len() > 1 {
                (cov * (1.0 - cov) / r).sqrt()
            } else {
                f64::NAN
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: String,
    pub true_tate: f64,
    pub replicates: usize,
    pub failed: usize,
    pub m1: MethodSummary,
    pub m2: MethodSummary,
    pub m2_model_based: MethodSummary,
    pub notes: Vec<String>,
}

/// Failed replicates above this share abort the evaluation.
const MAX_FAILURE_SHARE: f64 = 0.01;

#[cfg(feature = "parallel")]
fn run_all(spec: &ScenarioSpec) -> Vec<Result<ReplicateOutcome>> {
    use rayon::prelude::*;
    (0..spec.replicates as u64)
        .into_par_iter()
        .map(|rep| run_replicate(spec, rep))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all(spec: &ScenarioSpec) -> Vec<Result<ReplicateOutcome>> {
    (0..spec.replicates as u64)
        .map(|rep| run_replicate(spec, rep))
        .collect()
}

/// Runs every replicate and aggregates bias, SD, mean SE and coverage of
/// both methods at the true value of the sensitivity parameter.
pub fn evaluate(spec: &ScenarioSpec) -> Result<EvalReport> {
    spec.validate()?;
    let results = run_all(spec);
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => failed.push((rep, e)),
        }
    }
    if failed.len() as f64 > MAX_FAILURE_SHARE * spec.replicates as f64 {
        let (rep, e) = &failed[0];
        return Err(Error::Simulation(format!(
            "{} of {} replicates failed (first: replicate {rep}: {e})",
            failed.len(),
            spec.replicates
        )));
    }
    for (rep, e) in &failed {
        log::warn!("replicate {rep} skipped: {e}");
    }
    let truth = spec.true_tate();
    let pick = |f: fn(&ReplicateOutcome) -> MethodDraw| -> Vec<MethodDraw> { ok.iter().map(f).collect() };
    let mut notes = Vec::new();
    if ok.len() < 2 {
        notes.push("fewer than 2 replicates: SD and MCSE are undefined".into());
    }
    Ok(EvalReport {
        scenario: spec.name.clone(),
        true_tate: truth,
        replicates: ok.len(),
        failed: failed.len(),
        m1: MethodSummary::from_draws(&pick(|o| o.m1), truth),
        m2: MethodSummary::from_draws(&pick(|o| o.m2), truth),
        m2_model_based: MethodSummary::from_draws(&pick(|o| o.m2_model_based), truth),
        notes,
    })
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "scenario,method,true_tate,bias,sd,mean_se,coverage,mcse_bias,mcse_sd,mcse_mean_se,mcse_coverage,replicates,failed";

    /// Delimited rows, one per method.
    pub fn to_csv(&self) -> String {
        use crate::estimation::sig6;
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::CSV_HEADER);
        for (name, s) in [
            ("M1", &self.m1),
            ("M2", &self.m2),
            ("M2_model_based", &self.m2_model_based),
        ] {
            let _ = writeln!(
                out,
                "{},{name},{},{},{},{},{},{},{},{},{},{},{}",
                self.scenario,
                sig6(self.true_tate),
                sig6(s.bias),
                sig6(s.sd),
                sig6(s.mean_se),
                sig6(s.coverage),
                sig6(s.mcse_bias),
                sig6(s.mcse_sd),
                sig6(s.mcse_mean_se),
                sig6(s.mcse_coverage),
                self.replicates,
                self.failed
            );
        }
        out
    }
}

/// Variance findings for a correctly specified scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComparison {
    /// `SD(M2) / SD(M1)`.
    pub sd_ratio: f64,
    /// Mean sandwich SE of M2 over its empirical SD.
    pub sandwich_ratio: f64,
    /// Mean model-based SE of M2 over its empirical SD.
    pub model_based_ratio: f64,
}

impl VarianceComparison {
    pub fn from_report(r: &EvalReport) -> VarianceComparison {
        VarianceComparison {
            sd_ratio: r.m2.sd / r.m1.sd,
            sandwich_ratio: r.m2.mean_se / r.m2.sd,
            model_based_ratio: r.m2_model_based.mean_se / r.m2_model_based.sd,
        }
    }
}

pub fn variance_comparison(spec: &ScenarioSpec) -> Result<VarianceComparison> {
    if spec.misspecification != Misspecification::None {
        return Err(Error::Simulation(
            "variance comparison needs a correctly specified scenario".into(),
        ));
    }
    Ok(VarianceComparison::from_report(&evaluate(spec)?))
}
