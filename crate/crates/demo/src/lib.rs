//! Browser bindings. Every entry point takes a JSON request and returns a
//! JSON response; the plain functions are usable without a browser.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use tatesens::data::{MeanEstimate, PopulationKind, PopulationTarget};
use tatesens::design::{Family, Link};
use tatesens::estimation::Estimates;
use tatesens::plot::sensitivity_svg;
use tatesens::sensitivity::{sweep, EffectScale, MethodKind, Quantity, SensitivityConfig, VAxis, ZQuantity};
use tatesens::simulation::{evaluate, generate_replicate, MethodSummary, Misspecification, ScenarioSpec};
use tatesens::stats::Inference;
use tatesens::weighting::{compose_two_step, diagnostics, weight_by_odds, BalanceTable, WeightingPlan};

/// Estimate and standard error of one coefficient.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct Coef {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SweepRequest {
    pub treatment: Coef,
    pub z_interaction: Coef,
    pub v_interaction: Coef,
    /// Population mean of Z with optional confidence limits.
    pub z_mean: f64,
    pub z_lo: Option<f64>,
    pub z_hi: Option<f64>,
    pub v_range: (f64, f64),
    #[serde(default = "default_grid")]
    pub grid_points: usize,
}

fn default_grid() -> usize {
    9
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub ev: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepResponse {
    pub rows: Vec<SweepRow>,
    pub svg: String,
}

/// Published coefficients with independent standard errors.
struct Excerpt {
    names: Vec<String>,
    beta: DVector<f64>,
    vcov: DMatrix<f64>,
}

impl Estimates for Excerpt {
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
        Inference::Z
    }
    fn model_link(&self) -> Link {
        Link::Identity
    }
    fn model_family(&self) -> Family {
        Family::Gaussian
    }
}

/// Sensitivity line of an additive effect `β_A + β_AZ·E[Z] + β_AV·E[V]`
/// across a range of the unknown population mean of V.
pub fn sensitivity_sweep(req: &SweepRequest) -> Result<SweepResponse, String> {
    let coefs = [req.treatment, req.z_interaction, req.v_interaction];
    if coefs.iter().any(|c| !c.estimate.is_finite() || !(c.se >= 0.0)) {
        return Err("coefficients need finite estimates and non-negative standard errors".into());
    }
    let model = Excerpt {
        names: ["A", "A:z", "A:v"].map(String::from).to_vec(),
        beta: DVector::from_iterator(3, coefs.iter().map(|c| c.estimate)),
        vcov: DMatrix::from_diagonal(&DVector::from_iterator(3, coefs.iter().map(|c| c.se * c.se))),
    };
    let z_mean = match (req.z_lo, req.z_hi) {
        (Some(lo), Some(hi)) => MeanEstimate::with_ci(req.z_mean, lo, hi).map_err(|e| e.to_string())?,
        (None, None) => MeanEstimate::known(req.z_mean),
        _ => return Err("give both Z limits or neither".into()),
    };
    let cfg = SensitivityConfig {
        z: vec![ZQuantity {
            quantity: Quantity::new("ez", "z", None),
            mean: Some(z_mean),
        }],
        v: vec![VAxis {
            quantity: Quantity::new("ev", "v", None),
            range: req.v_range,
            fixed: None,
        }],
        grid_points: req.grid_points,
        scale: EffectScale::Additive,
        ..SensitivityConfig::default()
    };
    let formula = cfg.formula(&["A".to_string()]);
    let result =
        sweep(&model, &cfg, &formula, &[("ez".into(), z_mean)], MethodKind::Method1).map_err(|e| e.to_string())?;
    let svg = sensitivity_svg(
        std::slice::from_ref(&result),
        "Effect by population mean of V",
        "E[V]",
        "effect",
    );
    Ok(SweepResponse {
        rows: result
            .rows
            .iter()
            .map(|r| SweepRow {
                ev: r.ev,
                estimate: r.point,
                lower: r.lo,
                upper: r.hi,
            })
            .collect(),
        svg,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct WeightingRequest {
    pub n_trial: usize,
    pub n_pop: usize,
    /// Selection tilt on X and Z.
    pub gamma_x: f64,
    pub gamma_z: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct BalanceItem {
    pub item: String,
    pub trial: f64,
    pub population: Option<f64>,
    pub std_diff_arms: f64,
    pub std_diff_population: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct BalanceView {
    pub label: String,
    pub ess: f64,
    pub rows: Vec<BalanceItem>,
}

impl BalanceView {
    fn new(label: &str, t: &BalanceTable) -> Self {
        BalanceView {
            label: label.into(),
            ess: t.ess,
            rows: t
                .rows
                .iter()
                .map(|r| BalanceItem {
                    item: r.item.clone(),
                    trial: r.trial,
                    population: r.population,
                    std_diff_arms: r.std_diff_arms,
                    std_diff_population: r.std_diff_population,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct WeightingResponse {
    pub tables: Vec<BalanceView>,
    pub warnings: Vec<String>,
}

/// Simulates a selected trial and its population, then compares balance
/// unweighted, weighted by the odds, and with two-step weights.
pub fn weighting_balance(req: &WeightingRequest) -> Result<WeightingResponse, String> {
    let mut spec = ScenarioSpec {
        n_trial: req.n_trial,
        n_pop: req.n_pop,
        seed: req.seed,
        replicates: 1,
        ..ScenarioSpec::default()
    };
    spec.covariates.gamma_x = req.gamma_x;
    spec.covariates.gamma_z = req.gamma_z;
    let rep = generate_replicate(&spec, 0).map_err(|e| e.to_string())?;
    let run = || -> tatesens::Result<WeightingResponse> {
        let pop = PopulationTarget::dataset(PopulationKind::FullDataset, rep.pop.clone())?;
        let items = ["X", "Z", "V"];
        let balance = |w: &[f64]| diagnostics(w, &rep.trial, "A", &items, Some(&pop));
        let odds = weight_by_odds(&rep.trial, &rep.pop, &["X", "Z"])?;
        let plan = WeightingPlan {
            population_covars: vec!["X".into(), "Z".into()],
            within_covars: vec!["X".into(), "Z".into(), "V".into()],
            procedure: None,
        };
        let two = compose_two_step(&rep.trial, "A", &pop, &plan)?;
        let mut warnings = odds.warnings.clone();
        warnings.extend(two.warnings.iter().cloned());
        Ok(WeightingResponse {
            tables: vec![
                BalanceView::new("unweighted", &balance(&vec![1.0; rep.trial.n_rows()])?),
                BalanceView::new("weighted by the odds", &balance(&odds.weights)?),
                BalanceView::new("two-step", &balance(&two.weights)?),
            ],
            warnings,
        })
    };
    run().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimulationRequest {
    /// `none`, `z_misspec` or `v_misspec`.
    pub preset: Misspecification,
    pub replicates: usize,
    pub n_trial: usize,
    pub n_pop: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct MethodRow {
    pub method: &'static str,
    pub bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub mcse_bias: f64,
}

impl MethodRow {
    fn new(method: &'static str, s: &MethodSummary) -> Self {
        MethodRow {
            method,
            bias: s.bias,
            sd: s.sd,
            mean_se: s.mean_se,
            coverage: s.coverage,
            mcse_bias: s.mcse_bias,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SimulationResponse {
    pub true_tate: f64,
    pub replicates: usize,
    pub failed: usize,
    pub methods: Vec<MethodRow>,
}

/// Small Monte Carlo comparison of the two methods.
pub fn simulation(req: &SimulationRequest) -> Result<SimulationResponse, String> {
    if req.replicates > 500 {
        return Err("at most 500 replicates in the browser".into());
    }
    let spec = ScenarioSpec {
        replicates: req.replicates,
        n_trial: req.n_trial,
        n_pop: req.n_pop,
        seed: req.seed,
        ..ScenarioSpec::preset(req.preset)
    };
    let r = evaluate(&spec).map_err(|e| e.to_string())?;
    Ok(SimulationResponse {
        true_tate: r.true_tate,
        replicates: r.replicates,
        failed: r.failed,
        methods: vec![
            MethodRow::new("Method 1", &r.m1),
            MethodRow::new("Method 2", &r.m2),
            MethodRow::new("Method 2, model-based SE", &r.m2_model_based),
        ],
    })
}

fn call<Q: for<'de> Deserialize<'de>, R: Serialize>(
    json: &str,
    f: fn(&Q) -> Result<R, String>,
) -> Result<String, String> {
    let req: Q = serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))?;
    serde_json::to_string(&f(&req)?).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = sensitivitySweep)]
pub fn sensitivity_sweep_js(json: &str) -> Result<String, JsValue> {
    call(json, sensitivity_sweep).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = weightingBalance)]
pub fn weighting_balance_js(json: &str) -> Result<String, JsValue> {
    call(json, weighting_balance).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = runSimulation)]
pub fn simulation_js(json: &str) -> Result<String, JsValue> {
    call(json, simulation).map_err(|e| JsValue::from_str(&e))
}

/// Same as the bindings but with string errors, for native callers.
pub fn handle(operation: &str, json: &str) -> Result<String, String> {
    match operation {
        "sweep" => call(json, sensitivity_sweep),
        "weighting" => call(json, weighting_balance),
        "simulation" => call(json, simulation),
        other => Err(format!("unknown operation `{other}`")),
    }
}
