//! Run configuration read from TOML. Relative paths resolve against the
//! directory holding the configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use tatesens::data::{ColumnType, MeanEstimate, OutcomeRole, PopulationKind, Schema, VariableRoles};
use tatesens::design::{Family, Link, ModelSpec};
use tatesens::sensitivity::{CoefWeight, EffectScale, Quantity, SensitivityConfig, VAxis, ZQuantity};
use tatesens::weighting::{Procedure, WeightingPlan};
use tatesens::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub trial: TableFile,
    pub population: PopulationBlock,
    pub roles: RolesBlock,
    pub model: ModelBlock,
    #[serde(default)]
    pub sensitivity: Option<SensitivityBlock>,
    #[serde(default)]
    pub weighting: WeightingBlock,
    #[serde(default)]
    pub coverage: CoverageBlock,
    #[serde(default)]
    pub scan: Option<ScanBlock>,
}

/// `numeric`, `binary`, `categorical`, or a list of categorical levels.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ColumnDecl {
    Kind(String),
    Levels(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFile {
    pub path: PathBuf,
    pub columns: BTreeMap<String, ColumnDecl>,
}

impl TableFile {
    pub fn schema(&self) -> Result<Schema> {
        let mut s = Schema::new();
        for (name, decl) in &self.columns {
            let ty = match decl {
                ColumnDecl::Kind(k) => match k.as_str() {
                    "numeric" => ColumnType::Numeric,
                    "binary" => ColumnType::Binary,
                    "categorical" => ColumnType::Categorical { levels: None },
                    other => {
                        return Err(Error::Invalid(format!("column `{name}`: unknown type `{other}`")));
                    }
                },
                ColumnDecl::Levels(l) => ColumnType::Categorical {
                    levels: Some(l.clone()),
                },
            };
            s = s.with(name, ty);
        }
        Ok(s)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationBlock {
    pub kind: PopulationKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnDecl>,
    /// Summary-statistics file for `summary_stats`.
    #[serde(default)]
    pub summary: Option<PathBuf>,
    /// 0/1 column marking trial members inside the population data.
    #[serde(default)]
    pub membership: Option<String>,
    /// A representative sample that may include trial members.
    #[serde(default)]
    pub overlap: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolesBlock {
    pub treatment: String,
    #[serde(default)]
    pub outcome: Option<OutcomeRole>,
    #[serde(default)]
    pub x: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
    #[serde(default)]
    pub v: Vec<String>,
}

impl RolesBlock {
    pub fn to_roles(&self) -> VariableRoles {
        VariableRoles {
            treatment: self.treatment.clone(),
            outcome: self.outcome.clone(),
            x_covars: self.x.clone(),
            z_modifiers: self.z.clone(),
            v_modifiers: self.v.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub terms: Vec<String>,
    #[serde(default)]
    pub link: Option<Link>,
    #[serde(default)]
    pub family: Option<Family>,
    /// Reference level per categorical column.
    #[serde(default)]
    pub reference: BTreeMap<String, String>,
    /// Terms of the covariate-adjusted ATE model (no modifier interactions).
    #[serde(default)]
    pub ate_terms: Option<Vec<String>>,
}

impl ModelBlock {
    fn link_family(&self) -> (Link, Family) {
        match (self.link, self.family) {
            (Some(l), Some(f)) => (l, f),
            (None, None) | (Some(Link::Identity), None) | (None, Some(Family::Gaussian)) => {
                (Link::Identity, Family::Gaussian)
            }
            (Some(Link::Logit), None) => (Link::Logit, Family::Binomial),
            (Some(Link::Log), None) => (Link::Log, Family::Poisson),
            (None, Some(Family::Binomial)) => (Link::Logit, Family::Binomial),
            (None, Some(Family::Poisson)) => (Link::Log, Family::Poisson),
        }
    }

    pub fn spec(&self, response: &str) -> Result<ModelSpec> {
        let (link, family) = self.link_family();
        let terms: Vec<&str> = self.terms.iter().map(String::as_str).collect();
        ModelSpec::new(response, link, family, &terms)
    }

    pub fn ate_spec(&self, response: &str, default_terms: &[String]) -> Result<ModelSpec> {
        let (link, family) = self.link_family();
        let terms = self.ate_terms.as_deref().unwrap_or(default_terms);
        let terms: Vec<&str> = terms.iter().map(String::as_str).collect();
        ModelSpec::new(response, link, family, &terms)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZEntry {
    pub name: String,
    pub column: String,
    #[serde(default)]
    pub level: Option<String>,
    /// `[point]` or `[point, lo, hi]`; otherwise taken from the population.
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub label: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityBlock {
    #[serde(default)]
    pub z: Vec<ZEntry>,
    #[serde(default)]
    pub v: Vec<VAxis>,
    #[serde(default)]
    pub sweep: Option<String>,
    /// Coefficient name to weight expression, e.g. `"nw * (1 - s)"`.
    #[serde(default)]
    pub coefficients: Option<BTreeMap<String, String>>,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default)]
    pub scale: Option<EffectScale>,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    /// Subgroups for the per-group effect plot.
    #[serde(default)]
    pub groups: Vec<GroupEntry>,
    /// Axis label for plots; defaults to the swept quantity's name.
    #[serde(default)]
    pub label: Option<String>,
}

fn default_grid() -> usize {
    9
}

fn default_level() -> f64 {
    0.95
}

impl SensitivityBlock {
    pub fn to_config(&self, natural: EffectScale) -> Result<SensitivityConfig> {
        let z = self
            .z
            .iter()
            .map(|e| {
                let mean = match e.mean.as_deref() {
                    None => None,
                    Some([p]) => Some(MeanEstimate::known(*p)),
                    Some([p, lo, hi]) => Some(MeanEstimate::with_ci(*p, *lo, *hi)?),
                    Some(_) => {
                        return Err(Error::Invalid(format!(
                            "sensitivity.z `{}`: mean must be [point] or [point, lo, hi]",
                            e.name
                        )))
                    }
                };
                Ok(ZQuantity {
                    quantity: Quantity::new(&e.name, &e.column, e.level.as_deref()),
                    mean,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let coefficients = self
            .coefficients
            .as_ref()
            .map(|m| {
                m.iter()
                    .map(|(c, e)| CoefWeight::parse(c, e))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        let cfg = SensitivityConfig {
            z,
            v: self.v.clone(),
            sweep: self.sweep.clone(),
            coefficients,
            grid_points: self.grid_points,
            scale: self.scale.unwrap_or(natural),
            ci_level: self.ci_level,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty() && self.v.is_empty()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingBlock {
    #[serde(default)]
    pub procedure: Option<Procedure>,
    /// Participation-model covariates; default: the X and Z roles.
    #[serde(default)]
    pub population_covars: Option<Vec<String>>,
    /// Treatment-propensity covariates; default: X, Z and V. Empty skips the step.
    #[serde(default)]
    pub within_covars: Option<Vec<String>>,
    /// Also run Method 1 on the within-trial balanced trial.
    #[serde(default)]
    pub balance_adjusted_method1: bool,
}

impl WeightingBlock {
    pub fn plan(&self, roles: &RolesBlock) -> WeightingPlan {
        let xz: Vec<String> = roles.x.iter().chain(&roles.z).cloned().collect();
        let xzv: Vec<String> = xz.iter().chain(&roles.v).cloned().collect();
        WeightingPlan {
            population_covars: self.population_covars.clone().unwrap_or(xz),
            within_covars: self.within_covars.clone().unwrap_or(xzv),
            procedure: self.procedure,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageBlock {
    /// Fail when any Z is not covered.
    #[serde(default)]
    pub strict: bool,
    /// Restrict a population dataset to covered rows.
    #[serde(default)]
    pub trim: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBlock {
    /// Columns to examine; pairs and cross-classifications are formed from them.
    pub columns: Vec<String>,
    /// Base model terms; default: model terms.
    #[serde(default)]
    pub base_terms: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub pairs: bool,
    #[serde(default = "yes")]
    pub crosses: bool,
}

fn yes() -> bool {
    true
}

pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub fn load(path: &Path) -> std::result::Result<Loaded, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("config: {}: {e}", path.display()))?;
    let config: RunConfig = toml::from_str(&text).map_err(|e| format!("config: {}: {e}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base })
}
