use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use tatesens::data::{
    check_modifier_coverage, declare_roles, load_table, AnalysisContext, OutcomeRole, PopulationKind, PopulationTarget,
    SummaryStats, LONG_RESPONSE,
};
use tatesens::estimation::{coefficient_table, sig6, AnyFit, Estimates};
use tatesens::plot::{group_effects, group_effects_svg, plot_data_csv, sensitivity_svg};
use tatesens::sensitivity::{
    compare_methods, estimate_ate, run_method1, run_method2, scan_effect_modifiers, treatment_factors, Candidate,
    EffectScale, MethodOptions, SensitivityResult, TateEstimate, SCAN_THRESHOLD,
};
use tatesens::simulation::{evaluate, EvalReport, Misspecification, ScenarioSpec, VarianceComparison};
use tatesens::weighting::{adjust_within_trial_balance, diagnostics};
use tatesens::{synthetic, Error, Result};

use crate::config::{Loaded, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodChoice {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    info!("wrote {}", path.display());
    Ok(())
}

struct Inputs {
    ctx: AnalysisContext,
    pop: PopulationTarget,
    notes: Vec<String>,
}

fn load_inputs(loaded: &Loaded) -> Result<Inputs> {
    let cfg = &loaded.config;
    let mut notes = Vec::new();
    let mut trial = load_table(loaded.resolve(&cfg.trial.path), &cfg.trial.schema()?)?;
    for (col, level) in &cfg.model.reference {
        trial.set_reference(col, level)?;
    }
    let roles = cfg.roles.to_roles();
    let ctx = declare_roles(trial, roles)?;

    let p = &cfg.population;
    let pop = match p.kind {
        PopulationKind::SummaryStats => {
            let path = p
                .summary
                .as_ref()
                .ok_or_else(|| Error::Invalid("population.summary is required for summary_stats".into()))?;
            PopulationTarget::summary(SummaryStats::load(loaded.resolve(path))?)
        }
        kind => {
            let path = p
                .path
                .as_ref()
                .ok_or_else(|| Error::Invalid("population.path is required for a population dataset".into()))?;
            let schema = crate::config::TableFile {
                path: path.clone(),
                columns: p.columns.clone(),
            }
            .schema()?;
            let mut table = load_table(loaded.resolve(path), &schema)?;
            for (col, level) in &cfg.model.reference {
                if table.has_column(col) {
                    table.set_reference(col, level)?;
                }
            }
            let mut target = PopulationTarget::dataset(kind, table)?;
            if let Some(m) = &p.membership {
                target = target.identifiable_by(m)?;
            }
            target
        }
    };
    if p.kind == PopulationKind::RepresentativeSample && p.overlap && p.membership.is_none() {
        notes.push(
            "the population sample may contain trial members who cannot be identified; weighting by the odds treats \
             the two samples as disjoint"
                .into(),
        );
    }
    Ok(Inputs { ctx, pop, notes })
}

fn response(ctx: &AnalysisContext) -> Result<String> {
    match &ctx.roles().outcome {
        Some(OutcomeRole::Single(y)) => Ok(y.clone()),
        Some(OutcomeRole::PrePost { .. }) => Ok(LONG_RESPONSE.to_string()),
        Some(OutcomeRole::Long { outcome, .. }) => Ok(outcome.clone()),
        None => Err(Error::Roles("an outcome role is required for this command".into())),
    }
}

/// Treatment factors with every lower-order term, e.g. `F, A, F:A`.
fn treatment_hierarchy(ctx: &AnalysisContext) -> Vec<String> {
    let tf = treatment_factors(ctx);
    let mut out = Vec::new();
    for mask in 1..(1usize << tf.len()) {
        let parts: Vec<&str> = tf
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, t)| t.as_str())
            .collect();
        out.push(parts.join(":"));
    }
    out.sort_by_key(|t| t.matches(':').count());
    out
}

fn fit_header(title: &str, fit: &AnyFit) -> String {
    let mut out = format!("== {title}\n");
    match fit {
        AnyFit::Single(f) => {
            let _ = writeln!(
                out,
                "link {:?}, family {:?}, n {}, vcov {}, inference {}",
                f.link,
                f.family,
                f.n_obs,
                f.vcov_kind.label(),
                f.inference.label()
            );
        }
        AnyFit::Mixed(m) => {
            let _ = writeln!(
                out,
                "random intercepts, subjects {}, observations {}, vcov {}, inference {}",
                m.n_subjects,
                m.n_obs,
                m.vcov_kind.label(),
                m.inference.label()
            );
            let _ = writeln!(
                out,
                "between-subject variance {}{}, residual variance {}, {}log-likelihood {}",
                sig6(m.between_var),
                if m.between_truncated { " (truncated at 0)" } else { "" },
                sig6(m.residual_var),
                if m.weights_used { "weighted " } else { "" },
                sig6(m.loglik)
            );
        }
    }
    out
}

fn estimate_line(label: &str, e: &TateEstimate, level: f64) -> String {
    format!(
        "{label}: {} ({}% CI {}, {})\n",
        sig6(e.point),
        sig6(level * 100.0),
        sig6(e.lo),
        sig6(e.hi)
    )
}

fn endpoints(r: &SensitivityResult, level: f64) -> String {
    let mut out = String::new();
    let axis = r.axis.as_deref().unwrap_or("-");
    for row in [r.rows.first(), r.rows.last()].into_iter().flatten() {
        let _ = writeln!(
            out,
            "{} at {axis} = {}: {} ({}% CI {}, {})",
            r.method.label(),
            sig6(row.ev),
            sig6(row.point),
            sig6(level * 100.0),
            sig6(row.lo),
            sig6(row.hi)
        );
    }
    out
}

pub fn analyze(loaded: &Loaded, method: MethodChoice, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let cfg: &RunConfig = &loaded.config;
    let Inputs {
        ctx,
        mut pop,
        mut notes,
    } = load_inputs(loaded)?;
    let y = response(&ctx)?;
    let subjects = ctx.subjects();
    let mut report = String::new();

    let coverage = check_modifier_coverage(&subjects, &pop, &cfg.roles.z)?;
    let _ = writeln!(report, "== coverage of Z modifiers");
    if coverage.passed() {
        let _ = writeln!(report, "all Z modifiers covered by the trial");
    }
    for f in coverage.flags() {
        warn!("coverage: {f}");
        let _ = writeln!(report, "flag: {f}");
    }
    if !cfg.roles.v.is_empty() {
        let _ = writeln!(report, "note: {}", tatesens::data::CoverageReport::V_NOTE);
    }
    if cfg.coverage.strict && !coverage.passed() {
        return Err(Error::Coverage(coverage.flags().join("; ")));
    }
    if cfg.coverage.trim {
        if let Some(t) = coverage.trimmed.clone() {
            let _ = writeln!(report, "population trimmed to {} covered rows", t.n_rows());
            pop = PopulationTarget {
                data: tatesens::data::PopulationData::Table(t),
                ..pop
            };
        }
    }

    let level = cfg.sensitivity.as_ref().map_or(0.95, |s| s.ci_level);
    let spec = cfg.model.spec(&y)?;
    let hierarchy = treatment_hierarchy(&ctx);
    let mut coefs = String::new();

    let _ = writeln!(report, "\n== average treatment effect in the trial");
    let plain = cfg.model.ate_spec(&y, &hierarchy)?;
    let bare = tatesens::design::ModelSpec {
        terms: vec![],
        ..plain.clone()
    }
    .with_terms(
        hierarchy
            .iter()
            .map(|t| tatesens::design::Term::parse(t))
            .collect::<Result<Vec<_>>>()?,
    );
    report.push_str(&estimate_line(
        "SATE, no covariates",
        &estimate_ate(&ctx, &bare, None, level)?,
        level,
    ));
    if cfg.model.ate_terms.is_some() {
        report.push_str(&estimate_line(
            "SATE, covariate adjusted",
            &estimate_ate(&ctx, &plain, None, level)?,
            level,
        ));
    }

    let Some(sblock) = cfg.sensitivity.as_ref().filter(|s| !s.is_empty()) else {
        let _ = writeln!(report, "\nno Z or V modifiers declared: no sensitivity analysis");
        let fit = tatesens::sensitivity::fit_outcome(&ctx, &spec, None, &Default::default())?;
        coefs.push_str(&fit_header("outcome model, unweighted trial", &fit));
        coefs.push_str(&coefficient_table(&fit, level));
        finish(out, &report, &notes, &coefs)?;
        return Ok(());
    };
    let natural = EffectScale::natural(spec.link, spec.family);
    let scfg = sblock.to_config(natural)?;
    let plan = cfg.weighting.plan(&cfg.roles);

    let mut results = Vec::new();
    let mut balance = String::new();
    let unweighted = vec![1.0; subjects.n_rows()];
    let balance_covars: Vec<&str> = plan
        .within_covars
        .iter()
        .chain(&plan.population_covars)
        .map(String::as_str)
        .collect();
    balance.push_str(
        &diagnostics(
            &unweighted,
            &subjects,
            &cfg.roles.treatment,
            &balance_covars,
            Some(&pop),
        )?
        .to_delimited("trial arms and population, unweighted"),
    );

    let mut primary_fit = None;
    if matches!(method, MethodChoice::One | MethodChoice::Both) {
        let m1 = run_method1(&ctx, &pop, &spec, &scfg, &MethodOptions::default())?;
        coefs.push_str(&fit_header("Method 1: outcome model, unweighted trial", &m1.fit));
        coefs.push_str(&coefficient_table(&m1.fit, level));
        coefs.push('\n');
        let _ = writeln!(report, "\n== Method 1");
        if let Some(s) = &m1.result.sate_reference {
            report.push_str(&estimate_line("model-implied SATE", s, level));
        }
        report.push_str(&endpoints(&m1.result, level));
        if cfg.weighting.balance_adjusted_method1 && !plan.within_covars.is_empty() {
            let covars: Vec<&str> = plan.within_covars.iter().map(String::as_str).collect();
            let within = adjust_within_trial_balance(&subjects, &cfg.roles.treatment, &covars)?;
            report.push_str(&estimate_line(
                "balance-adjusted SATE",
                &estimate_ate(&ctx, &bare, Some(&within.weights), level)?,
                level,
            ));
            let opts = MethodOptions {
                within_weights: Some(within.weights.clone()),
                ..Default::default()
            };
            let adj = run_method1(&ctx, &pop, &spec, &scfg, &opts)?;
            let _ = writeln!(report, "Method 1 on the within-trial balanced trial:");
            report.push_str(&endpoints(&adj.result, level));
        }
        primary_fit = Some(m1.fit.clone());
        results.push(m1.result);
    }
    if matches!(method, MethodChoice::Two | MethodChoice::Both) {
        let m2 = run_method2(&ctx, &pop, &spec, &scfg, &plan, &MethodOptions::default())?;
        coefs.push_str(&fit_header(
            "Method 2: outcome model, trial weighted to the population",
            &m2.fit,
        ));
        coefs.push_str(&coefficient_table(&m2.fit, level));
        balance.push('\n');
        balance.push_str(
            &m2.balance
                .to_delimited(&format!("after weighting ({})", m2.weights.procedure.label())),
        );
        let _ = writeln!(report, "\n== Method 2");
        report.push_str(&estimate_line("(X, Z)-adjusted ATE", &m2.adjusted_ate, level));
        report.push_str(&endpoints(&m2.result, level));
        if primary_fit.is_none() {
            primary_fit = Some(m2.fit.clone());
        }
        results.push(m2.result);
    }
    if let [a, b] = results.as_slice() {
        let agreement = compare_methods(a, b)?;
        let _ = writeln!(report, "\n== agreement\n{}", agreement.recommendation);
    }
    for r in &results {
        notes.extend(r.notes.iter().map(|n| format!("{}: {n}", r.method.label())));
    }

    let mut csv = String::from(SensitivityResult::CSV_HEADER);
    csv.push('\n');
    for r in &results {
        for line in r.csv_rows() {
            csv.push_str(&line);
            csv.push('\n');
        }
    }
    write(out, "sensitivity.csv", &csv)?;
    write(out, "sensitivity_plot.csv", &plot_data_csv(&results))?;
    if results.iter().any(|r| r.axis.is_some()) {
        let axis = sblock
            .label
            .clone()
            .or_else(|| results[0].axis.clone())
            .unwrap_or_default();
        let svg = sensitivity_svg(
            &results,
            "Target-population effect by sensitivity parameter",
            &axis,
            &format!("TATE ({})", scfg.scale),
        );
        write(out, "sensitivity.svg", &svg)?;
    }
    if !sblock.groups.is_empty() {
        let fit = primary_fit.expect("at least one method ran");
        let formula = scfg.formula(&treatment_factors(&ctx)).resolve(fit.coef_names())?;
        let groups: Vec<(String, BTreeMap<String, f64>)> = sblock
            .groups
            .iter()
            .map(|g| (g.label.clone(), g.values.clone()))
            .collect();
        let effects = group_effects(&fit, &formula, &groups, scfg.scale, level)?;
        let _ = writeln!(report, "\n== effects by group");
        for g in &effects {
            let _ = writeln!(
                report,
                "{}: {} ({}, {})",
                g.label,
                sig6(g.estimate),
                sig6(g.lo),
                sig6(g.hi)
            );
        }
        write(
            out,
            "group_effects.svg",
            &group_effects_svg(
                &effects,
                "Treatment effect by group",
                &format!("effect ({})", scfg.scale),
            ),
        )?;
    }
    write(out, "balance.txt", &balance)?;
    finish(out, &report, &notes, &coefs)
}

fn finish(out: &Path, report: &str, notes: &[String], coefs: &str) -> Result<()> {
    let mut text = report.to_string();
    if !notes.is_empty() {
        let _ = writeln!(text, "\n== notes");
        for n in notes {
            let _ = writeln!(text, "{n}");
        }
    }
    write(out, "coefficients.txt", coefs)?;
    write(out, "report.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn scan(loaded: &Loaded, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let cfg = &loaded.config;
    let Inputs { ctx, .. } = load_inputs(loaded)?;
    let y = response(&ctx)?;
    let block = cfg.scan.as_ref();
    let columns = block.map(|b| b.columns.clone()).unwrap_or_default();
    let base_terms = block
        .and_then(|b| b.base_terms.clone())
        .unwrap_or_else(|| cfg.model.terms.clone());
    let base = tatesens::design::ModelSpec {
        terms: vec![],
        ..cfg.model.spec(&y)?
    }
    .with_terms(
        base_terms
            .iter()
            .map(|t| tatesens::design::Term::parse(t))
            .collect::<Result<Vec<_>>>()?,
    );
    let candidates: Vec<Candidate> = Candidate::enumerate(&ctx.subjects(), &columns)
        .into_iter()
        .filter(|c| match c {
            Candidate::Single(_) => true,
            Candidate::Pair(..) => block.is_none_or(|b| b.pairs),
            Candidate::Cross(_) => block.is_none_or(|b| b.crosses),
        })
        .collect();
    let entries = scan_effect_modifiers(&ctx, &base, &candidates)?;
    let mut csv =
        String::from("rank,candidate,max_abs_statistic,flagged,coefficient,estimate,std_error,statistic,skipped\n");
    let mut text = format!(
        "== modifier scan ({} candidates, advisory threshold |statistic| >= {SCAN_THRESHOLD})\n",
        entries.len()
    );
    for (k, e) in entries.iter().enumerate() {
        let skipped = e.skipped.clone().unwrap_or_default().replace(',', ";");
        let _ = writeln!(
            text,
            "{:>3}. {:<30} max |stat| {}{}{}",
            k + 1,
            e.candidate,
            sig6(e.max_abs_statistic),
            if e.flagged { "  *" } else { "" },
            if skipped.is_empty() {
                String::new()
            } else {
                format!("  skipped: {skipped}")
            }
        );
        if e.coefficients.is_empty() {
            let _ = writeln!(
                csv,
                "{},{},{},{},,,,,{skipped}",
                k + 1,
                e.candidate,
                sig6(e.max_abs_statistic),
                e.flagged
            );
        }
        for (name, est, se, stat) in &e.coefficients {
            let _ = writeln!(
                csv,
                "{},{},{},{},{name},{},{},{},{skipped}",
                k + 1,
                e.candidate,
                sig6(e.max_abs_statistic),
                e.flagged,
                sig6(*est),
                sig6(*se),
                sig6(*stat)
            );
        }
    }
    write(out, "scan.csv", &csv)?;
    write(out, "scan.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub struct SimulateArgs {
    pub scenario: Option<PathBuf>,
    pub preset: Option<Misspecification>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
}

pub fn simulate(args: &SimulateArgs, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut spec = match &args.scenario {
        Some(p) => ScenarioSpec::parse(&fs::read_to_string(p)?)?,
        None => ScenarioSpec::preset(args.preset.unwrap_or_default()),
    };
    if let Some(r) = args.reps {
        spec.replicates = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let report: EvalReport = evaluate(&spec)?;
    let csv = report.to_csv();
    write(out, "eval_report.csv", &csv)?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "scenario {}: replicates {}, failed {}, seed {}, true TATE {}",
        report.scenario,
        report.replicates,
        report.failed,
        spec.seed,
        sig6(report.true_tate)
    );
    for n in &report.notes {
        warn!("{n}");
        let _ = writeln!(text, "note: {n}");
    }
    if spec.misspecification == Misspecification::None && report.replicates > 1 {
        let v = VarianceComparison::from_report(&report);
        let _ = writeln!(
            text,
            "SD(M2)/SD(M1) {}; mean SE / SD for M2: sandwich {}, model-based {}",
            sig6(v.sd_ratio),
            sig6(v.sandwich_ratio),
            sig6(v.model_based_ratio)
        );
    }
    write(out, "eval_summary.txt", &text)?;
    print!("{csv}{text}");
    Ok(())
}

const ILLUSTRATION: &str = include_str!("../configs/illustration.toml");

pub fn make_demo_data(out: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut buf = Vec::new();
    synthetic::trial(seed)?.write_csv(&mut buf)?;
    write(out, "trial.csv", &String::from_utf8_lossy(&buf))?;
    let mut buf = Vec::new();
    synthetic::population(seed)?.write_csv(&mut buf)?;
    write(out, "population.csv", &String::from_utf8_lossy(&buf))?;
    write(out, "illustration.toml", ILLUSTRATION)?;
    Ok(())
}
