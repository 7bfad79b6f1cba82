//! The five pipeline commands. Each one computes every output in memory and
//! only then writes the files, so a failing run leaves no partial output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use super::bundle::ParamsBundle;
use super::config::RunConfig;
use super::manifest::{sha256_hex, Outputs, RunManifest};
use super::schema::{
    claims_csv, panel_csv, patients_csv, read_claims, read_panel, read_patients, to_csv_bytes,
};
use crate::counterfactual::{
    comparison_table, run_scenario, PolicyScenario, ScenarioKind, ScenarioOutcome,
};
use crate::error::{Error, Result};
use crate::estimation::{
    default_init, did_table, estimate_cost_params, fit_logit_mle, logit::ChoiceData, with_bootstrap,
};
use crate::model::{
    biased_belief_series, cost_sharing_series, present_bias_series, salience_series, utility_curve,
    weighting_series, CurveSpec, PatientProfile, Severity,
};
use crate::severity::{assign_severity, ClaimRecord, SeverityCategory, SeverityMeasure};
use crate::synth::{
    calibrate_concentration, generate_population, simulate_choices, simulate_costs,
    simulate_policy_shock, PopulationConfig, SeverityMix,
};

pub const PATIENTS_FILE: &str = "patients.csv";
pub const CLAIMS_FILE: &str = "claims.csv";
pub const PANEL_FILE: &str = "panel.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const PARAMS_FILE: &str = "params.json";
pub const DID_FILE: &str = "did.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COUNTERFACTUAL_FILE: &str = "counterfactual.json";
pub const CURVES_FILE: &str = "curves.csv";

/// Inputs shared by every command. `config` already holds the command-line
/// overrides (seed, severity measure, bootstrap size, rural-minority flag).
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: RunConfig,
    pub out: PathBuf,
    /// Directory holding `patients.csv`, `claims.csv` and optionally `panel.csv`.
    pub data: Option<PathBuf>,
    /// Parameter file for `counterfactual`; the bundled published values when absent.
    pub params: Option<PathBuf>,
    /// Scenario names to keep; all configured scenarios when empty.
    pub scenarios: Vec<String>,
}

impl RunContext {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Self {
        RunContext {
            config,
            out: out.into(),
            data: None,
            params: None,
            scenarios: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.population.seed
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::Config {
            key: "data".into(),
            message: "this command needs a data directory (--data)".into(),
        })
    }
}

/// What a command wrote.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub written: Vec<PathBuf>,
}

fn finish(
    ctx: &RunContext,
    command: &str,
    started: Instant,
    inputs: Vec<String>,
    outputs: Outputs,
    parameters: serde_json::Value,
    summary: serde_json::Value,
) -> Result<RunReport> {
    let manifest = RunManifest {
        command: command.to_string(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: sha256_hex(ctx.config.to_toml_string()?.as_bytes()),
        seed: ctx.seed(),
        inputs,
        outputs: outputs.describe(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        parameters,
        summary,
    };
    let written = outputs.commit(&ctx.out, &manifest)?;
    log::info!(
        "{command}: wrote {} files to {}",
        written.len(),
        ctx.out.display()
    );
    Ok(RunReport { manifest, written })
}

fn share(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

fn group_summary(patients: &[PatientProfile]) -> serde_json::Value {
    let n = patients.len();
    let count =
        |f: &dyn Fn(&PatientProfile) -> bool| share(patients.iter().filter(|p| f(p)).count(), n);
    json!({
        "n_patients": n,
        "disadvantaged": count(&|p| p.disadvantaged()),
        "poor_household": count(&|p| p.poor_household),
        "distant": count(&|p| p.distant),
        "minority": count(&|p| p.minority),
        "urban": count(&|p| p.urban),
        "rural_hukou": count(&|p| p.rural_hukou),
        "male": count(&|p| p.male),
        "high_income": count(&|p| p.high_income),
        "used_ambulatory": count(&|p| p.used_ambulatory),
    })
}

fn category_counts(cats: impl Iterator<Item = SeverityCategory>) -> BTreeMap<&'static str, usize> {
    let mut out: BTreeMap<&'static str, usize> = SeverityCategory::ALL
        .iter()
        .map(|c| (c.name(), 0))
        .collect();
    for c in cats {
        *out.entry(c.name()).or_default() += 1;
    }
    out
}

/// Synthetic patients, claims and (with a reform configured) a two-period panel.
pub fn cmd_simulate(ctx: &RunContext) -> Result<RunReport> {
    let started = Instant::now();
    let cfg = &ctx.config.population;
    let seed = cfg.seed;
    let mut pop = generate_population(cfg)?;
    simulate_choices(
        &mut pop.patients,
        &cfg.true_cost_params,
        &cfg.true_pref_params,
        &cfg.plan,
        seed,
    )?;
    let claims = simulate_costs(&pop, cfg, seed)?;

    let mut out = Outputs::default();
    out.add(PATIENTS_FILE, patients_csv(&pop.patients)?);
    out.add(CLAIMS_FILE, claims_csv(&claims)?);

    let mut truth = json!({
        "cost_params": cfg.true_cost_params,
        "preference_params": cfg.true_pref_params,
        "plan": cfg.plan,
        "severity_categories": category_counts(pop.categories.iter().copied()),
    });
    if let Some(shock) = &cfg.shock {
        let panel = simulate_policy_shock(
            &pop,
            shock,
            &cfg.true_cost_params,
            &cfg.true_pref_params,
            seed,
        )?;
        out.add(PANEL_FILE, panel_csv(&panel.rows)?);
        truth["reform"] = json!({
            "true_effect": panel.true_effect,
            "true_effect_by_category": {
                "mild": panel.true_effect_by_category[0],
                "moderate": panel.true_effect_by_category[1],
                "severe": panel.true_effect_by_category[2],
            },
            "n_rows": panel.rows.len(),
        });
    }
    out.add_json(TRUTH_FILE, &truth)?;

    let summary = json!({
        "group_shares": group_summary(&pop.patients),
        "target_group_shares": cfg.group_shares,
        "n_claims": claims.len(),
    });
    finish(ctx, "simulate", started, vec![], out, truth, summary)
}

fn load_dataset(dir: &Path) -> Result<(Vec<PatientProfile>, Vec<ClaimRecord>, Vec<String>)> {
    let pp = dir.join(PATIENTS_FILE);
    let cp = dir.join(CLAIMS_FILE);
    let patients = read_patients(&pp)?;
    let claims = read_claims(&cp)?;
    Ok((
        patients,
        claims,
        vec![pp.display().to_string(), cp.display().to_string()],
    ))
}

#[derive(Debug, Serialize)]
struct SeveritySummary {
    measure: SeverityMeasure,
    n_assigned: usize,
    n_excluded: usize,
    group_theta: BTreeMap<String, f64>,
    categories: BTreeMap<&'static str, usize>,
}

/// Attaches the selected severity measure to each patient and drops patients
/// the measure leaves out.
fn with_severity(
    measure: SeverityMeasure,
    patients: Vec<PatientProfile>,
    claims: &[ClaimRecord],
    ctx: &RunContext,
) -> Result<(Vec<PatientProfile>, SeveritySummary)> {
    let needs_non_cvd = matches!(
        measure,
        SeverityMeasure::PreferenceDiscounted | SeverityMeasure::FiveBin
    );
    if needs_non_cvd && !claims.iter().any(ClaimRecord::is_non_cvd_inpatient) {
        return Err(Error::Data(format!(
            "severity measure {measure:?} needs non-CVD inpatient claims, and the data has none"
        )));
    }
    let assignment = assign_severity(measure, claims, &patients, &ctx.config.severity)?;
    let kept: Vec<PatientProfile> = patients
        .into_iter()
        .filter_map(|mut p| {
            assignment.theta.get(&p.id).map(|t| {
                p.theta = *t;
                p
            })
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty("patients with an assigned severity".into()));
    }
    let summary = SeveritySummary {
        measure,
        n_assigned: kept.len(),
        n_excluded: assignment.excluded.len(),
        group_theta: assignment.group_theta.clone(),
        categories: category_counts(
            kept.iter()
                .filter_map(|p| assignment.category.get(&p.id).copied()),
        ),
    };
    Ok((kept, summary))
}

/// Severity construction, cost regressions, then the choice-model MLE.
pub fn cmd_estimate(ctx: &RunContext) -> Result<RunReport> {
    let started = Instant::now();
    let est = &ctx.config.estimation;
    let (patients, claims, inputs) = load_dataset(ctx.data_dir()?)?;
    let (patients, severity) = with_severity(est.measure, patients, &claims, ctx)?;

    let theta: BTreeMap<u64, Severity> = patients.iter().map(|p| (p.id, p.theta)).collect();
    let cost = estimate_cost_params(&claims, &patients, &theta, &est.cost)?;
    let plan = est
        .plan
        .clone()
        .unwrap_or_else(|| ctx.config.population.plan.clone());
    let init = default_init(est.rural_minority);
    let mut fit = fit_logit_mle(&patients, &cost.params, &plan, &init, &est.logit)?;
    if est.bootstrap > 0 {
        let data = ChoiceData::build(&patients, &cost.params, &plan, est.rural_minority)?;
        fit = with_bootstrap(fit, &data, est.bootstrap, ctx.seed())?;
    }

    let result = json!({
        "cost_params": cost.params,
        "preference_params": fit.params,
        "plan": plan,
        "severity": severity,
        "cost": cost,
        "logit": fit,
    });
    let mut out = Outputs::default();
    out.add_json(PARAMS_FILE, &result)?;
    let parameters = json!({
        "cost_params": result["cost_params"],
        "preference_params": result["preference_params"],
    });
    let summary = json!({
        "n_patients": patients.len(),
        "n_claims": claims.len(),
        "loglik": fit.loglik,
        "converged": fit.converged,
        "n_bootstrap": fit.n_bootstrap,
    });
    finish(ctx, "estimate", started, inputs, out, parameters, summary)
}

/// The three difference-in-differences columns on `panel.csv`.
pub fn cmd_did(ctx: &RunContext) -> Result<RunReport> {
    let started = Instant::now();
    let path = ctx.data_dir()?.join(PANEL_FILE);
    if !path.exists() {
        return Err(Error::Data(format!(
            "{} not found; simulate with a [population.shock] section to produce a reform panel",
            path.display()
        )));
    }
    let panel = read_panel(&path)?;
    let table = did_table(&panel)?;
    let mut out = Outputs::default();
    out.add_json(DID_FILE, &table)?;
    let summary: Vec<_> = table
        .iter()
        .map(|r| json!({"spec": r.spec.label, "ame": r.interaction_ame, "se": r.interaction_ame_se, "n_obs": r.n_obs}))
        .collect();
    finish(
        ctx,
        "did",
        started,
        vec![path.display().to_string()],
        out,
        serde_json::Value::Null,
        json!(summary),
    )
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn kind_name(k: &ScenarioKind) -> &'static str {
    match k {
        ScenarioKind::Null => "null",
        ScenarioKind::AssistanceRemoval => "assistance_removal",
        ScenarioKind::CostSharingCut { .. } => "cost_sharing_cut",
        ScenarioKind::TravelSubsidy { .. } => "travel_subsidy",
        ScenarioKind::Custom { .. } => "custom",
    }
}

/// Keeps the configured scenarios named in `wanted` (by label, label slug or
/// kind); every name must match at least one scenario.
pub fn select_scenarios(all: &[PolicyScenario], wanted: &[String]) -> Result<Vec<PolicyScenario>> {
    if wanted.is_empty() {
        return Ok(all.to_vec());
    }
    let matches = |s: &PolicyScenario, w: &str| {
        let w = slug(w);
        slug(&s.label) == w || kind_name(&s.kind) == w
    };
    for w in wanted {
        if !all.iter().any(|s| matches(s, w)) {
            let known: Vec<String> = all
                .iter()
                .map(|s| format!("`{}`", slug(&s.label)))
                .collect();
            return Err(Error::Config {
                key: "scenario".into(),
                message: format!("unknown scenario `{w}`; configured: {}", known.join(", ")),
            });
        }
    }
    Ok(all
        .iter()
        .filter(|s| wanted.iter().any(|w| matches(s, w)))
        .cloned()
        .collect())
}

/// Population for policy experiments: the data set when one is given,
/// otherwise a synthetic population calibrated to the baseline use share.
fn counterfactual_population(
    ctx: &RunContext,
    bundle: &ParamsBundle,
) -> Result<(Vec<PatientProfile>, serde_json::Value, Vec<String>)> {
    if let Some(dir) = &ctx.data {
        let (patients, claims, inputs) = load_dataset(dir)?;
        let (patients, severity) =
            with_severity(ctx.config.estimation.measure, patients, &claims, ctx)?;
        return Ok((
            patients,
            json!({"source": "data", "severity": severity}),
            inputs,
        ));
    }
    let cf = &ctx.config.counterfactual;
    let mut cfg = PopulationConfig {
        n_patients: cf.n_patients,
        seed: ctx.seed(),
        true_cost_params: bundle.cost_params.clone(),
        true_pref_params: bundle.preference_params.clone(),
        ..PopulationConfig::calibrated()
    };
    cfg.plan = bundle.plan.clone();
    cfg.plan.assistance = cf.assistance;
    let (kappa, attained) = calibrate_concentration(&cfg, cf.target_share)?;
    if let SeverityMix::Beta { concentration, .. } = &mut cfg.severity_mix {
        *concentration = kappa;
    }
    let mut pop = generate_population(&cfg)?;
    simulate_choices(
        &mut pop.patients,
        &cfg.true_cost_params,
        &cfg.true_pref_params,
        &cfg.plan,
        ctx.seed(),
    )?;
    let info = json!({
        "source": "calibrated",
        "n_patients": cfg.n_patients,
        "target_share": cf.target_share,
        "attained_share": attained,
        "beta_concentration": kappa,
    });
    Ok((pop.patients, info, vec![]))
}

#[derive(Debug, Serialize)]
struct CounterfactualReport<'a> {
    params: &'a ParamsBundle,
    population: serde_json::Value,
    baseline: &'a ScenarioOutcome,
    scenarios: &'a [ScenarioOutcome],
}

/// One outcome table per scenario plus a comparison table.
pub fn cmd_counterfactual(ctx: &RunContext) -> Result<RunReport> {
    let started = Instant::now();
    let scenarios = select_scenarios(&ctx.config.counterfactual.scenarios, &ctx.scenarios)?;
    let mut bundle = match &ctx.params {
        Some(p) => ParamsBundle::load(p)?,
        None => ParamsBundle::published(),
    };
    bundle.plan.assistance = ctx.config.counterfactual.assistance;
    let (population, pop_info, mut inputs) = counterfactual_population(ctx, &bundle)?;
    if let Some(p) = &ctx.params {
        inputs.push(p.display().to_string());
    }
    let (cp, pp, plan) = (&bundle.cost_params, &bundle.preference_params, &bundle.plan);
    let report = &ctx.config.counterfactual.report;

    let baseline = run_scenario(&population, cp, pp, plan, &PolicyScenario::null(), report)?;
    let outcomes: Vec<ScenarioOutcome> = scenarios
        .iter()
        .map(|s| run_scenario(&population, cp, pp, plan, s, report))
        .collect::<Result<_>>()?;

    let mut out = Outputs::default();
    let mut used_names = BTreeMap::new();
    for o in &outcomes {
        let base = slug(&o.label);
        let n = used_names.entry(base.clone()).or_insert(0usize);
        *n += 1;
        let name = if *n == 1 {
            format!("scenario_{base}.csv")
        } else {
            format!("scenario_{base}_{n}.csv")
        };
        out.add(
            name,
            to_csv_bytes(
                &o.diffs_vs_baseline,
                &[
                    "metric",
                    "baseline",
                    "counterfactual",
                    "change",
                    "pct_base_baseline",
                    "pct_base_counterfactual",
                    "pct_base_configured",
                ],
            )?,
        );
    }
    out.add(
        COMPARISON_FILE,
        to_csv_bytes(
            comparison_table(&baseline, &outcomes),
            &[
                "scenario",
                "metric",
                "baseline",
                "counterfactual",
                "change",
                "pct_base_baseline",
                "pct_base_counterfactual",
            ],
        )?,
    );
    out.add_json(
        COUNTERFACTUAL_FILE,
        &CounterfactualReport {
            params: &bundle,
            population: pop_info.clone(),
            baseline: &baseline,
            scenarios: &outcomes,
        },
    )?;
    let summary = json!({
        "population": pop_info,
        "baseline_use_share": baseline.use_share,
        "scenarios": outcomes.iter().map(|o| &o.label).collect::<Vec<_>>(),
    });
    finish(
        ctx,
        "counterfactual",
        started,
        inputs,
        out,
        serde_json::to_value(&bundle)?,
        summary,
    )
}

fn figure(name: &str) -> Result<Vec<CurveSpec>> {
    Ok(match name {
        "weighting" => weighting_series(),
        "cost_sharing" => cost_sharing_series(),
        "present_bias" => present_bias_series(),
        "salience" => salience_series(),
        "biased_belief" => biased_belief_series(),
        other => {
            return Err(Error::Config {
                key: "curves.sets".into(),
                message: format!("unknown series set `{other}`; expected weighting, cost_sharing, present_bias, salience or biased_belief"),
            })
        }
    })
}

/// Severity grid of the curves command.
pub fn curve_grid(theta_grid: &[f64], grid_points: usize) -> Result<Vec<Severity>> {
    if !theta_grid.is_empty() {
        return theta_grid.iter().map(|&t| Severity::new(t)).collect();
    }
    if grid_points == 0 {
        return Err(Error::Config {
            key: "curves.grid_points".into(),
            message: "must be at least 1".into(),
        });
    }
    (1..=grid_points)
        .map(|i| Severity::new(i as f64 / (grid_points + 1) as f64))
        .collect()
}

/// Utility-over-severity series as `theta,label,utility` rows.
pub fn cmd_curves(ctx: &RunContext) -> Result<RunReport> {
    let started = Instant::now();
    let c = &ctx.config.curves;
    let grid = curve_grid(&c.theta_grid, c.grid_points)?;
    let mut specs = Vec::new();
    for f in &c.sets {
        specs.extend(figure(f)?);
    }
    specs.extend(c.series.iter().cloned());
    let rows = utility_curve(&grid, &c.params, &specs)?;
    let mut out = Outputs::default();
    out.add(
        CURVES_FILE,
        to_csv_bytes(&rows, &["theta", "label", "utility"])?,
    );
    let summary = json!({"n_rows": rows.len(), "n_series": specs.len(), "n_grid": grid.len()});
    finish(
        ctx,
        "curves",
        started,
        vec![],
        out,
        serde_json::to_value(&c.params)?,
        summary,
    )
}
