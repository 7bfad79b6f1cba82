//! Policy experiments: use shares, expected costs, welfare and fiscal cost
//! under alternative cost-sharing rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ambulatory_cost, choice_probability, gamma_for, inpatient_cost, travel_cost_for,
    utility_insured_with, CostParams, InsurancePlan, PatientProfile, PreferenceParams,
};
use crate::par;

/// Which patients a scenario changes and summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Disadvantaged,
    Poor,
    Regular,
    All,
}

impl Target {
    pub fn contains(self, p: &PatientProfile) -> bool {
        match self {
            Target::Disadvantaged => p.disadvantaged(),
            Target::Poor => p.poor_household,
            Target::Regular => !p.disadvantaged(),
            Target::All => true,
        }
    }
}

fn default_cut() -> f64 {
    -0.2
}

fn default_subsidy() -> f64 {
    200.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Current policy; every difference is zero.
    Null,
    /// Assisted patients pay the regular inpatient rate.
    AssistanceRemoval,
    /// Additive change of the ambulatory cost-sharing rate.
    #[serde(alias = "policy_a")]
    CostSharingCut {
        #[serde(default = "default_cut")]
        phi_pc_delta: f64,
    },
    /// Lump-sum travel allowance per ambulatory-care user.
    #[serde(alias = "policy_b")]
    TravelSubsidy {
        #[serde(default = "default_subsidy")]
        subsidy_rmb: f64,
    },
    Custom {
        #[serde(default)]
        phi_pc_delta: f64,
        #[serde(default)]
        phi_hc_poor: Option<f64>,
        #[serde(default)]
        phi_hc_regular: Option<f64>,
        #[serde(default)]
        travel_subsidy_rmb: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScenario {
    pub label: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
    #[serde(default)]
    pub applies_to: Target,
}

impl PolicyScenario {
    pub fn new(label: impl Into<String>, kind: ScenarioKind) -> Self {
        PolicyScenario {
            label: label.into(),
            kind,
            applies_to: Target::Disadvantaged,
        }
    }

    pub fn null() -> Self {
        Self::new("baseline", ScenarioKind::Null)
    }

    pub fn assistance_removal() -> Self {
        Self::new("assistance removal", ScenarioKind::AssistanceRemoval)
    }

    /// Ambulatory cost-sharing cut by 0.2.
    pub fn policy_a() -> Self {
        Self::new(
            "policy A",
            ScenarioKind::CostSharingCut {
                phi_pc_delta: default_cut(),
            },
        )
    }

    /// RMB 200 travel allowance.
    pub fn policy_b() -> Self {
        Self::new(
            "policy B",
            ScenarioKind::TravelSubsidy {
                subsidy_rmb: default_subsidy(),
            },
        )
    }

    fn subsidy_rmb(&self) -> f64 {
        match self.kind {
            ScenarioKind::TravelSubsidy { subsidy_rmb } => subsidy_rmb,
            ScenarioKind::Custom {
                travel_subsidy_rmb, ..
            } => travel_subsidy_rmb,
            _ => 0.0,
        }
    }

    fn phi_pc_delta(&self) -> f64 {
        match self.kind {
            ScenarioKind::CostSharingCut { phi_pc_delta }
            | ScenarioKind::Custom { phi_pc_delta, .. } => phi_pc_delta,
            _ => 0.0,
        }
    }
}

/// Plan and travel-cost reduction (in ceiling units) faced by targeted
/// patients under `scenario`.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedScenario {
    pub plan: InsurancePlan,
    pub travel_reduction_norm: f64,
    pub subsidy_rmb: f64,
    pub phi_pc_delta: f64,
}

impl AppliedScenario {
    /// Travel cost after the allowance, floored at zero.
    pub fn travel(&self, t: f64) -> f64 {
        (t - self.travel_reduction_norm).max(0.0)
    }
}

pub fn apply_scenario(
    plan: &InsurancePlan,
    cp: &CostParams,
    scenario: &PolicyScenario,
) -> Result<AppliedScenario> {
    plan.validate()?;
    let mut new = plan.clone();
    match &scenario.kind {
        ScenarioKind::Null
        | ScenarioKind::CostSharingCut { .. }
        | ScenarioKind::TravelSubsidy { .. } => {}
        ScenarioKind::AssistanceRemoval => new.phi_hc_poor = plan.phi_hc_regular,
        ScenarioKind::Custom {
            phi_hc_poor,
            phi_hc_regular,
            ..
        } => {
            if let Some(v) = phi_hc_poor {
                new.phi_hc_poor = *v;
            }
            if let Some(v) = phi_hc_regular {
                new.phi_hc_regular = *v;
            }
        }
    }
    new.phi_pc += scenario.phi_pc_delta();
    if !(new.phi_pc > 0.0) {
        return Err(Error::param(
            "phi_pc_delta",
            format!(
                "scenario `{}` leaves ambulatory cost-sharing at {:.3}",
                scenario.label, new.phi_pc
            ),
        ));
    }
    new.validate()?;
    let subsidy = scenario.subsidy_rmb();
    if !(subsidy >= 0.0) {
        return Err(Error::param("travel_subsidy_rmb", "must be non-negative"));
    }
    Ok(AppliedScenario {
        plan: new,
        travel_reduction_norm: subsidy / cp.money_scale_rmb,
        subsidy_rmb: subsidy,
        phi_pc_delta: scenario.phi_pc_delta(),
    })
}

/// `sigma (s (lambda theta)^beta + theta^alpha p) + (1 - sigma) s theta^beta`.
pub fn expected_cost(p: &PatientProfile, cp: &CostParams, sigma: f64) -> f64 {
    let with = inpatient_cost(p.theta, cp, p.facility, true) + ambulatory_cost(p.theta, cp);
    let without = inpatient_cost(p.theta, cp, p.facility, false);
    sigma * with + (1.0 - sigma) * without
}

/// `sigma(v) v`.
pub fn welfare(v: f64) -> f64 {
    choice_probability(v) * v
}

/// Extra public spending on one patient: the cut in ambulatory cost-sharing
/// times the ambulatory bill, plus the allowance, both paid only with
/// probability `sigma_after`.
pub fn fiscal_cost_rmb(
    sigma_after: f64,
    phi_pc_cut: f64,
    ambulatory_cost_norm: f64,
    subsidy_rmb: f64,
    money_scale_rmb: f64,
) -> f64 {
    sigma_after * (phi_pc_cut * ambulatory_cost_norm * money_scale_rmb + subsidy_rmb)
}

/// Headline share (mean sigma) and the observed-decision ratio
/// `sum d sigma / sum (d sigma + (1 - d)(1 - sigma))`.
pub fn predicted_share(sigma: &[f64], d: &[f64]) -> Result<(f64, f64)> {
    if sigma.is_empty() {
        return Err(Error::Empty("population".into()));
    }
    if sigma.len() != d.len() {
        return Err(Error::Data(
            "probabilities and decisions differ in length".into(),
        ));
    }
    let mean = sigma.iter().sum::<f64>() / sigma.len() as f64;
    let num: f64 = sigma.iter().zip(d).map(|(s, d)| d * s).sum();
    let den: f64 = sigma
        .iter()
        .zip(d)
        .map(|(s, d)| d * s + (1.0 - d) * (1.0 - s))
        .sum();
    Ok((mean, num / den))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDiff {
    pub metric: String,
    pub baseline: f64,
    pub counterfactual: f64,
    pub change: f64,
    pub pct_base_baseline: f64,
    pub pct_base_counterfactual: f64,
    /// Percentage against a user-supplied base, when one is configured.
    pub pct_base_configured: Option<f64>,
}

impl MetricDiff {
    fn new(metric: &str, baseline: f64, counterfactual: f64, configured_base: Option<f64>) -> Self {
        let change = counterfactual - baseline;
        let pct = |base: f64| match (base == 0.0, change == 0.0) {
            (_, true) => 0.0,
            (true, false) => f64::NAN,
            (false, false) => 100.0 * change / base.abs(),
        };
        MetricDiff {
            metric: metric.to_string(),
            baseline,
            counterfactual,
            change,
            pct_base_baseline: pct(baseline),
            pct_base_counterfactual: pct(counterfactual),
            pct_base_configured: configured_base.map(pct),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub label: String,
    pub n_patients: usize,
    pub use_share: f64,
    /// Ratio formula evaluated against the observed (baseline) decisions.
    pub use_share_observed_ratio: f64,
    pub expected_cost_norm: f64,
    pub expected_cost_rmb: f64,
    pub welfare: f64,
    pub fiscal_cost_rmb_per_head: f64,
    pub diffs_vs_baseline: Vec<MetricDiff>,
}

/// Options for outcome reporting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// Denominator for an extra welfare percentage column.
    pub welfare_pct_base: Option<f64>,
}

struct Totals {
    n: usize,
    sigma: f64,
    ratio_num: f64,
    ratio_den: f64,
    cost: f64,
    welfare: f64,
    fiscal: f64,
}

fn evaluate(
    population: &[PatientProfile],
    cp: &CostParams,
    pp: &PreferenceParams,
    plan: &InsurancePlan,
    scenario: &PolicyScenario,
) -> Result<Totals> {
    let applied = apply_scenario(plan, cp, scenario)?;
    let target: Vec<&PatientProfile> = population
        .iter()
        .filter(|p| scenario.applies_to.contains(p))
        .collect();
    if target.is_empty() {
        return Err(Error::Empty(format!(
            "patients targeted by scenario `{}`",
            scenario.label
        )));
    }
    let gammas: Vec<f64> = target
        .iter()
        .map(|p| gamma_for(p, pp))
        .collect::<Result<_>>()?;
    let idx: Vec<usize> = (0..target.len()).collect();
    let acc = par::sum_into(&idx, 6, |&i, acc| {
        let p = target[i];
        let travel = applied.travel(travel_cost_for(p, pp));
        let phi_hc = applied.plan.phi_hc_for(p);
        let v = utility_insured_with(
            p.theta,
            cp,
            p.facility,
            gammas[i],
            travel,
            applied.plan.phi_pc,
            phi_hc,
        );
        let s = choice_probability(v);
        let d = p.d();
        acc[0] += s;
        acc[1] += d * s;
        acc[2] += d * s + (1.0 - d) * (1.0 - s);
        acc[3] += expected_cost(p, cp, s);
        acc[4] += s * v;
        acc[5] += fiscal_cost_rmb(
            s,
            -applied.phi_pc_delta,
            ambulatory_cost(p.theta, cp),
            applied.subsidy_rmb,
            cp.money_scale_rmb,
        );
    });
    Ok(Totals {
        n: target.len(),
        sigma: acc[0],
        ratio_num: acc[1],
        ratio_den: acc[2],
        cost: acc[3],
        welfare: acc[4],
        fiscal: acc[5],
    })
}

fn outcome(label: &str, t: &Totals, cp: &CostParams) -> ScenarioOutcome {
    let n = t.n as f64;
    let cost = t.cost / n;
    ScenarioOutcome {
        label: label.to_string(),
        n_patients: t.n,
        use_share: t.sigma / n,
        use_share_observed_ratio: t.ratio_num / t.ratio_den,
        expected_cost_norm: cost,
        expected_cost_rmb: cost * cp.money_scale_rmb,
        welfare: t.welfare / n,
        fiscal_cost_rmb_per_head: t.fiscal / n,
        diffs_vs_baseline: Vec::new(),
    }
}

/// Outcome of `scenario` over its target group, with changes relative to the
/// current policy on the same group.
pub fn run_scenario(
    population: &[PatientProfile],
    cp: &CostParams,
    pp: &PreferenceParams,
    plan: &InsurancePlan,
    scenario: &PolicyScenario,
    report: &ReportOptions,
) -> Result<ScenarioOutcome> {
    let base_scenario = PolicyScenario {
        applies_to: scenario.applies_to,
        ..PolicyScenario::null()
    };
    let base = outcome(
        "baseline",
        &evaluate(population, cp, pp, plan, &base_scenario)?,
        cp,
    );
    let mut out = outcome(
        &scenario.label,
        &evaluate(population, cp, pp, plan, scenario)?,
        cp,
    );
    out.diffs_vs_baseline = vec![
        MetricDiff::new("use_share", base.use_share, out.use_share, None),
        MetricDiff::new(
            "expected_cost_norm",
            base.expected_cost_norm,
            out.expected_cost_norm,
            None,
        ),
        MetricDiff::new(
            "expected_cost_rmb",
            base.expected_cost_rmb,
            out.expected_cost_rmb,
            None,
        ),
        MetricDiff::new(
            "welfare",
            base.welfare,
            out.welfare,
            report.welfare_pct_base,
        ),
        MetricDiff::new(
            "fiscal_cost_rmb_per_head",
            base.fiscal_cost_rmb_per_head,
            out.fiscal_cost_rmb_per_head,
            None,
        ),
    ];
    Ok(out)
}

/// Fiscal cost per targeted patient of `scenario`, in RMB.
pub fn fiscal_cost(
    population: &[PatientProfile],
    cp: &CostParams,
    pp: &PreferenceParams,
    plan: &InsurancePlan,
    scenario: &PolicyScenario,
) -> Result<f64> {
    let t = evaluate(population, cp, pp, plan, scenario)?;
    Ok(t.fiscal / t.n as f64)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub metric: String,
    pub baseline: f64,
    pub counterfactual: f64,
    pub change: f64,
    pub pct_base_baseline: f64,
    pub pct_base_counterfactual: f64,
}

/// Flattens outcomes into rows. With no outcomes the table lists the
/// baseline metrics alone (baseline and counterfactual columns equal).
pub fn comparison_table(
    baseline: &ScenarioOutcome,
    outcomes: &[ScenarioOutcome],
) -> Vec<ComparisonRow> {
    let rows_of = |o: &ScenarioOutcome| -> Vec<ComparisonRow> {
        o.diffs_vs_baseline
            .iter()
            .map(|d| ComparisonRow {
                scenario: o.label.clone(),
                metric: d.metric.clone(),
                baseline: d.baseline,
                counterfactual: d.counterfactual,
                change: d.change,
                pct_base_baseline: d.pct_base_baseline,
                pct_base_counterfactual: d.pct_base_counterfactual,
            })
            .collect()
    };
    if outcomes.is_empty() {
        rows_of(baseline)
    } else {
        outcomes.iter().flat_map(rows_of).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{published, utility_insured};
    use crate::synth::{
        calibrated_config, generate_population, simulate_choices, PopulationConfig,
    };

    fn calibrated(n: usize) -> (Vec<PatientProfile>, PopulationConfig) {
        let cfg = calibrated_config(n, 17).unwrap();
        let mut pop = generate_population(&cfg).unwrap();
        simulate_choices(
            &mut pop.patients,
            &cfg.true_cost_params,
            &cfg.true_pref_params,
            &cfg.plan,
            4,
        )
        .unwrap();
        (pop.patients, cfg)
    }

    fn run(pats: &[PatientProfile], cfg: &PopulationConfig, s: &PolicyScenario) -> ScenarioOutcome {
        run_scenario(
            pats,
            &cfg.true_cost_params,
            &cfg.true_pref_params,
            &cfg.plan,
            s,
            &ReportOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn share_formulas() {
        let (m, r) = predicted_share(&[0.7, 0.4], &[1.0, 0.0]).unwrap();
        assert!((m - 0.55).abs() < 1e-15);
        assert!((r - 0.7 / 1.3).abs() < 1e-15);
        let (m, r) = predicted_share(&[0.5; 6], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!((m, r), (0.5, 0.5));
        assert!(predicted_share(&[], &[]).is_err());
    }

    #[test]
    fn cost_and_welfare_arithmetic() {
        let mut p = generate_population(&PopulationConfig {
            n_patients: 1,
            ..PopulationConfig::default()
        })
        .unwrap()
        .patients
        .remove(0);
        p.theta = crate::model::Severity::clamped(1.0);
        p.facility = crate::model::Facility::Thc;
        let cp = published::cost_params();
        let th = p.theta.eval();
        assert!((expected_cost(&p, &cp, 0.0) - th.powf(cp.beta)).abs() < 1e-15);
        assert!((expected_cost(&p, &cp, 1.0) - 1.5563).abs() < 1e-3);
        assert_eq!(welfare(0.0), 0.0);
        assert!((welfare(-1.0) + 0.268_941_421_369_995).abs() < 1e-12);
    }

    #[test]
    fn scenario_application() {
        let cp = published::cost_params();
        let plan = published::plan();
        let a = apply_scenario(&plan, &cp, &PolicyScenario::policy_a()).unwrap();
        assert!((a.plan.phi_pc - 0.15).abs() < 1e-15);
        let b = apply_scenario(&plan, &cp, &PolicyScenario::policy_b()).unwrap();
        assert!((b.travel_reduction_norm - 0.031_746).abs() < 1e-6);
        assert_eq!(b.travel(0.01), 0.0);
        let r = apply_scenario(&plan, &cp, &PolicyScenario::assistance_removal()).unwrap();
        assert_eq!(r.plan.phi_hc_poor, 0.41);
        let too_far = PolicyScenario::new(
            "x",
            ScenarioKind::CostSharingCut {
                phi_pc_delta: -0.35,
            },
        );
        assert!(apply_scenario(&plan, &cp, &too_far).is_err());
    }

    #[test]
    fn null_scenario_has_zero_diffs() {
        let (pats, cfg) = calibrated(3000);
        let o = run(&pats, &cfg, &PolicyScenario::null());
        assert!(o.diffs_vs_baseline.iter().all(|d| d.change == 0.0));
        assert_eq!(o.fiscal_cost_rmb_per_head, 0.0);
        assert_eq!(
            o.expected_cost_rmb,
            o.expected_cost_norm * cfg.true_cost_params.money_scale_rmb
        );
    }

    #[test]
    fn directions_on_calibrated_population() {
        let (pats, cfg) = calibrated(20_000);
        let base = run(&pats, &cfg, &PolicyScenario::null());
        assert!((base.use_share - 0.145).abs() < 0.005, "{}", base.use_share);
        let removal = run(&pats, &cfg, &PolicyScenario::assistance_removal());
        let d = |o: &ScenarioOutcome, m: &str| {
            o.diffs_vs_baseline
                .iter()
                .find(|x| x.metric == m)
                .unwrap()
                .change
        };
        assert!(d(&removal, "use_share") > 0.0);
        assert!(d(&removal, "expected_cost_norm") < 0.0);
        assert!(d(&removal, "welfare") > 0.0);
        let a = run(&pats, &cfg, &PolicyScenario::policy_a());
        let b = run(&pats, &cfg, &PolicyScenario::policy_b());
        assert!(d(&a, "use_share") > d(&b, "use_share"));
        assert!(d(&a, "welfare") > d(&b, "welfare"));
        assert!(d(&b, "use_share") > 0.0);
        let expected_fiscal = b.use_share * 200.0;
        assert!((b.fiscal_cost_rmb_per_head - expected_fiscal).abs() < 1e-9);
    }

    #[test]
    fn per_patient_monotonicity() {
        let (pats, cfg) = calibrated(2000);
        let (cp, pp, plan) = (&cfg.true_cost_params, &cfg.true_pref_params, &cfg.plan);
        let removal = apply_scenario(plan, cp, &PolicyScenario::assistance_removal()).unwrap();
        let a = apply_scenario(plan, cp, &PolicyScenario::policy_a()).unwrap();
        for p in pats.iter().filter(|p| p.disadvantaged()) {
            let v0 = utility_insured(p, cp, pp, plan).unwrap();
            let gamma = gamma_for(p, pp).unwrap();
            let t = travel_cost_for(p, pp);
            let v_rm = utility_insured_with(
                p.theta,
                cp,
                p.facility,
                gamma,
                t,
                removal.plan.phi_pc,
                removal.plan.phi_hc_for(p),
            );
            let v_a = utility_insured_with(
                p.theta,
                cp,
                p.facility,
                gamma,
                t,
                a.plan.phi_pc,
                a.plan.phi_hc_for(p),
            );
            assert!(v_rm > v0 && v_a > v0);
            for s in [0.0, 0.3, 1.0] {
                let c = expected_cost(p, cp, s);
                let lo = inpatient_cost(p.theta, cp, p.facility, false).min(
                    inpatient_cost(p.theta, cp, p.facility, true) + ambulatory_cost(p.theta, cp),
                );
                let hi = inpatient_cost(p.theta, cp, p.facility, false).max(
                    inpatient_cost(p.theta, cp, p.facility, true) + ambulatory_cost(p.theta, cp),
                );
                assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn empty_scenario_list_gives_baseline_table() {
        let (pats, cfg) = calibrated(500);
        let base = run(&pats, &cfg, &PolicyScenario::null());
        let t = comparison_table(&base, &[]);
        assert_eq!(t.len(), base.diffs_vs_baseline.len());
        assert!(t.iter().all(|r| r.scenario == "baseline"));
    }

    #[test]
    fn scenario_kinds_parse() {
        let s: PolicyScenario = toml::from_str("label = \"a\"\nkind = \"policy_a\"").unwrap();
        assert_eq!(s.kind, ScenarioKind::CostSharingCut { phi_pc_delta: -0.2 });
        let s: PolicyScenario =
            toml::from_str("label = \"b\"\nkind = \"travel_subsidy\"\nsubsidy_rmb = 100.0")
                .unwrap();
        assert_eq!(s.kind, ScenarioKind::TravelSubsidy { subsidy_rmb: 100.0 });
        assert!(toml::from_str::<PolicyScenario>("label = \"c\"\nkind = \"lottery\"").is_err());
    }
}
