//! Synthetic populations, claims and policy-shock panels generated from known
//! parameters.
//!
//! Every patient draws from its own random stream keyed by (seed, purpose,
//! patient id), so outputs are bit-identical across runs and thread counts
//! and adding a stage never shifts the draws of an earlier one.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{
    choice_probability, published, utility_insured, AssistanceGroup, CostParams, Facility,
    InsurancePlan, PatientProfile, PreferenceParams, Severity,
};
use crate::par;
use crate::rng::{stream, Purpose};
use crate::severity::{ClaimRecord, DiagnosisClass, RecordType, SeverityCategory};

/// Facility-type shares used when no per-severity distribution is given.
pub const DEFAULT_FACILITY_PROBS: [f64; 4] = [0.121, 0.0519, 0.4761, 0.3510];

/// Marginal shares of the patient groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupShares {
    pub disadvantaged: f64,
    pub poor: f64,
    pub distant: f64,
    /// Share of the whole population; every minority patient is distant.
    pub minority: f64,
    pub urban: f64,
    /// Share holding a rural hukou; `None` makes it the complement of `urban`.
    pub rural_hukou: Option<f64>,
    pub male: f64,
    /// Share of high-income patients among those outside poor households.
    pub high_income_among_non_poor: f64,
}

impl Default for GroupShares {
    fn default() -> Self {
        GroupShares {
            disadvantaged: 0.748,
            poor: 0.489,
            distant: 0.525,
            minority: 0.095,
            urban: 0.342,
            rural_hukou: None,
            male: 0.475,
            high_income_among_non_poor: 0.5,
        }
    }
}

impl GroupShares {
    /// Probabilities of (poor and distant, poor only, distant only, neither).
    pub fn cells(&self) -> Result<[f64; 4]> {
        let (d, p, q) = (self.disadvantaged, self.poor, self.distant);
        for (name, v) in [
            ("disadvantaged", d),
            ("poor", p),
            ("distant", q),
            ("minority", self.minority),
            ("urban", self.urban),
            ("male", self.male),
            (
                "high_income_among_non_poor",
                self.high_income_among_non_poor,
            ),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Infeasible(format!(
                    "share `{name}` = {v} is outside [0, 1]"
                )));
            }
        }
        if let Some(r) = self.rural_hukou {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Infeasible(format!(
                    "share `rural_hukou` = {r} is outside [0, 1]"
                )));
            }
        }
        let tol = 1e-12;
        if d + tol < p.max(q) || d > p + q + tol {
            return Err(Error::Infeasible(format!(
                "disadvantaged share {d} must lie between max(poor, distant) = {} and poor + distant = {}",
                p.max(q),
                p + q
            )));
        }
        if self.minority > q + tol {
            return Err(Error::Infeasible(format!(
                "minority share {} exceeds distant share {q}; every minority patient lives far away",
                self.minority
            )));
        }
        let both = (p + q - d).max(0.0);
        Ok([
            both,
            (p - both).max(0.0),
            (q - both).max(0.0),
            (1.0 - d).max(0.0),
        ])
    }
}

/// How latent severity is distributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeverityMix {
    /// Each category has a single severity value.
    Discrete { shares: [f64; 3], theta: [f64; 3] },
    /// Mild patients sit at `mild_theta`; the rest follow a Beta law with
    /// concentration (a + b) whose mean makes the population-wide mean
    /// severity equal `mean`. The top `severe_share` of the population (by
    /// severity) is Severe.
    Beta {
        mild_share: f64,
        mild_theta: f64,
        mean: f64,
        concentration: f64,
        severe_share: f64,
    },
}

impl Default for SeverityMix {
    fn default() -> Self {
        SeverityMix::Discrete {
            shares: [0.394, 0.465, 0.141],
            theta: published::THETA,
        }
    }
}

impl SeverityMix {
    pub fn validate(&self) -> Result<()> {
        match self {
            SeverityMix::Discrete { shares, theta } => {
                check_distribution("severity shares", shares)?;
                for t in theta {
                    Severity::new(*t)?;
                }
                if !(theta[0] < theta[1] && theta[1] < theta[2]) {
                    return Err(Error::param(
                        "severity",
                        "category values must increase from Mild to Severe",
                    ));
                }
            }
            SeverityMix::Beta {
                mild_share,
                mild_theta,
                mean,
                concentration,
                severe_share,
            } => {
                Severity::new(*mild_theta)?;
                if !(*mean > 0.0 && *mean < 1.0) {
                    return Err(Error::param("severity", "Beta mean must lie in (0, 1)"));
                }
                if !(*concentration > 0.0 && concentration.is_finite()) {
                    return Err(Error::param(
                        "severity",
                        "Beta concentration must be positive",
                    ));
                }
                if !(*mild_share >= 0.0 && *severe_share >= 0.0 && mild_share + severe_share < 1.0)
                {
                    return Err(Error::param(
                        "severity",
                        "mild and severe shares must be non-negative and sum below 1",
                    ));
                }
                let m = self.non_mild_mean().unwrap_or(f64::NAN);
                if !(m > 0.0 && m < 1.0) {
                    return Err(Error::param(
                        "severity",
                        format!("mean {mean} with {mild_share} of patients at {mild_theta} leaves the others at mean {m}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Severity and true category from one uniform draw.
    fn draw(&self, u: f64) -> (f64, SeverityCategory) {
        match self {
            SeverityMix::Discrete { shares, theta } => {
                let k = pick(shares, u);
                (theta[k], SeverityCategory::ALL[k])
            }
            SeverityMix::Beta {
                mild_share,
                mild_theta,
                severe_share,
                ..
            } => {
                if u < *mild_share {
                    return (*mild_theta, SeverityCategory::Mild);
                }
                let v = (u - mild_share) / (1.0 - mild_share);
                let theta = self
                    .beta_law()
                    .expect("validated shape")
                    .inverse_cdf(v.clamp(1e-12, 1.0 - 1e-12));
                let severe_from = 1.0 - severe_share / (1.0 - mild_share);
                let cat = if v >= severe_from {
                    SeverityCategory::Severe
                } else {
                    SeverityCategory::Moderate
                };
                (theta, cat)
            }
        }
    }

    /// Severity at which Moderate turns into Severe.
    pub fn severe_cut(&self) -> f64 {
        match self {
            SeverityMix::Discrete { theta, .. } => 0.5 * (theta[1] + theta[2]),
            SeverityMix::Beta {
                mild_share,
                severe_share,
                ..
            } => self
                .beta_law()
                .expect("validated shape")
                .inverse_cdf(1.0 - severe_share / (1.0 - mild_share)),
        }
    }

    /// Mean severity of the non-mild patients under the Beta mix.
    pub fn non_mild_mean(&self) -> Option<f64> {
        match self {
            SeverityMix::Discrete { .. } => None,
            SeverityMix::Beta {
                mild_share,
                mild_theta,
                mean,
                ..
            } => Some((mean - mild_share * mild_theta) / (1.0 - mild_share)),
        }
    }

    fn beta_law(&self) -> Option<Beta> {
        let m = self.non_mild_mean()?;
        let SeverityMix::Beta { concentration, .. } = self else {
            return None;
        };
        Beta::new(m * concentration, (1.0 - m) * concentration).ok()
    }
}

/// Generation of cost claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostSimConfig {
    /// Standard deviation of the log-cost disturbance.
    pub noise_sd: f64,
    pub first_year: i32,
    pub n_years: u32,
    /// Probability of a CVD hospitalization in a given year.
    pub hospitalization_prob: f64,
    /// Log-cost effect of one year of age above the reference age.
    pub age_effect: f64,
    pub reference_age: f64,
    pub male_effect: f64,
    pub non_cvd: NonCvdConfig,
}

impl Default for CostSimConfig {
    fn default() -> Self {
        CostSimConfig {
            noise_sd: 0.8,
            first_year: 2017,
            n_years: 5,
            hospitalization_prob: 0.6,
            age_effect: 0.0,
            reference_age: 69.29,
            male_effect: 0.0,
            non_cvd: NonCvdConfig::default(),
        }
    }
}

/// Hospitalizations for other diagnoses, used by the severity measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonCvdConfig {
    /// Log yearly cost per unit of severity above the Moderate/Severe cut.
    pub severity_loading: f64,
    pub noise_sd: f64,
    /// Spread of the individual records around the patient's yearly average.
    pub record_noise_sd: f64,
    pub max_records: u32,
    pub threshold_rmb: f64,
    pub diagnosis_codes: Vec<String>,
}

impl Default for NonCvdConfig {
    fn default() -> Self {
        NonCvdConfig {
            severity_loading: 4.0,
            noise_sd: 0.3,
            record_noise_sd: 0.2,
            max_records: 3,
            threshold_rmb: 15_000.0,
            diagnosis_codes: ["respiratory", "gastroenterology", "orthopedics", "renal"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// Two-period cost-sharing reform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShockConfig {
    pub pre_years: Vec<i32>,
    pub post_years: Vec<i32>,
    pub pre_plan: InsurancePlan,
    pub post_plan: InsurancePlan,
    /// Draw a fresh taste shock every year instead of one per patient.
    pub independent_shocks: bool,
}

impl Default for ShockConfig {
    fn default() -> Self {
        let pre = InsurancePlan {
            phi_pc: published::PHI_PC,
            phi_hc_poor: published::PHI_HC_REGULAR,
            phi_hc_regular: published::PHI_HC_REGULAR,
            assistance: AssistanceGroup::Disadvantaged,
        };
        let post = InsurancePlan {
            phi_hc_poor: published::PHI_HC_POOR,
            ..pre.clone()
        };
        ShockConfig {
            pre_years: vec![2019],
            post_years: vec![2020],
            pre_plan: pre,
            post_plan: post,
            independent_shocks: false,
        }
    }
}

/// Everything needed to generate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub group_shares: GroupShares,
    pub severity_mix: SeverityMix,
    /// Facility-type distribution for Mild, Moderate and Severe patients.
    pub facility_probs: [[f64; 4]; 3],
    pub age_mean: f64,
    pub age_sd: f64,
    /// Median and log-scale spread of the distance to the nearest ambulatory facility.
    pub distance_median_km: f64,
    pub distance_log_sd: f64,
    pub true_cost_params: CostParams,
    pub true_pref_params: PreferenceParams,
    pub plan: InsurancePlan,
    pub costs: CostSimConfig,
    pub shock: Option<ShockConfig>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_patients: 20_000,
            seed: 20_200_101,
            group_shares: GroupShares::default(),
            severity_mix: SeverityMix::default(),
            facility_probs: [DEFAULT_FACILITY_PROBS; 3],
            age_mean: 69.29,
            age_sd: 8.0,
            distance_median_km: 9.5,
            distance_log_sd: 0.55,
            true_cost_params: published::cost_params(),
            true_pref_params: published::preference_params(),
            plan: published::plan(),
            costs: CostSimConfig::default(),
            shock: None,
        }
    }
}

/// Targets for [`PopulationConfig::calibrated`].
pub mod calibration {
    /// Baseline ambulatory-care share among disadvantaged patients.
    pub const TARGET_SHARE: f64 = 0.145;
    /// Mean preference-discounted severity.
    pub const MEAN_THETA: f64 = 0.393;
    pub const MILD_SHARE: f64 = 0.394;
    pub const SEVERE_SHARE: f64 = 0.141;
    /// Concentration bracket searched by the calibration.
    pub const KAPPA_RANGE: (f64, f64) = (0.25, 256.0);
}

impl PopulationConfig {
    /// Population for policy experiments: continuous severity for Moderate and
    /// Severe patients, every non-poor patient high-income, the reduced
    /// inpatient rate granted to all disadvantaged patients. The Beta
    /// concentration is a placeholder until [`calibrate_concentration`] sets it.
    pub fn calibrated() -> Self {
        let mut plan = published::plan();
        plan.assistance = AssistanceGroup::Disadvantaged;
        PopulationConfig {
            group_shares: GroupShares {
                high_income_among_non_poor: 1.0,
                ..GroupShares::default()
            },
            severity_mix: SeverityMix::Beta {
                mild_share: calibration::MILD_SHARE,
                mild_theta: published::THETA[0],
                mean: calibration::MEAN_THETA,
                concentration: 6.0,
                severe_share: calibration::SEVERE_SHARE,
            },
            plan,
            ..PopulationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::param("n_patients", "must be positive"));
        }
        self.group_shares.cells()?;
        self.severity_mix.validate()?;
        for row in &self.facility_probs {
            check_distribution("facility_probs", row)?;
        }
        if !(self.age_sd >= 0.0 && self.distance_log_sd >= 0.0 && self.distance_median_km > 0.0) {
            return Err(Error::param(
                "population",
                "age_sd and distance_log_sd must be non-negative, distance median positive",
            ));
        }
        self.true_cost_params.validate()?;
        self.true_pref_params.validate()?;
        self.plan.validate()?;
        let c = &self.costs;
        if !(c.noise_sd >= 0.0 && c.non_cvd.noise_sd >= 0.0 && c.non_cvd.record_noise_sd >= 0.0) {
            return Err(Error::param(
                "costs",
                "noise standard deviations must be non-negative",
            ));
        }
        if c.n_years == 0 || c.non_cvd.max_records == 0 {
            return Err(Error::param(
                "costs",
                "n_years and max_records must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&c.hospitalization_prob) {
            return Err(Error::param(
                "costs",
                "hospitalization_prob must lie in [0, 1]",
            ));
        }
        if c.non_cvd.diagnosis_codes.is_empty() {
            return Err(Error::param(
                "costs",
                "at least one non-CVD diagnosis code is required",
            ));
        }
        if let Some(s) = &self.shock {
            s.pre_plan.validate()?;
            s.post_plan.validate()?;
            if s.pre_years.is_empty() || s.post_years.is_empty() {
                return Err(Error::param("shock", "both periods need at least one year"));
            }
            if s.pre_years.iter().any(|y| s.post_years.contains(y)) {
                return Err(Error::param(
                    "shock",
                    "a year cannot be both before and after the reform",
                ));
            }
        }
        Ok(())
    }
}

fn check_distribution(name: &str, probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !(0.0..=1.0).contains(p))
        || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Infeasible(format!(
            "{name} {probs:?} must be probabilities summing to 1"
        )));
    }
    Ok(())
}

/// Index of the bin of `probs` that contains `u`.
fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// A generated population with the true category of every patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub patients: Vec<PatientProfile>,
    pub categories: Vec<SeverityCategory>,
}

/// Draws patients `0..n_patients`. Choices are not simulated here, so
/// `used_ambulatory` is false throughout.
pub fn generate_population(cfg: &PopulationConfig) -> Result<Population> {
    cfg.validate()?;
    let cells = cfg.group_shares.cells()?;
    let shares = &cfg.group_shares;
    let minority_in_distant = if shares.distant > 0.0 {
        shares.minority / shares.distant
    } else {
        0.0
    };
    let age =
        Normal::new(cfg.age_mean, cfg.age_sd).map_err(|e| Error::param("age_sd", e.to_string()))?;
    let log_dist = Normal::new(cfg.distance_median_km.ln(), cfg.distance_log_sd)
        .map_err(|e| Error::param("distance_log_sd", e.to_string()))?;

    let drawn = par::map_range(cfg.n_patients, |i| {
        let mut rng = stream(cfg.seed, Purpose::Population, i as u64);
        let cell = pick(&cells, rng.random::<f64>());
        let poor_household = cell <= 1;
        let distant = cell == 0 || cell == 2;
        let minority = distant && bernoulli(&mut rng, minority_in_distant);
        let urban = bernoulli(&mut rng, shares.urban);
        let rural_draw = rng.random::<f64>();
        let rural_hukou = match shares.rural_hukou {
            Some(r) => rural_draw < r,
            None => !urban,
        };
        let male = bernoulli(&mut rng, shares.male);
        let income_draw = rng.random::<f64>();
        let high_income = !poor_household && income_draw < shares.high_income_among_non_poor;
        let age_years = age.sample(&mut rng).clamp(40.0, 100.0);
        let distance_km = log_dist.sample(&mut rng).exp();
        let (theta, category) = cfg.severity_mix.draw(rng.random::<f64>());
        let facility =
            Facility::ALL[pick(&cfg.facility_probs[category.index()], rng.random::<f64>())];
        let p = PatientProfile {
            id: i as u64,
            theta: Severity::clamped(theta),
            facility,
            poor_household,
            distant,
            rural_hukou,
            urban,
            minority,
            male,
            high_income,
            age: age_years,
            distance_km,
            used_ambulatory: false,
        };
        (p, category)
    });
    let (patients, categories) = drawn.into_iter().unzip();
    Ok(Population {
        patients,
        categories,
    })
}

/// Taste shock for the ambulatory-care option relative to the outside option:
/// the difference of two independent standard type-I extreme-value draws.
pub fn taste_shock(rng: &mut ChaCha8Rng) -> f64 {
    let g = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
    g.sample(rng) - g.sample(rng)
}

/// Sets `used_ambulatory = 1{v + xi > 0}` for every patient.
pub fn simulate_choices(
    patients: &mut [PatientProfile],
    cp: &CostParams,
    pp: &PreferenceParams,
    plan: &InsurancePlan,
    seed: u64,
) -> Result<()> {
    let v: Vec<f64> = par::map(patients, |p| utility_insured(p, cp, pp, plan))
        .into_iter()
        .collect::<Result<_>>()?;
    for (p, vi) in patients.iter_mut().zip(v) {
        let mut rng = stream(seed, Purpose::Choices, p.id);
        p.used_ambulatory = vi + taste_shock(&mut rng) > 0.0;
    }
    Ok(())
}

/// CVD ambulatory and inpatient claims plus non-CVD hospitalizations.
///
/// Per year, a patient using ambulatory care files one ambulatory claim with
/// `ln cost = alpha ln theta + ln(p_ratio K) + e`; with probability
/// `hospitalization_prob` the patient also files one CVD inpatient claim with
/// `ln cost = beta ln theta + rho d + ln s + ln K + e`, where `K` is the money
/// scale and `e` is normal noise plus the demographic shifts. Non-CVD
/// hospitalizations put the patient's yearly average cost on the side of the
/// Moderate/Severe threshold matching its true category, rising with
/// severity; Mild patients have none.
pub fn simulate_costs(
    pop: &Population,
    cfg: &PopulationConfig,
    seed: u64,
) -> Result<Vec<ClaimRecord>> {
    cfg.validate()?;
    let cp = &cfg.true_cost_params;
    let c = &cfg.costs;
    let noise =
        Normal::new(0.0, c.noise_sd).map_err(|e| Error::param("noise_sd", e.to_string()))?;
    let nc = &c.non_cvd;
    let cut = cfg.severity_mix.severe_cut();
    let plan = &cfg.plan;

    let per_patient = par::map_range(pop.patients.len(), |i| {
        let p = &pop.patients[i];
        let cat = pop.categories[i];
        let mut rng = stream(seed, Purpose::Costs, p.id);
        let ln_theta = p.theta.eval().ln();
        let shift =
            c.age_effect * (p.age - c.reference_age) + if p.male { c.male_effect } else { 0.0 };
        let phi_hc = plan.phi_hc_for(p);
        let mut out = Vec::new();
        for k in 0..c.n_years {
            let year = c.first_year + k as i32;
            if p.used_ambulatory {
                let ln_cost = cp.alpha * ln_theta
                    + (cp.p_ratio * cp.money_scale_rmb).ln()
                    + shift
                    + noise.sample(&mut rng);
                out.push(claim(
                    p,
                    year,
                    RecordType::Ambulatory,
                    p.facility,
                    DiagnosisClass::Cvd,
                    "cvd",
                    ln_cost.exp(),
                    plan.phi_pc,
                ));
            }
            if rng.random::<f64>() < c.hospitalization_prob {
                let ln_cost = cp.beta * ln_theta
                    + cp.rho * p.d()
                    + cp.s(p.facility).ln()
                    + cp.money_scale_rmb.ln()
                    + shift
                    + noise.sample(&mut rng);
                out.push(claim(
                    p,
                    year,
                    RecordType::Inpatient,
                    p.facility,
                    DiagnosisClass::Cvd,
                    "cvd",
                    ln_cost.exp(),
                    phi_hc,
                ));
            }
        }

        if cat != SeverityCategory::Mild {
            let mut rng = stream(seed, Purpose::NonCvd, p.id);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let raw = nc.threshold_rmb
                * (nc.severity_loading * (p.theta.value() - cut) + nc.noise_sd * z).exp();
            let yearly = if cat == SeverityCategory::Severe {
                raw.max(1.02 * nc.threshold_rmb)
            } else {
                raw.min(0.98 * nc.threshold_rmb)
            };
            let total = yearly * c.n_years as f64;
            let n_rec = rng.random_range(1..=nc.max_records) as usize;
            let weights: Vec<f64> = (0..n_rec)
                .map(|_| {
                    (nc.record_noise_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp()
                })
                .collect();
            let wsum: f64 = weights.iter().sum();
            for w in weights {
                let year = c.first_year + rng.random_range(0..c.n_years) as i32;
                let code = &nc.diagnosis_codes[rng.random_range(0..nc.diagnosis_codes.len())];
                let facility = Facility::ALL[rng.random_range(0..4)];
                out.push(claim(
                    p,
                    year,
                    RecordType::Inpatient,
                    facility,
                    DiagnosisClass::Other,
                    code,
                    total * w / wsum,
                    phi_hc,
                ));
            }
        }
        out
    });
    Ok(per_patient.into_iter().flatten().collect())
}

#[allow(clippy::too_many_arguments)]
fn claim(
    p: &PatientProfile,
    year: i32,
    record_type: RecordType,
    facility: Facility,
    class: DiagnosisClass,
    code: &str,
    total: f64,
    share: f64,
) -> ClaimRecord {
    ClaimRecord {
        patient_id: p.id,
        year,
        record_type,
        facility_type: facility,
        diagnosis_class: class,
        diagnosis_code: code.to_string(),
        total_cost_rmb: total,
        oop_cost_rmb: share * total,
    }
}

/// One patient-year of the reform panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub patient_id: u64,
    pub year: i32,
    pub post: bool,
    pub disadvantaged: bool,
    pub used_ambulatory: bool,
    pub category: SeverityCategory,
    pub age: f64,
    pub male: bool,
    pub minority: bool,
    pub urban: bool,
}

/// Simulated reform panel with the effect implied by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPanel {
    pub rows: Vec<PanelRow>,
    /// Mean of `sigma(v_post) - sigma(v_pre)` over treated (disadvantaged) patients.
    pub true_effect: f64,
    /// The same mean within Mild, Moderate and Severe; NaN for an empty stratum.
    pub true_effect_by_category: [f64; 3],
}

/// Choices before and after a change of plan.
///
/// By default each patient keeps one taste shock in all years, so a patient
/// whose utility does not change makes the same decision in every year while
/// each period's marginal use probability is still `sigma(v_t)`. With
/// `independent_shocks` every patient-year gets its own draw.
pub fn simulate_policy_shock(
    pop: &Population,
    shock: &ShockConfig,
    cp: &CostParams,
    pp: &PreferenceParams,
    seed: u64,
) -> Result<PolicyPanel> {
    shock.pre_plan.validate()?;
    shock.post_plan.validate()?;
    let pre: Vec<f64> = par::map(&pop.patients, |p| {
        utility_insured(p, cp, pp, &shock.pre_plan)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let post: Vec<f64> = par::map(&pop.patients, |p| {
        utility_insured(p, cp, pp, &shock.post_plan)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut rows =
        Vec::with_capacity(pop.patients.len() * (shock.pre_years.len() + shock.post_years.len()));
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (i, p) in pop.patients.iter().enumerate() {
        let mut rng = stream(seed, Purpose::Shock, p.id);
        let persistent = taste_shock(&mut rng);
        let cat = pop.categories[i];
        let years = shock
            .pre_years
            .iter()
            .map(|y| (*y, false))
            .chain(shock.post_years.iter().map(|y| (*y, true)));
        for (year, is_post) in years {
            let v = if is_post { post[i] } else { pre[i] };
            let eps = if shock.independent_shocks {
                taste_shock(&mut rng)
            } else {
                persistent
            };
            rows.push(PanelRow {
                patient_id: p.id,
                year,
                post: is_post,
                disadvantaged: p.disadvantaged(),
                used_ambulatory: v + eps > 0.0,
                category: cat,
                age: p.age,
                male: p.male,
                minority: p.minority,
                urban: p.urban,
            });
        }
        if p.disadvantaged() {
            sums[cat.index()] += choice_probability(post[i]) - choice_probability(pre[i]);
            counts[cat.index()] += 1;
        }
    }
    let treated: usize = counts.iter().sum();
    if treated == 0 {
        return Err(Error::Empty("treated patients in the reform panel".into()));
    }
    let by_cat = [0, 1, 2].map(|k| {
        if counts[k] > 0 {
            sums[k] / counts[k] as f64
        } else {
            f64::NAN
        }
    });
    Ok(PolicyPanel {
        rows,
        true_effect: sums.iter().sum::<f64>() / treated as f64,
        true_effect_by_category: by_cat,
    })
}

/// Mean choice probability among disadvantaged patients under the config's plan.
pub fn disadvantaged_mean_share(cfg: &PopulationConfig) -> Result<f64> {
    let pop = generate_population(cfg)?;
    let probs: Vec<Option<f64>> = par::map(&pop.patients, |p| {
        p.disadvantaged().then(|| {
            utility_insured(p, &cfg.true_cost_params, &cfg.true_pref_params, &cfg.plan)
                .map(choice_probability)
        })
    })
    .into_iter()
    .map(|o| o.transpose())
    .collect::<Result<_>>()?;
    let vals: Vec<f64> = probs.into_iter().flatten().collect();
    if vals.is_empty() {
        return Err(Error::Empty("disadvantaged patients".into()));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Chooses the Beta concentration so that the mean disadvantaged choice
/// probability equals `target`, by bisection on `ln kappa`. Population draws
/// are fixed by the seed, so the mean is a deterministic, decreasing function
/// of the concentration. Returns the concentration and the share it attains.
pub fn calibrate_concentration(cfg: &PopulationConfig, target: f64) -> Result<(f64, f64)> {
    let SeverityMix::Beta { .. } = cfg.severity_mix else {
        return Err(Error::param(
            "severity_mix",
            "calibration needs the Beta severity mix",
        ));
    };
    let share_at = |kappa: f64| -> Result<f64> {
        let mut c = cfg.clone();
        if let SeverityMix::Beta { concentration, .. } = &mut c.severity_mix {
            *concentration = kappa;
        }
        disadvantaged_mean_share(&c)
    };
    let (mut lo, mut hi) = (
        calibration::KAPPA_RANGE.0.ln(),
        calibration::KAPPA_RANGE.1.ln(),
    );
    let (s_lo, s_hi) = (share_at(lo.exp())?, share_at(hi.exp())?);
    let (s_max, s_min) = (s_lo.max(s_hi), s_lo.min(s_hi));
    if target > s_max || target < s_min {
        return Err(Error::Infeasible(format!(
            "target share {target} lies outside the attainable range [{s_min:.4}, {s_max:.4}]"
        )));
    }
    let decreasing = s_lo > s_hi;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let s = share_at(mid.exp())?;
        if (s > target) == decreasing {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-7 {
            break;
        }
    }
    let kappa = (0.5 * (lo + hi)).exp();
    Ok((kappa, share_at(kappa)?))
}

/// Calibrated config of `n` patients with the concentration already solved.
pub fn calibrated_config(n_patients: usize, seed: u64) -> Result<PopulationConfig> {
    let mut cfg = PopulationConfig {
        n_patients,
        seed,
        ..PopulationConfig::calibrated()
    };
    let (kappa, _) = calibrate_concentration(&cfg, calibration::TARGET_SHARE)?;
    if let SeverityMix::Beta { concentration, .. } = &mut cfg.severity_mix {
        *concentration = kappa;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::severity::{classify_discrete, SeverityConfig};

    fn small(n: usize) -> PopulationConfig {
        PopulationConfig {
            n_patients: n,
            ..PopulationConfig::default()
        }
    }

    #[test]
    fn cells_match_marginals() {
        let c = GroupShares::default().cells().unwrap();
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((c[0] - 0.266).abs() < 1e-12);
        assert!((c[0] + c[1] - 0.489).abs() < 1e-12);
        assert!((c[0] + c[2] - 0.525).abs() < 1e-12);
    }

    #[test]
    fn infeasible_shares_rejected() {
        let bad = GroupShares {
            minority: 0.6,
            ..GroupShares::default()
        };
        assert!(matches!(bad.cells(), Err(Error::Infeasible(_))));
        let bad = GroupShares {
            disadvantaged: 0.4,
            ..GroupShares::default()
        };
        assert!(matches!(bad.cells(), Err(Error::Infeasible(_))));
        let bad = GroupShares {
            disadvantaged: 0.9,
            poor: 0.3,
            distant: 0.4,
            ..GroupShares::default()
        };
        assert!(matches!(bad.cells(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn realized_shares_near_targets() {
        let pop = generate_population(&small(100_000)).unwrap();
        let n = pop.patients.len() as f64;
        let share = |f: &dyn Fn(&PatientProfile) -> bool| {
            pop.patients.iter().filter(|p| f(p)).count() as f64 / n
        };
        assert!((share(&|p| p.disadvantaged()) - 0.748).abs() < 0.005);
        assert!((share(&|p| p.poor_household) - 0.489).abs() < 0.005);
        assert!((share(&|p| p.minority) - 0.095).abs() < 0.005);
        assert!(pop.patients.iter().all(|p| !p.minority || p.distant));
        for (k, target) in [0.394, 0.465, 0.141].iter().enumerate() {
            let s = pop.categories.iter().filter(|c| c.index() == k).count() as f64 / n;
            assert!((s - target).abs() < 0.01, "category {k}: {s}");
        }
        assert!((pop.patients.iter().map(|p| p.age).sum::<f64>() / n - 69.29).abs() < 0.2);
    }

    #[test]
    fn deterministic_across_threads() {
        let cfg = small(3000);
        let a = par::with_threads(1, || generate_population(&cfg).unwrap());
        let b = par::with_threads(4, || generate_population(&cfg).unwrap());
        assert_eq!(a, b);
        let ca = par::with_threads(1, || simulate_costs(&a, &cfg, 5).unwrap());
        let cb = par::with_threads(3, || simulate_costs(&b, &cfg, 5).unwrap());
        assert_eq!(ca, cb);
    }

    #[test]
    fn zero_utility_gives_half_use() {
        let mut pop = generate_population(&small(100_000)).unwrap();
        let cp = published::cost_params();
        // With no benefit terms and no costs, v = 0 for everyone.
        let cp0 = CostParams {
            p_ratio: 1e-300,
            lambda: 1.0 - 1e-15,
            rho: 0.0,
            ..cp
        };
        let pp0 = PreferenceParams {
            gamma_h: 0.0,
            gamma_l: 0.0,
            t_b: 0.0,
            t_h: 0.0,
            t_m: 0.0,
            ..published::preference_params()
        };
        simulate_choices(&mut pop.patients, &cp0, &pp0, &published::plan(), 3).unwrap();
        let share = pop.patients.iter().filter(|p| p.used_ambulatory).count() as f64 / 1e5;
        assert!((share - 0.5).abs() < 0.005, "{share}");
    }

    #[test]
    fn use_share_tracks_mean_probability_and_group_ordering() {
        let cfg = small(100_000);
        let mut pop = generate_population(&cfg).unwrap();
        let (cp, pp, plan) = (&cfg.true_cost_params, &cfg.true_pref_params, &cfg.plan);
        simulate_choices(&mut pop.patients, cp, pp, plan, 8).unwrap();
        let mean_sigma: f64 = pop
            .patients
            .iter()
            .map(|p| choice_probability(utility_insured(p, cp, pp, plan).unwrap()))
            .sum::<f64>()
            / 1e5;
        let share = pop.patients.iter().filter(|p| p.used_ambulatory).count() as f64 / 1e5;
        assert!((share - mean_sigma).abs() < 0.01);
        let group = |dis: bool| {
            let g: Vec<_> = pop
                .patients
                .iter()
                .filter(|p| p.disadvantaged() == dis)
                .collect();
            g.iter().filter(|p| p.used_ambulatory).count() as f64 / g.len() as f64
        };
        assert!(group(true) < group(false));
    }

    #[test]
    fn claims_are_valid_and_follow_the_surface() {
        let mut cfg = small(2000);
        cfg.costs.noise_sd = 0.0;
        let mut pop = generate_population(&cfg).unwrap();
        simulate_choices(
            &mut pop.patients,
            &cfg.true_cost_params,
            &cfg.true_pref_params,
            &cfg.plan,
            1,
        )
        .unwrap();
        let claims = simulate_costs(&pop, &cfg, 2).unwrap();
        let cp = &cfg.true_cost_params;
        for c in &claims {
            c.validate().unwrap();
            let p = &pop.patients[c.patient_id as usize];
            let th = p.theta.eval();
            match (c.record_type, c.diagnosis_class) {
                (RecordType::Ambulatory, _) => {
                    let expect = th.powf(cp.alpha) * cp.p_ratio * cp.money_scale_rmb;
                    assert!((c.total_cost_rmb / expect - 1.0).abs() < 1e-12);
                }
                (RecordType::Inpatient, DiagnosisClass::Cvd) => {
                    let expect = cp.s(p.facility)
                        * th.powf(cp.beta)
                        * (cp.rho * p.d()).exp()
                        * cp.money_scale_rmb;
                    assert!((c.total_cost_rmb / expect - 1.0).abs() < 1e-12);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn non_cvd_claims_reproduce_true_categories() {
        let cfg = small(3000);
        let pop = generate_population(&cfg).unwrap();
        let claims = simulate_costs(&pop, &cfg, 4).unwrap();
        let scfg = SeverityConfig::default();
        let mut by: Vec<Vec<ClaimRecord>> = vec![Vec::new(); pop.patients.len()];
        for c in claims {
            by[c.patient_id as usize].push(c);
        }
        for (i, own) in by.iter().enumerate() {
            let cat = classify_discrete(own, cfg.costs.n_years as usize, &scfg).unwrap();
            assert_eq!(cat, pop.categories[i]);
        }
    }

    #[test]
    fn non_local_cost_premium() {
        let mut cfg = small(20_000);
        cfg.costs.noise_sd = 0.8;
        let pop = generate_population(&cfg).unwrap();
        let claims = simulate_costs(&pop, &cfg, 6).unwrap();
        let mean_log = |f: Facility| {
            let v: Vec<f64> = claims
                .iter()
                .filter(|c| {
                    c.diagnosis_class == DiagnosisClass::Cvd
                        && c.record_type == RecordType::Inpatient
                })
                .filter(|c| c.facility_type == f)
                .filter(|c| pop.categories[c.patient_id as usize] == SeverityCategory::Moderate)
                .map(|c| c.total_cost_rmb.ln())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        // No one uses ambulatory care here, so only the facility term differs.
        let gap = mean_log(Facility::NonLocal) - mean_log(Facility::Thc);
        assert!((gap - 25.103f64.ln()).abs() < 0.1, "{gap}");
    }

    #[test]
    fn placebo_and_reform_panels() {
        let cfg = small(20_000);
        let pop = generate_population(&cfg).unwrap();
        let (cp, pp) = (&cfg.true_cost_params, &cfg.true_pref_params);
        let reform = ShockConfig::default();
        let placebo = ShockConfig {
            post_plan: reform.pre_plan.clone(),
            ..reform.clone()
        };
        let p0 = simulate_policy_shock(&pop, &placebo, cp, pp, 1).unwrap();
        assert_eq!(p0.true_effect, 0.0);
        // Same utility in both years and a persistent shock: identical decisions.
        for pair in p0.rows.chunks(2) {
            assert_eq!(pair[0].used_ambulatory, pair[1].used_ambulatory);
        }
        let fresh = ShockConfig {
            independent_shocks: true,
            ..placebo.clone()
        };
        let p2 = simulate_policy_shock(&pop, &fresh, cp, pp, 1).unwrap();
        assert!(p2
            .rows
            .chunks(2)
            .any(|pair| pair[0].used_ambulatory != pair[1].used_ambulatory));
        let share = |post: bool| {
            let r: Vec<_> = p2.rows.iter().filter(|r| r.post == post).collect();
            r.iter().filter(|r| r.used_ambulatory).count() as f64 / r.len() as f64
        };
        assert!((share(true) - share(false)).abs() < 0.015);
        let p1 = simulate_policy_shock(&pop, &reform, cp, pp, 1).unwrap();
        assert!(p1.true_effect < 0.0);
        let [mild, moderate, severe] = p1.true_effect_by_category;
        assert!(
            mild > moderate && moderate > severe,
            "{:?}",
            p1.true_effect_by_category
        );
        let treated_share = |post: bool| {
            let r: Vec<_> = p1
                .rows
                .iter()
                .filter(|r| r.disadvantaged && r.post == post)
                .collect();
            r.iter().filter(|r| r.used_ambulatory).count() as f64 / r.len() as f64
        };
        assert!(treated_share(true) < treated_share(false));
    }

    #[test]
    fn calibration_hits_target() {
        let cfg = PopulationConfig {
            n_patients: 20_000,
            ..PopulationConfig::calibrated()
        };
        let (kappa, share) = calibrate_concentration(&cfg, calibration::TARGET_SHARE).unwrap();
        assert!(kappa > calibration::KAPPA_RANGE.0 && kappa < calibration::KAPPA_RANGE.1);
        assert!((share - calibration::TARGET_SHARE).abs() < 1e-4, "{share}");
        assert!(matches!(
            calibrate_concentration(&cfg, 0.9),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn beta_mix_categories_and_mean() {
        let mut cfg = PopulationConfig::calibrated();
        cfg.n_patients = 100_000;
        let pop = generate_population(&cfg).unwrap();
        let n = 1e5;
        let mild = pop
            .categories
            .iter()
            .filter(|c| **c == SeverityCategory::Mild)
            .count() as f64
            / n;
        let severe = pop
            .categories
            .iter()
            .filter(|c| **c == SeverityCategory::Severe)
            .count() as f64
            / n;
        assert!((mild - 0.394).abs() < 0.01 && (severe - 0.141).abs() < 0.01);
        let cut = cfg.severity_mix.severe_cut();
        for (p, c) in pop.patients.iter().zip(&pop.categories) {
            match c {
                SeverityCategory::Severe => assert!(p.theta.value() >= cut - 1e-9),
                SeverityCategory::Moderate => assert!(p.theta.value() <= cut + 1e-9),
                SeverityCategory::Mild => assert_eq!(p.theta.value(), 0.1),
            }
        }
    }
}
