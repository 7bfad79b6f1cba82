//! Severity measures built from claims.
//!
//! Two measures are available. The discrete one sorts patients into Mild,
//! Moderate and Severe from their hospitalizations for diagnoses other than
//! cardiovascular disease. The continuous, preference-discounted one takes
//! the residuals of a log-cost regression on those hospitalizations,
//! averages them per patient with diagnosis-frequency weights and rescales
//! the averages to the unit interval.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{ols, OlsSpec};
use crate::model::{published, Facility, PatientProfile, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordType {
    Ambulatory,
    Inpatient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosisClass {
    #[serde(rename = "CVD")]
    Cvd,
    #[serde(rename = "Other")]
    Other,
}

/// One ambulatory or inpatient cost record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub patient_id: u64,
    pub year: i32,
    pub record_type: RecordType,
    pub facility_type: Facility,
    pub diagnosis_class: DiagnosisClass,
    pub diagnosis_code: String,
    pub total_cost_rmb: f64,
    pub oop_cost_rmb: f64,
}

impl ClaimRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_cost_rmb > 0.0 && self.total_cost_rmb.is_finite()) {
            return Err(Error::Data(format!(
                "patient {} year {}: total cost {} must be positive",
                self.patient_id, self.year, self.total_cost_rmb
            )));
        }
        if !(self.oop_cost_rmb >= 0.0 && self.oop_cost_rmb <= self.total_cost_rmb) {
            return Err(Error::Data(format!(
                "patient {} year {}: out-of-pocket {} outside [0, total]",
                self.patient_id, self.year, self.oop_cost_rmb
            )));
        }
        Ok(())
    }

    /// Hospitalization for a diagnosis other than CVD.
    pub fn is_non_cvd_inpatient(&self) -> bool {
        self.record_type == RecordType::Inpatient && self.diagnosis_class == DiagnosisClass::Other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityCategory {
    Mild,
    Moderate,
    Severe,
}

impl SeverityCategory {
    pub const ALL: [SeverityCategory; 3] = [
        SeverityCategory::Mild,
        SeverityCategory::Moderate,
        SeverityCategory::Severe,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SeverityCategory::Mild => "mild",
            SeverityCategory::Moderate => "moderate",
            SeverityCategory::Severe => "severe",
        }
    }
}

/// Which severity measure feeds estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SeverityMeasure {
    /// Mild / Moderate / Severe with one value per category.
    #[default]
    #[serde(rename = "discrete")]
    Discrete,
    /// Continuous residual-based index; Mild patients keep the discrete value.
    #[serde(rename = "pref")]
    PreferenceDiscounted,
    /// Discrete measure restricted to Moderate and Severe patients.
    #[serde(rename = "mod-severe")]
    ModerateSevere,
    /// Moderate and Severe patients split into cost quintiles.
    #[serde(rename = "five-bin")]
    FiveBin,
}

impl std::str::FromStr for SeverityMeasure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(SeverityMeasure::Discrete),
            "pref" | "preference-discounted" => Ok(SeverityMeasure::PreferenceDiscounted),
            "mod-severe" | "moderate-severe" => Ok(SeverityMeasure::ModerateSevere),
            "five-bin" => Ok(SeverityMeasure::FiveBin),
            other => Err(Error::Config {
                key: "severity".into(),
                message: format!(
                    "unknown measure `{other}`; expected discrete, pref, mod-severe or five-bin"
                ),
            }),
        }
    }
}

/// Where discrete category values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSource {
    /// Fixed published values (0.1, 0.48, 0.72).
    #[default]
    Published,
    /// Percentile of the continuous measure within each category.
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityConfig {
    pub moderate_threshold_rmb: f64,
    pub percentile: f64,
    /// Diagnosis codes entering the residual regression; empty means all.
    pub eligible_other_diagnoses: Vec<String>,
    /// Fixed diagnosis weights; computed from in-sample frequencies when absent.
    pub frequency_weights: Option<BTreeMap<String, f64>>,
    /// Patient covariates of the residual regression.
    pub covariates: Vec<String>,
    pub theta_source: ThetaSource,
}

impl Default for SeverityConfig {
    fn default() -> Self {
        SeverityConfig {
            moderate_threshold_rmb: 15_000.0,
            percentile: 0.99,
            eligible_other_diagnoses: Vec::new(),
            frequency_weights: None,
            covariates: ["age", "male", "minority", "urban"]
                .map(String::from)
                .to_vec(),
            theta_source: ThetaSource::Published,
        }
    }
}

impl SeverityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.moderate_threshold_rmb > 0.0) {
            return Err(Error::param("moderate_threshold_rmb", "must be positive"));
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(Error::param("percentile", "must lie in (0, 1]"));
        }
        if let Some(w) = &self.frequency_weights {
            if w.values().any(|v| !(*v >= 0.0)) || w.values().sum::<f64>() <= 0.0 {
                return Err(Error::param(
                    "frequency_weights",
                    "weights must be non-negative with a positive sum",
                ));
            }
        }
        Ok(())
    }

    fn eligible(&self, code: &str) -> bool {
        self.eligible_other_diagnoses.is_empty()
            || self.eligible_other_diagnoses.iter().any(|c| c == code)
    }
}

/// Total non-CVD inpatient cost divided by `enrolled_years`.
pub fn yearly_non_cvd_cost(claims: &[ClaimRecord], enrolled_years: usize) -> Option<f64> {
    let relevant: Vec<&ClaimRecord> = claims.iter().filter(|c| c.is_non_cvd_inpatient()).collect();
    if relevant.is_empty() {
        return None;
    }
    let years = if enrolled_years > 0 {
        enrolled_years
    } else {
        relevant
            .iter()
            .map(|c| c.year)
            .collect::<BTreeSet<_>>()
            .len()
    };
    Some(relevant.iter().map(|c| c.total_cost_rmb).sum::<f64>() / years as f64)
}

/// Discrete category of one patient from their claims. `enrolled_years` is the
/// length of the observation window; zero falls back to the years with claims.
pub fn classify_discrete(
    claims: &[ClaimRecord],
    enrolled_years: usize,
    cfg: &SeverityConfig,
) -> Result<SeverityCategory> {
    if let Some(first) = claims.first() {
        if claims.iter().any(|c| c.patient_id != first.patient_id) {
            return Err(Error::Data(
                "classify_discrete expects the claims of a single patient".into(),
            ));
        }
    }
    Ok(match yearly_non_cvd_cost(claims, enrolled_years) {
        None => SeverityCategory::Mild,
        Some(avg) if avg < cfg.moderate_threshold_rmb => SeverityCategory::Moderate,
        Some(_) => SeverityCategory::Severe,
    })
}

/// Claims grouped by patient, keeping only listed patients.
pub fn claims_by_patient<'a>(
    claims: &'a [ClaimRecord],
    ids: &[u64],
) -> BTreeMap<u64, Vec<&'a ClaimRecord>> {
    let mut map: BTreeMap<u64, Vec<&ClaimRecord>> =
        ids.iter().map(|&id| (id, Vec::new())).collect();
    for c in claims {
        if let Some(v) = map.get_mut(&c.patient_id) {
            v.push(c);
        }
    }
    map
}

/// Number of distinct calendar years in the claims.
pub fn observation_years(claims: &[ClaimRecord]) -> usize {
    claims.iter().map(|c| c.year).collect::<BTreeSet<_>>().len()
}

/// Discrete categories for every listed patient; every patient is treated
/// as enrolled over the whole observation window.
pub fn classify_population(
    claims: &[ClaimRecord],
    ids: &[u64],
    cfg: &SeverityConfig,
) -> Result<BTreeMap<u64, SeverityCategory>> {
    let years = observation_years(claims);
    claims_by_patient(claims, ids)
        .into_iter()
        .map(|(id, cs)| {
            let owned: Vec<ClaimRecord> = cs.into_iter().cloned().collect();
            classify_discrete(&owned, years, cfg).map(|c| (id, c))
        })
        .collect()
}

/// Linear-interpolation percentile (`q` in [0, 1]) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Severity of a category: the configured percentile of the continuous
/// values observed in it, or `fallback` when there are none.
pub fn assign_theta(
    category_thetas: &[f64],
    percentile_q: f64,
    fallback: Option<f64>,
) -> Result<Severity> {
    match percentile(category_thetas, percentile_q) {
        Some(v) => Ok(Severity::clamped(v)),
        None => match fallback {
            Some(f) => Severity::new(f),
            None => Err(Error::Empty(
                "severity category has no patients and no fallback value".into(),
            )),
        },
    }
}

/// Published value of a discrete category.
pub fn published_theta(cat: SeverityCategory) -> f64 {
    published::THETA[cat.index()]
}

/// Residual of one hospitalization record in the auxiliary regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxResidual {
    pub patient_id: u64,
    pub year: i32,
    pub diagnosis_code: String,
    pub residual: f64,
}

/// Value of a named patient covariate.
pub fn covariate(p: &PatientProfile, name: &str) -> Option<f64> {
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    Some(match name {
        "age" => p.age,
        "male" => b(p.male),
        "minority" => b(p.minority),
        "urban" => b(p.urban),
        "rural_hukou" => b(p.rural_hukou),
        "poor_household" => b(p.poor_household),
        "distant" => b(p.distant),
        "high_income" => b(p.high_income),
        "distance_km" => p.distance_km,
        _ => return None,
    })
}

/// Regresses log non-CVD hospitalization cost on patient covariates plus year
/// and facility fixed effects and returns the record residuals.
pub fn aux_residuals(
    claims: &[ClaimRecord],
    patients: &[PatientProfile],
    cfg: &SeverityConfig,
) -> Result<Vec<AuxResidual>> {
    let by_id: BTreeMap<u64, &PatientProfile> = patients.iter().map(|p| (p.id, p)).collect();
    let records: Vec<&ClaimRecord> = claims
        .iter()
        .filter(|c| {
            c.is_non_cvd_inpatient()
                && cfg.eligible(&c.diagnosis_code)
                && by_id.contains_key(&c.patient_id)
        })
        .collect();
    if records.is_empty() {
        return Err(Error::Empty(
            "no eligible non-CVD inpatient claims for the preference-discounted measure".into(),
        ));
    }
    let mut y = Vec::with_capacity(records.len());
    for c in &records {
        c.validate()?;
        y.push(c.total_cost_rmb.ln());
    }
    let mut spec = OlsSpec::with_intercept();
    for name in &cfg.covariates {
        let col = records
            .iter()
            .map(|c| {
                covariate(by_id[&c.patient_id], name).ok_or_else(|| Error::Config {
                    key: "severity.covariates".into(),
                    message: format!("unknown covariate `{name}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        spec = spec.column(name.clone(), col);
    }
    spec = spec
        .fixed_effect("year", records.iter().map(|c| c.year as i64).collect())
        .fixed_effect(
            "facility",
            records
                .iter()
                .map(|c| c.facility_type.code() as i64)
                .collect(),
        );
    let fit = ols(&y, &spec)?;
    Ok(records
        .iter()
        .zip(fit.residuals)
        .map(|(c, e)| AuxResidual {
            patient_id: c.patient_id,
            year: c.year,
            diagnosis_code: c.diagnosis_code.clone(),
            residual: e,
        })
        .collect())
}

/// Diagnosis weights: configured values, or relative record frequencies.
pub fn diagnosis_weights(residuals: &[AuxResidual], cfg: &SeverityConfig) -> BTreeMap<String, f64> {
    let mut w: BTreeMap<String, f64> = match &cfg.frequency_weights {
        Some(fixed) => fixed.clone(),
        None => {
            let mut counts = BTreeMap::new();
            for r in residuals {
                *counts.entry(r.diagnosis_code.clone()).or_insert(0.0) += 1.0;
            }
            counts
        }
    };
    let total: f64 = w.values().sum();
    for v in w.values_mut() {
        *v /= total;
    }
    w
}

/// Weighted mean residual per patient.
pub fn weighted_mean_residuals(
    residuals: &[AuxResidual],
    cfg: &SeverityConfig,
) -> Result<BTreeMap<u64, f64>> {
    let w = diagnosis_weights(residuals, cfg);
    let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for r in residuals {
        let wd = *w.get(&r.diagnosis_code).ok_or_else(|| {
            Error::Data(format!(
                "diagnosis `{}` has no frequency weight",
                r.diagnosis_code
            ))
        })?;
        let e = acc.entry(r.patient_id).or_insert((0.0, 0.0));
        e.0 += wd * r.residual;
        e.1 += wd;
    }
    acc.into_iter()
        .map(|(id, (num, den))| {
            if den > 0.0 {
                Ok((id, num / den))
            } else {
                Err(Error::Data(format!(
                    "patient {id} has zero total diagnosis weight"
                )))
            }
        })
        .collect()
}

/// Min-max rescaling to [0, 1].
pub fn min_max_standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Empty(
            "min-max standardization needs at least two patients".into(),
        ));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Data(
            "all weighted residuals are identical; standardization is undefined".into(),
        ));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Preference-discounted severity per patient, before clamping.
pub fn preference_discounted_raw(
    residuals: &[AuxResidual],
    cfg: &SeverityConfig,
) -> Result<BTreeMap<u64, f64>> {
    let means = weighted_mean_residuals(residuals, cfg)?;
    let ids: Vec<u64> = means.keys().copied().collect();
    let vals: Vec<f64> = means.values().copied().collect();
    Ok(ids.into_iter().zip(min_max_standardize(&vals)?).collect())
}

/// Preference-discounted severity per patient, clamped into the open interval.
pub fn preference_discounted_theta(
    residuals: &[AuxResidual],
    cfg: &SeverityConfig,
) -> Result<BTreeMap<u64, Severity>> {
    Ok(preference_discounted_raw(residuals, cfg)?
        .into_iter()
        .map(|(id, t)| (id, Severity::clamped(t)))
        .collect())
}

/// Quintile bin (0..5) of each patient's value.
pub fn quintile_bins(values: &BTreeMap<u64, f64>) -> Result<BTreeMap<u64, usize>> {
    let v: Vec<f64> = values.values().copied().collect();
    if v.len() < 5 {
        return Err(Error::Empty(
            "five-bin measure needs at least five Moderate/Severe patients".into(),
        ));
    }
    let cuts: Vec<f64> = (1..5)
        .map(|k| percentile(&v, k as f64 / 5.0).unwrap())
        .collect();
    Ok(values
        .iter()
        .map(|(&id, &x)| (id, cuts.iter().filter(|&&c| x > c).count()))
        .collect())
}

/// Severity assigned to each patient kept for estimation, plus its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityAssignment {
    pub measure: SeverityMeasure,
    pub theta: BTreeMap<u64, Severity>,
    pub group: BTreeMap<u64, String>,
    pub category: BTreeMap<u64, SeverityCategory>,
    /// Value used for each group label.
    pub group_theta: BTreeMap<String, f64>,
    pub excluded: Vec<u64>,
}

/// Builds the selected severity measure for the listed patients.
pub fn assign_severity(
    measure: SeverityMeasure,
    claims: &[ClaimRecord],
    patients: &[PatientProfile],
    cfg: &SeverityConfig,
) -> Result<SeverityAssignment> {
    cfg.validate()?;
    let ids: Vec<u64> = patients.iter().map(|p| p.id).collect();
    let category = classify_population(claims, &ids, cfg)?;
    let needs_continuous = matches!(
        measure,
        SeverityMeasure::PreferenceDiscounted | SeverityMeasure::FiveBin
    ) || cfg.theta_source == ThetaSource::Percentile;
    let continuous = if needs_continuous {
        let res = aux_residuals(claims, patients, cfg)?;
        Some(preference_discounted_raw(&res, cfg)?)
    } else {
        None
    };

    let mut theta = BTreeMap::new();
    let mut group = BTreeMap::new();
    let mut group_theta = BTreeMap::new();
    let mut excluded = Vec::new();

    let category_theta = |cat: SeverityCategory| -> Result<Severity> {
        match (cfg.theta_source, &continuous) {
            (ThetaSource::Percentile, Some(cont)) => {
                let vals: Vec<f64> = category
                    .iter()
                    .filter(|(_, c)| **c == cat)
                    .filter_map(|(id, _)| cont.get(id).copied())
                    .collect();
                assign_theta(&vals, cfg.percentile, Some(published_theta(cat)))
            }
            _ => Severity::new(published_theta(cat)),
        }
    };
    let cat_values: Vec<Severity> = SeverityCategory::ALL
        .iter()
        .map(|&c| category_theta(c))
        .collect::<Result<_>>()?;

    match measure {
        SeverityMeasure::Discrete | SeverityMeasure::ModerateSevere => {
            for (&id, &cat) in &category {
                if measure == SeverityMeasure::ModerateSevere && cat == SeverityCategory::Mild {
                    excluded.push(id);
                    continue;
                }
                theta.insert(id, cat_values[cat.index()]);
                group.insert(id, cat.name().to_string());
            }
            for cat in SeverityCategory::ALL {
                group_theta.insert(cat.name().to_string(), cat_values[cat.index()].value());
            }
        }
        SeverityMeasure::PreferenceDiscounted => {
            let cont = continuous.as_ref().expect("continuous measure computed");
            for (&id, &cat) in &category {
                match cont.get(&id) {
                    Some(&t) => {
                        theta.insert(id, Severity::clamped(t));
                        group.insert(id, "continuous".to_string());
                    }
                    None => {
                        theta.insert(id, cat_values[cat.index()]);
                        group.insert(id, cat.name().to_string());
                    }
                }
            }
            group_theta.insert("mild".into(), cat_values[0].value());
        }
        SeverityMeasure::FiveBin => {
            let cont = continuous.as_ref().expect("continuous measure computed");
            let years = observation_years(claims);
            let by_patient = claims_by_patient(claims, &ids);
            let mut costs = BTreeMap::new();
            for (&id, &cat) in &category {
                if cat == SeverityCategory::Mild {
                    excluded.push(id);
                    continue;
                }
                let owned: Vec<ClaimRecord> =
                    by_patient[&id].iter().map(|c| (*c).clone()).collect();
                costs.insert(id, yearly_non_cvd_cost(&owned, years).unwrap_or(0.0));
            }
            let bins = quintile_bins(&costs)?;
            for b in 0..5 {
                let vals: Vec<f64> = bins
                    .iter()
                    .filter(|(_, &bb)| bb == b)
                    .filter_map(|(id, _)| cont.get(id).copied())
                    .collect();
                let fallback = percentile(
                    &cont.values().copied().collect::<Vec<_>>(),
                    (b as f64 + 0.5) / 5.0,
                );
                let t = assign_theta(&vals, cfg.percentile, fallback)?;
                group_theta.insert(format!("bin{}", b + 1), t.value());
            }
            for (&id, &b) in &bins {
                let label = format!("bin{}", b + 1);
                theta.insert(id, Severity::clamped(group_theta[&label]));
                group.insert(id, label);
            }
        }
    }
    Ok(SeverityAssignment {
        measure,
        theta,
        group,
        category,
        group_theta,
        excluded,
    })
}
