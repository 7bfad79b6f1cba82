//! Step one: cost-function parameters from log-cost regressions.
//!
//! Ambulatory claims give the severity elasticity `alpha`:
//! `ln P_pc = c_pc + alpha ln theta + X b + e`.
//! Inpatient CVD claims, summed per patient, year and facility type, give
//! `beta`, `rho` and the facility effects:
//! `ln P_hc = c_hc + beta ln theta + rho d + delta_s + X b + e`.
//! Covariates are centered at their patient means so the intercepts are the
//! log ceilings of a typical patient; `K = exp(c_hc)` is the money scale,
//! `p_ratio = exp(c_pc - c_hc)`, `lambda = exp(rho / beta)`,
//! `s_j = exp(delta_j)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ols::{ols, OlsSpec, RegressionResult};
use crate::error::{Error, Result};
use crate::model::{CostParams, Facility, PatientProfile, Severity};
use crate::severity::{covariate, ClaimRecord, DiagnosisClass, RecordType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostOptions {
    /// Patient covariates entering both regressions.
    pub covariates: Vec<String>,
    /// Cluster standard errors by patient instead of HC1.
    pub cluster_by_patient: bool,
    /// Replace the estimated money scale by this value (RMB).
    pub money_scale_rmb: Option<f64>,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            covariates: vec!["age".into(), "male".into()],
            cluster_by_patient: false,
            money_scale_rmb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub params: CostParams,
    pub ambulatory: RegressionResult,
    pub inpatient: RegressionResult,
    /// Money scale implied by the inpatient intercept, before any override.
    pub implied_money_scale_rmb: f64,
    /// Patients left out because their severity sits on the clamp boundary.
    pub excluded_boundary: Vec<u64>,
}

fn covariate_columns(
    rows: &[&PatientProfile],
    names: &[String],
    centers: &BTreeMap<String, f64>,
) -> Result<Vec<(String, Vec<f64>)>> {
    names
        .iter()
        .map(|name| {
            let c = centers[name];
            let v = rows
                .iter()
                .map(|p| covariate(p, name).map(|x| x - c))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Config {
                    key: "covariates".into(),
                    message: format!("unknown covariate `{name}`"),
                })?;
            Ok((name.clone(), v))
        })
        .collect()
}

/// Estimates [`CostParams`] from CVD claims, given each patient's severity.
pub fn estimate_cost_params(
    claims: &[ClaimRecord],
    patients: &[PatientProfile],
    theta: &BTreeMap<u64, Severity>,
    opts: &CostOptions,
) -> Result<CostEstimate> {
    let by_id: BTreeMap<u64, &PatientProfile> = patients.iter().map(|p| (p.id, p)).collect();
    let mut excluded: Vec<u64> = theta
        .iter()
        .filter(|(_, t)| t.at_clamp_boundary())
        .map(|(id, _)| *id)
        .collect();
    excluded.sort_unstable();
    if !excluded.is_empty() {
        log::warn!(
            "{} patients with severity on the clamp boundary left out of the cost regressions",
            excluded.len()
        );
    }
    let usable = |id: u64| {
        theta.get(&id).filter(|t| !t.at_clamp_boundary()).is_some() && by_id.contains_key(&id)
    };

    let mut centers = BTreeMap::new();
    for name in &opts.covariates {
        let vals: Vec<f64> = patients
            .iter()
            .filter(|p| usable(p.id))
            .map(|p| {
                covariate(p, name).ok_or_else(|| Error::Config {
                    key: "covariates".into(),
                    message: format!("unknown covariate `{name}`"),
                })
            })
            .collect::<Result<_>>()?;
        let mean = if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        centers.insert(name.clone(), mean);
    }

    let mut amb_rows: Vec<(&PatientProfile, f64)> = Vec::new();
    let mut inp_cells: BTreeMap<(u64, i32, Facility), f64> = BTreeMap::new();
    for c in claims
        .iter()
        .filter(|c| c.diagnosis_class == DiagnosisClass::Cvd)
    {
        c.validate()?;
        if !usable(c.patient_id) {
            continue;
        }
        match c.record_type {
            RecordType::Ambulatory => amb_rows.push((by_id[&c.patient_id], c.total_cost_rmb)),
            RecordType::Inpatient => {
                *inp_cells
                    .entry((c.patient_id, c.year, c.facility_type))
                    .or_insert(0.0) += c.total_cost_rmb
            }
        }
    }
    if amb_rows.is_empty() {
        return Err(Error::Empty("ambulatory CVD claims".into()));
    }
    if inp_cells.is_empty() {
        return Err(Error::Empty("inpatient CVD claims".into()));
    }

    let ln_theta = |p: &PatientProfile| theta[&p.id].eval().ln();

    let amb_patients: Vec<&PatientProfile> = amb_rows.iter().map(|(p, _)| *p).collect();
    let mut spec = OlsSpec::with_intercept().column(
        "ln_theta",
        amb_patients.iter().map(|p| ln_theta(p)).collect(),
    );
    for (name, col) in covariate_columns(&amb_patients, &opts.covariates, &centers)? {
        spec = spec.column(name, col);
    }
    if opts.cluster_by_patient {
        spec = spec.clustered(amb_patients.iter().map(|p| p.id).collect());
    }
    let y: Vec<f64> = amb_rows.iter().map(|(_, c)| c.ln()).collect();
    let ambulatory = ols(&y, &spec)?;

    let inp_patients: Vec<&PatientProfile> = inp_cells.keys().map(|(id, _, _)| by_id[id]).collect();
    let mut spec = OlsSpec::with_intercept()
        .column(
            "ln_theta",
            inp_patients.iter().map(|p| ln_theta(p)).collect(),
        )
        .column("ambulatory", inp_patients.iter().map(|p| p.d()).collect());
    for (name, col) in covariate_columns(&inp_patients, &opts.covariates, &centers)? {
        spec = spec.column(name, col);
    }
    let facilities: Vec<i64> = inp_cells.keys().map(|(_, _, f)| f.code() as i64).collect();
    if !facilities.contains(&(Facility::Thc.code() as i64)) {
        return Err(Error::Data(
            "no township health center hospitalizations; the benchmark facility is missing".into(),
        ));
    }
    spec = spec.fixed_effect("facility", facilities);
    if opts.cluster_by_patient {
        spec = spec.clustered(inp_patients.iter().map(|p| p.id).collect());
    }
    let y: Vec<f64> = inp_cells.values().map(|c| c.ln()).collect();
    let inpatient = ols(&y, &spec)?;

    let coef = |r: &RegressionResult, name: &str| {
        r.coef(name)
            .ok_or_else(|| Error::Estimation(format!("coefficient `{name}` missing")))
    };
    let alpha = coef(&ambulatory, "ln_theta")?;
    let beta = coef(&inpatient, "ln_theta")?;
    let rho = coef(&inpatient, "ambulatory")?;
    if beta <= 0.0 {
        return Err(Error::Estimation(format!(
            "inpatient severity elasticity {beta:.4} is not positive; effectiveness is undefined"
        )));
    }
    let mut s_mult = [1.0; 4];
    for f in &Facility::ALL[1..] {
        s_mult[f.index()] = match inpatient.coef(&format!("facility={}", f.code())) {
            Some(d) => d.exp(),
            None => {
                log::warn!(
                    "no hospitalizations at {}; its multiplier is set to 1",
                    f.name()
                );
                1.0
            }
        };
    }
    let c_pc = coef(&ambulatory, "const")?;
    let c_hc = coef(&inpatient, "const")?;
    let implied = c_hc.exp();
    let params = CostParams::from_regression(
        alpha,
        beta,
        rho,
        s_mult,
        (c_pc - c_hc).exp(),
        opts.money_scale_rmb.unwrap_or(implied),
    )?;
    Ok(CostEstimate {
        params,
        ambulatory,
        inpatient,
        implied_money_scale_rmb: implied,
        excluded_boundary: excluded,
    })
}
