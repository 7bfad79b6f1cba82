//! Difference-in-differences probit on a patient-year panel.

use std::collections::BTreeSet;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::binary::{binary_fit, norm_cdf, BinaryOptions};
use super::ols::{OlsSpec, RegressionResult};
use crate::error::{Error, Result};
use crate::severity::SeverityCategory;
use crate::synth::PanelRow;

pub const INTERACTION: &str = "disadvantaged_x_post";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidSpec {
    pub label: String,
    /// Add age, sex, minority, urban residence and severity dummies.
    pub controls: bool,
    /// Drop Severe patients.
    pub mild_moderate_only: bool,
    pub cluster_by_patient: bool,
}

impl DidSpec {
    /// The three standard columns: year effects only, with controls, and
    /// with controls on Mild/Moderate patients.
    pub fn columns() -> [DidSpec; 3] {
        let base = DidSpec {
            label: "(1) year effects".into(),
            controls: false,
            mild_moderate_only: false,
            cluster_by_patient: true,
        };
        [
            base.clone(),
            DidSpec {
                label: "(2) with controls".into(),
                controls: true,
                ..base.clone()
            },
            DidSpec {
                label: "(3) mild/moderate only".into(),
                controls: true,
                mild_moderate_only: true,
                ..base
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidResult {
    pub spec: DidSpec,
    /// Average over treated post-reform observations of
    /// `Phi(x'b) - Phi(x'b - b_interaction)`.
    pub interaction_ame: f64,
    pub interaction_ame_se: f64,
    pub n_obs: usize,
    pub n_patients: usize,
    pub regression: RegressionResult,
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Probit of ambulatory-care use on treatment, treatment x post and year
/// effects (which absorb the post main effect).
pub fn did_analysis(panel: &[PanelRow], spec: &DidSpec) -> Result<DidResult> {
    let rows: Vec<&PanelRow> = panel
        .iter()
        .filter(|r| !(spec.mild_moderate_only && r.category == SeverityCategory::Severe))
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty("panel rows".into()));
    }
    if !rows.iter().any(|r| r.disadvantaged) {
        return Err(Error::Data(
            "no treated (disadvantaged) observations".into(),
        ));
    }
    if !rows.iter().any(|r| !r.disadvantaged) {
        return Err(Error::Data("no control (regular) observations".into()));
    }
    if !rows.iter().any(|r| r.post) || !rows.iter().any(|r| !r.post) {
        return Err(Error::Data(
            "the panel covers a single period; both pre- and post-reform years are required".into(),
        ));
    }
    for (is_post, label) in [(false, "pre"), (true, "post")] {
        for treated in [false, true] {
            if !rows
                .iter()
                .any(|r| r.post == is_post && r.disadvantaged == treated)
            {
                return Err(Error::Data(format!(
                    "no {} observations in the {label}-reform period",
                    if treated { "treated" } else { "control" }
                )));
            }
        }
    }

    let y: Vec<f64> = rows.iter().map(|r| indicator(r.used_ambulatory)).collect();
    let mut design = OlsSpec::with_intercept()
        .column(
            "disadvantaged",
            rows.iter().map(|r| indicator(r.disadvantaged)).collect(),
        )
        .column(
            INTERACTION,
            rows.iter()
                .map(|r| indicator(r.disadvantaged && r.post))
                .collect(),
        );
    if spec.controls {
        design = design
            .column("age", rows.iter().map(|r| r.age).collect())
            .column("male", rows.iter().map(|r| indicator(r.male)).collect())
            .column(
                "minority",
                rows.iter().map(|r| indicator(r.minority)).collect(),
            )
            .column("urban", rows.iter().map(|r| indicator(r.urban)).collect())
            .column(
                "moderate",
                rows.iter()
                    .map(|r| indicator(r.category == SeverityCategory::Moderate))
                    .collect(),
            );
        if !spec.mild_moderate_only {
            design = design.column(
                "severe",
                rows.iter()
                    .map(|r| indicator(r.category == SeverityCategory::Severe))
                    .collect(),
            );
        }
    }
    design = design.fixed_effect("year", rows.iter().map(|r| r.year as i64).collect());
    if spec.cluster_by_patient {
        design = design.clustered(rows.iter().map(|r| r.patient_id).collect());
    }
    let fit = binary_fit(&y, &design, &BinaryOptions::default())?;

    let (names, x) = design.design(rows.len())?;
    let j = names
        .iter()
        .position(|n| n == INTERACTION)
        .expect("interaction column present");
    let treated_post: Vec<usize> = (0..rows.len()).filter(|&i| x[(i, j)] == 1.0).collect();
    let ame_at = |b: &DVector<f64>| -> f64 {
        treated_post
            .iter()
            .map(|&i| {
                let z = x.row(i).transpose().dot(b);
                norm_cdf(z) - norm_cdf(z - b[j])
            })
            .sum::<f64>()
            / treated_post.len() as f64
    };
    let b = DVector::from_column_slice(&fit.coefficients);
    let ame = ame_at(&b);
    let k = b.len();
    let mut grad = DVector::zeros(k);
    for c in 0..k {
        let h = 1e-6 * b[c].abs().max(1.0);
        let mut up = b.clone();
        let mut dn = b.clone();
        up[c] += h;
        dn[c] -= h;
        grad[c] = (ame_at(&up) - ame_at(&dn)) / (2.0 * h);
    }
    let var: f64 = (0..k)
        .flat_map(|a| (0..k).map(move |c| (a, c)))
        .map(|(a, c)| grad[a] * fit.cov(a, c) * grad[c])
        .sum();
    let n_patients = rows
        .iter()
        .map(|r| r.patient_id)
        .collect::<BTreeSet<_>>()
        .len();
    Ok(DidResult {
        spec: spec.clone(),
        interaction_ame: ame,
        interaction_ame_se: var.max(0.0).sqrt(),
        n_obs: rows.len(),
        n_patients,
        regression: fit,
    })
}

/// Runs the three standard columns.
pub fn did_table(panel: &[PanelRow]) -> Result<Vec<DidResult>> {
    DidSpec::columns()
        .iter()
        .map(|s| did_analysis(panel, s))
        .collect()
}
