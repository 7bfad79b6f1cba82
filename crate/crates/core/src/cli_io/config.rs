//! Run configuration read from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counterfactual::{PolicyScenario, ReportOptions};
use crate::error::{Error, Result};
use crate::estimation::{CostOptions, FitOptions};
use crate::model::{AssistanceGroup, CurveParams, CurveSpec, InsurancePlan};
use crate::severity::{SeverityConfig, SeverityMeasure};
use crate::synth::PopulationConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub population: PopulationConfig,
    pub severity: SeverityConfig,
    pub estimation: EstimationConfig,
    pub counterfactual: CounterfactualConfig,
    pub curves: CurvesConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub measure: SeverityMeasure,
    pub cost: CostOptions,
    pub logit: FitOptions,
    pub bootstrap: usize,
    pub rural_minority: bool,
    /// Plan faced by the patients in the data; the population plan when absent.
    pub plan: Option<InsurancePlan>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            measure: SeverityMeasure::Discrete,
            cost: CostOptions::default(),
            logit: FitOptions::default(),
            bootstrap: 0,
            rural_minority: false,
            plan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub scenarios: Vec<PolicyScenario>,
    pub report: ReportOptions,
    /// Size of the calibrated population used when no data directory is given.
    pub n_patients: usize,
    /// Baseline disadvantaged use share the calibrated population must match.
    pub target_share: f64,
    /// Who receives the reduced inpatient rate in the baseline policy.
    pub assistance: AssistanceGroup,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            scenarios: vec![
                PolicyScenario::assistance_removal(),
                PolicyScenario::policy_a(),
                PolicyScenario::policy_b(),
            ],
            report: ReportOptions::default(),
            n_patients: 20_000,
            target_share: crate::synth::calibration::TARGET_SHARE,
            assistance: AssistanceGroup::Disadvantaged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesConfig {
    /// Evenly spaced interior points `i / (n + 1)`, `i = 1..=n`.
    pub grid_points: usize,
    /// Explicit grid; overrides `grid_points` when non-empty.
    pub theta_grid: Vec<f64>,
    /// Built-in series sets: weighting, cost_sharing, present_bias, salience, biased_belief.
    pub sets: Vec<String>,
    /// Extra user-defined series.
    pub series: Vec<CurveSpec>,
    pub params: CurveParams,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        CurvesConfig {
            grid_points: 99,
            theta_grid: Vec::new(),
            sets: vec!["weighting".into()],
            series: Vec::new(),
            params: CurveParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = e
                .span()
                .map(|s| key_at(text, s.start))
                .unwrap_or_else(|| "<document>".to_string());
            Error::Config { key, message }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            key: "<document>".into(),
            message: e.to_string(),
        })
    }
}

/// Dotted key of the TOML line holding byte offset `pos`: the nearest
/// preceding table header joined with the key on that line.
fn key_at(text: &str, pos: usize) -> String {
    let pos = pos.min(text.len());
    let line_start = text[..pos].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("").trim();
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string());
    let key = line.split('=').next().unwrap_or("").trim();
    if line.starts_with('[') {
        return line.trim_matches(|c| c == '[' || c == ']').to_string();
    }
    match (table, key.is_empty()) {
        (Some(t), false) => format!("{t}.{key}"),
        (Some(t), true) => t,
        (None, false) => key.to_string(),
        (None, true) => "<document>".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml_str("[population]\nn_patients = 100\nseed = 7\n").unwrap();
        assert_eq!(c.population.n_patients, 100);
        assert_eq!(c.population.seed, 7);
        assert_eq!(c.severity, SeverityConfig::default());
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = RunConfig::from_toml_str("[population]\nseed = 1\nn_patients = \"many\"\n")
            .unwrap_err();
        match err {
            Error::Config { key, message } => {
                assert_eq!(key, "population.n_patients");
                assert!(message.contains("invalid type"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let err = RunConfig::from_toml_str("[populaton]\nseed = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }
}
