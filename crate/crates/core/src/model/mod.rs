//! Closed-form model quantities: cost functions, utilities, choice
//! probabilities, behavioral variants and utility curves.

mod curves;
mod utility;
mod variant;

pub use curves::{
    biased_belief_series, cost_sharing_series, present_bias_series, salience_series, utility_curve,
    weighting_series, zero_crossing, CurveParams, CurvePoint, CurveSeries, CurveSpec,
};
pub use utility::{
    ambulatory_cost, choice_probability, gamma_for, inpatient_cost, log_choice_probability,
    prevention_value_rmb, travel_cost_for, utility_insured, utility_insured_with,
    utility_uninsured,
};
pub use variant::{utility_variant, BehavioralVariant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clamp applied to severity before any power or log.
pub const THETA_CLAMP: f64 = 1e-6;

/// Default RMB value of the township-clinic hospitalization ceiling.
pub const DEFAULT_MONEY_SCALE_RMB: f64 = 6300.0;

/// Largest tolerated gap between `lambda` and `exp(rho / beta)`; the
/// published bundle carries values rounded to three decimals.
pub const LAMBDA_CONSISTENCY_TOL: f64 = 5e-4;

/// Latent disease severity on the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Severity(f64);

impl Severity {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() && theta > 0.0 && theta < 1.0 {
            Ok(Severity(theta))
        } else {
            Err(Error::SeverityOutOfRange(theta))
        }
    }

    /// Maps any finite value into the clamped interior `[1e-6, 1 - 1e-6]`.
    pub fn clamped(theta: f64) -> Self {
        Severity(theta.clamp(THETA_CLAMP, 1.0 - THETA_CLAMP))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The value used inside powers and logs.
    pub fn eval(self) -> f64 {
        self.0.clamp(THETA_CLAMP, 1.0 - THETA_CLAMP)
    }

    pub fn at_clamp_boundary(self) -> bool {
        self.0 <= THETA_CLAMP || self.0 >= 1.0 - THETA_CLAMP
    }
}

impl TryFrom<f64> for Severity {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Severity::new(v)
    }
}

impl From<Severity> for f64 {
    fn from(s: Severity) -> f64 {
        s.0
    }
}

/// Facility type where a patient is hospitalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Facility {
    /// Township health center; the cost benchmark.
    Thc = 1,
    /// Traditional Chinese medicine hospital.
    Tcm = 2,
    /// County general hospital.
    General = 3,
    /// Non-local tertiary hospital.
    NonLocal = 4,
}

impl Facility {
    pub const ALL: [Facility; 4] = [
        Facility::Thc,
        Facility::Tcm,
        Facility::General,
        Facility::NonLocal,
    ];

    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: usize) -> Option<Facility> {
        Facility::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Facility::Thc => "thc",
            Facility::Tcm => "tcm",
            Facility::General => "general",
            Facility::NonLocal => "nonlocal",
        }
    }
}

impl TryFrom<u8> for Facility {
    type Error = Error;
    fn try_from(code: u8) -> Result<Self> {
        match code {
            1..=4 => Ok(Facility::ALL[code as usize - 1]),
            _ => Err(Error::Data(format!("facility type {code} is not in 1..=4"))),
        }
    }
}

impl From<Facility> for u8 {
    fn from(f: Facility) -> u8 {
        f.code()
    }
}

/// One patient: group flags, severity, facility and observed decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub id: u64,
    pub theta: Severity,
    pub facility: Facility,
    /// Welfare-program household; drives the inpatient cost-sharing group.
    pub poor_household: bool,
    /// Lives more than 12 km from the county center.
    pub distant: bool,
    pub rural_hukou: bool,
    pub urban: bool,
    pub minority: bool,
    pub male: bool,
    pub high_income: bool,
    pub age: f64,
    pub distance_km: f64,
    /// Observed ambulatory-care use.
    pub used_ambulatory: bool,
}

impl PatientProfile {
    /// Low income or distant residence.
    pub fn disadvantaged(&self) -> bool {
        self.poor_household || self.distant
    }

    pub fn d(&self) -> f64 {
        if self.used_ambulatory {
            1.0
        } else {
            0.0
        }
    }
}

/// Cost-function parameters, all monetary quantities in units of the
/// township-clinic ceiling unless suffixed `_rmb`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub rho: f64,
    /// Facility ceiling multipliers, indexed by `Facility::index`; THC is 1.
    pub s_mult: [f64; 4],
    /// Ambulatory ceiling over the THC hospitalization ceiling.
    pub p_ratio: f64,
    pub money_scale_rmb: f64,
}

impl CostParams {
    /// Builds parameters from the regression coefficients, deriving
    /// `lambda = exp(rho / beta)`.
    pub fn from_regression(
        alpha: f64,
        beta: f64,
        rho: f64,
        s_mult: [f64; 4],
        p_ratio: f64,
        money_scale_rmb: f64,
    ) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::param(
                "beta",
                format!("must be positive to derive lambda, got {beta}"),
            ));
        }
        let cp = CostParams {
            alpha,
            beta,
            lambda: (rho / beta).exp(),
            rho,
            s_mult,
            p_ratio,
            money_scale_rmb,
        };
        cp.validate()?;
        Ok(cp)
    }

    /// Builds parameters from a given effectiveness, deriving `rho = beta ln lambda`.
    pub fn from_lambda(
        alpha: f64,
        beta: f64,
        lambda: f64,
        s_mult: [f64; 4],
        p_ratio: f64,
        money_scale_rmb: f64,
    ) -> Result<Self> {
        let cp = CostParams {
            alpha,
            beta,
            lambda,
            rho: beta * lambda.ln(),
            s_mult,
            p_ratio,
            money_scale_rmb,
        };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::param("alpha", "must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::param("beta", "must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::param(
                "lambda",
                format!("must lie in (0,1), got {}", self.lambda),
            ));
        }
        if self.s_mult[0] != 1.0 {
            return Err(Error::param("s_mult", "THC multiplier must be exactly 1"));
        }
        if self.s_mult.iter().any(|s| !(*s >= 1.0)) {
            return Err(Error::param("s_mult", "multipliers must be >= 1"));
        }
        if !(self.p_ratio > 0.0) {
            return Err(Error::param("p_ratio", "must be positive"));
        }
        if !(self.money_scale_rmb > 0.0) {
            return Err(Error::param("money_scale_rmb", "must be positive"));
        }
        let gap = self.lambda_gap();
        if gap > LAMBDA_CONSISTENCY_TOL {
            return Err(Error::param(
                "lambda",
                format!(
                    "inconsistent with exp(rho/beta) = {:.6} (gap {gap:.2e})",
                    (self.rho / self.beta).exp()
                ),
            ));
        }
        Ok(())
    }

    /// |lambda - exp(rho / beta)|.
    pub fn lambda_gap(&self) -> f64 {
        (self.lambda - (self.rho / self.beta).exp()).abs()
    }

    pub fn s(&self, facility: Facility) -> f64 {
        self.s_mult[facility.index()]
    }

    /// Share of the inpatient cost avoided by ambulatory care, `1 - lambda^beta`.
    pub fn saving_share(&self) -> f64 {
        1.0 - self.lambda.powf(self.beta)
    }

    pub fn to_rmb(&self, normalized: f64) -> f64 {
        normalized * self.money_scale_rmb
    }
}

/// Weighting and travel-cost parameters of the choice model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceParams {
    pub gamma_h: f64,
    pub gamma_l: f64,
    #[serde(default)]
    pub gamma_r: f64,
    #[serde(default)]
    pub gamma_m: f64,
    pub t_b: f64,
    pub t_h: f64,
    pub t_m: f64,
    /// Rural-hukou and minority weighting adjustments are active.
    #[serde(default)]
    pub rural_minority: bool,
}

impl PreferenceParams {
    pub const BASE_NAMES: [&'static str; 5] = ["gamma_h", "gamma_l", "t_b", "t_h", "t_m"];
    pub const EXTENDED_NAMES: [&'static str; 7] = [
        "gamma_h", "gamma_l", "gamma_r", "gamma_m", "t_b", "t_h", "t_m",
    ];

    /// Names of the free parameters, in vector order.
    pub fn names(rural_minority: bool) -> &'static [&'static str] {
        if rural_minority {
            &Self::EXTENDED_NAMES
        } else {
            &Self::BASE_NAMES
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        if self.rural_minority {
            vec![
                self.gamma_h,
                self.gamma_l,
                self.gamma_r,
                self.gamma_m,
                self.t_b,
                self.t_h,
                self.t_m,
            ]
        } else {
            vec![self.gamma_h, self.gamma_l, self.t_b, self.t_h, self.t_m]
        }
    }

    pub fn from_vec(x: &[f64], rural_minority: bool) -> Self {
        if rural_minority {
            PreferenceParams {
                gamma_h: x[0],
                gamma_l: x[1],
                gamma_r: x[2],
                gamma_m: x[3],
                t_b: x[4],
                t_h: x[5],
                t_m: x[6],
                rural_minority,
            }
        } else {
            PreferenceParams {
                gamma_h: x[0],
                gamma_l: x[1],
                gamma_r: 0.0,
                gamma_m: 0.0,
                t_b: x[2],
                t_h: x[3],
                t_m: x[4],
                rural_minority,
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "gamma_h" => self.gamma_h,
            "gamma_l" => self.gamma_l,
            "gamma_r" => self.gamma_r,
            "gamma_m" => self.gamma_m,
            "t_b" => self.t_b,
            "t_h" => self.t_h,
            "t_m" => self.t_m,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rural_minority && (self.gamma_r != 0.0 || self.gamma_m != 0.0) {
            return Err(Error::param(
                "gamma_r/gamma_m",
                "must be zero when the rural/minority extension is disabled",
            ));
        }
        if !(self.t_b >= 0.0) {
            return Err(Error::param(
                "t_b",
                "benchmark travel cost must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Which patients receive the reduced inpatient cost-sharing rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssistanceGroup {
    #[default]
    Poor,
    Disadvantaged,
}

/// Average cost-sharing rates of the insurance plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsurancePlan {
    pub phi_pc: f64,
    pub phi_hc_poor: f64,
    pub phi_hc_regular: f64,
    #[serde(default)]
    pub assistance: AssistanceGroup,
}

impl InsurancePlan {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("phi_pc", self.phi_pc),
            ("phi_hc_poor", self.phi_hc_poor),
            ("phi_hc_regular", self.phi_hc_regular),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParameter {
                    name: "cost_sharing",
                    reason: format!("{name} = {v} must lie in (0, 1]"),
                });
            }
        }
        Ok(())
    }

    pub fn assisted(&self, p: &PatientProfile) -> bool {
        match self.assistance {
            AssistanceGroup::Poor => p.poor_household,
            AssistanceGroup::Disadvantaged => p.disadvantaged(),
        }
    }

    pub fn phi_hc_for(&self, p: &PatientProfile) -> f64 {
        if self.assisted(p) {
            self.phi_hc_poor
        } else {
            self.phi_hc_regular
        }
    }

    /// Uniform plan with both rates equal to one (no insurance).
    pub fn uninsured() -> Self {
        InsurancePlan {
            phi_pc: 1.0,
            phi_hc_poor: 1.0,
            phi_hc_regular: 1.0,
            assistance: AssistanceGroup::Poor,
        }
    }
}

/// Published parameter estimates, used for the bundled
/// defaults and for counterfactual runs without re-estimation.
pub mod published {
    use super::*;

    pub const ALPHA: f64 = 0.882;
    pub const BETA: f64 = 1.489;
    pub const RHO: f64 = -0.253;
    pub const LAMBDA: f64 = 0.844;
    /// Log facility effects from the inpatient cost regression (TCM, general, non-local).
    pub const LN_S: [f64; 3] = [1.574, 2.285, 3.231];
    /// Facility multipliers as tabulated with the parameter specification.
    pub const S_MULT: [f64; 4] = [1.0, 4.816, 9.836, 25.103];
    pub const P_RATIO: f64 = 0.7795;
    pub const PHI_PC: f64 = 0.35;
    pub const PHI_HC_POOR: f64 = 0.15;
    pub const PHI_HC_REGULAR: f64 = 0.41;
    /// Discrete severity values for Mild, Moderate, Severe.
    pub const THETA: [f64; 3] = [0.1, 0.48, 0.72];

    pub fn cost_params() -> CostParams {
        CostParams {
            alpha: ALPHA,
            beta: BETA,
            lambda: LAMBDA,
            rho: RHO,
            s_mult: S_MULT,
            p_ratio: P_RATIO,
            money_scale_rmb: DEFAULT_MONEY_SCALE_RMB,
        }
    }

    pub fn preference_params() -> PreferenceParams {
        PreferenceParams {
            gamma_h: 0.0225,
            gamma_l: -0.0166,
            gamma_r: 0.0,
            gamma_m: 0.0,
            t_b: 0.1001,
            t_h: 0.4854,
            t_m: 0.1166,
            rural_minority: false,
        }
    }

    pub fn preference_params_rural_minority() -> PreferenceParams {
        PreferenceParams {
            gamma_h: 0.0211,
            gamma_l: -0.0134,
            gamma_r: -0.0016,
            gamma_m: -0.0369,
            t_b: 0.0989,
            t_h: 0.4512,
            t_m: 0.1248,
            rural_minority: true,
        }
    }

    pub fn plan() -> InsurancePlan {
        InsurancePlan {
            phi_pc: PHI_PC,
            phi_hc_poor: PHI_HC_POOR,
            phi_hc_regular: PHI_HC_REGULAR,
            assistance: AssistanceGroup::Poor,
        }
    }
}
