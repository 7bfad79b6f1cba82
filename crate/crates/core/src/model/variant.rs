use serde::{Deserialize, Serialize};

use super::{CostParams, Facility, Severity};
use crate::error::{Error, Result};

/// Alternative decision models used to contrast against weighting heterogeneity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehavioralVariant {
    Baseline,
    /// Delayed benefits discounted by `delta` in (0, 1].
    PresentBias {
        delta: f64,
    },
    /// Decisions made on severity `mu * theta`, `mu` in (0, 1].
    Salience {
        mu: f64,
    },
    /// Perceived effectiveness `lambda_tilde` replaces the true one in the benefit.
    BiasedBelief {
        lambda_tilde: f64,
    },
}

impl BehavioralVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BehavioralVariant::Baseline => Ok(()),
            BehavioralVariant::PresentBias { delta } if delta > 0.0 && delta <= 1.0 => Ok(()),
            BehavioralVariant::PresentBias { delta } => {
                Err(Error::param("delta", format!("{delta} outside (0, 1]")))
            }
            BehavioralVariant::Salience { mu } if mu > 0.0 && mu <= 1.0 => Ok(()),
            BehavioralVariant::Salience { mu } => {
                Err(Error::param("mu", format!("{mu} outside (0, 1]")))
            }
            BehavioralVariant::BiasedBelief { lambda_tilde }
                if lambda_tilde > 0.0 && lambda_tilde < 1.0 =>
            {
                Ok(())
            }
            BehavioralVariant::BiasedBelief { lambda_tilde } => Err(Error::param(
                "lambda_tilde",
                format!("{lambda_tilde} outside (0, 1)"),
            )),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            BehavioralVariant::Baseline => "baseline".into(),
            BehavioralVariant::PresentBias { delta } => format!("delta={delta}"),
            BehavioralVariant::Salience { mu } => format!("mu={mu}"),
            BehavioralVariant::BiasedBelief { lambda_tilde } => {
                format!("lambda_tilde={lambda_tilde}")
            }
        }
    }
}

/// Uninsured utility under a behavioral variant. Each variant with its
/// neutral parameter reproduces `utility_uninsured` exactly.
pub fn utility_variant(
    variant: BehavioralVariant,
    theta: Severity,
    cp: &CostParams,
    facility: Facility,
    gamma: f64,
    travel: f64,
) -> Result<f64> {
    variant.validate()?;
    let th = theta.eval();
    let s = cp.s(facility);
    let (decision_theta, benefit_lambda, delta) = match variant {
        BehavioralVariant::Baseline => (th, cp.lambda, 1.0),
        BehavioralVariant::PresentBias { delta } => (th, cp.lambda, delta),
        BehavioralVariant::Salience { mu } => (mu * th, cp.lambda, 1.0),
        BehavioralVariant::BiasedBelief { lambda_tilde } => (th, lambda_tilde, 1.0),
    };
    let benefit = (1.0 - benefit_lambda.powf(cp.beta)) * s * decision_theta.powf(cp.beta)
        + gamma * (1.0 - decision_theta);
    Ok(delta * benefit - (decision_theta.powf(cp.alpha) * cp.p_ratio + travel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{utility_uninsured, zero_crossing};

    fn curve_params() -> CostParams {
        CostParams::from_lambda(1.0, 1.5, 0.85, [1.0; 4], 0.12, 6300.0).unwrap()
    }

    #[test]
    fn neutral_variants_reduce_to_baseline() {
        let cp = curve_params();
        for i in 1..1000 {
            let th = Severity::new(i as f64 / 1000.0).unwrap();
            let base = utility_uninsured(th, &cp, Facility::Thc, 0.12, 0.02);
            for v in [
                BehavioralVariant::Baseline,
                BehavioralVariant::PresentBias { delta: 1.0 },
                BehavioralVariant::Salience { mu: 1.0 },
                BehavioralVariant::BiasedBelief {
                    lambda_tilde: cp.lambda,
                },
            ] {
                let u = utility_variant(v, th, &cp, Facility::Thc, 0.12, 0.02).unwrap();
                assert!((u - base).abs() <= 1e-12, "{v:?} at {th:?}: {u} vs {base}");
            }
        }
    }

    #[test]
    fn salience_pushes_crossing_up() {
        let cp = curve_params();
        let root = |mu: f64| {
            zero_crossing(
                |th| {
                    utility_variant(
                        BehavioralVariant::Salience { mu },
                        Severity::clamped(th),
                        &cp,
                        Facility::Thc,
                        0.0,
                        0.0,
                    )
                    .unwrap()
                },
                1e-4,
                1.0 - 1e-6,
            )
        };
        let base = root(1.0).unwrap();
        let mild = root(0.8).unwrap();
        assert!(mild > base);
        assert!((mild - base / 0.8).abs() < 1e-8);
        // At mu = 0.2 the decision severity never reaches the break-even point.
        assert!(root(0.2).is_none());
    }

    #[test]
    fn pessimistic_belief_shrinks_benefit() {
        let cp = curve_params();
        for i in 1..100 {
            let th = Severity::new(i as f64 / 100.0).unwrap();
            let base = utility_variant(
                BehavioralVariant::Baseline,
                th,
                &cp,
                Facility::Thc,
                0.0,
                0.0,
            )
            .unwrap();
            let biased = utility_variant(
                BehavioralVariant::BiasedBelief {
                    lambda_tilde: 0.925,
                },
                th,
                &cp,
                Facility::Thc,
                0.0,
                0.0,
            )
            .unwrap();
            assert!(biased < base);
        }
    }

    #[test]
    fn invalid_variant_parameters() {
        let cp = curve_params();
        let th = Severity::new(0.5).unwrap();
        assert!(utility_variant(
            BehavioralVariant::PresentBias { delta: 0.0 },
            th,
            &cp,
            Facility::Thc,
            0.0,
            0.0
        )
        .is_err());
        assert!(utility_variant(
            BehavioralVariant::Salience { mu: 1.5 },
            th,
            &cp,
            Facility::Thc,
            0.0,
            0.0
        )
        .is_err());
        assert!(utility_variant(
            BehavioralVariant::BiasedBelief { lambda_tilde: 1.0 },
            th,
            &cp,
            Facility::Thc,
            0.0,
            0.0
        )
        .is_err());
    }
}
