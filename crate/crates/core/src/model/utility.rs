use super::{CostParams, Facility, InsurancePlan, PatientProfile, PreferenceParams, Severity};
use crate::error::{Error, Result};

/// Ambulatory-care cost `theta^alpha * p_ratio`.
pub fn ambulatory_cost(theta: Severity, cp: &CostParams) -> f64 {
    theta.eval().powf(cp.alpha) * cp.p_ratio
}

/// Expected hospitalization cost at `facility`. Ambulatory care lowers the
/// effective severity from `theta` to `lambda * theta`.
pub fn inpatient_cost(
    theta: Severity,
    cp: &CostParams,
    facility: Facility,
    used_ambulatory: bool,
) -> f64 {
    let th = theta.eval();
    let effective = if used_ambulatory { cp.lambda * th } else { th };
    cp.s(facility) * effective.powf(cp.beta)
}

/// Weighting parameter of the patient's group.
pub fn gamma_for(p: &PatientProfile, pp: &PreferenceParams) -> Result<f64> {
    let disadvantaged = p.disadvantaged();
    let mut gamma = if disadvantaged {
        pp.gamma_l
    } else {
        pp.gamma_h
    };
    if pp.rural_minority {
        if p.minority && !disadvantaged {
            return Err(Error::Data(format!(
                "patient {} is minority but not disadvantaged; minority residents are all distant",
                p.id
            )));
        }
        if p.rural_hukou {
            gamma += pp.gamma_r;
        }
        if p.minority {
            gamma += pp.gamma_m;
        }
    }
    Ok(gamma)
}

/// Travel cost: benchmark plus high-income and male adjustments.
pub fn travel_cost_for(p: &PatientProfile, pp: &PreferenceParams) -> f64 {
    let mut t = pp.t_b;
    if p.high_income {
        t += pp.t_h;
    }
    if p.male {
        t += pp.t_m;
    }
    t
}

/// Net utility of ambulatory care without insurance; the patient uses care iff
/// it is positive.
pub fn utility_uninsured(
    theta: Severity,
    cp: &CostParams,
    facility: Facility,
    gamma: f64,
    travel: f64,
) -> f64 {
    let th = theta.eval();
    cp.saving_share() * cp.s(facility) * th.powf(cp.beta) + gamma * (1.0 - th)
        - (th.powf(cp.alpha) * cp.p_ratio + travel)
}

/// Deterministic utility under cost-sharing `phi_pc`, `phi_hc`. The weighting
/// term is scaled by the facility multiplier.
#[allow(clippy::too_many_arguments)]
pub fn utility_insured_with(
    theta: Severity,
    cp: &CostParams,
    facility: Facility,
    gamma: f64,
    travel: f64,
    phi_pc: f64,
    phi_hc: f64,
) -> f64 {
    let th = theta.eval();
    let s = cp.s(facility);
    cp.saving_share() * s * th.powf(cp.beta) + gamma * (1.0 - th) * s / phi_hc
        - (phi_pc / phi_hc) * th.powf(cp.alpha) * cp.p_ratio
        - travel / phi_hc
}

/// Deterministic utility `v` of a patient under `plan`.
pub fn utility_insured(
    p: &PatientProfile,
    cp: &CostParams,
    pp: &PreferenceParams,
    plan: &InsurancePlan,
) -> Result<f64> {
    let phi_hc = plan.phi_hc_for(p);
    if !(phi_hc > 0.0) {
        return Err(Error::param(
            "phi_hc",
            "inpatient cost-sharing must be positive",
        ));
    }
    let gamma = gamma_for(p, pp)?;
    let travel = travel_cost_for(p, pp);
    Ok(utility_insured_with(
        p.theta,
        cp,
        p.facility,
        gamma,
        travel,
        plan.phi_pc,
        phi_hc,
    ))
}

/// Logistic choice probability, evaluated without overflow.
pub fn choice_probability(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `ln sigma(v)`; use `log_choice_probability(-v)` for `ln(1 - sigma(v))`.
pub fn log_choice_probability(v: f64) -> f64 {
    if v >= 0.0 {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}

/// Money value of the prevention motive, `gamma (1 - theta) s` in RMB.
/// Positive values are what the patient would pay on top of expected costs;
/// negative values are the savings required before care is used.
pub fn prevention_value_rmb(
    p: &PatientProfile,
    cp: &CostParams,
    pp: &PreferenceParams,
) -> Result<f64> {
    let gamma = gamma_for(p, pp)?;
    Ok(gamma * (1.0 - p.theta.eval()) * cp.s(p.facility) * cp.money_scale_rmb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::published;
    use approx::assert_abs_diff_eq;

    fn patient(theta: f64, facility: Facility) -> PatientProfile {
        PatientProfile {
            id: 1,
            theta: Severity::new(theta).unwrap(),
            facility,
            poor_household: false,
            distant: false,
            rural_hukou: false,
            urban: true,
            minority: false,
            male: false,
            high_income: false,
            age: 70.0,
            distance_km: 5.0,
            used_ambulatory: false,
        }
    }

    fn curve_params() -> CostParams {
        CostParams::from_lambda(1.0, 1.5, 0.85, [1.0; 4], 0.12, 6300.0).unwrap()
    }

    #[test]
    fn ambulatory_cost_examples() {
        let cp = published::cost_params();
        let near_one = Severity::new(1.0 - 1e-12).unwrap();
        assert_abs_diff_eq!(ambulatory_cost(near_one, &cp), 0.7795, epsilon = 1e-5);
        let v = ambulatory_cost(Severity::new(0.48).unwrap(), &cp);
        // exp(0.882 ln 0.48) * 0.7795 = 0.408014...
        assert_abs_diff_eq!(v, 0.4080, epsilon = 5e-5);
        assert_abs_diff_eq!(
            ambulatory_cost(Severity::new(0.5).unwrap(), &curve_params()),
            0.06,
            epsilon = 1e-12
        );
    }

    #[test]
    fn inpatient_cost_examples() {
        let cp = published::cost_params();
        let near_one = Severity::new(1.0 - 1e-12).unwrap();
        assert_abs_diff_eq!(
            inpatient_cost(near_one, &cp, Facility::Thc, false),
            1.0,
            epsilon = 1e-5
        );
        assert_abs_diff_eq!(
            inpatient_cost(near_one, &cp, Facility::Thc, true),
            0.7768,
            epsilon = 5e-5
        );
        let cp = curve_params();
        let th = Severity::new(0.5).unwrap();
        let without = inpatient_cost(th, &cp, Facility::Thc, false);
        let with = inpatient_cost(th, &cp, Facility::Thc, true);
        assert_abs_diff_eq!((without - with) / without, 0.2163, epsilon = 5e-5);
    }

    #[test]
    fn gamma_groups() {
        let pp = published::preference_params();
        let mut p = patient(0.48, Facility::General);
        assert_eq!(gamma_for(&p, &pp).unwrap(), 0.0225);
        p.distant = true;
        assert_eq!(gamma_for(&p, &pp).unwrap(), -0.0166);

        let ext = published::preference_params_rural_minority();
        p.rural_hukou = true;
        p.minority = true;
        assert_abs_diff_eq!(gamma_for(&p, &ext).unwrap(), -0.0519, epsilon = 1e-12);
        p.distant = false;
        assert!(gamma_for(&p, &ext).is_err());
        // Without the extension the same flags are ignored.
        assert_eq!(gamma_for(&p, &pp).unwrap(), 0.0225);
    }

    #[test]
    fn travel_cost_examples() {
        let pp = published::preference_params();
        let mut p = patient(0.48, Facility::Thc);
        p.poor_household = true;
        assert_abs_diff_eq!(travel_cost_for(&p, &pp), 0.1001, epsilon = 1e-12);
        assert_abs_diff_eq!(travel_cost_for(&p, &pp) * 6300.0, 630.63, epsilon = 1e-9);
        p.poor_household = false;
        p.high_income = true;
        assert_abs_diff_eq!(travel_cost_for(&p, &pp), 0.5855, epsilon = 1e-12);
        p.high_income = false;
        p.male = true;
        assert_abs_diff_eq!(travel_cost_for(&p, &pp), 0.2167, epsilon = 1e-12);
    }

    #[test]
    fn insured_collapses_to_uninsured_at_unit_cost_sharing() {
        let cp = published::cost_params();
        let pp = published::preference_params();
        let plan = InsurancePlan::uninsured();
        for &th in &[0.05, 0.3, 0.48, 0.9] {
            let p = patient(th, Facility::Thc);
            let u = utility_uninsured(p.theta, &cp, Facility::Thc, 0.0225, 0.1001);
            let v = utility_insured(&p, &cp, &pp, &plan).unwrap();
            assert_abs_diff_eq!(u, v, epsilon = 1e-15);
        }
    }

    #[test]
    fn price_derivative_is_minus_ambulatory_cost() {
        let cp = published::cost_params();
        let th = Severity::new(0.48).unwrap();
        let h = 1e-6;
        // With phi_hc = 1, phi_pc is the cost-sharing ratio.
        let v = |ratio: f64, gamma: f64| {
            utility_insured_with(th, &cp, Facility::General, gamma, 0.1, ratio, 1.0)
        };
        for gamma in [0.0225, -0.0166] {
            let fd = (v(1.0 + h, gamma) - v(1.0 - h, gamma)) / (2.0 * h);
            assert_abs_diff_eq!(fd, -0.4080, epsilon = 5e-5);
            assert_abs_diff_eq!(fd, -ambulatory_cost(th, &cp), epsilon = 1e-7);
        }
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(choice_probability(0.0), 0.5);
        assert_eq!(choice_probability(700.0), 1.0);
        assert!(choice_probability(-700.0) > 0.0);
        assert!(choice_probability(-700.0) < 1e-300);
        assert!(choice_probability(f64::INFINITY) == 1.0);
        assert!(choice_probability(f64::NEG_INFINITY) == 0.0);
        assert_abs_diff_eq!(log_choice_probability(0.0), 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(log_choice_probability(-700.0), -700.0, epsilon = 1e-12);
        assert!(log_choice_probability(700.0).abs() < 1e-300);
    }

    #[test]
    fn prevention_values() {
        let cp = published::cost_params();
        let pp = published::preference_params();
        let mut p = patient(0.48, Facility::General);
        assert_abs_diff_eq!(
            prevention_value_rmb(&p, &cp, &pp).unwrap(),
            725.0,
            epsilon = 1.0
        );
        p.poor_household = true;
        assert_abs_diff_eq!(
            prevention_value_rmb(&p, &cp, &pp).unwrap(),
            -534.9,
            epsilon = 0.5
        );
        p.theta = Severity::new(1.0 - 1e-12).unwrap();
        assert!(prevention_value_rmb(&p, &cp, &pp).unwrap().abs() < 0.01);
    }
}
