//! Binomial-logit maximum likelihood for the weighting and travel-cost
//! parameters.
//!
//! Given cost parameters and the plan, the deterministic utility is linear in
//! the free parameters:
//!
//! ```text
//! v_i = o_i + c_i' x,
//! o_i = (1 - lambda^beta) s theta^beta - (phi_pc / phi_hc) theta^alpha p
//! ```
//!
//! where `c_i` holds `(1 - theta) s / phi_hc` in the slot of the patient's
//! weighting group(s) and `-1 / phi_hc` times the travel-cost indicators. The
//! log-likelihood is therefore globally concave and its gradient and Hessian
//! are exact sums.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bootstrap::{cluster_bootstrap, BootstrapResult};
use super::optim::{max_norm, minimize, BfgsOptions};
use crate::error::{Error, Result};
use crate::model::{
    choice_probability, log_choice_probability, CostParams, InsurancePlan, PatientProfile,
    PreferenceParams,
};
use crate::par;
use crate::rng::{stream, Purpose};

/// Largest free parameter count (extended specification).
const K_MAX: usize = 7;

/// Parameter magnitude treated as divergence.
pub const SEPARATION_BOUND: f64 = 1e3;

#[derive(Debug, Clone, Copy)]
struct Obs {
    offset: f64,
    c: [f64; K_MAX],
    d: f64,
}

/// Patients reduced to the linear-index form of the likelihood.
#[derive(Debug, Clone)]
pub struct ChoiceData {
    obs: Vec<Obs>,
    k: usize,
    rural_minority: bool,
}

impl ChoiceData {
    pub fn build(
        population: &[PatientProfile],
        cp: &CostParams,
        plan: &InsurancePlan,
        rural_minority: bool,
    ) -> Result<Self> {
        if population.is_empty() {
            return Err(Error::Empty("population".into()));
        }
        plan.validate()?;
        let obs = population
            .iter()
            .map(|p| {
                let phi_hc = plan.phi_hc_for(p);
                let th = p.theta.eval();
                let s = cp.s(p.facility);
                let offset = cp.saving_share() * s * th.powf(cp.beta) - plan.phi_pc / phi_hc * th.powf(cp.alpha) * cp.p_ratio;
                let w = (1.0 - th) * s / phi_hc;
                let dis = p.disadvantaged();
                let mut c = [0.0; K_MAX];
                let travel_at = if rural_minority {
                    if p.minority && !dis {
                        return Err(Error::Data(format!(
                            "patient {} is minority but not disadvantaged; minority residents are all distant",
                            p.id
                        )));
                    }
                    c[2] = if p.rural_hukou { w } else { 0.0 };
                    c[3] = if p.minority { w } else { 0.0 };
                    4
                } else {
                    2
                };
                c[if dis { 1 } else { 0 }] = w;
                c[travel_at] = -1.0 / phi_hc;
                c[travel_at + 1] = if p.high_income { -1.0 / phi_hc } else { 0.0 };
                c[travel_at + 2] = if p.male { -1.0 / phi_hc } else { 0.0 };
                Ok(Obs { offset, c, d: p.d() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChoiceData {
            obs,
            k: if rural_minority { 7 } else { 5 },
            rural_minority,
        })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.k
    }

    pub fn rural_minority(&self) -> bool {
        self.rural_minority
    }

    /// Dataset made of the listed observations (with repetition).
    pub fn subset(&self, idx: &[usize]) -> Self {
        ChoiceData {
            obs: idx.iter().map(|&i| self.obs[i]).collect(),
            k: self.k,
            rural_minority: self.rural_minority,
        }
    }

    /// Deterministic utility of observation `i` at `x`.
    pub fn utility(&self, i: usize, x: &[f64]) -> f64 {
        let o = &self.obs[i];
        o.offset + (0..self.k).map(|j| o.c[j] * x[j]).sum::<f64>()
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        let k = self.k;
        par::sum_by(&self.obs, |o| {
            let v = o.offset + (0..k).map(|j| o.c[j] * x[j]).sum::<f64>();
            o.d * log_choice_probability(v) + (1.0 - o.d) * log_choice_probability(-v)
        })
    }

    /// Log-likelihood and its gradient; slot 0 of the reduction is the value.
    pub fn loglik_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let k = self.k;
        let acc = par::sum_into(&self.obs, k + 1, |o, acc| {
            let v = o.offset + (0..k).map(|j| o.c[j] * x[j]).sum::<f64>();
            acc[0] += o.d * log_choice_probability(v) + (1.0 - o.d) * log_choice_probability(-v);
            let r = o.d - choice_probability(v);
            for j in 0..k {
                acc[j + 1] += r * o.c[j];
            }
        });
        (acc[0], acc[1..].to_vec())
    }

    /// Hessian `-sum sigma (1 - sigma) c c'`.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let k = self.k;
        let acc = par::sum_into(&self.obs, k * k, |o, acc| {
            let v = o.offset + (0..k).map(|j| o.c[j] * x[j]).sum::<f64>();
            let sg = choice_probability(v);
            let w = sg * (1.0 - sg);
            for a in 0..k {
                for b in 0..k {
                    acc[a * k + b] -= w * o.c[a] * o.c[b];
                }
            }
        });
        DMatrix::from_row_slice(k, k, &acc)
    }

    /// Rejects samples that cannot identify every free parameter.
    pub fn check_identification(&self) -> Result<()> {
        let first = self.obs[0].d;
        if self.obs.iter().all(|o| o.d == first) {
            return Err(Error::Separation(format!(
                "every observed decision equals {first}; the likelihood has no interior maximum"
            )));
        }
        let names = PreferenceParams::names(self.rural_minority);
        let offset = if self.rural_minority { 4 } else { 2 };
        for (j, name) in names.iter().enumerate() {
            let nonzero = self.obs.iter().filter(|o| o.c[j] != 0.0).count();
            // Travel indicators need both values present; weighting slots need any support.
            let varies = if j > offset {
                nonzero > 0 && nonzero < self.obs.len()
            } else {
                nonzero > 0
            };
            if !varies {
                return Err(Error::NotIdentified((*name).to_string()));
            }
        }
        Ok(())
    }
}

/// Log-likelihood and gradient (over the active parameters) of `pp` on `population`.
pub fn loglik_and_grad(
    pp: &PreferenceParams,
    population: &[PatientProfile],
    cp: &CostParams,
    plan: &InsurancePlan,
) -> Result<(f64, Vec<f64>)> {
    let data = ChoiceData::build(population, cp, plan, pp.rural_minority)?;
    Ok(data.loglik_grad(&pp.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub starts: usize,
    pub perturbation: f64,
    pub seed: u64,
    /// Converged when the max-norm of the summed-likelihood gradient is below this.
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 5,
            perturbation: 0.05,
            seed: 0,
            gtol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub names: Vec<String>,
    pub params: PreferenceParams,
    pub loglik: f64,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
    pub n_obs: usize,
    /// Final log-likelihood of each start, in start order.
    pub start_logliks: Vec<f64>,
    #[serde(default)]
    pub bootstrap_se: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub n_bootstrap: usize,
    #[serde(default)]
    pub bootstrap_dropped: usize,
}

impl LogitFit {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.params.get(name)
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.bootstrap_se.as_ref()?.get(name).copied()
    }
}

struct SingleFit {
    x: Vec<f64>,
    loglik: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

fn diverged(x: &[f64]) -> bool {
    x.iter()
        .any(|v| !v.is_finite() || v.abs() > SEPARATION_BOUND)
}

fn separation_error(x: &[f64], names: &[&str]) -> Error {
    let worst = x
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| names[i])
        .unwrap_or("?");
    Error::Separation(format!(
        "parameter `{worst}` diverged beyond {SEPARATION_BOUND}"
    ))
}

/// Quasi-Newton on the mean log-likelihood, then Newton steps on the exact
/// Hessian until the summed gradient meets `gtol`.
fn fit_from(data: &ChoiceData, x0: &[f64], opts: &FitOptions) -> Result<SingleFit> {
    let names = PreferenceParams::names(data.rural_minority);
    let n = data.len() as f64;
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        gtol: 1e-10,
        ..Default::default()
    };
    let min = minimize(
        |x: &[f64]| {
            if diverged(x) {
                return (f64::INFINITY, vec![f64::NAN; x.len()]);
            }
            let (l, g) = data.loglik_grad(x);
            (-l / n, g.iter().map(|v| -v / n).collect())
        },
        x0,
        &bfgs,
    );
    if diverged(&min.x) {
        return Err(separation_error(&min.x, names));
    }
    let mut x = min.x;
    let mut iterations = min.iterations;
    let (mut l, mut g) = data.loglik_grad(&x);
    for _ in 0..50 {
        if max_norm(&g) < opts.gtol {
            break;
        }
        let h = data.hessian(&x);
        let Some(step) = (-h)
            .cholesky()
            .map(|c| c.solve(&DVector::from_column_slice(&g)))
        else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let (ln, gn) = data.loglik_grad(&xn);
            if ln.is_finite() && ln >= l - 1e-12 * l.abs() {
                improved = max_norm(&gn) < max_norm(&g) || ln > l;
                x = xn;
                l = ln;
                g = gn;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !improved {
            break;
        }
        if diverged(&x) {
            return Err(separation_error(&x, names));
        }
    }
    let grad_norm = max_norm(&g);
    Ok(SingleFit {
        converged: grad_norm < opts.gtol,
        x,
        loglik: l,
        grad_norm,
        iterations,
    })
}

/// Starting points: `init` first, then uniform perturbations of half-width
/// `opts.perturbation` from the multi-start stream.
pub fn start_points(init: &[f64], opts: &FitOptions) -> Vec<Vec<f64>> {
    (0..opts.starts.max(1))
        .map(|s| {
            if s == 0 {
                init.to_vec()
            } else {
                let mut rng = stream(opts.seed, Purpose::MultiStart, s as u64);
                init.iter()
                    .map(|v| v + opts.perturbation * (2.0 * rng.random::<f64>() - 1.0))
                    .collect()
            }
        })
        .collect()
}

/// Default initialization: every weighting parameter 0, every travel cost 0.1.
pub fn default_init(rural_minority: bool) -> PreferenceParams {
    PreferenceParams {
        gamma_h: 0.0,
        gamma_l: 0.0,
        gamma_r: 0.0,
        gamma_m: 0.0,
        t_b: 0.1,
        t_h: 0.1,
        t_m: 0.1,
        rural_minority,
    }
}

/// Multi-start maximum likelihood on prepared data.
pub fn fit_choice_data(
    data: &ChoiceData,
    init: &PreferenceParams,
    opts: &FitOptions,
) -> Result<LogitFit> {
    if init.rural_minority != data.rural_minority {
        return Err(Error::param(
            "init",
            "specification differs from the prepared data",
        ));
    }
    data.check_identification()?;
    let starts = start_points(&init.to_vec(), opts);
    let fits = par::map(&starts, |x0| fit_from(data, x0, opts));
    let mut best: Option<SingleFit> = None;
    let mut start_logliks = Vec::with_capacity(fits.len());
    let mut first_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                start_logliks.push(f.loglik);
                if best.as_ref().is_none_or(|b| f.loglik > b.loglik) {
                    best = Some(f);
                }
            }
            Err(e) => {
                start_logliks.push(f64::NAN);
                first_err.get_or_insert(e);
            }
        }
    }
    let best = match (best, first_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(Error::Estimation("no start produced a fit".into())),
    };
    if !best.converged {
        log::warn!(
            "logit fit did not converge: gradient max-norm {:.3e}",
            best.grad_norm
        );
    }
    Ok(LogitFit {
        names: PreferenceParams::names(data.rural_minority)
            .iter()
            .map(|s| s.to_string())
            .collect(),
        params: PreferenceParams::from_vec(&best.x, data.rural_minority),
        loglik: best.loglik,
        converged: best.converged,
        grad_norm: best.grad_norm,
        iterations: best.iterations,
        n_obs: data.len(),
        start_logliks,
        bootstrap_se: None,
        n_bootstrap: 0,
        bootstrap_dropped: 0,
    })
}

/// Maximum-likelihood estimates of the preference parameters.
pub fn fit_logit_mle(
    population: &[PatientProfile],
    cp: &CostParams,
    plan: &InsurancePlan,
    init: &PreferenceParams,
    opts: &FitOptions,
) -> Result<LogitFit> {
    let data = ChoiceData::build(population, cp, plan, init.rural_minority)?;
    fit_choice_data(&data, init, opts)
}

/// Patient-level bootstrap of a fit: each replicate refits from the point
/// estimate with a single start; non-converged replicates are dropped.
pub fn bootstrap_logit(
    data: &ChoiceData,
    fit: &LogitFit,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let x0 = fit.params.to_vec();
    let opts = FitOptions {
        starts: 1,
        ..Default::default()
    };
    cluster_bootstrap(data.len(), b, seed, |idx| {
        let sub = data.subset(idx);
        sub.check_identification()?;
        let f = fit_from(&sub, &x0, &opts)?;
        if !f.converged {
            return Err(Error::Estimation(format!(
                "replicate gradient {:.2e}",
                f.grad_norm
            )));
        }
        Ok(f.x)
    })
}

/// Attaches bootstrap standard errors to `fit`.
pub fn with_bootstrap(
    mut fit: LogitFit,
    data: &ChoiceData,
    b: usize,
    seed: u64,
) -> Result<LogitFit> {
    let boot = bootstrap_logit(data, &fit, b, seed)?;
    fit.bootstrap_se = Some(
        fit.names
            .iter()
            .cloned()
            .zip(boot.se.iter().copied())
            .collect(),
    );
    fit.n_bootstrap = boot.replicates;
    fit.bootstrap_dropped = boot.dropped;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{published, utility_insured, Facility, Severity};

    fn toy(n: usize, seed: u64) -> Vec<PatientProfile> {
        let mut rng = stream(seed, Purpose::Oracle, 0);
        (0..n)
            .map(|i| {
                let distant = rng.random::<f64>() < 0.4;
                let poor = rng.random::<f64>() < 0.3;
                PatientProfile {
                    id: i as u64,
                    theta: Severity::new(0.05 + 0.9 * rng.random::<f64>()).unwrap(),
                    facility: Facility::ALL[rng.random_range(0..4)],
                    poor_household: poor,
                    distant,
                    rural_hukou: rng.random::<f64>() < 0.6,
                    urban: false,
                    minority: distant && rng.random::<f64>() < 0.3,
                    male: rng.random::<f64>() < 0.5,
                    high_income: !poor && rng.random::<f64>() < 0.5,
                    age: 70.0,
                    distance_km: 3.0,
                    used_ambulatory: rng.random::<f64>() < 0.5,
                }
            })
            .collect()
    }

    #[test]
    fn linear_index_matches_model_utility() {
        let pop = toy(300, 1);
        let cp = published::cost_params();
        let plan = published::plan();
        for pp in [
            published::preference_params(),
            published::preference_params_rural_minority(),
        ] {
            let data = ChoiceData::build(&pop, &cp, &plan, pp.rural_minority).unwrap();
            let x = pp.to_vec();
            for (i, p) in pop.iter().enumerate() {
                let v = utility_insured(p, &cp, &pp, &plan).unwrap();
                assert!((data.utility(i, &x) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_patient_at_zero_utility() {
        let cp = published::cost_params();
        let plan = published::plan();
        let mut pop = toy(1, 2);
        pop[0].used_ambulatory = true;
        let data = ChoiceData::build(&pop, &cp, &plan, false).unwrap();
        // Choose travel cost so that v = 0 exactly.
        let mut x = vec![0.0; 5];
        let o = data.obs[0];
        x[2] = -o.offset / o.c[2];
        let (l, _) = data.loglik_grad(&x);
        assert!((l - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pop = toy(500, 3);
        let cp = published::cost_params();
        let plan = published::plan();
        let data = ChoiceData::build(&pop, &cp, &plan, true).unwrap();
        let x = published::preference_params_rural_minority().to_vec();
        let (_, g) = data.loglik_grad(&x);
        let h = 1e-6;
        for j in 0..7 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (data.loglik(&up) - data.loglik(&dn)) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() / g[j].abs().max(1.0) < 1e-6,
                "{j}: {fd} vs {}",
                g[j]
            );
        }
    }

    #[test]
    fn duplicated_data_doubles_loglik() {
        let pop = toy(200, 4);
        let cp = published::cost_params();
        let plan = published::plan();
        let twice: Vec<_> = pop.iter().chain(pop.iter()).cloned().collect();
        let pp = published::preference_params();
        let (l1, g1) = loglik_and_grad(&pp, &pop, &cp, &plan).unwrap();
        let (l2, g2) = loglik_and_grad(&pp, &twice, &cp, &plan).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-9 * l1.abs());
        for (a, b) in g1.iter().zip(&g2) {
            assert!((b - 2.0 * a).abs() < 1e-9 * a.abs().max(1.0));
        }
        assert!(l1 < 0.0);
    }

    #[test]
    fn all_zero_decisions_is_separation() {
        let mut pop = toy(100, 5);
        for p in &mut pop {
            p.used_ambulatory = false;
        }
        let r = fit_logit_mle(
            &pop,
            &published::cost_params(),
            &published::plan(),
            &default_init(false),
            &FitOptions::default(),
        );
        assert!(matches!(r, Err(Error::Separation(_))));
    }

    #[test]
    fn missing_group_is_not_identified() {
        let mut pop = toy(100, 6);
        for p in &mut pop {
            p.male = false;
        }
        let r = fit_logit_mle(
            &pop,
            &published::cost_params(),
            &published::plan(),
            &default_init(false),
            &FitOptions::default(),
        );
        assert!(matches!(r, Err(Error::NotIdentified(ref n)) if n == "t_m"));
    }

    #[test]
    fn fit_reaches_first_order_condition() {
        let pop = toy(2000, 7);
        let cp = published::cost_params();
        let plan = published::plan();
        let fit = fit_logit_mle(
            &pop,
            &cp,
            &plan,
            &default_init(false),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm < 1e-6);
        assert_eq!(fit.start_logliks.len(), 5);
        let (l, _) = loglik_and_grad(&fit.params, &pop, &cp, &plan).unwrap();
        assert!((l - fit.loglik).abs() < 1e-9);

        let mut shuffled = pop.clone();
        shuffled.reverse();
        let refit = fit_logit_mle(
            &shuffled,
            &cp,
            &plan,
            &default_init(false),
            &FitOptions::default(),
        )
        .unwrap();
        for (a, b) in fit.params.to_vec().iter().zip(refit.params.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
