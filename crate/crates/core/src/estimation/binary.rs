//! Binary-outcome regressions (probit and logit) with average marginal effects.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::ols::{collinear_columns, sandwich, OlsSpec, RegressionResult};
use crate::error::{Error, Result};
use crate::model::{choice_probability, log_choice_probability};
use crate::par;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this index the normal log-CDF uses its asymptotic series.
const TAIL_SWITCH: f64 = -8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Probit,
    Logit,
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `ln Phi(z)`, finite for every finite `z`.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z < TAIL_SWITCH {
        // Mills-ratio series: Phi(z) = phi(z)/|z| (1 - 1/z^2 + 3/z^4 - 15/z^6 + ...),
        // truncated after ten terms (error below 1e-10 for z < -8).
        let z2 = z * z;
        let mut term = 1.0;
        let mut series = 1.0;
        for k in 1..10 {
            term *= -((2 * k - 1) as f64) / z2;
            series += term;
        }
        -0.5 * z2 - LN_SQRT_2PI - (-z).ln() + series.ln()
    } else if z > 5.0 {
        (-norm_cdf(-z)).ln_1p()
    } else {
        norm_cdf(z).ln()
    }
}

/// `phi(z) / Phi(z)` evaluated in logs.
fn mills(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - log_norm_cdf(z)).exp()
}

impl Link {
    pub fn cdf(self, z: f64) -> f64 {
        match self {
            Link::Probit => norm_cdf(z),
            Link::Logit => choice_probability(z),
        }
    }

    pub fn pdf(self, z: f64) -> f64 {
        match self {
            Link::Probit => norm_pdf(z),
            Link::Logit => {
                let p = choice_probability(z);
                p * (1.0 - p)
            }
        }
    }

    /// Log-likelihood contribution, score weight `dl/dz` and curvature `d2l/dz2`.
    fn terms(self, z: f64, y: f64) -> (f64, f64, f64) {
        match self {
            Link::Probit => {
                // Outcome 0 is outcome 1 at -z.
                let (q, sign) = if y > 0.5 { (z, 1.0) } else { (-z, -1.0) };
                let m = mills(q);
                (log_norm_cdf(q), sign * m, -m * (q + m))
            }
            Link::Logit => {
                let p = choice_probability(z);
                let ll = y * log_choice_probability(z) + (1.0 - y) * log_choice_probability(-z);
                (ll, y - p, -p * (1.0 - p))
            }
        }
    }
}

/// Options for [`binary_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryOptions {
    pub link: Link,
    pub max_iter: usize,
    /// Converged when the max-norm of the score is below this.
    pub gtol: f64,
    /// Coefficient magnitude treated as divergence.
    pub separation_bound: f64,
}

impl Default for BinaryOptions {
    fn default() -> Self {
        BinaryOptions {
            link: Link::Probit,
            max_iter: 100,
            gtol: 1e-8,
            separation_bound: 50.0,
        }
    }
}

struct Rows<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
}

impl Rows<'_> {
    fn index(&self, b: &DVector<f64>) -> Vec<f64> {
        (self.x * b).iter().copied().collect()
    }

    fn eval(&self, link: Link, b: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let k = self.x.ncols();
        let z = self.index(b);
        let rows: Vec<usize> = (0..self.y.len()).collect();
        let acc = par::sum_into(&rows, 1 + k + k * k, |&i, acc| {
            let (l, s, h) = link.terms(z[i], self.y[i]);
            acc[0] += l;
            for a in 0..k {
                let xa = self.x[(i, a)];
                acc[1 + a] += s * xa;
                for c in 0..k {
                    acc[1 + k + a * k + c] += h * xa * self.x[(i, c)];
                }
            }
        });
        (
            acc[0],
            DVector::from_column_slice(&acc[1..1 + k]),
            DMatrix::from_row_slice(k, k, &acc[1 + k..]),
        )
    }
}

fn is_indicator(col: nalgebra::DVectorView<f64>) -> bool {
    col.iter().all(|v| *v == 0.0 || *v == 1.0)
        && col.iter().any(|v| *v == 1.0)
        && col.iter().any(|v| *v == 0.0)
}

/// Average marginal effects: discrete 0 -> 1 change for indicator columns,
/// mean density times coefficient otherwise. NaN for the intercept.
fn marginal_effects(link: Link, names: &[String], x: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let n = x.nrows();
    let z: Vec<f64> = (x * b).iter().copied().collect();
    (0..x.ncols())
        .map(|j| {
            if names[j] == "const" {
                return f64::NAN;
            }
            if is_indicator(x.column(j)) {
                let total: f64 = (0..n)
                    .map(|i| {
                        let base = z[i] - x[(i, j)] * b[j];
                        link.cdf(base + b[j]) - link.cdf(base)
                    })
                    .sum();
                total / n as f64
            } else {
                z.iter().map(|&zi| link.pdf(zi)).sum::<f64>() / n as f64 * b[j]
            }
        })
        .collect()
}

/// Maximum-likelihood binary regression of `y` (0/1) on the design of `spec`.
///
/// Standard errors are sandwich estimates, clustered when `spec.cluster` is
/// set. Marginal-effect standard errors use the delta method with a
/// central-difference Jacobian.
pub fn binary_fit(y: &[f64], spec: &OlsSpec, opts: &BinaryOptions) -> Result<RegressionResult> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("binary regression sample".into()));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Data("binary outcomes must be 0 or 1".into()));
    }
    if y.iter().all(|v| *v == y[0]) {
        return Err(Error::Separation(format!("every outcome equals {}", y[0])));
    }
    let (names, x) = spec.design(n)?;
    let k = x.ncols();
    if n <= k {
        return Err(Error::Estimation(format!(
            "{n} observations for {k} parameters"
        )));
    }
    let bad = collinear_columns(&names, &x);
    if !bad.is_empty() {
        return Err(Error::RankDeficient(bad));
    }
    for j in 0..k {
        if names[j] == "const" || !is_indicator(x.column(j)) {
            continue;
        }
        for level in [0.0, 1.0] {
            let cell: Vec<f64> = (0..n)
                .filter(|&i| x[(i, j)] == level)
                .map(|i| y[i])
                .collect();
            if cell.iter().all(|v| *v == cell[0]) {
                return Err(Error::Separation(format!(
                    "`{}` = {level} predicts the outcome perfectly ({} rows, all {})",
                    names[j],
                    cell.len(),
                    cell[0]
                )));
            }
        }
    }
    let rows = Rows { x: &x, y };
    let link = opts.link;
    let mut b = DVector::zeros(k);
    let (mut ll, mut g, mut h) = rows.eval(link, &b);
    let mut converged = false;
    for _ in 0..opts.max_iter {
        if g.amax() < opts.gtol {
            converged = true;
            break;
        }
        let Some(chol) = (-&h).cholesky() else {
            return Err(Error::Estimation(
                "information matrix is not positive definite".into(),
            ));
        };
        let step = chol.solve(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let bn = &b + &step * t;
            let (lln, gn, hn) = rows.eval(link, &bn);
            if lln.is_finite() && lln >= ll - 1e-12 * ll.abs() {
                b = bn;
                ll = lln;
                g = gn;
                h = hn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if b.amax() > opts.separation_bound {
            let j = b.iamax();
            return Err(Error::Separation(format!(
                "coefficient `{}` diverged to {:.1}",
                names[j], b[j]
            )));
        }
        if !accepted {
            converged = g.amax() < opts.gtol.sqrt();
            break;
        }
    }
    if !converged {
        if b.amax() > 0.2 * opts.separation_bound {
            let j = b.iamax();
            return Err(Error::Separation(format!(
                "coefficient `{}` drifting ({:.1})",
                names[j], b[j]
            )));
        }
        return Err(Error::Estimation(format!(
            "Newton iterations did not converge; score {:.2e}",
            g.amax()
        )));
    }

    let z = rows.index(&b);
    if let Some(i) = z.iter().position(|zi| zi.abs() > 10.0) {
        return Err(Error::Separation(format!(
            "fitted index {:.1} at row {i} implies a degenerate probability",
            z[i]
        )));
    }
    let bread = (-&h)
        .try_inverse()
        .ok_or_else(|| Error::Estimation("information matrix is singular".into()))?;
    let scores: Vec<f64> = (0..n).map(|i| link.terms(z[i], y[i]).1).collect();
    let (mut cov, n_groups) = sandwich(&x, &scores, &bread, spec.cluster.as_deref());
    let g_f = n_groups as f64;
    if n_groups > 1 {
        cov *= g_f / (g_f - 1.0);
    }
    let se: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();

    let ame = marginal_effects(link, &names, &x, &b);
    let mut jac = DMatrix::zeros(k, k);
    for c in 0..k {
        let hstep = 1e-6 * b[c].abs().max(1.0);
        let mut up = b.clone();
        let mut dn = b.clone();
        up[c] += hstep;
        dn[c] -= hstep;
        let mu = marginal_effects(link, &names, &x, &up);
        let md = marginal_effects(link, &names, &x, &dn);
        for r in 0..k {
            jac[(r, c)] = if names[r] == "const" {
                0.0
            } else {
                (mu[r] - md[r]) / (2.0 * hstep)
            };
        }
    }
    let ame_cov = &jac * &cov * jac.transpose();
    let ame_se: Vec<f64> = (0..k)
        .map(|j| {
            if names[j] == "const" {
                f64::NAN
            } else {
                ame_cov[(j, j)].max(0.0).sqrt()
            }
        })
        .collect();

    let null = {
        let p = y.iter().sum::<f64>() / n as f64;
        n as f64 * (p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    };
    let pseudo_r2 = 1.0 - ll / null;
    Ok(RegressionResult {
        coefficients: b.iter().copied().collect(),
        robust_se: se,
        names,
        r2: pseudo_r2,
        adj_r2: 1.0 - (ll - k as f64) / null,
        n_obs: n,
        n_clusters: spec.cluster.as_ref().map(|_| n_groups),
        loglik: Some(ll),
        marginal_effects: Some(ame),
        marginal_effects_se: Some(ame_se),
        residuals: (0..n).map(|i| y[i] - link.cdf(z[i])).collect(),
        covariance: cov.transpose().as_slice().to_vec(),
    })
}

/// Probit fit with default options.
pub fn probit_fit(y: &[f64], spec: &OlsSpec) -> Result<RegressionResult> {
    binary_fit(y, spec, &BinaryOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn log_cdf_is_continuous_and_finite() {
        for &z in &[-40.0, -8.0 - 1e-9, -8.0, -3.0, 0.0, 3.0, 6.0, 40.0] {
            assert!(log_norm_cdf(z).is_finite());
        }
        let a = log_norm_cdf(TAIL_SWITCH - 1e-9);
        let b = log_norm_cdf(TAIL_SWITCH + 1e-9);
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        let q = norm_cdf(1.959963984540054);
        assert!((q - 0.975).abs() < 1e-11, "{q}");
        assert!((log_norm_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mills_ratio_derivative_identity() {
        // d/dz ln Phi(z) = mills(z); check by finite differences across the switch.
        for &z in &[-12.0, -8.5, -2.0, 0.3, 4.0] {
            let h = 1e-5;
            let fd = (log_norm_cdf(z + h) - log_norm_cdf(z - h)) / (2.0 * h);
            assert!((fd - mills(z)).abs() < 1e-5 * mills(z).max(1.0), "{z}");
        }
    }

    #[test]
    fn balanced_null_data() {
        let y: Vec<f64> = (0..400).map(|i| (i % 2) as f64).collect();
        let x: Vec<f64> = (0..400).map(|i| ((i / 2) % 2) as f64).collect();
        let fit = probit_fit(&y, &OlsSpec::with_intercept().column("x", x)).unwrap();
        assert!(fit.coef("const").unwrap().abs() < 1e-10);
        assert!(fit.marginal_effect("x").unwrap().abs() < 1e-10);
    }

    #[test]
    fn recovers_simulated_probit_and_agrees_with_logit_in_sign() {
        let n = 4000;
        let mut rng = stream(5, Purpose::Oracle, 0);
        let x1: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let x2: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                if 0.2 + 0.8 * x1[i] - 0.5 * x2[i] + e > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let spec = OlsSpec::with_intercept().column("x1", x1).column("x2", x2);
        let p = probit_fit(&y, &spec).unwrap();
        for (name, truth) in [("const", 0.2), ("x1", 0.8), ("x2", -0.5)] {
            assert!(
                (p.coef(name).unwrap() - truth).abs() < 3.0 * p.se(name).unwrap(),
                "{name}"
            );
        }
        let l = binary_fit(
            &y,
            &spec,
            &BinaryOptions {
                link: Link::Logit,
                ..Default::default()
            },
        )
        .unwrap();
        for name in ["x1", "x2"] {
            assert_eq!(
                p.marginal_effect(name).unwrap().signum(),
                l.marginal_effect(name).unwrap().signum()
            );
            assert!(
                (p.marginal_effect(name).unwrap() - l.marginal_effect(name).unwrap()).abs() < 0.01
            );
        }
    }

    #[test]
    fn perfect_predictor_is_separation() {
        let x: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 1.0 }).collect();
        let y = x.clone();
        let r = probit_fit(&y, &OlsSpec::with_intercept().column("x", x));
        assert!(matches!(r, Err(Error::Separation(_))), "{r:?}");
        let same = vec![1.0; 20];
        assert!(matches!(
            probit_fit(
                &same,
                &OlsSpec::with_intercept().column("x", (0..20).map(f64::from).collect())
            ),
            Err(Error::Separation(_))
        ));
    }
}
