//! Least squares with dummy-encoded fixed effects and robust covariance.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Relative norm below which a column counts as a linear combination of the
/// columns before it.
const COLLINEAR_TOL: f64 = 1e-9;

/// Fitted regression with named coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Heteroskedasticity-robust (HC1) standard errors, or the
    /// cluster-robust ones when a cluster variable was supplied.
    pub robust_se: Vec<f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub n_obs: usize,
    #[serde(default)]
    pub n_clusters: Option<usize>,
    /// Log-likelihood for maximum-likelihood fits.
    #[serde(default)]
    pub loglik: Option<f64>,
    /// Average marginal effects, aligned with `names` (NaN for the intercept).
    #[serde(default)]
    pub marginal_effects: Option<Vec<f64>>,
    #[serde(default)]
    pub marginal_effects_se: Option<Vec<f64>>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub covariance: Vec<f64>,
}

impl RegressionResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coefficients[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.robust_se[i])
    }

    pub fn marginal_effect(&self, name: &str) -> Option<f64> {
        let i = self.index(name)?;
        self.marginal_effects.as_ref().map(|m| m[i])
    }

    /// Coefficient table keyed by name.
    pub fn coefficient_map(&self) -> BTreeMap<String, f64> {
        self.names
            .iter()
            .cloned()
            .zip(self.coefficients.iter().copied())
            .collect()
    }

    /// Covariance entry `(i, j)` of the coefficient estimator.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.names.len() + j]
    }
}

/// Right-hand side of a regression: named numeric columns, categorical
/// fixed effects (first sorted level dropped) and an optional cluster id.
#[derive(Debug, Clone, Default)]
pub struct OlsSpec {
    pub intercept: bool,
    pub columns: Vec<(String, Vec<f64>)>,
    pub fixed_effects: Vec<(String, Vec<i64>)>,
    pub cluster: Option<Vec<u64>>,
}

impl OlsSpec {
    pub fn with_intercept() -> Self {
        OlsSpec {
            intercept: true,
            ..Default::default()
        }
    }

    pub fn column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.columns.push((name.into(), values));
        self
    }

    pub fn fixed_effect(mut self, name: impl Into<String>, levels: Vec<i64>) -> Self {
        self.fixed_effects.push((name.into(), levels));
        self
    }

    pub fn clustered(mut self, ids: Vec<u64>) -> Self {
        self.cluster = Some(ids);
        self
    }

    /// Builds the dense design. Dummy names are `"{fe}={level}"`.
    pub fn design(&self, n: usize) -> Result<(Vec<String>, DMatrix<f64>)> {
        let mut names = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if self.intercept {
            names.push("const".to_string());
            cols.push(vec![1.0; n]);
        }
        for (name, v) in &self.columns {
            if v.len() != n {
                return Err(Error::Data(format!(
                    "column `{name}` has {} rows, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "column `{name}` contains non-finite values"
                )));
            }
            names.push(name.clone());
            cols.push(v.clone());
        }
        for (name, levels) in &self.fixed_effects {
            if levels.len() != n {
                return Err(Error::Data(format!(
                    "fixed effect `{name}` has {} rows, expected {n}",
                    levels.len()
                )));
            }
            let distinct: BTreeSet<i64> = levels.iter().copied().collect();
            for level in distinct.into_iter().skip(1) {
                names.push(format!("{name}={level}"));
                cols.push(
                    levels
                        .iter()
                        .map(|&l| if l == level { 1.0 } else { 0.0 })
                        .collect(),
                );
            }
        }
        if let Some(c) = &self.cluster {
            if c.len() != n {
                return Err(Error::Data(format!(
                    "cluster ids have {} rows, expected {n}",
                    c.len()
                )));
            }
        }
        let k = cols.len();
        let x = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
        Ok((names, x))
    }
}

/// Names of columns that are (numerically) linear combinations of earlier
/// ones, found by sequential modified Gram-Schmidt.
pub fn collinear_columns(names: &[String], x: &DMatrix<f64>) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let orig = x.column(j).into_owned();
        let norm0 = orig.norm();
        let mut v = orig;
        for q in &basis {
            let proj = q.dot(&v);
            v.axpy(-proj, q, 1.0);
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= COLLINEAR_TOL * norm0 {
            bad.push(names[j].clone());
        } else {
            basis.push(v / norm);
        }
    }
    bad
}

/// `(X'X)^{-1}` from the triangular factor of a thin QR.
fn xtx_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Estimation("triangular factor is singular".into()))?;
    Ok(&r_inv * r_inv.transpose())
}

/// Sandwich covariance `B M B` with `M = sum_g s_g s_g'`, where the score of
/// row `i` is `x_i * u_i` and rows sharing a cluster id are summed first.
pub(crate) fn sandwich(
    x: &DMatrix<f64>,
    u: &[f64],
    bread: &DMatrix<f64>,
    cluster: Option<&[u64]>,
) -> (DMatrix<f64>, usize) {
    let k = x.ncols();
    let n = x.nrows();
    let groups: Vec<Vec<usize>> = match cluster {
        Some(ids) => {
            let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, &g) in ids.iter().enumerate() {
                map.entry(g).or_default().push(i);
            }
            map.into_values().collect()
        }
        None => (0..n).map(|i| vec![i]).collect(),
    };
    let meat = par::sum_into(&groups, k * k, |rows, acc| {
        let mut s = vec![0.0; k];
        for &i in rows {
            for (j, sj) in s.iter_mut().enumerate() {
                *sj += x[(i, j)] * u[i];
            }
        }
        for a in 0..k {
            for b in 0..k {
                acc[a * k + b] += s[a] * s[b];
            }
        }
    });
    let meat = DMatrix::from_row_slice(k, k, &meat);
    (bread * meat * bread, groups.len())
}

/// Ordinary least squares of `y` on the design described by `spec`.
pub fn ols(y: &[f64], spec: &OlsSpec) -> Result<RegressionResult> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("regression sample".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "dependent variable contains non-finite values".into(),
        ));
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

    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Estimation("triangular solve failed".into()))?;
    let fitted = &x * &beta;
    let resid: Vec<f64> = yv.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();

    let bread = xtx_inverse(&r)?;
    let (mut cov, n_groups) = sandwich(&x, &resid, &bread, spec.cluster.as_deref());
    let nf = n as f64;
    let kf = k as f64;
    let scale = match spec.cluster {
        Some(_) => {
            let g = n_groups as f64;
            if n_groups < 2 {
                return Err(Error::Estimation(
                    "cluster-robust covariance needs at least two clusters".into(),
                ));
            }
            g / (g - 1.0) * (nf - 1.0) / (nf - kf)
        }
        None => nf / (nf - kf),
    };
    cov *= scale;

    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let mean = y.iter().sum::<f64>() / nf;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (nf - 1.0) / (nf - kf);

    Ok(RegressionResult {
        robust_se: (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        coefficients: beta.iter().copied().collect(),
        names,
        r2,
        adj_r2,
        n_obs: n,
        n_clusters: spec.cluster.as_ref().map(|_| n_groups),
        loglik: None,
        marginal_effects: None,
        marginal_effects_se: None,
        residuals: resid,
        covariance: cov.transpose().as_slice().to_vec(),
    })
}
