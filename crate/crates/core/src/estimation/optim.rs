//! BFGS with a strong-Wolfe line search.
//!
//! The objective is minimized; callers maximizing a likelihood pass its
//! negative. The line search follows the bracketing and zoom phases of
//! Nocedal and Wright (Algorithms 3.5 and 3.6) with cubic interpolation and
//! a bisection safeguard.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient max-norm drops below this.
    pub gtol: f64,
    /// Stop when `|f_k - f_{k+1}| <= ftol * max(|f_k|, 1)`.
    pub ftol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            gtol: 1e-8,
            ftol: 1e-14,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    FunctionChange,
    MaxIterations,
    LineSearchFailed,
    /// Objective or gradient stopped being finite.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn grad_max_norm(&self) -> f64 {
        max_norm(&self.grad)
    }
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self.evals += 1;
        (self.f)(x)
    }

    /// Value and directional derivative at `x + a d`.
    fn phi(&mut self, x: &[f64], d: &[f64], a: f64) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let xn: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        let (f, g) = self.eval(&xn);
        let dphi = dot(&g, d);
        (f, dphi, xn, g)
    }
}

/// Minimizer of the cubic through `(a, fa, ga)` and `(b, fb, gb)`, or the
/// midpoint when it falls outside the safe part of the interval.
fn cubic_step(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let mid = 0.5 * (a + b);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

type Point = (f64, Vec<f64>, Vec<f64>);

#[allow(clippy::too_many_arguments)]
fn zoom<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    obj: &mut Counted<F>,
    x: &[f64],
    d: &[f64],
    f0: f64,
    g0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    opts: &BfgsOptions,
) -> Option<(f64, Point)> {
    for _ in 0..60 {
        let a = cubic_step(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
        let (fa, ga, xn, gn) = obj.phi(x, d, a);
        if !fa.is_finite() {
            hi = (a, f64::INFINITY, 0.0);
            continue;
        }
        if fa > f0 + opts.c1 * a * g0 || fa >= lo.1 {
            hi = (a, fa, ga);
        } else {
            if ga.abs() <= -opts.c2 * g0 {
                return Some((a, (fa, xn, gn)));
            }
            if ga * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, ga);
        }
        if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    if lo.0 > 0.0 {
        let (fa, _, xn, gn) = obj.phi(x, d, lo.0);
        return Some((lo.0, (fa, xn, gn)));
    }
    None
}

fn line_search<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    obj: &mut Counted<F>,
    x: &[f64],
    f0: f64,
    g: &[f64],
    d: &[f64],
    a_init: f64,
    opts: &BfgsOptions,
) -> Option<(f64, Point)> {
    let g0 = dot(g, d);
    if !(g0 < 0.0) {
        return None;
    }
    let mut prev = (0.0, f0, g0);
    let mut a = a_init;
    for i in 0..40 {
        let (fa, ga, xn, gn) = obj.phi(x, d, a);
        if !fa.is_finite() {
            // Step left the domain; shrink toward the last good point.
            return zoom(obj, x, d, f0, g0, prev, (a, f64::INFINITY, 0.0), opts);
        }
        if fa > f0 + opts.c1 * a * g0 || (i > 0 && fa >= prev.1) {
            return zoom(obj, x, d, f0, g0, prev, (a, fa, ga), opts);
        }
        if ga.abs() <= -opts.c2 * g0 {
            return Some((a, (fa, xn, gn)));
        }
        if ga >= 0.0 {
            return zoom(obj, x, d, f0, g0, (a, fa, ga), prev, opts);
        }
        prev = (a, fa, ga);
        a *= 2.0;
    }
    None
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let (mut fx, mut g) = obj.eval(&x);
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut first = true;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        termination = Termination::NonFinite;
    } else if max_norm(&g) < opts.gtol {
        termination = Termination::Gradient;
    } else {
        for it in 0..opts.max_iter {
            iterations = it + 1;
            let mut d: Vec<f64> = (0..n)
                .map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>())
                .collect();
            if dot(&d, &g) >= 0.0 {
                // Lost positive definiteness: restart from steepest descent.
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                    }
                }
                d = g.iter().map(|v| -v).collect();
            }
            let a_init = if first {
                (1.0 / max_norm(&g)).min(1.0)
            } else {
                1.0
            };
            let Some((_, (fn_, xn, gn))) = line_search(&mut obj, &x, fx, &g, &d, a_init, opts)
            else {
                termination = Termination::LineSearchFailed;
                break;
            };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            let f_old = fx;
            x = xn;
            fx = fn_;
            g = gn;
            if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
                termination = Termination::NonFinite;
                break;
            }
            if max_norm(&g) < opts.gtol {
                termination = Termination::Gradient;
                break;
            }
            if (f_old - fx).abs() <= opts.ftol * f_old.abs().max(1.0) {
                termination = Termination::FunctionChange;
                break;
            }
            if sy > 1e-300 {
                if first {
                    // Scale the initial inverse Hessian to the observed curvature.
                    let scale = sy / dot(&y, &y);
                    for v in h.iter_mut() {
                        *v *= scale;
                    }
                    first = false;
                }
                let rho = 1.0 / sy;
                let hy: Vec<f64> = (0..n)
                    .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
                    .collect();
                let yhy = dot(&y, &hy);
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                            + (rho * rho * yhy + rho) * s[i] * s[j];
                    }
                }
            }
        }
    }
    Minimum {
        x,
        f: fx,
        grad: g,
        iterations,
        evaluations: obj.evals,
        termination,
    }
}
