//! Utility-over-severity curve data.

use serde::{Deserialize, Serialize};

use super::{
    utility_insured_with, utility_variant, BehavioralVariant, CostParams, Facility, Severity,
};
use crate::error::{Error, Result};

/// Normalized parameterization for the illustrative curves. Utility is in
/// units of the facility ceiling, so the multiplier is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveParams {
    pub p_ratio: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub travel: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams {
            p_ratio: 0.12,
            alpha: 1.0,
            beta: 1.5,
            lambda: 0.85,
            travel: 0.0,
        }
    }
}

impl CurveParams {
    pub fn cost_params(&self) -> Result<CostParams> {
        CostParams::from_lambda(
            self.alpha,
            self.beta,
            self.lambda,
            [1.0; 4],
            self.p_ratio,
            1.0,
        )
    }
}

/// One labeled series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub label: String,
    #[serde(default)]
    pub gamma: f64,
    /// Cost-sharing ratio `phi_pc / phi_hc` with `phi_hc` held at one.
    #[serde(default = "one")]
    pub ratio: f64,
    #[serde(default = "baseline")]
    pub variant: BehavioralVariant,
}

fn one() -> f64 {
    1.0
}

fn baseline() -> BehavioralVariant {
    BehavioralVariant::Baseline
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub label: String,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl CurveSpec {
    pub fn new(
        label: impl Into<String>,
        gamma: f64,
        ratio: f64,
        variant: BehavioralVariant,
    ) -> Self {
        CurveSpec {
            label: label.into(),
            gamma,
            ratio,
            variant,
        }
    }

    pub fn evaluate(&self, theta: Severity, params: &CurveParams) -> Result<f64> {
        let cp = params.cost_params()?;
        self.evaluate_with(theta, &cp, params.travel)
    }

    fn evaluate_with(&self, theta: Severity, cp: &CostParams, travel: f64) -> Result<f64> {
        match self.variant {
            BehavioralVariant::Baseline => Ok(utility_insured_with(
                theta,
                cp,
                Facility::Thc,
                self.gamma,
                travel,
                self.ratio,
                1.0,
            )),
            v if self.ratio == 1.0 => {
                utility_variant(v, theta, cp, Facility::Thc, self.gamma, travel)
            }
            _ => Err(Error::param(
                "ratio",
                "behavioral variants are drawn at a cost-sharing ratio of one",
            )),
        }
    }
}

/// Evaluates every series on the grid; rows are grouped by series.
pub fn utility_curve(
    grid: &[Severity],
    params: &CurveParams,
    specs: &[CurveSpec],
) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(Error::Empty("severity grid".into()));
    }
    if specs.is_empty() {
        return Err(Error::Empty("curve series".into()));
    }
    let cp = params.cost_params()?;
    let mut rows = Vec::with_capacity(grid.len() * specs.len());
    for spec in specs {
        for &theta in grid {
            rows.push(CurvePoint {
                theta: theta.value(),
                label: spec.label.clone(),
                utility: spec.evaluate_with(theta, &cp, params.travel)?,
            });
        }
    }
    Ok(rows)
}

/// Smallest root of `f` on `[lo, hi]`, located by a grid scan for the first
/// sign change and refined by bisection until `|f| < 1e-10`.
pub fn zero_crossing(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Option<f64> {
    const SCAN: usize = 4000;
    let mut a = lo;
    let mut fa = f(a);
    if fa == 0.0 {
        return Some(a);
    }
    for i in 1..=SCAN {
        let b = lo + (hi - lo) * i as f64 / SCAN as f64;
        let fb = f(b);
        if fb == 0.0 {
            return Some(b);
        }
        if fa.signum() != fb.signum() {
            let (mut l, mut r, mut fl) = (a, b, fa);
            for _ in 0..200 {
                let m = 0.5 * (l + r);
                let fm = f(m);
                if fm.abs() < 1e-10 && (r - l) < 1e-12 {
                    return Some(m);
                }
                if fm.signum() == fl.signum() {
                    l = m;
                    fl = fm;
                } else {
                    r = m;
                }
            }
            return Some(0.5 * (l + r));
        }
        a = b;
        fa = fb;
    }
    None
}

pub fn weighting_series() -> Vec<CurveSpec> {
    [
        ("gamma=0", 0.0),
        ("gamma=0.12", 0.12),
        ("gamma=-0.04", -0.04),
    ]
    .into_iter()
    .map(|(l, g)| CurveSpec::new(l, g, 1.0, BehavioralVariant::Baseline))
    .collect()
}

pub fn cost_sharing_series() -> Vec<CurveSpec> {
    let mut out = Vec::new();
    for (gl, g) in [("gamma=0.12", 0.12), ("gamma=-0.04", -0.04)] {
        for r in [1.0, 1.2] {
            out.push(CurveSpec::new(
                format!("{gl},ratio={r}"),
                g,
                r,
                BehavioralVariant::Baseline,
            ));
        }
    }
    out
}

pub fn present_bias_series() -> Vec<CurveSpec> {
    [1.0, 0.8, 0.2]
        .into_iter()
        .map(|d| {
            CurveSpec::new(
                format!("delta={d}"),
                0.0,
                1.0,
                BehavioralVariant::PresentBias { delta: d },
            )
        })
        .collect()
}

pub fn salience_series() -> Vec<CurveSpec> {
    [1.0, 0.8, 0.2]
        .into_iter()
        .map(|m| {
            CurveSpec::new(
                format!("mu={m}"),
                0.0,
                1.0,
                BehavioralVariant::Salience { mu: m },
            )
        })
        .collect()
}

pub fn biased_belief_series() -> Vec<CurveSpec> {
    [0.85, 0.825, 0.925]
        .into_iter()
        .map(|l| {
            CurveSpec::new(
                format!("lambda_tilde={l}"),
                0.0,
                1.0,
                BehavioralVariant::BiasedBelief { lambda_tilde: l },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Severity> {
        (1..=n)
            .map(|i| Severity::new(i as f64 / (n + 1) as f64).unwrap())
            .collect()
    }

    fn series<'a>(rows: &'a [CurvePoint], label: &str) -> Vec<&'a CurvePoint> {
        rows.iter().filter(|r| r.label == label).collect()
    }

    #[test]
    fn break_even_points() {
        let params = CurveParams::default();
        let saving = 1.0 - 0.85f64.powf(1.5);
        // a solves saving * t^1.5 = 0.12 t.
        let closed = (0.12 / saving).powi(2);
        // The four-digit saving share 0.2163 gives 0.3078; the unrounded one 0.3077.
        assert!(((0.12f64 / 0.2163).powi(2) - 0.3078).abs() < 5e-5);
        assert!((closed - 0.3078).abs() < 2e-4);
        let u0 = |th: f64| {
            weighting_series()[0]
                .evaluate(Severity::clamped(th), &params)
                .unwrap()
        };
        let a = zero_crossing(u0, 1e-3, 1.0 - 1e-6).unwrap();
        assert!(u0(a).abs() < 1e-10);
        assert!((a - closed).abs() < 1e-8);

        let ub = |th: f64| {
            weighting_series()[2]
                .evaluate(Severity::clamped(th), &params)
                .unwrap()
        };
        let b = zero_crossing(ub, 1e-3, 1.0 - 1e-6).unwrap();
        assert!(ub(b).abs() < 1e-10);
        assert!((b - 0.523).abs() < 1e-3, "b = {b}");
    }

    #[test]
    fn weighting_curves_ordering() {
        let rows = utility_curve(&grid(199), &CurveParams::default(), &weighting_series()).unwrap();
        let zero = series(&rows, "gamma=0");
        let pos = series(&rows, "gamma=0.12");
        assert_eq!(zero.len(), 199);
        for (z, p) in zero.iter().zip(&pos) {
            assert!(p.utility > z.utility);
        }
        // Curves meet as severity approaches one.
        let near = [Severity::new(1.0 - 1e-9).unwrap()];
        let end = utility_curve(&near, &CurveParams::default(), &weighting_series()).unwrap();
        let spread = end
            .iter()
            .map(|r| r.utility)
            .fold(f64::NEG_INFINITY, f64::max)
            - end.iter().map(|r| r.utility).fold(f64::INFINITY, f64::min);
        assert!(spread < 2e-7);
    }

    #[test]
    fn higher_ratio_lowers_utility_more_for_sicker_patients() {
        let rows =
            utility_curve(&grid(99), &CurveParams::default(), &cost_sharing_series()).unwrap();
        for g in ["gamma=0.12", "gamma=-0.04"] {
            let solid = series(&rows, &format!("{g},ratio=1"));
            let dashed = series(&rows, &format!("{g},ratio=1.2"));
            let mut last_gap = 0.0;
            for (s, d) in solid.iter().zip(&dashed) {
                let gap = s.utility - d.utility;
                assert!(gap > 0.0);
                assert!(gap > last_gap);
                last_gap = gap;
            }
        }
        assert_eq!(cost_sharing_series().len(), 4);
    }

    #[test]
    fn single_point_and_empty_grid() {
        let one = [Severity::new(0.5).unwrap()];
        let spec = &weighting_series()[..1];
        assert_eq!(
            utility_curve(&one, &CurveParams::default(), spec)
                .unwrap()
                .len(),
            1
        );
        assert!(utility_curve(&[], &CurveParams::default(), spec).is_err());
    }

    #[test]
    fn crossing_moves_down_with_gamma() {
        let params = CurveParams::default();
        let mut last = f64::INFINITY;
        for g in [-0.04, -0.02, 0.0, 0.02] {
            let spec = CurveSpec::new("g", g, 1.0, BehavioralVariant::Baseline);
            let f = |th: f64| spec.evaluate(Severity::clamped(th), &params).unwrap();
            // Positive weighting can make utility positive from the start.
            let root = if f(1e-3) > 0.0 {
                0.0
            } else {
                zero_crossing(f, 1e-3, 1.0 - 1e-6).unwrap()
            };
            assert!(root <= last);
            last = root;
        }
    }
}
