//! Cluster (unit) bootstrap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{stream, Purpose};

/// Largest tolerated share of failed replicates.
pub const MAX_DROP_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se: Vec<f64>,
    pub replicates: usize,
    pub dropped: usize,
    #[serde(skip)]
    pub draws: Vec<Vec<f64>>,
}

/// Indices of one resample of `n_units` units, drawn with replacement from
/// the replicate's own stream.
pub fn resample_indices(n_units: usize, seed: u64, replicate: u64) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Bootstrap, replicate);
    (0..n_units).map(|_| rng.random_range(0..n_units)).collect()
}

/// Runs `estimator` on `b` resamples of `0..n_units` and returns the
/// standard deviation (n - 1 denominator) of each output coordinate.
///
/// A replicate whose estimator returns an error is dropped and counted. More
/// than 10% drops is an error. Replicates are independent, so they run in
/// parallel; the result does not depend on the thread count.
pub fn cluster_bootstrap<F>(
    n_units: usize,
    b: usize,
    seed: u64,
    estimator: F,
) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync + Send,
{
    if n_units == 0 {
        return Err(Error::Empty("bootstrap units".into()));
    }
    if b < 2 {
        return Err(Error::param(
            "bootstrap",
            "at least two replicates are required",
        ));
    }
    let outcomes = par::map_range(b, |r| estimator(&resample_indices(n_units, seed, r as u64)));
    let mut draws = Vec::with_capacity(b);
    let mut dropped = 0;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) if v.iter().all(|x| x.is_finite()) => draws.push(v),
            Ok(_) => {
                log::warn!("bootstrap replicate {r} produced non-finite estimates; dropped");
                dropped += 1;
            }
            Err(e) => {
                log::warn!("bootstrap replicate {r} failed: {e}; dropped");
                dropped += 1;
            }
        }
    }
    if dropped as f64 > MAX_DROP_SHARE * b as f64 || draws.len() < 2 {
        return Err(Error::Bootstrap { dropped, total: b });
    }
    let k = draws[0].len();
    if draws.iter().any(|d| d.len() != k) {
        return Err(Error::Estimation(
            "bootstrap replicates returned different lengths".into(),
        ));
    }
    let m = draws.len() as f64;
    let se = (0..k)
        .map(|j| {
            let mean = draws.iter().map(|d| d[j]).sum::<f64>() / m;
            (draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
        })
        .collect();
    Ok(BootstrapResult {
        se,
        replicates: draws.len(),
        dropped,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_of(xs: &[f64]) -> impl Fn(&[usize]) -> Result<Vec<f64>> + Sync + Send + '_ {
        move |idx| {
            Ok(vec![
                idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64,
            ])
        }
    }

    #[test]
    fn identical_units_give_zero_se() {
        let xs = vec![0.37; 50];
        let r = cluster_bootstrap(xs.len(), 100, 9, mean_of(&xs)).unwrap();
        assert!(r.se[0] < 1e-15);
    }

    #[test]
    fn mean_se_matches_analytic() {
        // Bootstrap SE of a sample mean approximates sd / sqrt(n).
        let xs: Vec<f64> = (0..400).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let n = xs.len() as f64;
        let mu = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
        let r = cluster_bootstrap(xs.len(), 1000, 3, mean_of(&xs)).unwrap();
        assert!((r.se[0] / (sd / n.sqrt()) - 1.0).abs() < 0.08);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let xs: Vec<f64> = (0..300).map(|i| (i as f64).sqrt()).collect();
        let a = par::with_threads(1, || {
            cluster_bootstrap(xs.len(), 64, 11, mean_of(&xs)).unwrap()
        });
        let b = par::with_threads(6, || {
            cluster_bootstrap(xs.len(), 64, 11, mean_of(&xs)).unwrap()
        });
        assert_eq!(a.se[0].to_bits(), b.se[0].to_bits());
    }

    #[test]
    fn too_many_failures() {
        let est = |idx: &[usize]| {
            if idx[0] % 2 == 0 {
                Err(Error::Estimation("no".into()))
            } else {
                Ok(vec![1.0])
            }
        };
        assert!(matches!(
            cluster_bootstrap(100, 50, 1, est),
            Err(Error::Bootstrap { .. })
        ));
    }
}
