//! Weighted (exchangeable-weights) bootstrap. Every replicate reruns the
//! full estimation with each observation's weight multiplied by an i.i.d.
//! positive mean-one draw.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{decompose, fit_group, GroupSpecs, COMPONENTS};
use crate::data::{MicroSample, TrimRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// Standard exponential.
    #[default]
    Exponential,
    /// Constant 1; every replicate reproduces the point estimate.
    Unit,
}

impl WeightLaw {
    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            WeightLaw::Exponential => rng.sample(Exp1),
            WeightLaw::Unit => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_law: WeightLaw,
    #[serde(default = "default_level")]
    pub ci_level: f64,
}

fn default_level() -> f64 {
    0.95
}

impl BootstrapConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self {
            replications,
            seed,
            weight_law: WeightLaw::Exponential,
            ci_level: 0.95,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config("bootstrap needs at least 2 replications".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config("ci_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Weight multipliers of replicate `b` for groups of the given sizes. The
/// draws depend only on (seed, b).
pub fn replicate_weights(cfg: &BootstrapConfig, b: usize, sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(b as u64);
    sizes
        .iter()
        .map(|&n| (0..n).map(|_| cfg.weight_law.draw(&mut rng)).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    /// Standard deviation of the successful replicates.
    pub se: f64,
    /// Diagnostic: the point estimate lies outside [lo, hi].
    pub point_outside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: Vec<f64>,
    /// One entry per replicate index; `None` marks a failed replicate.
    pub replicates: Vec<Option<Vec<f64>>>,
    pub intervals: Vec<Interval>,
    pub n_fail: usize,
}

/// Percentile interval from order statistics of `values`.
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let alpha = 1.0 - level;
    // guard against 0.05 / 2 * 200 landing just above an integer
    let rank = |p: f64| ((m as f64 * p - 1e-9).ceil() as usize).clamp(1, m) - 1;
    (v[rank(alpha / 2.0)], v[rank(1.0 - alpha / 2.0)])
}

/// Reruns `statistic` on reweighted copies of `samples` for every replicate.
pub fn bootstrap_statistic<F>(samples: &[&MicroSample], point: &[f64], cfg: &BootstrapConfig, statistic: F) -> Result<BootstrapResult>
where
    F: Fn(&[MicroSample]) -> Result<Vec<f64>> + Sync,
{
    cfg.check()?;
    let sizes: Vec<usize> = samples.iter().map(|s| s.len()).collect();
    let run = |b: usize| -> Option<Vec<f64>> {
        let weights = replicate_weights(cfg, b, &sizes);
        let reweighted: Vec<MicroSample> = samples
            .iter()
            .zip(&weights)
            .map(|(s, w)| s.reweighted(w))
            .collect::<Result<_>>()
            .ok()?;
        statistic(&reweighted).ok().filter(|v| v.len() == point.len())
    };

    #[cfg(feature = "parallel")]
    let replicates: Vec<Option<Vec<f64>>> = {
        use rayon::prelude::*;
        (0..cfg.replications).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let replicates: Vec<Option<Vec<f64>>> = (0..cfg.replications).map(run).collect();

    let n_fail = replicates.iter().filter(|r| r.is_none()).count();
    if n_fail * 10 > cfg.replications || n_fail + 2 > cfg.replications {
        return Err(Error::Bootstrap {
            failed: n_fail,
            total: cfg.replications,
        });
    }
    let ok: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    let intervals = (0..point.len())
        .map(|j| {
            let col: Vec<f64> = ok.iter().map(|r| r[j]).collect();
            let (lo, hi) = percentile_interval(&col, cfg.ci_level);
            let m = col.len() as f64;
            let mean = col.iter().sum::<f64>() / m;
            let se = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
            Interval {
                estimate: point[j],
                lo,
                hi,
                se,
                point_outside: point[j] < lo || point[j] > hi,
            }
        })
        .collect();
    Ok(BootstrapResult {
        estimate: point.to_vec(),
        replicates,
        intervals,
        n_fail,
    })
}

/// Flattens decomposition results as τ-major, component-minor.
pub fn flatten_components(results: &[crate::counterfactual::DecompResult]) -> Vec<f64> {
    results.iter().flat_map(|r| r.components()).collect()
}

/// Bootstrap of the two-group quantile decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompBootstrap {
    pub taus: Vec<f64>,
    pub result: BootstrapResult,
}

impl DecompBootstrap {
    /// Interval for (τ index, component index) with components ordered as
    /// [`COMPONENTS`].
    pub fn interval(&self, tau_idx: usize, component: usize) -> Interval {
        self.result.intervals[tau_idx * COMPONENTS.len() + component]
    }
}

/// Weighted bootstrap of `decompose(g1, g0)`; trimming rules are held fixed
/// across replicates.
pub fn bootstrap_decomposition(
    s1: Arc<MicroSample>,
    s0: Arc<MicroSample>,
    specs: &GroupSpecs,
    trims: (TrimRule, TrimRule),
    taus: &[f64],
    cfg: &BootstrapConfig,
) -> Result<DecompBootstrap> {
    let stat = |samples: &[MicroSample]| -> Result<Vec<f64>> {
        let g1 = fit_group(Arc::new(samples[0].clone()), specs, &trims.0)?;
        let g0 = fit_group(Arc::new(samples[1].clone()), specs, &trims.1)?;
        Ok(flatten_components(&decompose(&g1, &g0, taus)?))
    };
    let point = stat(&[(*s1).clone(), (*s0).clone()])?;
    let result = bootstrap_statistic(&[&s1, &s0], &point, cfg, stat)?;
    Ok(DecompBootstrap {
        taus: taus.to_vec(),
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_streams_are_index_addressed() {
        let cfg = BootstrapConfig::new(10, 42);
        let a = replicate_weights(&cfg, 3, &[5, 4]);
        let b = replicate_weights(&cfg, 3, &[5, 4]);
        assert_eq!(a, b);
        assert_ne!(a, replicate_weights(&cfg, 4, &[5, 4]));
        assert!(a.iter().flatten().all(|w| *w > 0.0));
    }

    #[test]
    fn percentile_interval_uses_order_statistics() {
        let v: Vec<f64> = (1..=200).map(f64::from).collect();
        let (lo, hi) = percentile_interval(&v, 0.95);
        assert_eq!((lo, hi), (5.0, 195.0));
        assert!(v.contains(&lo) && v.contains(&hi));
    }

    #[test]
    fn unit_weights_collapse_to_point() {
        let s = MicroSample::new("g", vec![], vec![], None).unwrap();
        let cfg = BootstrapConfig {
            weight_law: WeightLaw::Unit,
            ..BootstrapConfig::new(5, 1)
        };
        let res = bootstrap_statistic(&[&s], &[1.5], &cfg, |_| Ok(vec![1.5])).unwrap();
        assert!(res.intervals[0].lo == 1.5 && res.intervals[0].hi == 1.5);
        assert_eq!(res.intervals[0].se, 0.0);
    }

    #[test]
    fn too_many_failures_is_an_error() {
        let s = MicroSample::new("g", vec![], vec![], None).unwrap();
        let cfg = BootstrapConfig::new(10, 1);
        let err = bootstrap_statistic(&[&s], &[0.0], &cfg, |_| Err(Error::EmptyTrim)).unwrap_err();
        assert!(matches!(err, Error::Bootstrap { failed: 10, total: 10 }));
    }
}
