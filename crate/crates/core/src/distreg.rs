//! Distribution regression: one logit per threshold of a grid over the
//! regressand's support, giving a conditional CDF estimate
//! F(c | x) = Λ(x'β(c)).

use serde::{Deserialize, Serialize};

use crate::data::{Design, DesignSpec};
use crate::error::{Error, Result};
use crate::logit::{fit_logit, LogitError, LogitOptions};
use crate::math::{dot, logistic, sorted_copy};

/// Fitted state at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdFit {
    /// Indicator identically 0: the CDF is exactly 0 here.
    Zero,
    /// Indicator identically 1: the CDF is exactly 1 here.
    One,
    Fitted(Vec<f64>),
    /// Separated data; coefficients are the iterate at detection.
    Separated(Vec<f64>),
}

impl ThresholdFit {
    #[inline]
    pub fn probability(&self, row: &[f64]) -> f64 {
        match self {
            ThresholdFit::Zero => 0.0,
            ThresholdFit::One => 1.0,
            ThresholdFit::Fitted(b) | ThresholdFit::Separated(b) => logistic(dot(row, b)),
        }
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            ThresholdFit::Fitted(b) | ThresholdFit::Separated(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationPolicy {
    /// Propagate the logit error.
    Error,
    /// Keep the diverging iterate; its fitted probabilities are already
    /// within the detection tolerance of 0 or 1 on the sample.
    #[default]
    KeepLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DrOptions {
    #[serde(default)]
    pub logit: LogitOptions,
    #[serde(default)]
    pub separation: SeparationPolicy,
}

/// A fitted distribution regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DRFit {
    pub thresholds: Vec<f64>,
    pub fits: Vec<ThresholdFit>,
    pub dimension: usize,
    pub spec: Option<DesignSpec>,
    /// Evaluation sorts each row's curve when set.
    pub rearranged: bool,
}

/// How thresholds are chosen from observed values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    /// Use every distinct value when there are at most this many, otherwise
    /// this many quantile-spaced order statistics.
    pub max_points: usize,
    /// Add the point 0 and space quantiles over positive values only.
    pub include_zero: bool,
    /// Force the most frequent repeated values into the grid.
    pub force_frequent: usize,
}

impl GridPolicy {
    /// Grid for annual hours.
    pub fn hours() -> Self {
        Self {
            max_points: 200,
            include_zero: true,
            force_frequent: 50,
        }
    }

    /// Grid for log wages.
    pub fn outcome() -> Self {
        Self {
            max_points: 150,
            include_zero: false,
            force_frequent: 0,
        }
    }

    /// Builds a strictly increasing grid from `values` (unweighted, so the
    /// grid does not move under reweighting).
    pub fn build(&self, values: &[f64]) -> Vec<f64> {
        let pool: Vec<f64> = if self.include_zero {
            values.iter().copied().filter(|v| *v > 0.0).collect()
        } else {
            values.to_vec()
        };
        let sorted = sorted_copy(&pool);
        let mut distinct = sorted.clone();
        distinct.dedup();
        let mut grid = if distinct.len() <= self.max_points || self.max_points < 2 {
            distinct
        } else {
            let n = sorted.len();
            let m = self.max_points;
            (0..m)
                .map(|j| sorted[((j as f64) * (n - 1) as f64 / (m - 1) as f64).round() as usize])
                .collect()
        };
        if self.force_frequent > 0 {
            let mut counts: Vec<(usize, f64)> = Vec::new();
            for chunk in sorted.chunk_by(|a, b| a == b) {
                if chunk.len() > 1 {
                    counts.push((chunk.len(), chunk[0]));
                }
            }
            counts.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)));
            grid.extend(counts.iter().take(self.force_frequent).map(|c| c.1));
        }
        if self.include_zero {
            grid.push(0.0);
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }
}

/// Fits one logit of 1{value ≤ c} per threshold c of `grid`.
pub fn fit_distribution_regression(
    values: &[f64],
    design: &Design,
    grid: &[f64],
    weights: &[f64],
    opts: &DrOptions,
) -> Result<DRFit> {
    let n = design.nrows();
    if values.len() != n || weights.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: values.len().min(weights.len()),
        });
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("threshold grid must be nonempty and strictly increasing".into()));
    }
    let fit_one = |&c: &f64| -> Result<ThresholdFit> {
        let y: Vec<bool> = values.iter().map(|&v| v <= c).collect();
        let live = || y.iter().zip(weights).filter(|(_, w)| **w > 0.0);
        if live().all(|(yi, _)| *yi) {
            return Ok(ThresholdFit::One);
        }
        if live().all(|(yi, _)| !*yi) {
            return Ok(ThresholdFit::Zero);
        }
        match fit_logit(&y, design, weights, &opts.logit) {
            Ok(f) => Ok(ThresholdFit::Fitted(f.coefficients)),
            Err(LogitError::Separation { coefficients, .. })
                if opts.separation == SeparationPolicy::KeepLimit =>
            {
                Ok(ThresholdFit::Separated(coefficients))
            }
            Err(source) => Err(Error::Threshold { threshold: c, source }),
        }
    };

    #[cfg(feature = "parallel")]
    let fits: Vec<Result<ThresholdFit>> = {
        use rayon::prelude::*;
        grid.par_iter().map(fit_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<Result<ThresholdFit>> = grid.iter().map(fit_one).collect();

    Ok(DRFit {
        thresholds: grid.to_vec(),
        fits: fits.into_iter().collect::<Result<_>>()?,
        dimension: design.ncols(),
        spec: None,
        rearranged: true,
    })
}

impl DRFit {
    pub fn with_spec(mut self, spec: DesignSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                found: row.len(),
            });
        }
        Ok(())
    }

    /// Per-threshold probabilities for one row, before rearrangement.
    pub fn raw_curve(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_row(row)?;
        Ok(self.fits.iter().map(|f| f.probability(row)).collect())
    }

    /// Per-threshold probabilities, sorted when the fit is flagged as
    /// rearranged.
    pub fn curve(&self, row: &[f64]) -> Result<Vec<f64>> {
        let raw = self.raw_curve(row)?;
        Ok(if self.rearranged { rearrange_monotone(&raw) } else { raw })
    }

    /// Index of the largest threshold ≤ c, if any.
    pub fn threshold_index(&self, c: f64) -> Option<usize> {
        self.thresholds.partition_point(|&t| t <= c).checked_sub(1)
    }

    /// Conditional CDF at `c` for a regressor row.
    pub fn evaluate_cdf(&self, row: &[f64], c: f64) -> Result<f64> {
        let curve = self.curve(row)?;
        Ok(self.threshold_index(c).map_or(0.0, |j| curve[j]))
    }
}

/// Sorts a per-threshold probability vector into a monotone curve.
pub fn rearrange_monotone(probs: &[f64]) -> Vec<f64> {
    let mut out = probs.to_vec();
    rearrange_in_place(&mut out);
    out
}

pub fn rearrange_in_place(probs: &mut [f64]) {
    if probs.windows(2).any(|w| w[0] > w[1]) {
        probs.sort_by(f64::total_cmp);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileValue {
    pub value: f64,
    /// τ exceeded every curve value and the top grid point was returned.
    pub saturated: bool,
}

/// Left inverse of a monotone curve on its grid: the smallest grid point
/// whose probability is at least τ.
pub fn quantile_from_curve(grid: &[f64], probs: &[f64], tau: f64) -> Result<QuantileValue> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Probability(tau));
    }
    if grid.len() != probs.len() || grid.is_empty() {
        return Err(Error::Dimension {
            expected: grid.len(),
            found: probs.len(),
        });
    }
    let j = probs.partition_point(|&p| p < tau);
    Ok(if j == probs.len() {
        QuantileValue {
            value: grid[grid.len() - 1],
            saturated: true,
        }
    } else {
        QuantileValue {
            value: grid[j],
            saturated: false,
        }
    })
}

/// Weighted empirical CDF of `values` at `c`.
pub fn weighted_ecdf(values: &[f64], weights: &[f64], c: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let below: f64 = values
        .iter()
        .zip(weights)
        .filter(|(v, _)| **v <= c)
        .map(|(_, w)| w)
        .sum();
    below / total
}
