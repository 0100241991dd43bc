//! Second stage: local average and local distribution structural functions
//! of the outcome given covariates and the estimated control, fitted on the
//! trimmed worker sample.

use serde::{Deserialize, Serialize};

use crate::control::ControlFit;
use crate::data::{Design, DesignSpec, MicroSample, ResolvedDesign, TrimRule};
use crate::distreg::{fit_distribution_regression, DRFit, DrOptions, GridPolicy};
use crate::error::{Error, Result};
use crate::math::{dot, quantile_sorted, sorted_copy, Cholesky, Factor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeOptions {
    pub grid: GridPolicy,
    #[serde(default)]
    pub dr: DrOptions,
    /// Skip the distribution regression when only mean effects are needed.
    #[serde(default = "yes")]
    pub fit_ldsf: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutcomeOptions {
    fn default() -> Self {
        Self {
            grid: GridPolicy::outcome(),
            dr: DrOptions::default(),
            fit_ldsf: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub group_id: String,
    pub w_spec: DesignSpec,
    pub schema: Vec<String>,
    pub trim: TrimRule,
    /// Sample indices of the trimmed estimation sample.
    pub trimmed: Vec<usize>,
    pub n_trimmed_in: usize,
    pub lasf_coefficients: Vec<f64>,
    pub ldsf: Option<DRFit>,
}

impl TrimRule {
    /// Upper trimming at the `q`-quantile of positive hours.
    pub fn upper_quantile(sample: &MicroSample, q: f64, h_min_wage_sample: f64) -> Result<TrimRule> {
        let positive: Vec<f64> = sample
            .observations()
            .iter()
            .map(|o| o.hours)
            .filter(|h| *h > 0.0)
            .collect();
        if positive.is_empty() {
            return Err(Error::EmptyTrim);
        }
        let h_max = quantile_sorted(&sorted_copy(&positive), q);
        TrimRule::new(h_min_wage_sample, Some(h_max))
    }
}

/// Sample indices of workers with observed wages admitted by `rule`.
pub fn trim(sample: &MicroSample, control: &ControlFit, rule: &TrimRule) -> Result<Vec<usize>> {
    rule.check()?;
    if control.p0_hat.len() != sample.len() {
        return Err(Error::Dimension {
            expected: sample.len(),
            found: control.p0_hat.len(),
        });
    }
    let kept: Vec<usize> = control
        .workers
        .iter()
        .copied()
        .filter(|&i| {
            let o = &sample.observations()[i];
            o.log_wage.is_some() && rule.admits(o.hours)
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyTrim);
    }
    Ok(kept)
}

/// Control values for the given sample indices, which must be workers.
pub(crate) fn control_values(control: &ControlFit, indices: &[usize]) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|i| {
            control
                .workers
                .binary_search(i)
                .map(|pos| control.v_hat[pos])
                .map_err(|_| Error::Data(format!("observation {i} is not a worker")))
        })
        .collect()
}

/// Weighted least squares through the normal equations, with one round of
/// iterative refinement.
pub fn weighted_least_squares(x: &Design, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let d = x.ncols();
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    for ((row, &yi), &wi) in x.rows().zip(y).zip(w) {
        for a in 0..d {
            let va = wi * row[a];
            rhs[a] += va * yi;
            for b in 0..=a {
                gram[a * d + b] += va * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[b * d + a] = gram[a * d + b];
        }
    }
    let chol = match Cholesky::factor(&gram, d, 1e-10) {
        Factor::Ok(c) => c,
        Factor::Deficient(cols) => {
            return Err(Error::Collinear {
                columns: cols.iter().map(|&j| x.names()[j].clone()).collect(),
            })
        }
    };
    let mut beta = chol.solve(&rhs);
    let mut resid_rhs = vec![0.0; d];
    for ((row, &yi), &wi) in x.rows().zip(y).zip(w) {
        let r = wi * (yi - dot(row, &beta));
        for (acc, xj) in resid_rhs.iter_mut().zip(row) {
            *acc += r * xj;
        }
    }
    let delta = chol.solve(&resid_rhs);
    for (b, dlt) in beta.iter_mut().zip(delta) {
        *b += dlt;
    }
    Ok(beta)
}

/// Fits the LASF by least squares and, unless disabled, the LDSF by
/// distribution regression, both on w(X, V̂) over the trimmed workers.
pub fn fit_outcome(
    sample: &MicroSample,
    control: &ControlFit,
    w_spec: &DesignSpec,
    rule: &TrimRule,
    opts: &OutcomeOptions,
) -> Result<OutcomeFit> {
    if !w_spec.includes_control() {
        return Err(Error::Config("the wage design must include the control function".into()));
    }
    let kept = trim(sample, control, rule)?;
    let v = control_values(control, &kept)?;
    let resolved = w_spec.resolve(sample.covariate_names())?;
    let design = resolved.build(sample, &kept, Some(&v))?;
    let y: Vec<f64> = kept
        .iter()
        .map(|&i| sample.observations()[i].log_wage.expect("trimmed rows carry wages"))
        .collect();
    let w: Vec<f64> = kept.iter().map(|&i| sample.weight(i)).collect();
    let lasf = weighted_least_squares(&design, &y, &w)?;
    let ldsf = if opts.fit_ldsf {
        let grid = opts.grid.build(&y);
        Some(fit_distribution_regression(&y, &design, &grid, &w, &opts.dr)?.with_spec(w_spec.clone()))
    } else {
        None
    };
    Ok(OutcomeFit {
        group_id: sample.group_id().to_string(),
        w_spec: w_spec.clone(),
        schema: sample.covariate_names().to_vec(),
        trim: *rule,
        n_trimmed_in: kept.len(),
        trimmed: kept,
        lasf_coefficients: lasf,
        ldsf,
    })
}

impl OutcomeFit {
    pub fn resolved(&self) -> Result<ResolvedDesign> {
        self.w_spec.resolve(&self.schema)
    }

    pub fn ldsf(&self) -> Result<&DRFit> {
        self.ldsf.as_ref().ok_or(Error::MissingLdsf)
    }

    /// μ̂(x, v) = w(x, v)'β̂ for a covariate vector in this fit's schema.
    pub fn lasf_value(&self, covariates: &[f64], v: f64) -> Result<f64> {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Probability(v));
        }
        let row = self.resolved()?.row(covariates, Some(v))?;
        self.lasf_at_row(&row)
    }

    pub fn lasf_at_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.lasf_coefficients.len() {
            return Err(Error::Dimension {
                expected: self.lasf_coefficients.len(),
                found: row.len(),
            });
        }
        Ok(dot(row, &self.lasf_coefficients))
    }
}
