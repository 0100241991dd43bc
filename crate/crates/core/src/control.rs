//! First stage: the control function V = F(H | Z) from a distribution
//! regression of hours on r(Z) over the full sample, workers and
//! nonworkers alike.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate_sample, Design, DesignSpec, MicroSample};
use crate::distreg::{fit_distribution_regression, DRFit, DrOptions, GridPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlOptions {
    pub grid: GridPolicy,
    #[serde(default)]
    pub dr: DrOptions,
    /// Spread each worker's control value uniformly over the CDF step it
    /// sits on.
    #[serde(default)]
    pub smoothing_seed: Option<u64>,
    /// Use the smoothed values downstream; ignored without smoothing.
    #[serde(default = "yes")]
    pub use_smoothed: bool,
    /// Accept samples without nonworkers, pinning P(H = 0 | Z) to 0.
    #[serde(default)]
    pub allow_no_nonworkers: bool,
}

fn yes() -> bool {
    true
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            grid: GridPolicy::hours(),
            dr: DrOptions::default(),
            smoothing_seed: None,
            use_smoothed: true,
            allow_no_nonworkers: false,
        }
    }
}

/// Estimated control function for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFit {
    pub group_id: String,
    pub r_spec: DesignSpec,
    pub hours_fit: DRFit,
    /// Sample indices of workers, aligned with `v_hat`.
    pub workers: Vec<usize>,
    /// Control values passed to later stages.
    pub v_hat: Vec<f64>,
    /// Control values before any smoothing.
    pub v_hat_unsmoothed: Vec<f64>,
    /// Estimated P(H = 0 | Z_i) for every observation.
    pub p0_hat: Vec<f64>,
    pub noise_smoothed: bool,
}

impl ControlFit {
    /// This group's probability of zero hours evaluated at foreign r(Z)
    /// rows: the first point of the rearranged hours curve.
    pub fn p0_at(&self, rows: &Design) -> Result<Vec<f64>> {
        let zero = self.hours_fit.threshold_index(0.0);
        rows.rows()
            .map(|row| {
                let curve = self.hours_fit.curve(row)?;
                Ok(zero.map_or(0.0, |j| curve[j]))
            })
            .collect()
    }
}

/// Fits the hours distribution regression and evaluates V̂ for workers and
/// P̂(H = 0 | Z) for everyone.
pub fn estimate_control(sample: &MicroSample, r_spec: &DesignSpec, opts: &ControlOptions) -> Result<ControlFit> {
    validate_sample(sample).into_result()?;
    if r_spec.includes_control() {
        return Err(Error::Config("the hours design cannot contain the control function".into()));
    }
    let workers = sample.worker_indices();
    if workers.is_empty() {
        return Err(Error::Data(format!("group `{}` has no workers", sample.group_id())));
    }
    if workers.len() == sample.len() && !opts.allow_no_nonworkers {
        return Err(Error::NoNonworkers(sample.group_id().to_string()));
    }
    let resolved = r_spec.resolve(sample.covariate_names())?;
    let all: Vec<usize> = (0..sample.len()).collect();
    let design = resolved.build(sample, &all, None)?;
    let hours: Vec<f64> = sample.observations().iter().map(|o| o.hours).collect();
    let grid = opts.grid.build(&hours);
    let hours_fit = fit_distribution_regression(&hours, &design, &grid, &sample.weights(), &opts.dr)?
        .with_spec(r_spec.clone());

    let zero = hours_fit.threshold_index(0.0);
    let mut p0_hat = Vec::with_capacity(sample.len());
    let mut v_raw = Vec::with_capacity(workers.len());
    let mut step_floor = Vec::with_capacity(workers.len());
    for (i, row) in design.rows().enumerate() {
        let curve = hours_fit.curve(row)?;
        p0_hat.push(zero.map_or(0.0, |j| curve[j]));
        let h = sample.observations()[i].hours;
        if h > 0.0 {
            let j = hours_fit
                .threshold_index(h)
                .ok_or_else(|| Error::Data(format!("hours {h} below the threshold grid")))?;
            v_raw.push(curve[j]);
            step_floor.push(if j > 0 { curve[j - 1] } else { 0.0 });
        }
    }

    let (v_hat, noise_smoothed) = match opts.smoothing_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let smoothed: Vec<f64> = v_raw
                .iter()
                .zip(&step_floor)
                .map(|(&hi, &lo)| hi - (hi - lo) * rng.random::<f64>())
                .collect();
            if opts.use_smoothed {
                (smoothed, true)
            } else {
                (v_raw.clone(), true)
            }
        }
        None => (v_raw.clone(), false),
    };

    Ok(ControlFit {
        group_id: sample.group_id().to_string(),
        r_spec: r_spec.clone(),
        hours_fit,
        workers,
        v_hat,
        v_hat_unsmoothed: v_raw,
        p0_hat,
        noise_smoothed,
    })
}

/// Lower and upper edge of the CDF step each worker sits on, i.e. the
/// support of that worker's smoothed control value.
pub fn smoothing_bounds(fit: &ControlFit, sample: &MicroSample) -> Result<Vec<(f64, f64)>> {
    let resolved = fit.r_spec.resolve(sample.covariate_names())?;
    let design = resolved.build(sample, &fit.workers, None)?;
    design
        .rows()
        .zip(&fit.workers)
        .map(|(row, &i)| {
            let curve = fit.hours_fit.curve(row)?;
            let j = fit
                .hours_fit
                .threshold_index(sample.observations()[i].hours)
                .unwrap_or(0);
            Ok((if j > 0 { curve[j - 1] } else { 0.0 }, curve[j]))
        })
        .collect()
}
