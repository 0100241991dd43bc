//! Third stage: counterfactual distributions for group triples ⟨t,k,r⟩
//! (outcome structure of t, covariates and control of k, selection rule of
//! r) and the decompositions built from them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{estimate_control, ControlFit, ControlOptions};
use crate::data::{Design, DesignSpec, MicroSample, Term, TrimRule};
use crate::distreg::{quantile_from_curve, rearrange_in_place};
use crate::error::{Error, Result};
use crate::outcome::{fit_outcome, OutcomeFit, OutcomeOptions};

/// Everything estimated for one group, plus cached regressor rows of its
/// workers.
#[derive(Debug, Clone)]
pub struct GroupFit {
    pub sample: Arc<MicroSample>,
    pub control: ControlFit,
    pub outcome: OutcomeFit,
    worker_r_rows: Design,
    worker_w_rows: Design,
    worker_weights: Vec<f64>,
    r_bounds: Vec<(f64, f64)>,
}

/// Stage settings shared by every group of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpecs {
    pub r_spec: DesignSpec,
    pub w_spec: DesignSpec,
    #[serde(default)]
    pub control: ControlOptions,
    #[serde(default)]
    pub outcome: OutcomeOptions,
}

impl GroupFit {
    pub fn new(sample: Arc<MicroSample>, control: ControlFit, outcome: OutcomeFit) -> Result<Self> {
        let r = control.r_spec.resolve(sample.covariate_names())?;
        let all: Vec<usize> = (0..sample.len()).collect();
        let full_r = r.build(&sample, &all, None)?;
        let mut r_bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); full_r.ncols()];
        for row in full_r.rows() {
            for (b, &x) in r_bounds.iter_mut().zip(row) {
                b.0 = b.0.min(x);
                b.1 = b.1.max(x);
            }
        }
        let worker_r_rows = r.build(&sample, &control.workers, None)?;
        let w = outcome.w_spec.resolve(sample.covariate_names())?;
        let worker_w_rows = w.build(&sample, &control.workers, Some(&control.v_hat))?;
        let worker_weights = control.workers.iter().map(|&i| sample.weight(i)).collect();
        Ok(Self {
            sample,
            control,
            outcome,
            worker_r_rows,
            worker_w_rows,
            worker_weights,
            r_bounds,
        })
    }

    pub fn group_id(&self) -> &str {
        self.sample.group_id()
    }

    pub fn n_workers(&self) -> usize {
        self.control.workers.len()
    }

    /// P̂(H = 0 | Z) of this group's selection rule at group `k`'s workers.
    pub fn p0_for(&self, k: &GroupFit) -> Result<Vec<f64>> {
        self.control.p0_at(&k.worker_r_rows)
    }

    fn check_compatible(&self, other: &GroupFit) -> Result<()> {
        if self.outcome.w_spec != other.outcome.w_spec
            || self.control.r_spec != other.control.r_spec
            || self.sample.covariate_names() != other.sample.covariate_names()
        {
            return Err(Error::Config(format!(
                "groups `{}` and `{}` use different design specs or schemas",
                self.group_id(),
                other.group_id()
            )));
        }
        Ok(())
    }
}

/// Runs both estimation stages for one sample.
pub fn fit_group(sample: Arc<MicroSample>, specs: &GroupSpecs, trim: &TrimRule) -> Result<GroupFit> {
    let gid = sample.group_id().to_string();
    let control = estimate_control(&sample, &specs.r_spec, &specs.control)
        .map_err(|e| Error::stage("control function", &gid, e))?;
    let outcome = fit_outcome(&sample, &control, &specs.w_spec, trim, &specs.outcome)
        .map_err(|e| Error::stage("outcome", &gid, e))?;
    GroupFit::new(sample, control, outcome)
}

/// Which of group `k`'s workers pass group `r`'s selection rule V > P(H=0|Z).
pub struct Selection {
    pub pass: Vec<bool>,
    pub n_selected: usize,
    /// Workers whose r(Z) falls outside the coordinate-wise range observed
    /// in group r.
    pub n_outside_support: usize,
}

pub fn selection_rule(k: &GroupFit, r: &GroupFit) -> Result<Selection> {
    k.check_compatible(r)?;
    let p0 = r.p0_for(k)?;
    let pass: Vec<bool> = k.control.v_hat.iter().zip(&p0).map(|(v, p)| v > p).collect();
    let n_selected = pass.iter().filter(|p| **p).count();
    let n_outside_support = k
        .worker_r_rows
        .rows()
        .filter(|row| row.iter().zip(&r.r_bounds).any(|(x, b)| *x < b.0 || *x > b.1))
        .count();
    Ok(Selection {
        pass,
        n_selected,
        n_outside_support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualCurve {
    pub triple: (String, String, String),
    pub grid: Vec<f64>,
    pub probs: Vec<f64>,
    pub n_selected: usize,
    pub n_outside_support: usize,
}

impl CounterfactualCurve {
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        Ok(quantile_from_curve(&self.grid, &self.probs, tau)?.value)
    }
}

/// Averages t's LDSF over k's workers that pass r's selection rule.
pub fn counterfactual_cdf(t: &GroupFit, k: &GroupFit, r: &GroupFit, grid: &[f64]) -> Result<CounterfactualCurve> {
    t.check_compatible(k)?;
    let ldsf = t.outcome.ldsf()?;
    let sel = selection_rule(k, r)?;
    if sel.n_selected == 0 {
        return Err(Error::EmptySelection);
    }
    let map: Vec<Option<usize>> = grid.iter().map(|&y| ldsf.threshold_index(y)).collect();
    let mut acc = vec![0.0; grid.len()];
    let mut total = 0.0;
    for ((row, &w), &pass) in k.worker_w_rows.rows().zip(&k.worker_weights).zip(&sel.pass) {
        if !pass {
            continue;
        }
        let curve = ldsf.curve(row)?;
        for (a, m) in acc.iter_mut().zip(&map) {
            if let Some(j) = m {
                *a += w * curve[*j];
            }
        }
        total += w;
    }
    for a in &mut acc {
        *a /= total;
    }
    rearrange_in_place(&mut acc);
    Ok(CounterfactualCurve {
        triple: (t.group_id().into(), k.group_id().into(), r.group_id().into()),
        grid: grid.to_vec(),
        probs: acc,
        n_selected: sel.n_selected,
        n_outside_support: sel.n_outside_support,
    })
}

/// Averages t's LASF over k's workers that pass r's selection rule.
pub fn counterfactual_mean(t: &GroupFit, k: &GroupFit, r: &GroupFit) -> Result<f64> {
    t.check_compatible(k)?;
    let sel = selection_rule(k, r)?;
    if sel.n_selected == 0 {
        return Err(Error::EmptySelection);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((row, &w), &pass) in k.worker_w_rows.rows().zip(&k.worker_weights).zip(&sel.pass) {
        if pass {
            num += w * t.outcome.lasf_at_row(row)?;
            den += w;
        }
    }
    Ok(num / den)
}

/// Sorted union of two groups' outcome thresholds.
pub fn common_grid(a: &GroupFit, b: &GroupFit) -> Result<Vec<f64>> {
    let mut g = a.outcome.ldsf()?.thresholds.clone();
    g.extend_from_slice(&b.outcome.ldsf()?.thresholds);
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Selection, composition and structural effects at one percentile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompResult {
    pub tau: f64,
    pub selection: f64,
    pub composition: f64,
    pub structural: f64,
    pub total: f64,
    pub group1: String,
    pub group0: String,
    pub selection_base: String,
}

impl DecompResult {
    /// selection + composition + structural − total.
    pub fn telescoping_gap(&self) -> f64 {
        self.selection + self.composition + self.structural - self.total
    }

    pub fn components(&self) -> [f64; 4] {
        [self.selection, self.composition, self.structural, self.total]
    }

    fn from_quantiles(tau: f64, q111: f64, q110: f64, q100: f64, q000: f64, g1: &str, g0: &str) -> Self {
        Self {
            tau,
            selection: q111 - q110,
            composition: q110 - q100,
            structural: q100 - q000,
            total: q111 - q000,
            group1: g1.into(),
            group0: g0.into(),
            selection_base: g0.into(),
        }
    }
}

pub const COMPONENTS: [&str; 4] = ["selection", "composition", "structural", "total"];

/// Quantile decomposition of the change from `g0` to `g1`.
pub fn decompose(g1: &GroupFit, g0: &GroupFit, taus: &[f64]) -> Result<Vec<DecompResult>> {
    let grid = common_grid(g1, g0)?;
    let c111 = counterfactual_cdf(g1, g1, g1, &grid)?;
    let c110 = counterfactual_cdf(g1, g1, g0, &grid)?;
    let c100 = counterfactual_cdf(g1, g0, g0, &grid)?;
    let c000 = counterfactual_cdf(g0, g0, g0, &grid)?;
    taus.iter()
        .map(|&tau| {
            Ok(DecompResult::from_quantiles(
                tau,
                c111.quantile(tau)?,
                c110.quantile(tau)?,
                c100.quantile(tau)?,
                c000.quantile(tau)?,
                g1.group_id(),
                g0.group_id(),
            ))
        })
        .collect()
}

/// Decomposition of the change in log(q_hi / q_lo).
pub fn decompose_ratio(g1: &GroupFit, g0: &GroupFit, tau_hi: f64, tau_lo: f64) -> Result<DecompResult> {
    let d = decompose(g1, g0, &[tau_lo, tau_hi])?;
    Ok(ratio_of(&d[1], &d[0]))
}

fn ratio_of(hi: &DecompResult, lo: &DecompResult) -> DecompResult {
    DecompResult {
        tau: f64::NAN,
        selection: hi.selection - lo.selection,
        composition: hi.composition - lo.composition,
        structural: hi.structural - lo.structural,
        total: hi.total - lo.total,
        ..hi.clone()
    }
}

/// Mean-level decomposition from the LASF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDecomposition {
    pub selection: f64,
    pub composition: f64,
    pub structural: f64,
    pub total: f64,
}

pub fn decompose_mean(g1: &GroupFit, g0: &GroupFit) -> Result<MeanDecomposition> {
    let m111 = counterfactual_mean(g1, g1, g1)?;
    let m110 = counterfactual_mean(g1, g1, g0)?;
    let m100 = counterfactual_mean(g1, g0, g0)?;
    let m000 = counterfactual_mean(g0, g0, g0)?;
    Ok(MeanDecomposition {
        selection: m111 - m110,
        composition: m110 - m100,
        structural: m100 - m000,
        total: m111 - m000,
    })
}

/// Decompositions of one family of groups over periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEffects {
    pub period: String,
    pub results: Vec<DecompResult>,
}

/// Decomposes every period against `base` (whose selection rule is used
/// throughout) and re-references each series to the first period.
pub fn decompose_series(periods: &[(String, &GroupFit)], base: &GroupFit, taus: &[f64]) -> Result<Vec<PeriodEffects>> {
    let raw: Vec<PeriodEffects> = periods
        .iter()
        .map(|(label, g)| {
            Ok(PeriodEffects {
                period: label.clone(),
                results: decompose(g, base, taus)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(rereference(raw))
}

/// Subtracts the first period's components from every period.
pub fn rereference(raw: Vec<PeriodEffects>) -> Vec<PeriodEffects> {
    let Some(first) = raw.first().map(|p| p.results.clone()) else {
        return raw;
    };
    raw.into_iter()
        .map(|p| PeriodEffects {
            results: p
                .results
                .iter()
                .zip(&first)
                .map(|(r, f)| DecompResult {
                    selection: r.selection - f.selection,
                    composition: r.composition - f.composition,
                    structural: r.structural - f.structural,
                    total: r.total - f.total,
                    ..r.clone()
                })
                .collect(),
            period: p.period,
        })
        .collect()
}

/// Per-period, per-component difference between two families' series.
pub fn decompose_between(a: &[PeriodEffects], b: &[PeriodEffects]) -> Result<Vec<PeriodEffects>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.period != y.period) {
        return Err(Error::Config("families cover different periods".into()));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.results.len() != y.results.len() {
                return Err(Error::Config("families use different percentile lists".into()));
            }
            Ok(PeriodEffects {
                period: x.period.clone(),
                results: x
                    .results
                    .iter()
                    .zip(&y.results)
                    .map(|(p, q)| DecompResult {
                        selection: p.selection - q.selection,
                        composition: p.composition - q.composition,
                        structural: p.structural - q.structural,
                        total: p.total - q.total,
                        group1: format!("{}-{}", p.group1, q.group1),
                        group0: format!("{}-{}", p.group0, q.group0),
                        selection_base: format!("{}-{}", p.selection_base, q.selection_base),
                        tau: p.tau,
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Ratio decomposition of each period of a series.
pub fn series_ratio(series: &[PeriodEffects], tau_hi: f64, tau_lo: f64) -> Result<Vec<(String, DecompResult)>> {
    series
        .iter()
        .map(|p| {
            let find = |t: f64| {
                p.results
                    .iter()
                    .find(|r| (r.tau - t).abs() < 1e-12)
                    .ok_or_else(|| Error::Config(format!("percentile {t} not in the decomposition")))
            };
            Ok((p.period.clone(), ratio_of(find(tau_hi)?, find(tau_lo)?)))
        })
        .collect()
}

fn indicator_levels<'a>(terms: &'a [Term], var: &str) -> Option<&'a [f64]> {
    terms.iter().find_map(|t| match t {
        Term::Indicators { name, levels } if name == var => Some(levels.as_slice()),
        Term::WithControl(inner) => indicator_levels(std::slice::from_ref(inner), var),
        _ => None,
    })
}

/// Average effect of moving education from `e0` to `e`: the mean LASF over
/// workers with level `e` evaluated at `e`, minus the mean LASF over workers
/// with level `e0` evaluated at `e0`. The two averages run over different
/// subsamples.
pub fn ate_education(fit: &GroupFit, educ_var: &str, e0: f64, e: f64) -> Result<f64> {
    let sample = &fit.sample;
    let idx = sample
        .covariate_index(educ_var)
        .ok_or_else(|| Error::UnknownCovariate(educ_var.to_string()))?;
    if indicator_levels(&fit.outcome.w_spec.terms, educ_var).is_none() {
        return Err(Error::Config(format!(
            "`{educ_var}` is not expanded into indicators in the wage design"
        )));
    }
    let resolved = fit.outcome.resolved()?;
    let level_mean = |level: f64| -> Result<f64> {
        if !sample.observations().iter().any(|o| o.covariates[idx] == level) {
            return Err(Error::Config(format!("unknown level {level} of `{educ_var}`")));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (pos, &i) in fit.control.workers.iter().enumerate() {
            let obs = &sample.observations()[i];
            if obs.covariates[idx] != level {
                continue;
            }
            let mut x = obs.covariates.clone();
            x[idx] = level;
            let row = resolved.row(&x, Some(fit.control.v_hat[pos]))?;
            let w = sample.weight(i);
            num += w * fit.outcome.lasf_at_row(&row)?;
            den += w;
        }
        if den == 0.0 {
            return Err(Error::Data(format!("no workers with `{educ_var}` = {level}")));
        }
        Ok(num / den)
    };
    Ok(level_mean(e)? - level_mean(e0)?)
}
