#![allow(dead_code)]

use std::sync::Arc;

use seldecomp::control::ControlOptions;
use seldecomp::counterfactual::{fit_group, GroupFit, GroupSpecs};
use seldecomp::data::{DesignSpec, MicroSample, Term, TrimRule};
use seldecomp::distreg::GridPolicy;
use seldecomp::oracle::{simulate_hsm, CovariateLaw, HSMParams, Marginal};
use seldecomp::outcome::OutcomeOptions;

pub const WAGE_COVARIATES: [&str; 3] = ["x1", "x2", "x3"];

/// x1 ~ N(m, 1), x2 ~ B(0.5), x3 ~ B(0.3), and an excluded z ~ N(0, 1).
pub fn law(x1_mean: f64) -> CovariateLaw {
    CovariateLaw::independent(
        &["x1", "x2", "x3", "z"],
        vec![
            Marginal::Normal { mean: x1_mean, sd: 1.0 },
            Marginal::Bernoulli(0.5),
            Marginal::Bernoulli(0.3),
            Marginal::Normal { mean: 0.0, sd: 1.0 },
        ],
    )
}

pub fn params(rho: f64, gamma0: f64, alpha0: f64, x1_mean: f64) -> HSMParams {
    HSMParams {
        alpha: vec![alpha0, 0.3, 0.2, 0.1],
        wage_covariates: WAGE_COVARIATES.iter().map(|s| s.to_string()).collect(),
        gamma: vec![gamma0, 0.5, 0.3, -0.2, 0.8],
        rho,
        covariate_law: law(x1_mean),
        hours_scale: 1.0,
    }
}

pub fn r_spec() -> DesignSpec {
    let mut terms = vec![Term::Intercept];
    terms.extend(["x1", "x2", "x3", "z"].map(Term::linear));
    DesignSpec::new(terms)
}

pub fn w_spec() -> DesignSpec {
    let mut terms = vec![Term::Intercept];
    terms.extend(WAGE_COVARIATES.map(Term::linear));
    terms.push(Term::InverseNormal("V".into()));
    DesignSpec::new(terms)
}

/// Stage settings; `hours_points`/`wage_points` cap the grids and
/// `ldsf = false` skips the wage distribution regression.
pub fn specs(hours_points: usize, wage_points: usize, ldsf: bool) -> GroupSpecs {
    GroupSpecs {
        r_spec: r_spec(),
        w_spec: w_spec(),
        control: ControlOptions {
            grid: GridPolicy {
                max_points: hours_points,
                include_zero: true,
                force_frequent: 50,
            },
            ..Default::default()
        },
        outcome: OutcomeOptions {
            grid: GridPolicy {
                max_points: wage_points,
                include_zero: false,
                force_frequent: 0,
            },
            fit_ldsf: ldsf,
            ..Default::default()
        },
    }
}

pub fn sample(p: &HSMParams, n: usize, seed: u64, id: &str) -> Arc<MicroSample> {
    Arc::new(simulate_hsm(p, n, seed).unwrap().with_group_id(id))
}

pub fn fit(p: &HSMParams, n: usize, seed: u64, id: &str, specs: &GroupSpecs) -> GroupFit {
    fit_group(sample(p, n, seed, id), specs, &TrimRule::default()).unwrap()
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}
