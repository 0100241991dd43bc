//! Browser bindings: the inverse Mills ratio, closed-form mean effects of
//! the parametric selection model, and a small simulate-and-decompose run.
//! Results cross the boundary as numbers or JSON strings.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use seldecomp::control::ControlOptions;
use seldecomp::counterfactual::{common_grid, counterfactual_cdf, decompose, fit_group, GroupSpecs};
use seldecomp::data::{DesignSpec, Term, TrimRule};
use seldecomp::distreg::GridPolicy;
use seldecomp::oracle::{closed_form_effects, inverse_mills, simulate_hsm, CovariateLaw, HSMParams, Marginal};
use seldecomp::outcome::OutcomeOptions;

/// λ(u) on `n` evenly spaced points of [lo, hi].
#[wasm_bindgen]
pub fn mills_curve(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| inverse_mills(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

fn demo_params(rho: f64, intercept: f64, slope: f64) -> HSMParams {
    HSMParams {
        alpha: vec![2.0, slope, 0.15],
        wage_covariates: vec!["x".into(), "d".into()],
        gamma: vec![intercept, 0.5, 0.3, 0.8],
        rho,
        covariate_law: CovariateLaw::independent(
            &["x", "d", "z"],
            vec![
                Marginal::Normal { mean: 0.0, sd: 1.0 },
                Marginal::Bernoulli(0.5),
                Marginal::Normal { mean: 0.0, sd: 1.0 },
            ],
        ),
        hours_scale: 1.0,
    }
}

/// Closed-form mean effects between two demo parameter sets, as JSON.
#[wasm_bindgen]
pub fn oracle_effects(rho1: f64, gamma1: f64, slope1: f64, rho0: f64, gamma0: f64, slope0: f64) -> Result<String, JsError> {
    let effects = closed_form_effects(
        &demo_params(rho1, gamma1, slope1),
        &demo_params(rho0, gamma0, slope0),
        50_000,
        1,
    )
    .map_err(|e| JsError::new(&e.to_string()))?;
    Ok(serde_json::to_string(&effects)?)
}

#[derive(Serialize)]
struct DemoRun {
    taus: Vec<f64>,
    selection: Vec<f64>,
    composition: Vec<f64>,
    structural: Vec<f64>,
    total: Vec<f64>,
    grid: Vec<f64>,
    /// Observed CDFs of groups 1 and 0 and the two intermediate
    /// counterfactuals, in the order ⟨1,1,1⟩, ⟨1,1,0⟩, ⟨1,0,0⟩, ⟨0,0,0⟩.
    curves: Vec<Vec<f64>>,
}

/// Simulates both groups, runs the full estimator and returns the quantile
/// decomposition and counterfactual CDFs as JSON.
#[wasm_bindgen]
pub fn simulate_decompose(
    rho1: f64,
    gamma1: f64,
    slope1: f64,
    rho0: f64,
    gamma0: f64,
    slope0: f64,
    n: usize,
    seed: u64,
) -> Result<String, JsError> {
    run_demo([rho1, gamma1, slope1], [rho0, gamma0, slope0], n, seed).map_err(|e| JsError::new(&e.to_string()))
}

fn run_demo(p1: [f64; 3], p0: [f64; 3], n: usize, seed: u64) -> seldecomp::Result<String> {
    let s1 = simulate_hsm(&demo_params(p1[0], p1[1], p1[2]), n, seed)?.with_group_id("1");
    let s0 = simulate_hsm(&demo_params(p0[0], p0[1], p0[2]), n, seed.wrapping_add(1))?.with_group_id("0");
    let covs = [Term::linear("x"), Term::linear("d")];
    let mut r_terms = vec![Term::Intercept];
    r_terms.extend(covs.iter().cloned());
    r_terms.push(Term::linear("z"));
    let mut w_terms = vec![Term::Intercept];
    w_terms.extend(covs.iter().cloned());
    w_terms.push(Term::InverseNormal(seldecomp::data::CONTROL.into()));
    let specs = GroupSpecs {
        r_spec: DesignSpec::new(r_terms),
        w_spec: DesignSpec::new(w_terms),
        control: ControlOptions {
            grid: GridPolicy {
                max_points: 60,
                include_zero: true,
                force_frequent: 0,
            },
            ..Default::default()
        },
        outcome: OutcomeOptions {
            grid: GridPolicy {
                max_points: 60,
                include_zero: false,
                force_frequent: 0,
            },
            ..Default::default()
        },
    };
    let g1 = fit_group(Arc::new(s1), &specs, &TrimRule::default())?;
    let g0 = fit_group(Arc::new(s0), &specs, &TrimRule::default())?;
    let taus: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let results = decompose(&g1, &g0, &taus)?;
    let grid = common_grid(&g1, &g0)?;
    let curves = [(&g1, &g1, &g1), (&g1, &g1, &g0), (&g1, &g0, &g0), (&g0, &g0, &g0)]
        .into_iter()
        .map(|(t, k, r)| Ok(counterfactual_cdf(t, k, r, &grid)?.probs))
        .collect::<seldecomp::Result<_>>()?;
    let pick = |f: fn(&seldecomp::DecompResult) -> f64| results.iter().map(f).collect();
    Ok(serde_json::to_string(&DemoRun {
        selection: pick(|r| r.selection),
        composition: pick(|r| r.composition),
        structural: pick(|r| r.structural),
        total: pick(|r| r.total),
        taus,
        grid,
        curves,
    })?)
}
