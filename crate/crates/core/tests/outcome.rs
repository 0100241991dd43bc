mod common;

use seldecomp::control::{estimate_control, ControlOptions};
use seldecomp::data::{build_design, DesignSpec, MicroSample, Observation, Term, TrimRule};
use seldecomp::math::{normal_cdf, quantile_sorted, sorted_copy};
use seldecomp::outcome::{fit_outcome, trim, weighted_least_squares, OutcomeOptions};
use seldecomp::Error;

use common::{mean_sd, params, r_spec, sample, w_spec};

fn mean_only() -> OutcomeOptions {
    OutcomeOptions {
        fit_ldsf: false,
        ..Default::default()
    }
}

#[test]
fn trimming_rules() {
    let s = sample(&params(0.3, 0.2, 1.0, 0.0), 4000, 1, "g");
    let control = estimate_control(&s, &r_spec(), &ControlOptions::default()).unwrap();
    let all = trim(&s, &control, &TrimRule::default()).unwrap();
    assert_eq!(all, control.workers);

    let positive: Vec<f64> = control.workers.iter().map(|&i| s.observations()[i].hours).collect();
    let sorted = sorted_copy(&positive);
    let below = TrimRule::new(0.0, Some(sorted[0] / 2.0)).unwrap();
    assert!(matches!(trim(&s, &control, &below), Err(Error::EmptyTrim)));

    let q25 = quantile_sorted(&sorted, 0.25);
    let kept = trim(&s, &control, &TrimRule::new(q25, None).unwrap()).unwrap();
    let ties = positive.iter().filter(|h| **h == q25).count();
    let expected = 0.75 * positive.len() as f64;
    assert!((kept.len() as f64 - expected).abs() <= ties as f64 + 1.0);
}

#[test]
fn lasf_recovers_wage_coefficients_and_rho() {
    let p = params(0.5, 0.3, 1.0, 0.0);
    let runs: Vec<Vec<f64>> = (0..6)
        .map(|seed| {
            let s = sample(&p, 20_000, 40 + seed, "g");
            let control = estimate_control(&s, &r_spec(), &ControlOptions::default()).unwrap();
            fit_outcome(&s, &control, &w_spec(), &TrimRule::default(), &mean_only())
                .unwrap()
                .lasf_coefficients
        })
        .collect();
    let mut truth = p.alpha.clone();
    truth.push(p.rho);
    for (j, t) in truth.iter().enumerate() {
        let col: Vec<f64> = runs.iter().map(|r| r[j]).collect();
        let (_, sd) = mean_sd(&col);
        let z = (col[0] - t) / sd;
        assert!(z.abs() < 3.0, "coefficient {j}: estimate {} truth {t} sd {sd}", col[0]);
    }

    // Φ^{-1}(0.5) = 0 and Φ^{-1}(Φ(1)) = 1, so the difference is -ρ̂
    let s = sample(&p, 20_000, 40, "g");
    let control = estimate_control(&s, &r_spec(), &ControlOptions::default()).unwrap();
    let fit = fit_outcome(&s, &control, &w_spec(), &TrimRule::default(), &mean_only()).unwrap();
    let x = [0.2, 1.0, 0.0, -0.3];
    let diff = fit.lasf_value(&x, 0.5).unwrap() - fit.lasf_value(&x, normal_cdf(1.0)).unwrap();
    assert!((diff + runs[0][4]).abs() < 1e-12);
}

#[test]
fn normal_equations_hold() {
    let s = sample(&params(0.4, 0.1, 1.0, 0.0), 5000, 2, "g");
    let control = estimate_control(&s, &r_spec(), &ControlOptions::default()).unwrap();
    let spec = DesignSpec::with_control_block(vec![Term::Intercept, Term::linear("x1"), Term::linear("x2")]);
    let fit = fit_outcome(&s, &control, &spec, &TrimRule::default(), &mean_only()).unwrap();
    let v: Vec<f64> = fit
        .trimmed
        .iter()
        .map(|i| control.v_hat[control.workers.binary_search(i).unwrap()])
        .collect();
    let design = spec.resolve(s.covariate_names()).unwrap().build(&s, &fit.trimmed, Some(&v)).unwrap();
    let mut xr = vec![0.0; design.ncols()];
    for (row, &i) in design.rows().zip(&fit.trimmed) {
        let r = s.observations()[i].log_wage.unwrap() - fit.lasf_at_row(row).unwrap();
        for (a, x) in xr.iter_mut().zip(row) {
            *a += x * r;
        }
    }
    let n = fit.trimmed.len() as f64;
    assert!(xr.iter().all(|a| (a / n).abs() <= 1e-8), "{xr:?}");

    // indicator contrast equals its coefficient plus the interaction at v
    let names = spec.resolve(s.covariate_names()).unwrap().column_names();
    let at = |name: &str| fit.lasf_coefficients[names.iter().position(|c| c == name).unwrap()];
    let v0 = 0.37;
    let diff = fit.lasf_value(&[0.1, 1.0, 0.0, 0.0], v0).unwrap() - fit.lasf_value(&[0.1, 0.0, 0.0, 0.0], v0).unwrap();
    assert!((diff - (at("x2") + at("x2*V") * v0)).abs() < 1e-12);
}

#[test]
fn constant_outcome() {
    let c = 2.5;
    let s = sample(&params(0.4, 0.1, 1.0, 0.0), 2000, 3, "g");
    let obs: Vec<Observation> = s
        .observations()
        .iter()
        .map(|o| Observation {
            log_wage: o.log_wage.map(|_| c),
            ..o.clone()
        })
        .collect();
    let s = MicroSample::new("c", s.covariate_names().to_vec(), obs, None).unwrap();
    let control = estimate_control(&s, &r_spec(), &ControlOptions::default()).unwrap();
    let fit = fit_outcome(&s, &control, &w_spec(), &TrimRule::default(), &OutcomeOptions::default()).unwrap();
    assert!((fit.lasf_coefficients[0] - c).abs() < 1e-10);
    assert!(fit.lasf_coefficients[1..].iter().all(|b| b.abs() < 1e-10));
    assert!((fit.lasf_value(&[3.0, 1.0, 1.0, 0.0], 0.9).unwrap() - c).abs() < 1e-10);
    let ldsf = fit.ldsf().unwrap();
    let row = [1.0, 0.3, 0.0, 1.0, 0.2];
    assert_eq!(ldsf.evaluate_cdf(&row, c).unwrap(), 1.0);
    assert_eq!(ldsf.evaluate_cdf(&row, c - 0.01).unwrap(), 0.0);
}

#[test]
fn ldsf_rows_are_monotone_distributions() {
    let s = sample(&params(0.4, 0.1, 1.0, 0.0), 3000, 4, "g");
    let control = estimate_control(&s, &r_spec(), &ControlOptions::default()).unwrap();
    let fit = fit_outcome(&s, &control, &w_spec(), &TrimRule::default(), &OutcomeOptions::default()).unwrap();
    let design = build_design(&s, &w_spec(), None);
    assert!(matches!(design, Err(Error::MissingControl)));
    let ldsf = fit.ldsf().unwrap();
    let lo = ldsf.thresholds[0];
    let hi = *ldsf.thresholds.last().unwrap();
    let wages: Vec<f64> = fit.trimmed.iter().map(|&i| s.observations()[i].log_wage.unwrap()).collect();
    assert_eq!(lo, wages.iter().copied().fold(f64::INFINITY, f64::min));
    assert_eq!(hi, wages.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    for v in [0.05, 0.5, 0.95] {
        let row = fit.resolved().unwrap().row(&[0.0, 1.0, 0.0, 0.0], Some(v)).unwrap();
        let curve = ldsf.curve(&row).unwrap();
        assert!(curve.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn wage_design_must_carry_the_control() {
    let s = sample(&params(0.4, 0.1, 1.0, 0.0), 500, 5, "g");
    let control = estimate_control(&s, &r_spec(), &ControlOptions::default()).unwrap();
    let spec = DesignSpec::new(vec![Term::Intercept, Term::linear("x1")]);
    assert!(matches!(
        fit_outcome(&s, &control, &spec, &TrimRule::default(), &mean_only()),
        Err(Error::Config(_))
    ));
}

#[test]
fn least_squares_reports_collinear_columns() {
    let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
    let x = seldecomp::data::Design::from_rows(&rows).unwrap();
    let err = weighted_least_squares(&x, &[1.0; 10], &[1.0; 10]).unwrap_err();
    assert!(matches!(err, Error::Collinear { .. }));
}
