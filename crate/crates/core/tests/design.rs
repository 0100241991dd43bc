use proptest::prelude::*;

use seldecomp::data::{
    build_design, read_csv, validate_sample, write_csv, DesignSpec, MicroSample, Observation, Severity, Term,
};
use seldecomp::Error;

fn obs(hours: f64, wage: Option<f64>, covs: &[f64]) -> Observation {
    Observation {
        hours,
        log_wage: wage,
        covariates: covs.to_vec(),
    }
}

fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

#[test]
fn intercept_rows_are_ones() {
    let s = MicroSample::new("g", names(&["age"]), vec![obs(0.0, None, &[30.0]), obs(5.0, Some(1.0), &[50.0])], None)
        .unwrap();
    let d = build_design(&s, &DesignSpec::intercept(), None).unwrap();
    assert!(d.rows().all(|r| r == [1.0]));
}

#[test]
fn square_and_linear_terms() {
    let s = MicroSample::new("g", names(&["age"]), vec![obs(1.0, Some(1.0), &[40.0])], None).unwrap();
    let spec = DesignSpec::new(vec![Term::Intercept, Term::linear("age"), Term::square("age")]);
    assert_eq!(build_design(&s, &spec, None).unwrap().row(0), [1.0, 40.0, 1600.0]);
}

#[test]
fn interaction_with_control() {
    let s = MicroSample::new("g", names(&["educ_college"]), vec![obs(1.0, Some(1.0), &[1.0])], None).unwrap();
    let spec = DesignSpec::new(vec![Term::interaction("educ_college", "V")]);
    assert_eq!(build_design(&s, &spec, Some(&[0.25])).unwrap().row(0), [0.25]);
    assert!(matches!(build_design(&s, &spec, None), Err(Error::MissingControl)));
}

#[test]
fn control_block_layout() {
    let spec = DesignSpec::with_control_block(vec![Term::Intercept, Term::linear("a"), Term::indicators("e", &[1.0, 2.0])]);
    let r = spec.resolve(&names(&["a", "e"])).unwrap();
    assert_eq!(
        r.column_names(),
        ["(intercept)", "a", "e==1", "e==2", "V", "V^2", "a*V", "e==1*V", "e==2*V"]
    );
    assert_eq!(r.row(&[3.0, 2.0], Some(0.5)).unwrap(), [1.0, 3.0, 0.0, 1.0, 0.5, 0.25, 1.5, 0.0, 0.5]);
}

#[test]
fn unknown_covariate_is_reported() {
    let spec = DesignSpec::new(vec![Term::linear("nope")]);
    assert!(matches!(spec.resolve(&names(&["a"])), Err(Error::UnknownCovariate(n)) if n == "nope"));
}

#[test]
fn validation_reports() {
    let bad = MicroSample::new("g", vec![], vec![obs(-1.0, None, &[]), obs(0.0, None, &[])], None).unwrap();
    let rep = validate_sample(&bad);
    let neg = rep.errors().next().unwrap();
    assert_eq!((neg.index, neg.message.as_str()), (Some(0), "negative hours"));

    let good = MicroSample::new("g", vec![], vec![obs(0.0, None, &[]), obs(2.0, Some(1.0), &[])], None).unwrap();
    assert!(validate_sample(&good).is_empty());

    let all_work = MicroSample::new("g", vec![], vec![obs(1.0, Some(1.0), &[]), obs(2.0, Some(1.0), &[])], None).unwrap();
    let rep = validate_sample(&all_work);
    assert!(!rep.has_errors());
    assert!(rep
        .warnings()
        .any(|w| w.severity == Severity::Warning && w.message == "no nonworkers; selection threshold at h=0 unidentified"));
}

#[test]
fn csv_round_trip() {
    let s = MicroSample::new(
        "g",
        names(&["a", "b"]),
        vec![obs(0.0, None, &[1.5, 0.0]), obs(2080.0, Some(2.75), &[-0.1, 1.0])],
        Some(vec![1.0, 2.5]),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_csv(&s, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), "g", Some("weight")).unwrap();
    assert_eq!(back, s);
    assert!(matches!(
        read_csv("x\n1\n".as_bytes(), "g", None),
        Err(Error::Data(m)) if m.contains("hours")
    ));
}

proptest! {
    #[test]
    fn design_is_permutation_equivariant(
        rows in prop::collection::vec((0.0f64..100.0, -5.0f64..5.0, 0u8..3), 2..30),
        seed in any::<u64>(),
    ) {
        let observations: Vec<Observation> =
            rows.iter().map(|&(h, x, e)| obs(h, Some(1.0), &[x, f64::from(e)])).collect();
        let mut perm: Vec<usize> = (0..observations.len()).collect();
        // deterministic shuffle driven by the seed
        let mut state = seed | 1;
        for i in (1..perm.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            perm.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let spec = DesignSpec::with_control_block(vec![
            Term::Intercept,
            Term::linear("x"),
            Term::square("x"),
            Term::indicators("e", &[1.0, 2.0]),
        ]);
        let control: Vec<f64> = (0..observations.len()).map(|i| (i as f64 + 0.5) / observations.len() as f64).collect();
        let permuted: Vec<Observation> = perm.iter().map(|&i| observations[i].clone()).collect();
        let pc: Vec<f64> = perm.iter().map(|&i| control[i]).collect();
        let a = build_design(&MicroSample::new("g", names(&["x", "e"]), observations, None).unwrap(), &spec, Some(&control)).unwrap();
        let b = build_design(&MicroSample::new("g", names(&["x", "e"]), permuted, None).unwrap(), &spec, Some(&pc)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a.row(i), b.row(k));
        }
    }
}
