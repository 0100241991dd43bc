mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use seldecomp::data::TrimRule;
use seldecomp::inference::{
    bootstrap_decomposition, bootstrap_statistic, replicate_weights, BootstrapConfig, WeightLaw,
};
use seldecomp::{Error, MicroSample};

use common::{params, sample, specs};

const TAUS: [f64; 3] = [0.25, 0.5, 0.75];

fn weighted_mean_wage(s: &MicroSample) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, o) in s.observations().iter().enumerate() {
        if let Some(y) = o.log_wage {
            num += s.weight(i) * y;
            den += s.weight(i);
        }
    }
    num / den
}

#[test]
fn replicates_depend_only_on_seed_and_index() {
    let s1 = sample(&params(0.5, 0.3, 1.1, 0.0), 1200, 1, "g1");
    let s0 = sample(&params(0.0, 0.0, 1.0, 0.0), 1200, 2, "g0");
    let sp = specs(40, 40, true);
    let trims = (TrimRule::default(), TrimRule::default());
    let short = bootstrap_decomposition(s1.clone(), s0.clone(), &sp, trims, &TAUS, &BootstrapConfig::new(6, 9)).unwrap();
    let long = bootstrap_decomposition(s1, s0, &sp, trims, &TAUS, &BootstrapConfig::new(12, 9)).unwrap();
    assert_eq!(short.result.replicates[..], long.result.replicates[..6]);
    assert_eq!(short.result.estimate, long.result.estimate);
    for rep in long.result.replicates.iter().flatten() {
        for c in rep.chunks(4) {
            assert!((c[0] + c[1] + c[2] - c[3]).abs() <= 1e-12);
        }
    }
    for iv in &long.result.intervals {
        assert!(iv.lo <= iv.hi);
        assert_eq!(iv.point_outside, iv.estimate < iv.lo || iv.estimate > iv.hi);
    }
}

#[test]
fn replicate_matches_direct_reweighting() {
    let s = sample(&params(0.3, 0.2, 1.0, 0.0), 500, 3, "g");
    let cfg = BootstrapConfig::new(20, 5);
    let point = [weighted_mean_wage(&s)];
    let res = bootstrap_statistic(&[&s], &point, &cfg, |v| Ok(vec![weighted_mean_wage(&v[0])])).unwrap();
    for b in [0, 7, 19] {
        let w = replicate_weights(&cfg, b, &[s.len()]);
        let direct = weighted_mean_wage(&s.reweighted(&w[0]).unwrap());
        assert_eq!(res.replicates[b].as_ref().unwrap()[0], direct);
    }
    // the interval ends are replicate values
    let vals: Vec<f64> = res.replicates.iter().flatten().map(|r| r[0]).collect();
    assert!(vals.contains(&res.intervals[0].lo) && vals.contains(&res.intervals[0].hi));
    // weights have mean near 1
    let w = &replicate_weights(&cfg, 0, &[100_000])[0];
    assert!((w.iter().sum::<f64>() / w.len() as f64 - 1.0).abs() < 0.02);
}

#[test]
fn unit_weights_collapse_the_interval() {
    let s1 = sample(&params(0.5, 0.3, 1.1, 0.0), 800, 4, "g1");
    let s0 = sample(&params(0.0, 0.0, 1.0, 0.0), 800, 5, "g0");
    let cfg = BootstrapConfig {
        weight_law: WeightLaw::Unit,
        ..BootstrapConfig::new(4, 1)
    };
    let trims = (TrimRule::default(), TrimRule::default());
    let res = bootstrap_decomposition(s1, s0, &specs(40, 40, true), trims, &TAUS, &cfg).unwrap();
    for rep in res.result.replicates.iter().flatten() {
        assert_eq!(rep, &res.result.estimate);
    }
    for iv in &res.result.intervals {
        assert_eq!((iv.lo, iv.hi, iv.se), (iv.estimate, iv.estimate, 0.0));
    }
}

#[test]
fn failed_replicates_are_counted() {
    let s = sample(&params(0.3, 0.2, 1.0, 0.0), 50, 6, "g");
    let calls = AtomicUsize::new(0);
    let cfg = BootstrapConfig::new(20, 2);
    // fail replicate index 3 only, identified by its first weight
    let marker = replicate_weights(&cfg, 3, &[s.len()])[0][0];
    let res = bootstrap_statistic(&[&s], &[0.0], &cfg, |v| {
        calls.fetch_add(1, Ordering::Relaxed);
        if v[0].weight(0) == marker {
            Err(Error::EmptySelection)
        } else {
            Ok(vec![1.0])
        }
    })
    .unwrap();
    assert_eq!(calls.load(Ordering::Relaxed), 20);
    assert_eq!(res.n_fail, 1);
    assert!(res.replicates[3].is_none());

    let err = bootstrap_statistic(&[&s], &[0.0], &cfg, |_| Err(Error::EmptySelection)).unwrap_err();
    assert!(matches!(err, Error::Bootstrap { failed: 20, total: 20 }));
    assert!(bootstrap_statistic(&[&s], &[0.0], &BootstrapConfig::new(1, 0), |_| Ok(vec![0.0])).is_err());
}
