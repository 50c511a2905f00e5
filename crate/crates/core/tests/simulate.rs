use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use structcox::grouping::check_rules;
use structcox::model_select::CvRule;
use structcox::simulate::*;
use structcox::survival::RiskIndex;

fn spec(kind: &str, n: usize, seed: u64) -> ScenarioSpec {
    ScenarioSpec::new(kind.parse().unwrap(), n, seed)
}

/// Asymptotic Kolmogorov survival function.
fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let x = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * x * x).exp();
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn run_lengths_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let s = piecewise_series(&mut rng, 10, 5, 10, 50, |r| r.random_range(1..=3) as f64);
        assert_eq!(s.values.len(), 50);
        assert_eq!(s.durations.len(), 10);
        assert!(s.durations.iter().all(|d| (5..=10).contains(d)));
        // Runs of the kept series are sums of whole sampled runs, except the
        // last, which may be cut by the horizon.
        let mut pos = 0;
        for &d in &s.durations {
            if pos >= 50 {
                break;
            }
            let end = (pos + d).min(50);
            assert!(s.values[pos..end].iter().all(|&v| v == s.values[pos]));
            pos += d;
        }
    }
}

#[test]
fn level_frequencies_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = [0usize; 3];
    let mut total = 0;
    while total < 10_000 {
        let s = piecewise_series(&mut rng, 10, 5, 10, 50, |r| r.random_range(1..=3) as f64);
        let mut pos = 0;
        for &d in &s.durations {
            counts[s.values.get(pos).map_or(0, |v| *v as usize - 1)] += (pos < 50) as usize;
            total += (pos < 50) as usize;
            pos += d;
        }
    }
    for c in counts {
        assert!((c as f64 / total as f64 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn categorical_design_columns() {
    let s = spec("categorical_s1", 1, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let path = covariate_path(&s, &mut rng);
        assert_eq!(path.first().unwrap().start, 0.0);
        assert_eq!(path.last().unwrap().stop, 50.0);
        for w in path.windows(2) {
            assert_eq!(w[0].stop, w[1].start);
            assert_ne!(w[0].x, w[1].x);
        }
        for seg in &path {
            let x = &seg.x;
            assert_eq!(x.len(), 9);
            assert_eq!(x[0] * x[1], 0.0);
            assert_eq!(x[5] * x[6], 0.0);
            assert_eq!(x[3], x[0] * x[2]);
            assert_eq!(x[4], x[1] * x[2]);
            assert_eq!(x[7], x[5] * x[2]);
            assert_eq!(x[8], x[6] * x[2]);
            assert_eq!(seg.start.fract(), 0.0);
        }
    }
}

#[test]
fn null_effects_give_exponential_times() {
    let h0 = 0.04;
    let path = vec![Segment {
        start: 0.0,
        stop: 1e9,
        x: vec![1.0, -2.0],
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut times: Vec<f64> = (0..10_000)
        .map(|_| event_time(&path, &[0.0, 0.0], h0, rng.sample(Exp1)).unwrap())
        .collect();
    times.sort_by(f64::total_cmp);
    let n = times.len() as f64;
    let d = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = 1.0 - (-h0 * t).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(kolmogorov_p(d, times.len()) > 0.01, "KS statistic {d}");

    // Time-varying covariates with zero effects give the same law.
    let s = spec("categorical_s1", 1, 0);
    let mut cov = ChaCha8Rng::seed_from_u64(5);
    let mut times: Vec<f64> = (0..10_000)
        .filter_map(|_| {
            let p = covariate_path(&s, &mut cov);
            event_time(&p, &vec![0.0; p.len()], h0, rng.sample(Exp1))
        })
        .collect();
    // Censored at 50 by the path; compare the sub-distribution.
    times.sort_by(f64::total_cmp);
    let d = times
        .iter()
        .enumerate()
        .map(|(i, &t)| ((1.0 - (-h0 * t).exp()) - (i + 1) as f64 / 10_000.0).abs())
        .fold(0.0, f64::max);
    assert!(kolmogorov_p(d, 10_000) > 0.01, "KS statistic {d}");
}

#[test]
fn doubling_risk_halves_median() {
    let s = spec("categorical_s1", 1, 0);
    let truth = scenario_truth(&s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draws: Vec<(Vec<Segment>, f64)> = (0..10_000)
        .map(|_| (covariate_path(&s, &mut rng), rng.sample(Exp1)))
        .collect();
    let median = |factor: f64| {
        let mut t: Vec<f64> = draws
            .iter()
            .map(|(path, e)| {
                let eta: Vec<f64> = path
                    .iter()
                    .map(|seg| seg.x.iter().zip(&truth.beta).map(|(x, b)| x * b).sum::<f64>() + factor.ln())
                    .collect();
                event_time(path, &eta, 0.02, *e).unwrap_or(f64::INFINITY)
            })
            .collect();
        t.sort_by(f64::total_cmp);
        t[t.len() / 2]
    };
    let (m1, m2) = (median(1.0), median(2.0));
    assert!(m1.is_finite());
    assert!((m2 / m1 - 0.5).abs() < 0.05, "{m1} -> {m2}");
}

#[test]
fn realized_censoring_near_target() {
    for kind in ["categorical_s1", "categorical_s2"] {
        let sim = generate(&spec(kind, 1000, 11), 0).unwrap();
        let subjects = sim.dataset.subjects().len();
        assert_eq!(subjects, 1000);
        let censored = 1.0 - sim.dataset.n_events() as f64 / subjects as f64;
        assert!((censored - 0.5).abs() <= 0.03, "{kind}: {censored}");
        let c = sim.calibration;
        assert!((c.censoring - 0.5).abs() < 0.01);
        assert!(c.h0 > 0.0 && c.c_max > 0.0);
    }
}

#[test]
fn records_split_at_changes_and_exit() {
    let s = spec("categorical_s2", 200, 12);
    let sim = generate(&s, 3).unwrap();
    for (_, recs) in sim.dataset.subjects() {
        let r: Vec<_> = recs.iter().map(|&i| &sim.dataset.records()[i]).collect();
        assert_eq!(r[0].start, 0.0);
        for w in r.windows(2) {
            assert_eq!(w[0].stop, w[1].start);
            assert!(!w[0].event);
            // Interior boundaries are covariate changes on the unit grid.
            assert_eq!(w[0].stop.fract(), 0.0);
            assert_ne!(w[0].covariates, w[1].covariates);
        }
        assert!(r.last().unwrap().stop <= 50.0);
    }
    assert!(RiskIndex::build(&sim.dataset).is_ok());
}

#[test]
fn generation_is_deterministic_and_streams_are_independent() {
    let s = spec("interactions", 50, 21);
    let a = generate(&s, 0).unwrap();
    let b = generate(&s, 0).unwrap();
    assert_eq!(a.dataset.to_csv_string(), b.dataset.to_csv_string());
    let c = generate(&s, 1).unwrap();
    assert_ne!(a.dataset.to_csv_string(), c.dataset.to_csv_string());
    let mut other = s.clone();
    other.seed = 22;
    assert_ne!(a.dataset.to_csv_string(), generate(&other, 0).unwrap().dataset.to_csv_string());
}

#[test]
fn designs_have_expected_shape() {
    let inter = generate(&spec("interactions", 30, 1), 0).unwrap();
    assert_eq!(inter.dataset.p(), 210);
    assert_eq!(inter.structure.p(), 210);
    assert_eq!(inter.dataset.covariate_names()[209], "X19:X20");
    let cat = generate(&spec("categorical_s1", 30, 1), 0).unwrap();
    assert_eq!(cat.structure.groups().len(), 5);
    let sg = generate(&spec("sparse_group_case2", 30, 1), 0).unwrap();
    assert_eq!(sg.dataset.p(), 200);
    assert_eq!(sg.dataset.records().len(), 30);
    assert_eq!(sg.structure.groups().len(), 210);
}

#[test]
fn truth_satisfies_its_rules() {
    for kind in ["categorical_s1", "categorical_s2", "interactions"] {
        let t = scenario_truth(&spec(kind, 10, 0)).unwrap();
        assert!(check_rules(&t.true_set, &t.heredity_rules).iter().all(|&b| b));
        assert!(check_rules(&t.true_set, &t.collective_rules).iter().all(|&b| b));
        assert_eq!(t.true_set.len() + t.noise_set.len(), t.beta.len());
    }
    let s2 = scenario_truth(&spec("categorical_s2", 10, 0)).unwrap();
    assert_eq!(s2.true_set, vec![0, 1, 2, 3, 4]);
    assert!(s2.beta[..5].iter().all(|&b| (b - 3f64.ln()).abs() < 1e-15));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!("sparse_group_case4".parse::<ScenarioKind>().is_err());
    let mut s = spec("interactions", 10, 0);
    s.p_main = 5;
    assert!(generate(&s, 0).is_err());
    let mut s = spec("categorical_s1", 10, 0);
    s.censoring_target = 0.2;
    assert!((calibrate(&s).unwrap().censoring - 0.2).abs() < 0.01);
    s.censoring_target = 1.5;
    assert!(s.validate().is_err());
    assert!(run_experiment(&spec("categorical_s1", 0, 0), 1, &ExperimentConfig::default()).is_err());
}

#[test]
fn experiment_is_reproducible() {
    let s = spec("categorical_s2", 100, 5);
    let cfg = ExperimentConfig {
        rules: vec![CvRule::Min, CvRule::OneSe],
        ..Default::default()
    };
    let a = run_experiment(&s, 2, &cfg).unwrap();
    let b = run_experiment(&s, 2, &cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.rows.len(), 4);
    assert_eq!(a.rows[0].replication, 0);
    assert_eq!(a.rows[3].replication, 1);
    let csv = a.to_csv();
    assert!(csv.starts_with("replication,method,rule,lambda,nonzero,mr,far,mse,r1s,r2s,rci,cve\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("mean,")).count(), 2);
    // One more replication leaves the earlier rows untouched.
    let c = run_experiment(&s, 3, &cfg).unwrap();
    assert_eq!(&c.rows[..4], &a.rows[..]);
}

#[test]
fn experiment_rows_satisfy_rules_and_rules_share_cv() {
    let s = spec("categorical_s1", 100, 8);
    let cfg = ExperimentConfig {
        rules: vec![CvRule::Min, CvRule::OneSe],
        debias: true,
        ..Default::default()
    };
    let t = run_experiment(&s, 2, &cfg).unwrap();
    assert_eq!(t.rows.len(), 8);
    for r in &t.rows {
        assert_eq!(r.r1s, Some(true));
        assert_eq!(r.r2s, Some(true));
        assert!((0.0..=1.0).contains(&r.rci));
    }
    let plain: Vec<_> = t.rows_for("sox", CvRule::Min).collect();
    let one_se: Vec<_> = t.rows_for("sox", CvRule::OneSe).collect();
    for (a, b) in plain.iter().zip(&one_se) {
        assert!(a.lambda <= b.lambda);
        assert!(a.nonzero >= b.nonzero || a.lambda == b.lambda);
    }
}
