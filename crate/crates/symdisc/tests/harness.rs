mod common;

use std::fs;

use symdisc::config::parse_config;
use symdisc::harness::{csv_header, emit_results, mean_curve, run_trial, run_trials};

fn experiment() -> symdisc::config::Experiment {
    parse_config(&common::small_config_text(true)).unwrap().build().unwrap()
}

#[test]
fn trial_records_every_round() {
    let exp = experiment();
    let t = run_trial(&exp, 0).unwrap();
    assert_eq!(t.rounds.len(), 3);
    assert_eq!(t.initial_probs, vec![0.5, 0.5]);
    for (i, r) in t.rounds.iter().enumerate() {
        assert_eq!(r.round, i + 1);
        assert!(r.x[0] >= -2.0 && r.x[0] <= 2.0);
        assert!((r.model_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r.variances.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn missing_truth_is_a_trial_failure() {
    let exp = parse_config(&common::small_config_text(false)).unwrap().build().unwrap();
    let err = run_trial(&exp, 0).unwrap_err();
    assert_eq!(err.trial, 0);
}

#[test]
fn csv_shape_and_aggregate_means() {
    let exp = experiment();
    let traces: Vec<_> = run_trials(&exp).into_iter().map(Result::unwrap).collect();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_results(&traces, dir.path(), false).unwrap();
    assert_eq!(files.len(), 4);

    let header = csv_header(&traces[0].input_names, &traces[0].model_names);
    assert_eq!(header, ["round", "x_x", "y", "p_line", "p_quadratic", "var_line", "var_quadratic", "score", "ms"]);

    let read = |name: &str| -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(dir.path().join(name)).unwrap();
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), header);
        r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
    };
    let per_trial: Vec<_> = (0..3).map(|t| read(&format!("trial_{t:03}.csv"))).collect();
    let agg = read("aggregate.csv");
    assert_eq!(agg.len(), 3);
    for (i, row) in agg.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        assert_eq!(row[8], "");
        for col in 1..8 {
            let mean = per_trial.iter().map(|t| t[i][col].parse::<f64>().unwrap()).sum::<f64>() / 3.0;
            let got: f64 = row[col].parse().unwrap();
            assert!((got - mean).abs() <= 1e-12 * (1.0 + mean.abs()), "row {i} col {col}: {got} vs {mean}");
        }
        let p: f64 = row[3].parse::<f64>().unwrap() + row[4].parse::<f64>().unwrap();
        assert!((p - 1.0).abs() < 1e-9);
    }

    let curve = mean_curve(&traces, |t, r| t.probs_at(r)[1]);
    assert_eq!(curve.len(), 4);
    assert_eq!(curve[0], 0.5);
}

#[test]
fn timing_fills_ms_column() {
    let exp = experiment();
    let t = run_trial(&exp, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_results(&[t], dir.path(), true).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("trial_001.csv")).unwrap();
    for rec in r.records() {
        let ms: f64 = rec.unwrap()[8].parse().unwrap();
        assert!(ms >= 0.0);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let exp = experiment();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let traces: Vec<_> = run_trials(&exp).into_iter().map(Result::unwrap).collect();
        emit_results(&traces, d.path(), false).unwrap();
    }
    for name in ["trial_000.csv", "trial_001.csv", "trial_002.csv", "aggregate.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

mod props {
    use proptest::prelude::*;
    use symdisc::harness::column_means;

    proptest! {
        #[test]
        fn column_means_lie_within_column_range(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..30)) {
            let means = column_means(&rows);
            for (j, m) in means.iter().enumerate() {
                let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*m >= lo - 1e-9 * lo.abs().max(1.0) && *m <= hi + 1e-9 * hi.abs().max(1.0));
            }
        }
    }
}
