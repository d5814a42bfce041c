use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::data::parse_date;
use crate::synthetic::daily_dates;

fn matrix(columns: Vec<Vec<f64>>) -> ErrorMatrix {
    let n = columns[0].len();
    let models = (0..columns.len()).map(|i| format!("m{i}")).collect();
    ErrorMatrix::new(1, daily_dates(parse_date("2025-01-01").unwrap(), n), models, columns).unwrap()
}

fn normal_losses(n: usize, shifts: &[f64], seed: u64) -> ErrorMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    matrix(
        shifts
            .iter()
            .map(|s| (0..n).map(|_| s + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect(),
    )
}

fn cfg(n_bootstrap: usize, block: usize, seed: u64) -> McsConfig {
    McsConfig {
        n_bootstrap,
        block_size: Some(block),
        seed,
        ..McsConfig::default()
    }
}

#[test]
fn differentials_of_identical_and_shifted_columns() {
    let a = vec![1.0, 4.0, 2.0, 8.0];
    let d = loss_differentials(&matrix(vec![a.clone(), a.clone()])).unwrap();
    assert!(d.series[0][1].iter().all(|v| *v == 0.0));
    let b: Vec<f64> = a.iter().map(|v| v + 3.0).collect();
    let d = loss_differentials(&matrix(vec![b, a])).unwrap();
    assert!(d.series[0][1].iter().all(|v| *v == 3.0));
    assert_eq!(d.means[0][1], 3.0);
}

proptest! {
    #[test]
    fn differentials_are_antisymmetric(cols in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 6), 2..5)) {
        let d = loss_differentials(&matrix(cols)).unwrap();
        let m = d.models.len();
        for i in 0..m {
            for j in 0..m {
                for t in 0..6 {
                    prop_assert_eq!(d.series[i][j][t], -d.series[j][i][t]);
                }
            }
        }
    }
}

#[test]
fn too_few_models_or_points_is_a_contract_error() {
    assert!(matches!(
        loss_differentials(&matrix(vec![vec![1.0, 2.0]])),
        Err(McsError::Contract(_))
    ));
    assert!(matches!(
        mcs_run(&matrix(vec![vec![1.0], vec![2.0]]), &cfg(100, 1, 0)),
        Err(McsError::Contract(_))
    ));
}

#[test]
fn config_validation() {
    for bad in [
        McsConfig {
            alpha: 0.0,
            ..McsConfig::default()
        },
        McsConfig {
            alpha: 1.0,
            ..McsConfig::default()
        },
        McsConfig {
            n_bootstrap: 99,
            ..McsConfig::default()
        },
        McsConfig {
            block_size: Some(0),
            ..McsConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(McsError::Config(_))));
    }
    assert_eq!(McsConfig::default().block_for(21), 21);
    assert_eq!(cfg(100, 4, 0).block_for(21), 4);
}

#[test]
fn block_longer_than_series_is_rejected() {
    let e = mcs_run(&normal_losses(5, &[0.0, 0.0], 1), &cfg(100, 6, 0)).unwrap_err();
    assert!(matches!(e, McsError::Contract(_)));
}

#[test]
fn exact_ties_all_survive() {
    let col: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).cos().abs()).collect();
    let r = mcs_run(&matrix(vec![col.clone(), col.clone(), col]), &cfg(500, 5, 1)).unwrap();
    assert_eq!(r.p_values, vec![1.0; 3]);
    assert_eq!(r.surviving_set.len(), 3);
    assert!(r.elimination_order.is_empty());
    assert_eq!(r.trace.len(), 1);
    assert_eq!(r.trace[0].eliminated, None);
}

#[test]
fn constant_gap_is_eliminated_with_zero_p() {
    let a: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
    let r = mcs_run(&matrix(vec![a, b]), &cfg(200, 4, 0)).unwrap();
    assert_eq!(r.elimination_order[0].model, "m1");
    assert_eq!(r.p_value("m1"), Some(0.0));
    assert_eq!(r.surviving_set, vec!["m0".to_string()]);
    assert_eq!(r.trace[0].statistic, f64::INFINITY);
}

#[test]
fn dominant_model_survives_alone() {
    let mut excluded = 0;
    for seed in 0..20 {
        let r = mcs_run(&normal_losses(500, &[0.0, 2.0, 2.0], seed), &cfg(1000, 10, seed)).unwrap();
        assert_eq!(r.p_value("m0"), Some(1.0));
        excluded += (r.surviving_set == vec!["m0".to_string()]) as usize;
    }
    assert!(excluded >= 19, "{excluded}/20");
}

#[test]
fn seed_fixes_the_result_regardless_of_threads() {
    let e = normal_losses(120, &[0.0, 0.1, 0.15, 0.3], 3);
    let c = cfg(400, 6, 17);
    let a = mcs_run(&e, &c).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| mcs_run(&e, &c)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, mcs_run(&e, &c).unwrap());
}

#[test]
fn two_model_block_one_matches_direct_bootstrap_test() {
    let e = normal_losses(200, &[0.0, 0.08], 42);
    let r = mcs_run(&e, &cfg(5000, 1, 7)).unwrap();
    let d: Vec<f64> = e.columns[1].iter().zip(&e.columns[0]).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let reps = 5000;
    let extreme = (0..reps)
        .filter(|_| {
            let m = (0..d.len()).map(|_| d[rng.gen_range(0..d.len())]).sum::<f64>() / d.len() as f64;
            (m - mean).abs() >= mean.abs()
        })
        .count();
    let direct = extreme as f64 / reps as f64;
    let inferior = if mean > 0.0 { "m1" } else { "m0" };
    let p = r.p_value(inferior).unwrap();
    assert!((p - direct).abs() < 0.03, "mcs {p} vs direct {direct}");
    assert!(p > 0.05 && p < 0.95, "oracle should sit away from the edges: {p}");
}

fn check_invariants(r: &McsResult) -> Result<(), TestCaseError> {
    let ps: Vec<f64> = r.elimination_order.iter().map(|e| e.p_value).collect();
    prop_assert!(ps.windows(2).all(|w| w[0] <= w[1]));
    prop_assert!(!r.surviving_set.is_empty());
    prop_assert!(r.p_values.contains(&1.0));
    for (m, p) in r.models.iter().zip(&r.p_values) {
        prop_assert_eq!(r.survives(m), *p >= r.alpha);
    }
    let last = r
        .models
        .iter()
        .find(|m| !r.elimination_order.iter().any(|e| &e.model == *m));
    prop_assert_eq!(last.and_then(|m| r.p_value(m)), Some(1.0));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn result_invariants_hold(seed in 0u64..10_000, gaps in prop::collection::vec(0.0f64..0.6, 2..5)) {
        let r = mcs_run(&normal_losses(80, &gaps, seed), &cfg(200, 4, seed)).unwrap();
        check_invariants(&r)?;
    }

    #[test]
    fn shift_and_scale_leave_the_result_unchanged(seed in 0u64..10_000, shift in -50.0f64..50.0, scale in 0.01f64..100.0) {
        let e = normal_losses(60, &[0.0, 0.2, 0.4], seed);
        let c = cfg(200, 3, seed);
        let base = mcs_run(&e, &c).unwrap();
        for f in [|v: f64, s: f64, _k: f64| v + s, |v: f64, _s: f64, k: f64| v * k] {
            let mut moved = e.clone();
            moved.columns.iter_mut().for_each(|col| col.iter_mut().for_each(|v| *v = f(*v, shift, scale)));
            let r = mcs_run(&moved, &c).unwrap();
            prop_assert_eq!(&r.elimination_order, &base.elimination_order);
            prop_assert_eq!(&r.p_values, &base.p_values);
        }
    }
}

#[test]
fn table_single_cell_is_flagged() {
    let r = McsResult {
        horizon: 7,
        alpha: 0.1,
        models: vec!["a".into()],
        p_values: vec![1.0],
        elimination_order: vec![],
        surviving_set: vec!["a".into()],
        trace: vec![],
    };
    let t = mcs_table(&[r]);
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "horizon,a\n7,1.000*\n");
}

#[test]
fn table_flags_and_csv_round_trip() {
    let results: Vec<McsResult> = [14usize, 7]
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut e = normal_losses(90, &[0.0, 0.15, 0.3], i as u64);
            e.horizon = 1;
            let mut r = mcs_run(&e, &cfg(300, 3, 5)).unwrap();
            r.horizon = *h;
            r
        })
        .collect();
    let t = mcs_table(&results);
    assert_eq!(t.rows[0].0, 7);
    for (_, cells) in &t.rows {
        for c in cells.iter().flatten() {
            assert_eq!(c.survives, c.p_value >= 0.10);
        }
    }
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let back = McsTable::read_csv(buf.as_slice()).unwrap();
    let mut again = Vec::new();
    back.write_csv(&mut again).unwrap();
    assert_eq!(buf, again);
    for ((_, a), (_, b)) in t.rows.iter().zip(&back.rows) {
        for (a, b) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(b.p_value, (a.p_value * 1000.0).round() / 1000.0);
            assert_eq!(a.survives, b.survives);
        }
    }
}

#[test]
fn trace_serializes_rounds() {
    let r = mcs_run(&normal_losses(100, &[0.0, 1.0, 1.0], 8), &cfg(200, 5, 1)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&r.trace_json()).unwrap();
    let rounds = v.as_array().unwrap();
    assert_eq!(rounds.len(), 2);
    assert_eq!(rounds[0]["round"], 1);
    assert!(rounds[0]["eliminated"].is_string());
}
