mod common;

use cot_dynamics::diagnostics::{
    consistency_report, position_curve, ranks, real_cluster_positions, simulated_cluster_positions,
    spearman, spearman_with, Alternative, PValueMethod, PositionMean, ReportOptions, SimPooling,
    SpearmanOptions, TieMethod,
};
use cot_dynamics::markov::{estimate_transitions, rollout, RolloutBatch, StartMode, TransitionModel};
use cot_dynamics::Error;
use proptest::prelude::*;
use rand::Rng;

fn batch(rows: &[&[u16]], k: usize) -> RolloutBatch {
    RolloutBatch {
        n_rollouts: rows.len(),
        horizon: rows[0].len() - 1,
        k_clu: k,
        seed: 0,
        start_mode: StartMode::Fixed(0),
        states: rows.iter().flat_map(|r| r.iter().copied()).collect(),
    }
}

fn mean(v: Option<f64>) -> f64 {
    v.expect("cluster occurs")
}

#[test]
fn real_positions_example() {
    let seqs = common::state_sequences(&[vec![0, 1, 0], vec![1, 0]]);
    let p = real_cluster_positions(&seqs, 3).unwrap();
    assert_eq!(p[0], PositionMean { mean: Some(2.0), count: 3 });
    assert_eq!(p[1], PositionMean { mean: Some(1.5), count: 2 });
    assert_eq!(p[2], PositionMean { mean: None, count: 0 });
    assert!(matches!(real_cluster_positions(&[], 2), Err(Error::Config(_))));
    assert!(matches!(real_cluster_positions(&seqs, 1), Err(Error::Validation(_))));
}

#[test]
fn simulated_positions_example() {
    let b = batch(&[&[0, 0, 1], &[0, 1, 1]], 2);
    let pooled = simulated_cluster_positions(&b, SimPooling::Pooled);
    assert!((mean(pooled[0].mean) - 4.0 / 3.0).abs() < 1e-15);
    assert!((mean(pooled[1].mean) - 8.0 / 3.0).abs() < 1e-15);
    let per = simulated_cluster_positions(&b, SimPooling::PerRollout);
    // rollout means for 0: 1.5 and 1; for 1: 3 and 2.5
    assert_eq!(per[0].mean, Some(1.25));
    assert_eq!(per[1].mean, Some(2.75));
    assert_eq!(per[0].count, 3);
}

#[test]
fn pooled_positions_match_loop() {
    let mut rng = common::rng(31);
    let m = common::random_model(&mut rng, 5);
    let b = rollout(&m, 3000, 7, StartMode::Empirical, 2).unwrap();
    let got = simulated_cluster_positions(&b, SimPooling::Pooled);
    for c in 0..5u16 {
        let (mut s, mut n) = (0.0, 0u64);
        for r in 0..b.n_rollouts {
            for p in 0..=b.horizon {
                if b.states[r * (b.horizon + 1) + p] == c {
                    s += (p + 1) as f64;
                    n += 1;
                }
            }
        }
        assert_eq!(got[usize::from(c)].count, n);
        if n > 0 {
            assert!((mean(got[usize::from(c)].mean) - s / n as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn poolings_agree_when_each_cluster_occurs_once_per_rollout() {
    // a permutation chain visits every state exactly once over k positions
    let k = 5;
    let matrix = (0..k).map(|i| (0..k).map(|j| f64::from(u8::from(j == (i + 1) % k))).collect()).collect();
    let start = vec![0.2; k];
    let m = TransitionModel::from_matrix(matrix, start).unwrap();
    let b = rollout(&m, 500, k - 1, StartMode::Empirical, 1).unwrap();
    let a = simulated_cluster_positions(&b, SimPooling::Pooled);
    let p = simulated_cluster_positions(&b, SimPooling::PerRollout);
    for (x, y) in a.iter().zip(&p) {
        assert!((mean(x.mean) - mean(y.mean)).abs() < 1e-12);
    }
}

#[test]
fn curve_example() {
    let real = vec![
        PositionMean { mean: Some(1.0), count: 1 },
        PositionMean { mean: Some(4.0), count: 1 },
    ];
    let b = batch(&[&[0, 1], &[0, 0]], 2);
    let c = position_curve(&b, &real).unwrap();
    assert_eq!(c.values, vec![1.0, 2.5]);
    assert_eq!(c.std_errors[0], Some(0.0));
    assert!((c.std_errors[1].unwrap() - 1.5).abs() < 1e-12);

    let single = batch(&[&[1, 1]], 2);
    assert_eq!(position_curve(&single, &real).unwrap().std_errors, vec![None, None]);

    let unseen = vec![real[0], PositionMean { mean: None, count: 0 }];
    assert!(matches!(position_curve(&b, &unseen), Err(Error::Data(_))));
    assert!(matches!(position_curve(&b, &real[..1]), Err(Error::Dimension(_))));
}

#[test]
fn spearman_examples() {
    let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 6.0, 7.0, 8.0, 7.5]).unwrap();
    assert!((r.rho - 0.9).abs() < 1e-12);
    assert_eq!(r.method, PValueMethod::Exact);
    assert_eq!(ranks(&[3.0, 1.0, 3.0], TieMethod::Average), vec![2.5, 1.0, 2.5]);
    assert_eq!(ranks(&[3.0, 1.0, 3.0], TieMethod::Ordinal), vec![2.0, 1.0, 3.0]);
    assert!(matches!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Config(_))));
    assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Data(_))));
}

#[test]
fn identical_orderings_of_five() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let r = spearman(&x, &x).unwrap();
    assert_eq!(r.rho, 1.0);
    assert!((r.p_value - 1.0 / 120.0).abs() < 1e-15);
    let two = spearman_with(&x, &x, &SpearmanOptions { alternative: Alternative::TwoSided, ..Default::default() }).unwrap();
    assert!((two.p_value - 2.0 / 120.0).abs() < 1e-15);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn exact_p_matches_brute_force() {
    let mut rng = common::rng(32);
    for n in 3..=7 {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let r = spearman(&x, &y).unwrap();
        let rx = ranks(&x, TieMethod::Average);
        let ry = ranks(&y, TieMethod::Average);
        let rho = pearson(&rx, &ry);
        assert!((r.rho - rho).abs() < 1e-12);
        let perms = permutations(n);
        let hits = perms
            .iter()
            .filter(|p| pearson(&rx, &p.iter().map(|&i| ry[i]).collect::<Vec<_>>()) >= rho - 1e-12)
            .count();
        assert!((r.p_value - hits as f64 / perms.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn monotone_chain_orders_perfectly() {
    // real traces walk 0 -> 1 -> ... -> 4, staying a random number of steps
    let mut rng = common::rng(33);
    let seqs: Vec<Vec<usize>> = (0..40)
        .map(|_| (0..5).flat_map(|c| std::iter::repeat_n(c, rng.random_range(1..4))).collect())
        .collect();
    let seqs = common::state_sequences(&seqs);
    let m = estimate_transitions(&seqs, 5).unwrap();
    let b = rollout(&m, 5000, 12, StartMode::Modal, 0).unwrap();
    let report = consistency_report(&seqs, &b, 5, &ReportOptions::default()).unwrap();
    let corr = report.correlation.unwrap();
    assert_eq!(corr.rho, 1.0);
    assert!((corr.p_value - 1.0 / 120.0).abs() < 1e-15);
    assert!(report.curve.values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
}

#[test]
fn unrelated_simulation_is_rarely_significant() {
    let k = 6;
    let mut significant = 0;
    for seed in 0..100 {
        let mut rng = common::rng(1000 + seed);
        let seqs: Vec<Vec<usize>> = (0..30).map(|_| (0..8).map(|_| rng.random_range(0..k)).collect()).collect();
        let seqs = common::state_sequences(&seqs);
        let m = common::random_model(&mut rng, k);
        let b = rollout(&m, 2000, 8, StartMode::Empirical, seed).unwrap();
        let report = consistency_report(&seqs, &b, k, &ReportOptions::default()).unwrap();
        if report.correlation.is_some_and(|c| c.p_value <= 0.05) {
            significant += 1;
        }
    }
    assert!(significant <= 10, "{significant} of 100 significant");
}

#[test]
fn report_rejects_cluster_count_mismatch() {
    let seqs = common::state_sequences(&[vec![0, 1]]);
    let b = batch(&[&[0, 1]], 2);
    assert!(matches!(consistency_report(&seqs, &b, 3, &ReportOptions::default()), Err(Error::Dimension(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rho_is_invariant_under_monotone_maps(x in proptest::collection::vec(-50.0f64..50.0, 3..12), seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let y: Vec<f64> = x.iter().map(|_| rng.random::<f64>()).collect();
        prop_assume!(x.iter().any(|v| *v != x[0]));
        let base = spearman(&x, &y).unwrap();
        let mapped: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() * 3.0 + 1.0).collect();
        let other = spearman(&mapped, &y).unwrap();
        prop_assert!((base.rho - other.rho).abs() < 1e-12);
        prop_assert!((base.p_value - other.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base.p_value));
    }
}
