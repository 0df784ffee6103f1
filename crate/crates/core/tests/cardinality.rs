use folio_core::cardinality::{
    brute_force_cc, cardinality_of, solve_cc_qp, solve_cc_qp_with, BnbSettings, CardinalitySpec,
    NodeOutcome, NodeRecord, SolveStatus,
};
use folio_core::market_data::Moments;
use folio_core::optimizer::BoundSpec;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random factor-model moments: `Q = BBᵀ + D`.
fn random_moments(n: usize, seed: u64) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = 3;
    let b = DMatrix::from_fn(n, factors, |_, _| rng.random_range(-0.03..0.03));
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(1e-4..9e-4)));
    let cov = &b * b.transpose() + d;
    let cov = (&cov + cov.transpose()) * 0.5;
    let mu = DVector::from_fn(n, |_, _| rng.random_range(-0.002..0.006));
    let tickers = (0..n).map(|i| format!("S{i:02}")).collect();
    Moments::new(tickers, mu, cov).unwrap()
}

fn feasible_bounds(k: usize, lo_frac: f64, hi_frac: f64) -> BoundSpec {
    // lower in [0, 1/k], upper in [1/k, 1]
    let kf = k as f64;
    let lower = (lo_frac / kf * 100.0).floor() / 100.0;
    let upper = (1.0 / kf + hi_frac * (1.0 - 1.0 / kf)).min(1.0);
    BoundSpec::new(lower, upper).unwrap()
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn branch_and_bound_matches_enumeration(
        seed in 0u64..10_000,
        n in 5usize..11,
        k_frac in 0.2f64..0.8,
        lo in 0.0f64..0.9,
        hi in 0.0f64..1.0,
        target in prop::option::of(0.0f64..1.0),
    ) {
        let m = random_moments(n, seed);
        let k = ((n as f64 * k_frac) as usize).clamp(1, n);
        let bounds = feasible_bounds(k, lo, hi);
        let spec = CardinalitySpec::new(k, bounds).unwrap();
        let eps = target.map(|t| {
            let floor = solve_cc_qp(&m, &spec, None).unwrap().expected_return;
            let top = folio_core::cardinality::cc_max_return(&m, &spec).unwrap().expected_return;
            floor + t * (top - floor)
        });
        let exact = brute_force_cc(&m, &spec, eps).unwrap();
        let bnb = solve_cc_qp(&m, &spec, eps).unwrap();
        prop_assert_eq!(bnb.status, SolveStatus::Optimal);
        prop_assert!(rel_diff(bnb.variance, exact.variance) <= 1e-7,
            "bnb {} vs exact {}", bnb.variance, exact.variance);
        prop_assert!(bnb.optimality_gap <= 1e-8);
        prop_assert!(bnb.coupling_holds(&bounds));
        prop_assert_eq!(bnb.z.iter().filter(|z| **z).count(), k);
        prop_assert!(cardinality_of(&bnb.portfolio.weights) <= k);
        if bounds.lower > 0.0 {
            prop_assert_eq!(cardinality_of(&bnb.portfolio.weights), k);
        }
        if let Some(e) = eps {
            prop_assert!(bnb.expected_return >= e - 1e-9);
        }
    }
}

/// Every node bound must be a lower bound on every selection it still admits.
#[test]
fn node_bounds_never_exceed_subtree_optimum() {
    for seed in 0..6 {
        let m = random_moments(8, seed);
        let spec = CardinalitySpec::new(3, BoundSpec::new(0.1, 0.6).unwrap()).unwrap();
        let mut log: Vec<NodeRecord> = Vec::new();
        solve_cc_qp_with(&m, &spec, None, &BnbSettings::default(), &mut |r| log.push(r.clone())).unwrap();
        assert!(!log.is_empty());
        for rec in log.iter().filter(|r| r.bound.is_some()) {
            if matches!(rec.outcome, NodeOutcome::Leaf) {
                continue;
            }
            let bound = rec.bound.unwrap();
            let best = best_in_subtree(&m, &spec, &rec.fixed_one, &rec.fixed_zero);
            assert!(
                bound <= best * (1.0 + 1e-9) + 1e-15,
                "node {} bound {bound} above subtree optimum {best}",
                rec.id
            );
        }
    }
}

fn best_in_subtree(m: &Moments, spec: &CardinalitySpec, ones: &[usize], zeros: &[usize]) -> f64 {
    let n = m.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != spec.k {
            continue;
        }
        let sel: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if ones.iter().any(|i| !sel.contains(i)) || zeros.iter().any(|i| sel.contains(i)) {
            continue;
        }
        let sub = m.subset(&sel);
        if let Ok(s) = folio_core::optimizer::min_variance(&sub, &spec.bounds) {
            best = best.min(s.variance);
        }
    }
    best
}

#[test]
fn node_log_serializes_as_json_lines() {
    let m = random_moments(6, 7);
    let spec = CardinalitySpec::new(2, BoundSpec::new(0.2, 0.8).unwrap()).unwrap();
    let mut lines = Vec::new();
    solve_cc_qp_with(&m, &spec, None, &BnbSettings::default(), &mut |r| {
        lines.push(serde_json::to_string(r).unwrap())
    })
    .unwrap();
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("outcome").and_then(|o| o.get("kind")).is_some());
    }
}

#[test]
fn deterministic_across_runs() {
    let m = random_moments(12, 3);
    let spec = CardinalitySpec::new(4, BoundSpec::new(0.1, 0.4).unwrap()).unwrap();
    let a = solve_cc_qp(&m, &spec, None).unwrap();
    let b = solve_cc_qp(&m, &spec, None).unwrap();
    assert_eq!(a.portfolio.weights, b.portfolio.weights);
    assert_eq!(a.stats.nodes_explored, b.stats.nodes_explored);
}
