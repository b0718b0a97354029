//! Randomized invariant checks for the core machinery: solver optimality
//! and price minimality, confidence-set geometry, estimator replay, and
//! the feedback model.

// The invariant loops index parallel arrays (loads against capacities);
// zipped iterators would obscure which side is which.
#![allow(clippy::needless_range_loop)]

use ilap_core::data::{
    dynamic_constraints, matrix_from_csv, matrix_to_csv, static_constraints, synth_instance,
};
use ilap_core::estimator::{empirical_norm, rho_star, ConfidenceSpec, EstimatorState, NormKind};
use ilap_core::market::{
    acceptance_mask, Allocation, ConstraintProfile, PriceVector, RewardMatrix,
};
use ilap_core::policy::{discounted_prices, optimistic_contextual};
use ilap_core::rng::{stream, Purpose};
use ilap_core::solver::{max_surplus, solve_allocation, verify_stability};
use ilap_core::{beta_star, Mode};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Reward-style matrix with entries in the unit interval band.
fn theta_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(n, m)| {
        prop::collection::vec(-1.0..1.0f64, n * m)
            .prop_map(move |v| DMatrix::from_row_slice(n, m, &v))
    })
}

/// Matching demand and capacity vectors for an `n` by `m` market.
fn constraints_for(n: usize, m: usize) -> impl Strategy<Value = ConstraintProfile> {
    (
        prop::collection::vec(0u32..=3, n),
        prop::collection::vec(0u32..=3, m),
    )
        .prop_map(|(d, c)| ConstraintProfile::new(d, c).unwrap())
}

fn market_strategy() -> impl Strategy<Value = (DMatrix<f64>, ConstraintProfile)> {
    theta_strategy().prop_flat_map(|theta| {
        let (n, m) = (theta.nrows(), theta.ncols());
        constraints_for(n, m).prop_map(move |cons| (theta.clone(), cons))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn solver_is_feasible_stable_and_tight((theta, cons) in market_strategy()) {
        let out = solve_allocation(&theta, &cons).unwrap();
        prop_assert!(out.allocation.is_feasible(&cons));
        for &(u, i) in out.allocation.pairs() {
            prop_assert!(theta[(u, i)] > 0.0, "allocated nonpositive entry at ({u}, {i})");
        }
        let scale = out.welfare.abs().max(1.0);
        prop_assert!(out.duality_gap.abs() <= 1e-8 * scale);
        let (_, instability) =
            verify_stability(&theta, &out.allocation, &out.prices, &cons, false).unwrap();
        prop_assert!(instability <= 1e-8, "instability {instability}");
        // Positive price on an item with spare capacity would contradict
        // complementary slackness.
        let load = out.allocation.per_item_load();
        for i in 0..theta.ncols() {
            if out.prices.as_slice()[i] > 1e-8 {
                prop_assert_eq!(load[i], cons.capacities()[i]);
            }
        }
    }

    #[test]
    fn prices_are_minimal((theta, cons) in market_strategy()) {
        let out = solve_allocation(&theta, &cons).unwrap();
        for i in 0..theta.ncols() {
            let p_i = out.prices.as_slice()[i];
            if p_i <= 1e-4 {
                continue;
            }
            let mut lowered = out.prices.as_slice().to_vec();
            lowered[i] = p_i - 1e-4;
            let lowered = PriceVector::new(lowered).unwrap();
            let (_, instability) =
                verify_stability(&theta, &out.allocation, &lowered, &cons, false).unwrap();
            prop_assert!(
                instability > 1e-9,
                "price {i} lowered from {p_i} stayed stable"
            );
        }
    }

    #[test]
    fn doubling_rewards_doubles_welfare_and_prices((theta, cons) in market_strategy()) {
        let base = solve_allocation(&theta, &cons).unwrap();
        let scaled = solve_allocation(&(&theta * 2.0), &cons).unwrap();
        prop_assert_eq!(base.allocation.pairs(), scaled.allocation.pairs());
        prop_assert!((scaled.welfare - 2.0 * base.welfare).abs() <= 1e-9);
        for (a, b) in base.prices.as_slice().iter().zip(scaled.prices.as_slice()) {
            prop_assert!((b - 2.0 * a).abs() <= 1e-9);
        }
    }

    #[test]
    fn solving_twice_is_identical((theta, cons) in market_strategy()) {
        let a = solve_allocation(&theta, &cons).unwrap();
        let b = solve_allocation(&theta, &cons).unwrap();
        prop_assert_eq!(a.allocation.pairs(), b.allocation.pairs());
        prop_assert_eq!(a.welfare.to_bits(), b.welfare.to_bits());
        let pa: Vec<u64> = a.prices.as_slice().iter().map(|p| p.to_bits()).collect();
        let pb: Vec<u64> = b.prices.as_slice().iter().map(|p| p.to_bits()).collect();
        prop_assert_eq!(pa, pb);
    }

    #[test]
    fn surplus_is_monotone_in_prices(
        row in prop::collection::vec(-1.0..1.0f64, 1..=6),
        demand in 0u32..=3,
        prices in prop::collection::vec(0.0..1.5f64, 6),
        bumps in prop::collection::vec(0.0..0.5f64, 6),
    ) {
        let m = row.len();
        let low = PriceVector::new(prices[..m].to_vec()).unwrap();
        let high = PriceVector::new(
            prices[..m].iter().zip(&bumps[..m]).map(|(p, b)| p + b).collect(),
        )
        .unwrap();
        let s_low = max_surplus(&row, &low, demand);
        let s_high = max_surplus(&row, &high, demand);
        prop_assert!(s_high <= s_low + 1e-12);
        prop_assert!(s_low >= 0.0);
    }

    #[test]
    fn instability_is_nonnegative(
        (theta, cons) in market_strategy(),
        price_seed in prop::collection::vec(0.0..1.5f64, 6),
    ) {
        let (n, m) = (theta.nrows(), theta.ncols());
        let mut pairs = Vec::new();
        let mut load = vec![0usize; m];
        'users: for u in 0..n {
            let mut left = cons.demands()[u];
            for i in 0..m {
                if left == 0 {
                    continue 'users;
                }
                if load[i] < cons.capacities()[i] as usize && theta[(u, i)] > 0.0 {
                    pairs.push((u, i));
                    load[i] += 1;
                    left -= 1;
                }
            }
        }
        let alloc = Allocation::new(n, m, pairs).unwrap();
        let prices = PriceVector::new(price_seed[..m].to_vec()).unwrap();
        let (duals, instability) =
            verify_stability(&theta, &alloc, &prices, &cons, false).unwrap();
        prop_assert!(instability >= -1e-12);
        for d in duals {
            prop_assert!(d >= -1e-12);
        }
    }

    #[test]
    fn radii_grow_with_time_and_shrink_with_confidence(
        t1 in 1usize..=500,
        dt in 0usize..=500,
        delta in 1e-4..0.5f64,
        factor in 1.0..10.0f64,
    ) {
        let args = |t: usize, d: f64| rho_star(t, d, 1e-3, 1.0, 8, 6, 3, 0.2, 2.0).unwrap();
        prop_assert!(args(t1 + dt, delta) >= args(t1, delta));
        prop_assert!(args(t1, delta) >= args(t1, (delta * factor).min(0.999)));
        let brgs = |t: usize, d: f64| beta_star(t, d, 1e-3, 1.0, 8, 6, 3, 0.2, 2.0).unwrap();
        prop_assert!(brgs(t1 + dt, delta) >= brgs(t1, delta));
        prop_assert!(brgs(t1, delta) >= brgs(t1, (delta * factor).min(0.999)));
    }

    #[test]
    fn empirical_norms_are_consistent(
        delta in theta_strategy(),
        count_seed in prop::collection::vec(0.0..40.0f64, 36),
        gamma in 1.0..4.0f64,
    ) {
        let (n, m) = (delta.nrows(), delta.ncols());
        let counts = DMatrix::from_fn(n, m, |u, i| count_seed[(u * m + i) % 36].floor());
        let l2 = empirical_norm(&delta, &counts, gamma, NormKind::L2).unwrap();
        let linf = empirical_norm(&delta, &counts, gamma, NormKind::L2Inf).unwrap();
        prop_assert!(linf <= l2 + 1e-12);
        let doubled = empirical_norm(&(&delta * 2.0), &counts, gamma, NormKind::L2).unwrap();
        prop_assert!((doubled - 2.0 * l2).abs() <= 1e-9 * l2.max(1.0));
        let zero = DMatrix::zeros(n, m);
        prop_assert_eq!(empirical_norm(&zero, &counts, gamma, NormKind::L2).unwrap(), 0.0);
    }

    #[test]
    fn optimistic_step_stays_inside_the_confidence_set(
        seed in 0u64..1000,
        radius in 0.01..4.0f64,
        obs in 1usize..=30,
    ) {
        let mut rng = stream(seed, Purpose::Instance, &[4, 3, 2]);
        let truth = synth_instance(4, 3, 2, &mut rng).unwrap();
        let (_, phi) = truth.factors().expect("synthetic instances keep factors");
        let mut est = EstimatorState::new_contextual(4, phi.clone(), 1.0, 4.0).unwrap();
        let mut pairs = Vec::new();
        let mut rewards = Vec::new();
        for k in 0..obs {
            let (u, i) = (k % 4, (k * 7) % 3);
            pairs.push((u, i));
            rewards.push(truth.get(u, i));
        }
        est.record(&pairs, &rewards).unwrap();
        est.fit(None).unwrap();
        let assigned = vec![(0, 0), (1, 1), (2, 2), (3, 0)];
        let optimistic = optimistic_contextual(&est, &assigned, radius).unwrap();
        let delta = &optimistic - est.theta_hat();
        let norm = empirical_norm(&delta, est.counts(), est.gamma(), NormKind::L2Inf).unwrap();
        prop_assert!(norm <= radius.sqrt() + 1e-6, "norm {norm} radius {radius}");
        let before: f64 = assigned.iter().map(|&(u, i)| est.theta_hat()[(u, i)]).sum();
        let after: f64 = assigned.iter().map(|&(u, i)| optimistic[(u, i)]).sum();
        prop_assert!(after >= before - 1e-9);
    }

    #[test]
    fn lowrank_fit_trace_never_increases(
        seed in 0u64..500,
        obs in 2usize..=40,
    ) {
        let mut rng = stream(seed, Purpose::Instance, &[5, 4, 2]);
        let truth = synth_instance(5, 4, 2, &mut rng).unwrap();
        let mut est = EstimatorState::new_lowrank(5, 4, 2, 1.0, 4.0).unwrap();
        let mut pairs = Vec::new();
        let mut rewards = Vec::new();
        for k in 0..obs {
            let (u, i) = ((k * 3) % 5, (k * 5) % 4);
            pairs.push((u, i));
            rewards.push(truth.get(u, i));
        }
        est.record(&pairs, &rewards).unwrap();
        let mut als_rng = stream(seed, Purpose::AlsInit, &[1]);
        let report = est.fit(Some(&mut als_rng)).unwrap();
        for w in report.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn estimator_state_is_replay_invariant(
        rewards in prop::collection::vec(-1.0..1.0f64, 1..=60),
        split in 0usize..=60,
    ) {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.8]);
        let pairs: Vec<(usize, usize)> = (0..rewards.len())
            .map(|k| (k % 4, (k * 3) % 3))
            .collect();
        let k = split.min(rewards.len());

        let mut whole = EstimatorState::new_contextual(4, phi.clone(), 1.0, 3.0).unwrap();
        whole.record(&pairs, &rewards).unwrap();
        let mut chunked = EstimatorState::new_contextual(4, phi, 1.0, 3.0).unwrap();
        chunked.record(&pairs[..k], &rewards[..k]).unwrap();
        chunked.record(&pairs[k..], &rewards[k..]).unwrap();

        prop_assert_eq!(whole.counts(), chunked.counts());
        prop_assert_eq!(whole.sums(), chunked.sums());
        whole.fit(None).unwrap();
        chunked.fit(None).unwrap();
        prop_assert_eq!(whole.theta_hat(), chunked.theta_hat());
    }

    #[test]
    fn acceptance_shrinks_as_prices_rise(
        (theta, cons) in market_strategy(),
        price_seed in prop::collection::vec(0.0..1.2f64, 6),
        bumps in prop::collection::vec(0.0..0.5f64, 6),
    ) {
        let truth = RewardMatrix::new(theta.clone()).unwrap();
        let out = solve_allocation(&theta, &cons).unwrap();
        let m = theta.ncols();
        let low = PriceVector::new(price_seed[..m].to_vec()).unwrap();
        let high = PriceVector::new(
            price_seed[..m].iter().zip(&bumps[..m]).map(|(p, b)| p + b).collect(),
        )
        .unwrap();
        let acc_low = acceptance_mask(&truth, &out.allocation, &low).unwrap();
        let acc_high = acceptance_mask(&truth, &out.allocation, &high).unwrap();
        for (l, h) in acc_low.iter().zip(&acc_high) {
            prop_assert_eq!((l.0, l.1), (h.0, h.1));
            prop_assert!(l.2 || !h.2, "acceptance appeared as the price rose");
        }
    }

    #[test]
    fn discounts_stay_between_zero_and_the_duals(
        duals in prop::collection::vec(0.0..1.5f64, 1..=6),
        nu in 0.0..2.0f64,
        width in 0.0..30.0f64,
    ) {
        let dual = PriceVector::new(duals.clone()).unwrap();
        let posted = discounted_prices(&dual, nu, width).unwrap();
        for (p, d) in posted.as_slice().iter().zip(&duals) {
            prop_assert!(*p >= 0.0);
            prop_assert!(*p <= *d + 1e-12);
        }
    }

    #[test]
    fn synthetic_instances_are_bounded_low_rank(seed in 0u64..2000) {
        let mut rng = stream(seed, Purpose::Instance, &[6, 5, 2]);
        let truth = synth_instance(6, 5, 2, &mut rng).unwrap();
        prop_assert!(truth.max_abs() <= 1.0 + 1e-9);
        let svd = truth.values().clone().svd(false, false);
        for k in 2..svd.singular_values.len() {
            prop_assert!(svd.singular_values[k] <= 1e-9);
        }
    }

    #[test]
    fn constraint_draws_match_their_setting(seed in 0u64..2000) {
        let mut rng = stream(seed, Purpose::Constraints, &[1]);
        let cons = static_constraints(7, 3, &mut rng).unwrap();
        prop_assert!(cons.demands().iter().all(|&d| d == 1));
        let c_max = 7usize.div_ceil(3) as u32;
        prop_assert!(cons.capacities().iter().all(|&c| c >= 1 && c <= c_max));

        let mut rng = stream(seed, Purpose::Constraints, &[2]);
        let dyn_cons = dynamic_constraints(7, 3, &mut rng).unwrap();
        let total: u32 = dyn_cons.demands().iter().sum();
        if total == 0 {
            prop_assert!(dyn_cons.capacities().iter().all(|&c| c == 0));
        } else {
            let cap_max = (total as usize).div_ceil(3) as u32;
            prop_assert!(dyn_cons.capacities().iter().all(|&c| c >= 1 && c <= cap_max));
        }
    }

    #[test]
    fn matrix_csv_round_trips(theta in theta_strategy()) {
        let text = matrix_to_csv(&theta);
        let back = matrix_from_csv(&text).unwrap();
        prop_assert_eq!(back.nrows(), theta.nrows());
        prop_assert_eq!(back.ncols(), theta.ncols());
        for (a, b) in theta.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn coverage_spec_accepts_the_truth_it_was_built_for(
        seed in 0u64..300,
        obs in 0usize..=25,
    ) {
        // With a radius set from the deviation itself, containment holds
        // exactly at the boundary and fails just below it.
        let mut rng = stream(seed, Purpose::Instance, &[3, 3, 2]);
        let truth = synth_instance(3, 3, 2, &mut rng).unwrap();
        let (_, phi) = truth.factors().unwrap();
        let mut est = EstimatorState::new_lowrank(3, 3, 2, 1.0, 3.0).unwrap();
        let _ = phi;
        let mut pairs = Vec::new();
        let mut rewards = Vec::new();
        for k in 0..obs {
            let (u, i) = (k % 3, (k * 2) % 3);
            pairs.push((u, i));
            rewards.push(truth.get(u, i));
        }
        est.record(&pairs, &rewards).unwrap();
        let mut als_rng = stream(seed, Purpose::AlsInit, &[1]);
        est.fit(Some(&mut als_rng)).unwrap();
        let delta = truth.values() - est.theta_hat();
        let norm = empirical_norm(&delta, est.counts(), est.gamma(), NormKind::L2).unwrap();
        let inside = ConfidenceSpec::new(0.05, 0.01, (norm * norm) * 1.01 + 1e-12, NormKind::L2).unwrap();
        prop_assert!(est.contains_truth(&truth, &inside).unwrap());
        if norm > 1e-6 {
            let outside =
                ConfidenceSpec::new(0.05, 0.01, (norm * norm) * 0.98, NormKind::L2).unwrap();
            prop_assert!(!est.contains_truth(&truth, &outside).unwrap());
        }
    }
}

#[test]
fn modes_are_distinct() {
    assert_ne!(Mode::Contextual, Mode::LowRank);
}
