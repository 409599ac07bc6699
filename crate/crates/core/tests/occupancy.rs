mod common;

use cmg_core::domains;
use cmg_core::game::{GameSpec, Matrix, PolicyProfile};
use cmg_core::occupancy::*;
use cmg_core::rng::seeded_rng;
use proptest::prelude::*;
use rand::Rng as _;

use common::*;

fn sample(rng: &mut cmg_core::rng::Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs.enumerate() {
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

#[test]
fn synthetic_uniform_matches_truncated_series() {
    let entry = domains::build_synthetic_safety();
    let profile = PolicyProfile::uniform(&entry.spec);
    let k = joint_kernel(&entry.spec, &profile).unwrap();
    let gamma = entry.spec.gamma();
    let mut term = nalgebra::DVector::from_column_slice(entry.spec.mu0()) * (1.0 - gamma);
    let mut series = term.clone();
    for _ in 1..=2000 {
        term = &k * term * gamma;
        series += &term;
    }
    let d = state_occupancy(&entry.spec, &profile).unwrap();
    assert!((d - series).amax() <= 1e-8);
}

#[test]
fn synthetic_all_zero_actions_swap() {
    let entry = domains::build_synthetic_safety();
    let first = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    let profile = PolicyProfile::new(&entry.spec, vec![first.clone(), first]).unwrap();
    let k = joint_kernel(&entry.spec, &profile).unwrap();
    assert_eq!(k, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
}

#[test]
fn synthetic_uniform_kernel_matches_sampling() {
    let entry = domains::build_synthetic_safety();
    let spec = &entry.spec;
    let profile = PolicyProfile::uniform(spec);
    let k = joint_kernel(spec, &profile).unwrap();
    let mut rng = seeded_rng(11);
    let n = 1_000_000;
    for s in 0..2 {
        let mut counts = [0usize; 2];
        for _ in 0..n {
            let a0 = sample(&mut rng, profile.policy(0).row(s).iter().copied());
            let a1 = sample(&mut rng, profile.policy(1).row(s).iter().copied());
            let ja = spec.joint().encode(&[a0, a1]);
            let next = sample(&mut rng, (0..2).map(|sn| spec.p(sn, s, ja)));
            counts[next] += 1;
        }
        for sn in 0..2 {
            assert!((counts[sn] as f64 / n as f64 - k[(sn, s)]).abs() <= 3e-3);
        }
    }
}

#[test]
fn synthetic_opponent_mixture_in_marginal_kernel() {
    let entry = domains::build_synthetic_safety();
    let spec = &entry.spec;
    let profile = PolicyProfile::new(
        spec,
        vec![Matrix::from_element(2, 2, 0.5), domains::synthetic_opponent_policy()],
    )
    .unwrap();
    let m = marginal_kernel(spec, &profile, 0).unwrap();
    // own action 0 swaps exactly when the opponent also plays 0
    assert!((m.at(1, 0, 0) - 0.4).abs() < 1e-15);
    assert!((m.at(0, 1, 0) - 0.8).abs() < 1e-15);
    assert_eq!(m.at(1, 0, 1), 0.0);
    assert_eq!(m.at(1, 1, 1), 1.0);
}

#[test]
fn ipd_always_defect_matches_rollouts() {
    let entry = domains::build_ipd();
    let spec = &entry.spec;
    let defect = Matrix::from_fn(4, 2, |_, a| a as f64);
    let profile = PolicyProfile::new(spec, vec![defect.clone(), defect]).unwrap();
    let d = state_occupancy(spec, &profile).unwrap();
    let mut rng = seeded_rng(5);
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        let mut s = sample(&mut rng, spec.mu0().iter().copied());
        while rng.random::<f64>() < spec.gamma() {
            let acts: Vec<usize> =
                (0..2).map(|i| sample(&mut rng, profile.policy(i).row(s).iter().copied())).collect();
            let ja = spec.joint().encode(&acts);
            s = sample(&mut rng, (0..4).map(|sn| spec.p(sn, s, ja)));
        }
        counts[s] += 1;
    }
    for s in 0..4 {
        assert!((counts[s] as f64 / n as f64 - d[s]).abs() <= 2e-3, "state {s}");
    }
}

#[test]
fn one_player_marginal_kernel_is_the_tensor() {
    let mut rng = seeded_rng(2);
    let spec = random_spec(&mut rng, &[3], 3, 0.7);
    let profile = random_profile(&mut rng, &spec);
    let m = marginal_kernel(&spec, &profile, 0).unwrap();
    for sn in 0..3 {
        for s in 0..3 {
            for a in 0..3 {
                assert_eq!(m.at(sn, s, a), spec.p(sn, s, a));
            }
        }
    }
}

#[test]
fn gamma_zero_jacobian_has_no_cross_terms() {
    let mut rng = seeded_rng(3);
    let spec = random_spec(&mut rng, &[2, 3], 3, 0.0);
    let profile = random_profile(&mut rng, &spec);
    let cross = d_occupancy_d_policy(&spec, &profile, 0, 1).unwrap();
    assert_eq!(cross.data.amax(), 0.0);
    let own = d_occupancy_d_policy(&spec, &profile, 1, 1).unwrap();
    for x in 0..3 {
        for y in 0..3 {
            for xp in 0..3 {
                for yp in 0..3 {
                    let expected = if x == xp && y == yp { spec.mu0()[x] } else { 0.0 };
                    assert!((own.get(x, y, xp, yp) - expected).abs() < 1e-15);
                }
            }
        }
    }
}

#[test]
fn flow_matrix_full_rank_on_catalog() {
    for entry in domains::catalog() {
        let profile = PolicyProfile::uniform(&entry.spec);
        for i in 0..entry.spec.n_players() {
            let flow = flow_matrix(&entry.spec, &profile, i).unwrap();
            assert!(flow.min_singular_value() > 1e-9, "{}", entry.name);
        }
    }
}

fn spec_and_profile(seed: u64) -> (GameSpec, PolicyProfile) {
    let mut rng = seeded_rng(seed);
    let spec = random_small_spec(&mut rng, 3, 4, 3);
    let profile = random_profile(&mut rng, &spec);
    (spec, profile)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancy_matches_series_and_solve(seed in any::<u64>()) {
        let (spec, profile) = spec_and_profile(seed);
        let series = state_occupancy_series(&spec, &profile);
        let d = state_occupancy(&spec, &profile).unwrap();
        prop_assert!((&d - &series).amax() <= 1e-8);
        prop_assert!((d.sum() - 1.0).abs() <= 1e-12);
        for i in 0..spec.n_players() {
            let mu = player_occupancy(&spec, &profile, i).unwrap();
            for s in 0..spec.n_states() {
                prop_assert!((mu.row(s).sum() - d[s]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn kernel_columns_are_stochastic(seed in any::<u64>()) {
        let (spec, profile) = spec_and_profile(seed);
        let k = joint_kernel(&spec, &profile).unwrap();
        prop_assert!((&k - kernel_oracle(&spec, &profile)).amax() <= 1e-12);
        for s in 0..spec.n_states() {
            prop_assert!((k.column(s).sum() - 1.0).abs() <= 1e-12);
        }
        for i in 0..spec.n_players() {
            let m = marginal_kernel(&spec, &profile, i).unwrap();
            prop_assert!((m.contract(profile.policy(i)) - &k).amax() <= 1e-12);
            for s in 0..spec.n_states() {
                for a in 0..spec.n_actions(i) {
                    let total: f64 = (0..spec.n_states()).map(|sn| m.at(sn, s, a)).sum();
                    prop_assert!((total - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn flow_constraints_hold(seed in any::<u64>()) {
        let (spec, profile) = spec_and_profile(seed);
        for i in 0..spec.n_players() {
            let flow = flow_matrix(&spec, &profile, i).unwrap();
            let mu = player_occupancy(&spec, &profile, i).unwrap();
            prop_assert!(flow.residual(&mu) <= 1e-10);
            prop_assert!(flow.min_singular_value() > 1e-9);
        }
    }

    #[test]
    fn policy_round_trip(seed in any::<u64>()) {
        let (spec, profile) = spec_and_profile(seed);
        for i in 0..spec.n_players() {
            let mu = player_occupancy(&spec, &profile, i).unwrap();
            let back = policy_from_occupancy(&mu);
            prop_assert!((back - profile.policy(i)).amax() <= 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let gamma = rng.random_range(0.0..0.95);
        let spec = random_spec(&mut rng, &[2, 2], 2, gamma);
        let profile = random_profile(&mut rng, &spec);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..2 {
                let jac = d_occupancy_d_policy(&spec, &profile, i, j).unwrap();
                for s in 0..2 {
                    for a in 0..2 {
                        let bump = |delta: f64| {
                            let mut p = profile.policy(j).clone();
                            p[(s, a)] += delta;
                            player_occupancy(&spec, &with_policy(&profile, j, p), i).unwrap()
                        };
                        let fd = (bump(h) - bump(-h)) / (2.0 * h);
                        for x in 0..2 {
                            for y in 0..2 {
                                let an = jac.get(x, y, s, a);
                                prop_assert!((an - fd[(x, y)]).abs() <= 1e-5 * an.abs().max(1e-3));
                            }
                        }
                    }
                }
            }
        }
    }
}
