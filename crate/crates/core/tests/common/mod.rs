//! Random instances and independent reference computations shared by the
//! integration tests.
#![allow(dead_code)]

use cmg_core::game::{GameSpec, JointActions, Matrix, PolicyProfile};
use cmg_core::rng::Rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

/// Column-stochastic transition with entries bounded away from 0.
pub fn random_transition(rng: &mut Rng, n_states: usize, n_joint: usize) -> Vec<f64> {
    let mut t = vec![0.0; n_states * n_states * n_joint];
    for s in 0..n_states {
        for ja in 0..n_joint {
            let col: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = col.iter().sum();
            for (sn, v) in col.iter().enumerate() {
                t[(sn * n_states + s) * n_joint + ja] = v / total;
            }
        }
    }
    t
}

pub fn random_distribution(rng: &mut Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

pub fn random_spec(rng: &mut Rng, actions: &[usize], n_states: usize, gamma: f64) -> GameSpec {
    let joint = JointActions::new(actions).len();
    let transition = random_transition(rng, n_states, joint);
    let mu0 = random_distribution(rng, n_states);
    GameSpec::new(n_states, actions.to_vec(), transition, gamma, mu0).expect("random spec is valid")
}

/// Random game with at most `max_players` players, `max_states` states and
/// `max_actions` actions per player.
pub fn random_small_spec(rng: &mut Rng, max_players: usize, max_states: usize, max_actions: usize) -> GameSpec {
    let n = rng.random_range(1..=max_players);
    let s = rng.random_range(1..=max_states);
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_actions)).collect();
    let gamma = rng.random_range(0.0..0.95);
    random_spec(rng, &actions, s, gamma)
}

/// Strictly positive profile.
pub fn random_profile(rng: &mut Rng, spec: &GameSpec) -> PolicyProfile {
    let policies = (0..spec.n_players())
        .map(|i| {
            let k = spec.n_actions(i);
            let rows: Vec<f64> = (0..spec.n_states()).flat_map(|_| random_distribution(rng, k)).collect();
            Matrix::from_row_slice(spec.n_states(), k, &rows)
        })
        .collect();
    PolicyProfile::new(spec, policies).expect("random profile is valid")
}

/// Reward tensors in `[s, joint]` order with entries in [-1, 1].
pub fn random_rewards(rng: &mut Rng, spec: &GameSpec) -> Vec<Vec<f64>> {
    let len = spec.n_states() * spec.joint().len();
    (0..spec.n_players())
        .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Joint kernel `K[s', s]` by direct enumeration of joint actions.
pub fn kernel_oracle(spec: &GameSpec, profile: &PolicyProfile) -> DMatrix<f64> {
    let n = spec.n_states();
    let joint = spec.joint();
    DMatrix::from_fn(n, n, |sn, s| {
        (0..joint.len())
            .map(|ja| {
                let acts = joint.decode(ja);
                let w: f64 = acts.iter().enumerate().map(|(j, &a)| profile.policy(j)[(s, a)]).product();
                spec.transition()[(sn * n + s) * joint.len() + ja] * w
            })
            .sum()
    })
}

/// `(1 - gamma) sum_{t < T} gamma^t K^t mu0`, truncated once `gamma^t < 1e-16`.
pub fn state_occupancy_series(spec: &GameSpec, profile: &PolicyProfile) -> DVector<f64> {
    let k = kernel_oracle(spec, profile);
    let mut term = DVector::from_column_slice(spec.mu0()) * (1.0 - spec.gamma());
    let mut total = term.clone();
    let mut weight = 1.0;
    while weight > 1e-16 && spec.gamma() > 0.0 {
        term = &k * term * spec.gamma();
        total += &term;
        weight *= spec.gamma();
    }
    total
}

/// State occupancy by a dense solve of `(I - gamma K) d = (1 - gamma) mu0`.
pub fn state_occupancy_solve(spec: &GameSpec, profile: &PolicyProfile) -> DVector<f64> {
    let n = spec.n_states();
    let m = DMatrix::identity(n, n) - kernel_oracle(spec, profile) * spec.gamma();
    let rhs = DVector::from_column_slice(spec.mu0()) * (1.0 - spec.gamma());
    m.lu().solve(&rhs).expect("resolvent is invertible")
}

pub fn player_occupancy_oracle(spec: &GameSpec, profile: &PolicyProfile, player: usize) -> Matrix {
    let d = state_occupancy_solve(spec, profile);
    let pi = profile.policy(player);
    Matrix::from_fn(pi.nrows(), pi.ncols(), |s, a| d[s] * pi[(s, a)])
}

/// Replaces one player's policy.
pub fn with_policy(profile: &PolicyProfile, player: usize, policy: Matrix) -> PolicyProfile {
    let mut policies = profile.policies().to_vec();
    policies[player] = policy;
    PolicyProfile::from_raw_unchecked(policies)
}

/// Every deterministic policy for a player with `n_actions` actions over `n_states` states.
pub fn deterministic_policies(n_states: usize, n_actions: usize) -> Vec<Matrix> {
    let total = n_actions.pow(n_states as u32);
    (0..total)
        .map(|mut code| {
            let mut m = Matrix::zeros(n_states, n_actions);
            for s in 0..n_states {
                m[(s, code % n_actions)] = 1.0;
                code /= n_actions;
            }
            m
        })
        .collect()
}

/// Expected reward vector `r_i(pi_{-i})[s, a_i]` by enumeration.
pub fn reward_vector_oracle(spec: &GameSpec, reward: &[f64], profile: &PolicyProfile, player: usize) -> Matrix {
    let joint = spec.joint();
    let mut r = Matrix::zeros(spec.n_states(), spec.n_actions(player));
    for s in 0..spec.n_states() {
        for ja in 0..joint.len() {
            let acts = joint.decode(ja);
            let w: f64 = acts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != player)
                .map(|(j, &a)| profile.policy(j)[(s, a)])
                .product();
            r[(s, acts[player])] += w * reward[s * joint.len() + ja];
        }
    }
    r
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-8)
}
