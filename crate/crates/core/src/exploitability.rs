//! Exact exploitability: per-player best responses over the occupancy
//! polytope and the resulting epsilon, overall and per initial state.
//!
//! The linear oracle solves the induced single-agent MDP exactly by policy
//! iteration (value iteration is the fallback if policy iteration fails to
//! settle). Concave utilities run Frank-Wolfe on top of that oracle; a lone
//! hinge on a linear reward is handled through its Lagrangian dual instead,
//! since Frank-Wolfe stalls on the kink.

use nalgebra::DVector;

use crate::error::{CmgError, Result};
use crate::game::{GameSpec, Matrix, PolicyProfile};
use crate::occupancy::{discounted_state_distribution, marginal_kernel, player_occupancy, MarginalKernel};
use crate::utilities::{
    classify, linear_reward_vector, utility_gradient, utility_hvp, utility_value, Shape, UtilityTerm, UtilitySpec,
};

/// Floor applied to occupancy entries before gradient evaluation.
pub const GRADIENT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExploitabilityConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Temperature given to live-weighted terms; 0 evaluates the base game.
    pub tau: f64,
}

impl Default for ExploitabilityConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 100_000, tau: 0.0 }
    }
}

impl ExploitabilityConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Optimal deterministic policy of a single-agent MDP with its occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSolution {
    /// Greedy action per state.
    pub actions: Vec<usize>,
    pub values: DVector<f64>,
    pub mu: Matrix,
    /// `reward . mu`, equal to `(1 - gamma) mu0 . values`.
    pub value: f64,
}

fn evaluate(kernel: &MarginalKernel, reward: &Matrix, gamma: f64, actions: &[usize]) -> Result<DVector<f64>> {
    // (I - gamma K_pi^T) V = r_pi
    let n = kernel.n_states();
    let m = Matrix::from_fn(n, n, |s, sn| {
        let delta = if s == sn { 1.0 } else { 0.0 };
        delta - gamma * kernel.at(sn, s, actions[s])
    });
    let r = DVector::from_fn(n, |s, _| reward[(s, actions[s])]);
    m.lu()
        .solve(&r)
        .ok_or_else(|| CmgError::Numeric("policy evaluation solve failed".into()))
}

fn q_value(kernel: &MarginalKernel, reward: &Matrix, gamma: f64, v: &DVector<f64>, s: usize, a: usize) -> f64 {
    reward[(s, a)] + gamma * (0..kernel.n_states()).map(|sn| kernel.at(sn, s, a) * v[sn]).sum::<f64>()
}

/// Greedy policy; keeps `current` unless another action is better by more than `margin`.
fn greedy(
    kernel: &MarginalKernel,
    reward: &Matrix,
    gamma: f64,
    v: &DVector<f64>,
    current: Option<&[usize]>,
    margin: f64,
) -> Vec<usize> {
    (0..kernel.n_states())
        .map(|s| {
            let q: Vec<f64> = (0..kernel.n_actions()).map(|a| q_value(kernel, reward, gamma, v, s, a)).collect();
            let mut best = 0;
            for a in 1..q.len() {
                if q[a] > q[best] + margin {
                    best = a;
                }
            }
            if let Some(cur) = current {
                if q[cur[s]] + margin >= q[best] {
                    return cur[s];
                }
            }
            best
        })
        .collect()
}

/// Solves `max_mu reward . mu` over the flow polytope of `kernel`.
pub fn solve_mdp(
    kernel: &MarginalKernel,
    reward: &Matrix,
    gamma: f64,
    mu0: &[f64],
    warm: Option<&[usize]>,
) -> Result<MdpSolution> {
    let n = kernel.n_states();
    let scale = 1.0 + reward.amax();
    let margin = 1e-13 * scale / (1.0 - gamma);
    let mut actions: Vec<usize> = match warm {
        Some(w) => w.to_vec(),
        None => greedy(kernel, reward, gamma, &DVector::zeros(n), None, 0.0),
    };
    let mut values = evaluate(kernel, reward, gamma, &actions)?;
    let mut settled = false;
    for _ in 0..200 {
        let next = greedy(kernel, reward, gamma, &values, Some(&actions), margin);
        if next == actions {
            settled = true;
            break;
        }
        actions = next;
        values = evaluate(kernel, reward, gamma, &actions)?;
    }
    if !settled {
        // value iteration to a 1e-12 residual, then evaluate its greedy policy
        for _ in 0..10_000_000 {
            let next = DVector::from_fn(n, |s, _| {
                (0..kernel.n_actions())
                    .map(|a| q_value(kernel, reward, gamma, &values, s, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            let residual = (&next - &values).amax();
            values = next;
            if residual <= 1e-12 * scale {
                break;
            }
        }
        actions = greedy(kernel, reward, gamma, &values, None, 0.0);
        values = evaluate(kernel, reward, gamma, &actions)?;
    }
    let k_pi = Matrix::from_fn(n, n, |sn, s| kernel.at(sn, s, actions[s]));
    let d = discounted_state_distribution(&k_pi, gamma, mu0)?;
    let mut mu = Matrix::zeros(n, kernel.n_actions());
    for s in 0..n {
        mu[(s, actions[s])] = d[s];
    }
    let value = reward.dot(&mu);
    Ok(MdpSolution { actions, values, mu, value })
}

/// Occupancy maximizing `reward_vec . mu` against the opponents in `profile`.
pub fn linear_best_response(
    spec: &GameSpec,
    profile: &PolicyProfile,
    player: usize,
    reward_vec: &Matrix,
) -> Result<Matrix> {
    let kernel = marginal_kernel(spec, profile, player)?;
    if reward_vec.nrows() != spec.n_states() || reward_vec.ncols() != spec.n_actions(player) {
        return Err(CmgError::Shape(format!(
            "reward vector is {}x{}, expected {}x{}",
            reward_vec.nrows(),
            reward_vec.ncols(),
            spec.n_states(),
            spec.n_actions(player)
        )));
    }
    Ok(solve_mdp(&kernel, reward_vec, spec.gamma(), spec.mu0(), None)?.mu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseResult {
    pub mu: Matrix,
    /// Utility achieved by `mu`.
    pub utility: f64,
    /// Certified upper bound on the best achievable utility.
    pub upper_bound: f64,
    /// `upper_bound - utility`.
    pub gap: f64,
    pub iterations: usize,
    pub certified: bool,
}

struct Oracle<'a> {
    kernel: MarginalKernel,
    gamma: f64,
    mu0: &'a [f64],
    warm: Option<Vec<usize>>,
}

impl Oracle<'_> {
    fn solve(&mut self, reward: &Matrix) -> Result<MdpSolution> {
        let sol = solve_mdp(&self.kernel, reward, self.gamma, self.mu0, self.warm.as_deref())?;
        self.warm = Some(sol.actions.clone());
        Ok(sol)
    }
}

/// Best response of `player` in the base game (live temperature 0).
pub fn best_response(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    player: usize,
    tol: f64,
    max_iters: usize,
) -> Result<BestResponseResult> {
    let config = ExploitabilityConfig { tol, max_iters, tau: 0.0 };
    best_response_with(spec, utilities, profile, player, &config)
}

pub fn best_response_with(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    player: usize,
    config: &ExploitabilityConfig,
) -> Result<BestResponseResult> {
    if !(config.tol > 0.0) {
        return Err(CmgError::Config(format!("tolerance must be positive, got {}", config.tol)));
    }
    spec.check_player(player)?;
    let terms = utilities.terms(player);
    let r = linear_reward_vector(spec, terms, profile, player)?;
    let own = player_occupancy(spec, profile, player)?;
    let mut oracle = Oracle {
        kernel: marginal_kernel(spec, profile, player)?,
        gamma: spec.gamma(),
        mu0: spec.mu0(),
        warm: None,
    };
    match classify(terms, config.tau) {
        Shape::Linear => {
            let sol = oracle.solve(&r)?;
            let utility = sol.value.max(r.dot(&own));
            Ok(BestResponseResult {
                mu: sol.mu,
                utility,
                upper_bound: utility,
                gap: 0.0,
                iterations: 1,
                certified: true,
            })
        }
        Shape::SingleHinge => hinge_dual(terms, &r, &own, &mut oracle, config),
        Shape::Quadratic | Shape::General => frank_wolfe(terms, &r, own, &mut oracle, config),
    }
}

fn frank_wolfe(
    terms: &[UtilityTerm],
    r: &Matrix,
    start: Matrix,
    oracle: &mut Oracle,
    config: &ExploitabilityConfig,
) -> Result<BestResponseResult> {
    let tau = config.tau;
    let quadratic = classify(terms, tau) == Shape::Quadratic;
    let u = |m: &Matrix| utility_value(terms, m, r, tau);
    let mut mu = start;
    let mut u_mu = u(&mu);
    let mut best = (mu.clone(), u_mu);
    let mut upper = f64::INFINITY;
    let mut iterations = 0;
    let mut certified = false;
    for k in 0..config.max_iters {
        iterations = k + 1;
        let floored = mu.map(|m| m.max(GRADIENT_FLOOR));
        let g = utility_gradient(terms, &floored, r, tau);
        let v = oracle.solve(&g)?.mu;
        let d = &v - &mu;
        let slope = g.dot(&d);
        upper = upper.min(u_mu + slope.max(0.0));
        if upper - best.1 <= config.tol {
            certified = true;
            break;
        }
        let eta = if quadratic {
            let curvature = d.dot(&utility_hvp(terms, &mu, &d, tau));
            if curvature < 0.0 {
                (-slope / curvature).clamp(0.0, 1.0)
            } else {
                1.0
            }
        } else {
            let phi = |e: f64| u(&(&mu + &d * e));
            let slope_at = |e: f64| {
                let m = (&mu + &d * e).map(|x| x.max(GRADIENT_FLOOR));
                utility_gradient(terms, &m, r, tau).dot(&d)
            };
            let default = 2.0 / (k as f64 + 2.0);
            let searched = derivative_root(slope_at, 1e-12);
            if phi(searched) >= phi(default) {
                searched
            } else {
                default
            }
        };
        mu += &d * eta;
        u_mu = u(&mu);
        if u_mu > best.1 {
            best = (mu.clone(), u_mu);
        }
    }
    let (mu, utility) = best;
    let upper = upper.max(utility);
    Ok(BestResponseResult {
        mu,
        utility,
        upper_bound: upper,
        gap: upper - utility,
        iterations,
        certified,
    })
}

/// Step in `[0, 1]` where a nonincreasing directional derivative changes
/// sign, by bisection. Bisecting on the derivative rather than comparing
/// function values keeps the step exact when the achievable gain is below
/// the resolution of the objective.
fn derivative_root(slope: impl Fn(f64) -> f64, width: f64) -> f64 {
    if slope(1.0) >= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `max_mu r.mu - w max(0, mu_c - t) = min_{alpha in [0, w]} V(r - alpha e_c) + alpha t`.
fn hinge_dual(
    terms: &[UtilityTerm],
    r: &Matrix,
    own: &Matrix,
    oracle: &mut Oracle,
    config: &ExploitabilityConfig,
) -> Result<BestResponseResult> {
    let (state, action, threshold, weight) = terms
        .iter()
        .find_map(|t| match t {
            UtilityTerm::HingePenalty { state, action, threshold, weight } if *weight != 0.0 => {
                Some((*state, *action, *threshold, *weight))
            }
            _ => None,
        })
        .expect("single hinge shape");
    let u = |m: &Matrix| utility_value(terms, m, r, config.tau);
    let shifted = |alpha: f64| {
        let mut c = r.clone();
        c[(state, action)] -= alpha;
        c
    };

    let mut evals = 0usize;
    let mut candidates: Vec<Matrix> = vec![own.clone()];
    let mut upper = f64::INFINITY;
    let mut dual = |alpha: f64, cands: &mut Vec<Matrix>| -> Result<f64> {
        evals += 1;
        let sol = oracle.solve(&shifted(alpha))?;
        let h = sol.value + alpha * threshold;
        cands.push(sol.mu);
        Ok(h)
    };

    let h0 = dual(0.0, &mut candidates)?;
    upper = upper.min(h0);
    let unconstrained = candidates.last().expect("candidate").clone();
    if unconstrained[(state, action)] > threshold {
        // golden-section minimization of the convex dual on [0, w]
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0, weight);
        let mut x1 = hi - ratio * (hi - lo);
        let mut x2 = lo + ratio * (hi - lo);
        let mut f1 = dual(x1, &mut candidates)?;
        let mut f2 = dual(x2, &mut candidates)?;
        upper = upper.min(f1).min(f2);
        while hi - lo > 1e-12 * weight.max(1.0) {
            if f1 > f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + ratio * (hi - lo);
                f2 = dual(x2, &mut candidates)?;
                upper = upper.min(f2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - ratio * (hi - lo);
                f1 = dual(x1, &mut candidates)?;
                upper = upper.min(f1);
            }
        }
        let alpha_star = 0.5 * (lo + hi);
        let hw = dual(weight, &mut candidates)?;
        upper = upper.min(hw);

        // primal recovery: mix the oracle vertices on either side of alpha*
        let delta = 1e-6 * weight.max(1.0);
        let below = oracle.solve(&shifted((alpha_star - delta).max(0.0)))?.mu;
        let above = oracle.solve(&shifted((alpha_star + delta).min(weight)))?.mu;
        let (cb, ca) = (below[(state, action)], above[(state, action)]);
        if cb > threshold && ca <= threshold {
            let lambda = (threshold - ca) / (cb - ca);
            candidates.push(&below * lambda + &above * (1.0 - lambda));
        }
        candidates.push(below);
        candidates.push(above);
    }
    let (mu, utility) = candidates
        .into_iter()
        .map(|m| {
            let v = u(&m);
            (m, v)
        })
        .fold(None::<(Matrix, f64)>, |acc, c| match acc {
            Some(a) if a.1 >= c.1 => Some(a),
            _ => Some(c),
        })
        .expect("at least one candidate");
    let upper = upper.max(utility);
    let gap = upper - utility;
    Ok(BestResponseResult {
        mu,
        utility,
        upper_bound: upper,
        gap,
        iterations: evals,
        certified: gap <= config.tol,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploitabilityReport {
    /// `eps_i` per player, clipped at 0.
    pub per_player: Vec<f64>,
    /// `max_i eps_i`.
    pub epsilon: f64,
    /// Utilities of the evaluated profile.
    pub utilities: Vec<f64>,
    pub best_responses: Vec<BestResponseResult>,
    /// All best responses met the tolerance.
    pub certified: bool,
}

/// Exploitability in the base game (live temperature 0).
pub fn exploitability(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    tol: f64,
) -> Result<ExploitabilityReport> {
    exploitability_with(spec, utilities, profile, &ExploitabilityConfig::with_tol(tol))
}

pub fn exploitability_with(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    config: &ExploitabilityConfig,
) -> Result<ExploitabilityReport> {
    profile.check_shape(spec)?;
    if utilities.n_players() != spec.n_players() {
        return Err(CmgError::Shape(format!(
            "utilities given for {} players, game has {}",
            utilities.n_players(),
            spec.n_players()
        )));
    }
    let mut per_player = Vec::with_capacity(spec.n_players());
    let mut values = Vec::with_capacity(spec.n_players());
    let mut brs = Vec::with_capacity(spec.n_players());
    for i in 0..spec.n_players() {
        let terms = utilities.terms(i);
        let r = linear_reward_vector(spec, terms, profile, i)?;
        let mu = player_occupancy(spec, profile, i)?;
        let current = utility_value(terms, &mu, &r, config.tau);
        let br = best_response_with(spec, utilities, profile, i, config)?;
        let eps = br.utility - current;
        per_player.push(if eps < 0.0 { 0.0 } else { eps });
        values.push(current);
        brs.push(br);
    }
    let epsilon = per_player.iter().copied().fold(0.0, f64::max);
    let certified = brs.iter().all(|b| b.certified);
    Ok(ExploitabilityReport { per_player, epsilon, utilities: values, best_responses: brs, certified })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerStateReport {
    /// Max over players of `eps_i` with `mu0` a point mass on each state.
    pub per_state: Vec<f64>,
    /// Per state, per player.
    pub per_state_player: Vec<Vec<f64>>,
    pub max: f64,
    pub certified: bool,
}

/// Exploitability from every initial state.
pub fn per_state_exploitability(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    tol: f64,
) -> Result<PerStateReport> {
    per_state_exploitability_with(spec, utilities, profile, &ExploitabilityConfig::with_tol(tol))
}

pub fn per_state_exploitability_with(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    config: &ExploitabilityConfig,
) -> Result<PerStateReport> {
    let n = spec.n_states();
    let mut per_state = Vec::with_capacity(n);
    let mut per_state_player = Vec::with_capacity(n);
    let mut certified = true;
    for s in 0..n {
        let mut mu0 = vec![0.0; n];
        mu0[s] = 1.0;
        let local = spec.with_mu0(mu0)?;
        let report = exploitability_with(&local, utilities, profile, config)?;
        per_state.push(report.epsilon);
        per_state_player.push(report.per_player);
        certified &= report.certified;
    }
    let max = per_state.iter().copied().fold(0.0, f64::max);
    Ok(PerStateReport { per_state, per_state_player, max, certified })
}
