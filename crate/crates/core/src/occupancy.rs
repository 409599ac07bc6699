//! Occupancy-measure linear algebra: kernels, discounted occupancies, the
//! Bellman-flow matrix, policy recovery and derivatives with respect to
//! policies.

use nalgebra::{DVector, LU};

use crate::error::{CmgError, Result};
use crate::game::{GameSpec, Matrix, Occupancy, PolicyProfile};

/// Smallest singular value accepted as full row rank.
pub const RANK_TOL: f64 = 1e-9;

/// Transition tensor of one player with opponents marginalized out.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalKernel {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl MarginalKernel {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `P_i(s_next | s, a)`.
    #[inline]
    pub fn at(&self, s_next: usize, s: usize, a: usize) -> f64 {
        self.data[(s_next * self.n_states + s) * self.n_actions + a]
    }

    /// Kernel of a fixed own policy: `sum_a P_i(s' | s, a) pi(a | s)`.
    pub fn contract(&self, pi: &Matrix) -> Matrix {
        let n = self.n_states;
        Matrix::from_fn(n, n, |sn, s| {
            (0..self.n_actions).map(|a| self.at(sn, s, a) * pi[(s, a)]).sum()
        })
    }
}

/// Bellman-flow equality `A mu_i = b` of one player.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    /// `[n_states, n_states * n_actions]`, columns in `(s, a)` row-major order.
    pub a: Matrix,
    /// `(1 - gamma) mu0`.
    pub b: DVector<f64>,
}

impl FlowMatrix {
    pub fn from_kernel(kernel: &MarginalKernel, gamma: f64, mu0: &[f64]) -> Self {
        let n = kernel.n_states;
        let k = kernel.n_actions;
        let a = Matrix::from_fn(n, n * k, |sn, col| {
            let (s, act) = (col / k, col % k);
            let delta = if sn == s { 1.0 } else { 0.0 };
            delta - gamma * kernel.at(sn, s, act)
        });
        let b = DVector::from_iterator(n, mu0.iter().map(|m| (1.0 - gamma) * m));
        Self { a, b }
    }

    pub fn min_singular_value(&self) -> f64 {
        self.a
            .clone()
            .singular_values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `max |A vec(mu) - b|`.
    pub fn residual(&self, mu: &Matrix) -> f64 {
        let v = DVector::from_vec(crate::game::flatten(mu));
        (&self.a * v - &self.b).amax()
    }
}

/// Products of opponent policy probabilities for every (state, joint action):
/// `w(s, ja) = prod_{j != skip} pi_j(a_j | s)`. `skip = None` multiplies all players.
pub(crate) fn joint_weights(spec: &GameSpec, profile: &PolicyProfile, skip: Option<usize>) -> Matrix {
    let joint = spec.joint();
    Matrix::from_fn(spec.n_states(), joint.len(), |s, ja| {
        joint
            .decode(ja)
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(j, &a)| profile.prob(j, s, a))
            .product()
    })
}

/// `P^pi(s', s) = sum_a P(s' | s, a) prod_j pi_j(a_j | s)`.
pub fn joint_kernel(spec: &GameSpec, profile: &PolicyProfile) -> Result<Matrix> {
    profile.check_shape(spec)?;
    let w = joint_weights(spec, profile, None);
    let n = spec.n_states();
    let jl = spec.joint().len();
    Ok(Matrix::from_fn(n, n, |sn, s| {
        (0..jl).map(|ja| spec.p(sn, s, ja) * w[(s, ja)]).sum()
    }))
}

/// `P_i(s' | s, a_i)` with the opponents' policies marginalized out.
pub fn marginal_kernel(spec: &GameSpec, profile: &PolicyProfile, player: usize) -> Result<MarginalKernel> {
    spec.check_player(player)?;
    profile.check_shape(spec)?;
    let n = spec.n_states();
    let k = spec.n_actions(player);
    let joint = spec.joint();
    let w = joint_weights(spec, profile, Some(player));
    let mut data = vec![0.0; n * n * k];
    for sn in 0..n {
        for s in 0..n {
            for ja in 0..joint.len() {
                let a = joint.decode(ja)[player];
                data[(sn * n + s) * k + a] += spec.p(sn, s, ja) * w[(s, ja)];
            }
        }
    }
    Ok(MarginalKernel { n_states: n, n_actions: k, data })
}

/// LU factorization of `I - gamma K` with a nonsingularity check.
pub(crate) fn resolvent(kernel: &Matrix, gamma: f64) -> Result<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let n = kernel.nrows();
    let m = Matrix::identity(n, n) - kernel * gamma;
    let lu = m.lu();
    if !lu.is_invertible() {
        return Err(CmgError::Numeric("I - gamma P^pi is singular".into()));
    }
    Ok(lu)
}

/// `(1 - gamma) (I - gamma K)^{-1} mu0` for a state kernel `K`.
pub fn discounted_state_distribution(kernel: &Matrix, gamma: f64, mu0: &[f64]) -> Result<DVector<f64>> {
    let lu = resolvent(kernel, gamma)?;
    let rhs = DVector::from_iterator(mu0.len(), mu0.iter().map(|m| (1.0 - gamma) * m));
    let d = lu
        .solve(&rhs)
        .ok_or_else(|| CmgError::Numeric("state occupancy solve failed".into()))?;
    if d.iter().any(|v| !v.is_finite()) {
        return Err(CmgError::Numeric("state occupancy is not finite".into()));
    }
    Ok(d)
}

/// Discounted state occupancy `(1 - gamma)[I - gamma P^pi]^{-1} mu0`.
pub fn state_occupancy(spec: &GameSpec, profile: &PolicyProfile) -> Result<DVector<f64>> {
    let k = joint_kernel(spec, profile)?;
    discounted_state_distribution(&k, spec.gamma(), spec.mu0())
}

/// `mu_i(s, a) = d(s) pi_i(a | s)`.
pub fn player_occupancy(spec: &GameSpec, profile: &PolicyProfile, player: usize) -> Result<Matrix> {
    spec.check_player(player)?;
    let d = state_occupancy(spec, profile)?;
    Ok(scale_rows(profile.policy(player), &d))
}

/// Occupancies of every player.
pub fn occupancy(spec: &GameSpec, profile: &PolicyProfile) -> Result<Occupancy> {
    let d = state_occupancy(spec, profile)?;
    Ok(Occupancy::new(
        profile.policies().iter().map(|pi| scale_rows(pi, &d)).collect(),
    ))
}

pub(crate) fn scale_rows(pi: &Matrix, d: &DVector<f64>) -> Matrix {
    Matrix::from_fn(pi.nrows(), pi.ncols(), |s, a| d[s] * pi[(s, a)])
}

/// Bellman-flow matrix of one player given the opponents in `profile`.
pub fn flow_matrix(spec: &GameSpec, profile: &PolicyProfile, player: usize) -> Result<FlowMatrix> {
    let kernel = marginal_kernel(spec, profile, player)?;
    Ok(FlowMatrix::from_kernel(&kernel, spec.gamma(), spec.mu0()))
}

/// Policy recovered from an occupancy slice; zero-mass states get the uniform row.
pub fn policy_from_occupancy(mu: &Matrix) -> Matrix {
    let k = mu.ncols();
    let mut pi = Matrix::zeros(mu.nrows(), k);
    for s in 0..mu.nrows() {
        let mass: f64 = mu.row(s).sum();
        for a in 0..k {
            pi[(s, a)] = if mass > 1e-12 { mu[(s, a)] / mass } else { 1.0 / k as f64 };
        }
    }
    pi
}

/// Jacobian `d mu_i(x, y) / d pi_j(x', y')` stored as a
/// `[n_states * A_i, n_states * A_j]` matrix over flattened `(s, a)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyJacobian {
    pub rows_actions: usize,
    pub cols_actions: usize,
    pub data: Matrix,
}

impl OccupancyJacobian {
    pub fn get(&self, x: usize, y: usize, xp: usize, yp: usize) -> f64 {
        self.data[(x * self.rows_actions + y, xp * self.cols_actions + yp)]
    }
}

/// Analytic derivative of player `i`'s occupancy with respect to player
/// `j`'s policy entries, treating every entry as a free coordinate.
///
/// `d mu_i(x,y) = [i = j][x = x'][y = y'] d(x)
///              + pi_i(y|x) [(I - gamma P^pi)^{-1} gamma dP^pi d](x)`
/// where only column `x'` of `dP^pi` is nonzero.
pub fn d_occupancy_d_policy(
    spec: &GameSpec,
    profile: &PolicyProfile,
    i: usize,
    j: usize,
) -> Result<OccupancyJacobian> {
    spec.check_player(i)?;
    spec.check_player(j)?;
    let k = joint_kernel(spec, profile)?;
    let gamma = spec.gamma();
    let d = discounted_state_distribution(&k, gamma, spec.mu0())?;
    let lu = resolvent(&k, gamma)?;
    let mj = marginal_kernel(spec, profile, j)?;
    let n = spec.n_states();
    let ai = spec.n_actions(i);
    let aj = spec.n_actions(j);
    let pi_i = profile.policy(i);
    let mut data = Matrix::zeros(n * ai, n * aj);
    for xp in 0..n {
        for yp in 0..aj {
            // dK/dpi_j(x', y') has column x' equal to M_j[:, x', y']
            let rhs = DVector::from_fn(n, |sn, _| gamma * mj.at(sn, xp, yp) * d[xp]);
            let dd = lu
                .solve(&rhs)
                .ok_or_else(|| CmgError::Numeric("resolvent solve failed".into()))?;
            let col = xp * aj + yp;
            for x in 0..n {
                for y in 0..ai {
                    data[(x * ai + y, col)] = pi_i[(x, y)] * dd[x];
                }
            }
            if i == j {
                data[(xp * ai + yp, col)] += d[xp];
            }
        }
    }
    Ok(OccupancyJacobian { rows_actions: ai, cols_actions: aj, data })
}

/// Everything the reverse-mode passes need about one profile.
pub(crate) struct ForwardCache {
    pub kernel: Matrix,
    pub d: DVector<f64>,
}

impl ForwardCache {
    pub fn new(spec: &GameSpec, profile: &PolicyProfile) -> Result<Self> {
        let kernel = joint_kernel(spec, profile)?;
        let lu = resolvent(&kernel, spec.gamma())?;
        let rhs = DVector::from_iterator(
            spec.n_states(),
            spec.mu0().iter().map(|m| (1.0 - spec.gamma()) * m),
        );
        let d = lu
            .solve(&rhs)
            .ok_or_else(|| CmgError::Numeric("state occupancy solve failed".into()))?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(CmgError::Numeric("state occupancy is not finite".into()));
        }
        Ok(Self { kernel, d })
    }

    pub fn occupancy(&self, profile: &PolicyProfile, player: usize) -> Matrix {
        scale_rows(profile.policy(player), &self.d)
    }
}

/// Pulls an adjoint on a policy-contracted tensor back onto the policies.
///
/// The forward map is `out(o, s, a_keep) = sum_ja T(o, s, ja) prod_{j != keep} pi_j(a_j|s)`
/// with `T` stored flat as `[o, s, ja]`. `adj(o, s, a_keep)` is the output
/// adjoint (`a_keep = 0` when `keep` is `None`). Gradients are added into `bars`.
pub(crate) fn contraction_vjp(
    spec: &GameSpec,
    profile: &PolicyProfile,
    tensor: &[f64],
    n_out: usize,
    keep: Option<usize>,
    adj: impl Fn(usize, usize, usize) -> f64,
    bars: &mut [Matrix],
) {
    let joint = spec.joint();
    let n = spec.n_states();
    let jl = joint.len();
    let players = spec.n_players();
    for s in 0..n {
        for ja in 0..jl {
            let acts = joint.decode(ja);
            let a_keep = keep.map_or(0, |k| acts[k]);
            let mut coeff = 0.0;
            for o in 0..n_out {
                coeff += tensor[(o * n + s) * jl + ja] * adj(o, s, a_keep);
            }
            if coeff == 0.0 {
                continue;
            }
            for j in 0..players {
                if Some(j) == keep {
                    continue;
                }
                let mut w = coeff;
                for (l, &al) in acts.iter().enumerate() {
                    if l != j && Some(l) != keep {
                        w *= profile.prob(l, s, al);
                    }
                }
                bars[j][(s, acts[j])] += w;
            }
        }
    }
}

/// Adds the policy gradient of `<mu_bar, mu_i>` into `bars`, through both the
/// Hadamard product and the state occupancy.
pub(crate) fn occupancy_vjp(
    spec: &GameSpec,
    profile: &PolicyProfile,
    cache: &ForwardCache,
    player: usize,
    mu_bar: &Matrix,
    bars: &mut [Matrix],
) -> Result<()> {
    let n = spec.n_states();
    let pi = profile.policy(player);
    let mut d_bar = DVector::zeros(n);
    for s in 0..n {
        for a in 0..pi.ncols() {
            bars[player][(s, a)] += mu_bar[(s, a)] * cache.d[s];
            d_bar[s] += mu_bar[(s, a)] * pi[(s, a)];
        }
    }
    state_occupancy_vjp(spec, profile, cache, &d_bar, bars)
}

/// Adds the policy gradient of `<d_bar, d>` into `bars`.
pub(crate) fn state_occupancy_vjp(
    spec: &GameSpec,
    profile: &PolicyProfile,
    cache: &ForwardCache,
    d_bar: &DVector<f64>,
    bars: &mut [Matrix],
) -> Result<()> {
    // d = (1-g) M^{-1} mu0 with M = I - g K, so K_bar = g z d^T, z = M^{-T} d_bar
    let gamma = spec.gamma();
    let z = resolvent(&cache.kernel.transpose(), gamma)?
        .solve(d_bar)
        .ok_or_else(|| CmgError::Numeric("adjoint resolvent solve failed".into()))?;
    let d = &cache.d;
    contraction_vjp(
        spec,
        profile,
        spec.transition(),
        spec.n_states(),
        None,
        |sn, s, _| gamma * z[sn] * d[s],
        bars,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::JointActions;

    fn synthetic() -> GameSpec {
        let joint = JointActions::new(&[2, 2]);
        let mut t = vec![0.0; 16];
        for s in 0..2 {
            for ja in 0..4 {
                let next = if joint.decode(ja) == [0, 0] { 1 - s } else { s };
                t[(next * 2 + s) * 4 + ja] = 1.0;
            }
        }
        GameSpec::new(2, vec![2, 2], t, 0.95, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn single_state_kernel_is_one() {
        let spec = GameSpec::new(1, vec![3], vec![1.0; 3], 0.9, vec![1.0]).unwrap();
        let k = joint_kernel(&spec, &PolicyProfile::uniform(&spec)).unwrap();
        assert_eq!(k, Matrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn both_play_zero_swaps() {
        let spec = synthetic();
        let pure = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let profile = PolicyProfile::new(&spec, vec![pure.clone(), pure]).unwrap();
        let k = joint_kernel(&spec, &profile).unwrap();
        assert_eq!(k, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn opponent_mixture_weights_kernel() {
        let spec = synthetic();
        let opp = Matrix::from_row_slice(2, 2, &[0.4, 0.6, 0.8, 0.2]);
        let profile = PolicyProfile::new(&spec, vec![Matrix::from_element(2, 2, 0.5), opp]).unwrap();
        let m = marginal_kernel(&spec, &profile, 0).unwrap();
        // own action 0: swap with the opponent's probability of action 0
        assert!((m.at(1, 0, 0) - 0.4).abs() < 1e-15);
        assert!((m.at(0, 0, 0) - 0.6).abs() < 1e-15);
        assert!((m.at(0, 1, 0) - 0.8).abs() < 1e-15);
        assert_eq!(m.at(0, 0, 1), 1.0);
    }

    #[test]
    fn gamma_zero_returns_mu0() {
        let spec = GameSpec::new(2, vec![2], vec![0.3, 0.9, 0.1, 0.5, 0.7, 0.1, 0.9, 0.5], 0.0, vec![0.25, 0.75])
            .unwrap();
        let d = state_occupancy(&spec, &PolicyProfile::uniform(&spec)).unwrap();
        assert_eq!(d.as_slice(), &[0.25, 0.75]);
        let mu = player_occupancy(&spec, &PolicyProfile::uniform(&spec), 0).unwrap();
        assert_eq!(mu, Matrix::from_row_slice(2, 2, &[0.125, 0.125, 0.375, 0.375]));
    }

    #[test]
    fn one_state_flow_matrix() {
        let spec = GameSpec::new(1, vec![2], vec![1.0, 1.0], 0.9, vec![1.0]).unwrap();
        let f = flow_matrix(&spec, &PolicyProfile::uniform(&spec), 0).unwrap();
        assert!((f.a[(0, 0)] - 0.1).abs() < 1e-15);
        assert!((f.a[(0, 1)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_state_recovers_uniform() {
        let mu = Matrix::from_row_slice(2, 2, &[0.3, 0.7, 0.0, 0.0]);
        let pi = policy_from_occupancy(&mu);
        assert_eq!(pi, Matrix::from_row_slice(2, 2, &[0.3, 0.7, 0.5, 0.5]));
    }

    #[test]
    fn single_state_jacobian_is_direct_term_on_the_simplex() {
        let spec = GameSpec::new(1, vec![2], vec![1.0, 1.0], 0.9, vec![1.0]).unwrap();
        let jac = d_occupancy_d_policy(&spec, &PolicyProfile::uniform(&spec), 0, 0).unwrap();
        // the kernel term is constant in y', so it cancels along (1, -1)
        for y in 0..2 {
            let along = jac.get(0, y, 0, 0) - jac.get(0, y, 0, 1);
            let direct = if y == 0 { 1.0 } else { -1.0 };
            assert!((along - direct).abs() < 1e-12);
        }
    }
}
