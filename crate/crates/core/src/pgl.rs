//! Tangent-space projection, the projected-gradient loss and its exact
//! gradient with respect to policies and logits.

use nalgebra::{Cholesky, DVector};

use crate::error::{CmgError, Result};
use crate::game::{flatten, unflatten, GameSpec, Matrix, PolicyProfile};
use crate::occupancy::{contraction_vjp, marginal_kernel, occupancy_vjp, FlowMatrix, ForwardCache};
use crate::solvers::LogitProfile;
use crate::utilities::{linear_reward_vector, utility_gradient, utility_hvp, UtilitySpec, UtilityTerm};

/// Smallest eigenvalue of `A A^T` accepted before the projection is refused.
pub const GRAM_EIG_TOL: f64 = 1e-14;

/// Loss value and its ingredients at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Per-player projected-gradient norms.
    pub norms: Vec<f64>,
    pub tau: f64,
    /// `tau log(|S| max_i |A_i|) + sqrt(2 n loss)`.
    pub bound: f64,
}

fn gram_cholesky(a: &Matrix) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let gram = a * a.transpose();
    let min_eig = gram
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min_eig >= GRAM_EIG_TOL) {
        return Err(CmgError::Numeric(format!(
            "flow matrix Gram A A^T is near singular (smallest eigenvalue {min_eig:e}, shape {}x{})",
            a.nrows(),
            a.ncols()
        )));
    }
    gram.cholesky()
        .ok_or_else(|| CmgError::Numeric("Cholesky of A A^T failed".into()))
}

/// `I - A^T (A A^T)^{-1} A`.
pub fn tangent_projection(a: &Matrix) -> Result<Matrix> {
    let chol = gram_cholesky(a)?;
    let x = chol.solve(a);
    Ok(Matrix::identity(a.ncols(), a.ncols()) - a.transpose() * x)
}

/// Projects `g` onto the null space of `a`; also returns the multipliers
/// `lambda = (A A^T)^{-1} A g` so that `p = g - A^T lambda`.
pub fn project(a: &Matrix, g: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = gram_cholesky(a)?;
    let lambda = chol.solve(&(a * g));
    let p = g - a.transpose() * &lambda;
    Ok((p, lambda))
}

fn bound(spec: &GameSpec, tau: f64, loss: f64) -> f64 {
    let cells = (spec.n_states() * spec.max_actions()) as f64;
    tau * cells.ln() + (2.0 * spec.n_players() as f64 * loss).sqrt()
}

struct PlayerPass {
    norm_sq: f64,
    mu: Matrix,
    p: DVector<f64>,
    lambda: DVector<f64>,
}

fn player_pass(
    spec: &GameSpec,
    terms: &[UtilityTerm],
    profile: &PolicyProfile,
    cache: &ForwardCache,
    player: usize,
    tau: f64,
) -> Result<PlayerPass> {
    let mu = cache.occupancy(profile, player);
    let r = linear_reward_vector(spec, terms, profile, player)?;
    let g = utility_gradient(terms, &mu, &r, tau);
    let kernel = marginal_kernel(spec, profile, player)?;
    let flow = FlowMatrix::from_kernel(&kernel, spec.gamma(), spec.mu0());
    let g = DVector::from_vec(flatten(&g));
    let (p, lambda) = project(&flow.a, &g)?;
    let norm_sq = p.norm_squared();
    if !norm_sq.is_finite() {
        return Err(CmgError::Numeric(format!("projected gradient of player {player} is not finite")));
    }
    Ok(PlayerPass { norm_sq, mu, p, lambda })
}

fn check_inputs(spec: &GameSpec, utilities: &UtilitySpec, profile: &PolicyProfile) -> Result<()> {
    profile.check_shape(spec)?;
    if utilities.n_players() != spec.n_players() {
        return Err(CmgError::Shape(format!(
            "utilities given for {} players, game has {}",
            utilities.n_players(),
            spec.n_players()
        )));
    }
    Ok(())
}

/// `L^tau(pi) = sum_i |Pi_i grad u_i^tau(mu_i)|^2`.
pub fn pgl_loss(spec: &GameSpec, utilities: &UtilitySpec, profile: &PolicyProfile, tau: f64) -> Result<LossReport> {
    check_inputs(spec, utilities, profile)?;
    let cache = ForwardCache::new(spec, profile)?;
    let mut norms = Vec::with_capacity(spec.n_players());
    let mut loss = 0.0;
    for i in 0..spec.n_players() {
        let pass = player_pass(spec, utilities.terms(i), profile, &cache, i, tau)?;
        loss += pass.norm_sq;
        norms.push(pass.norm_sq.sqrt());
    }
    Ok(LossReport { loss, norms, tau, bound: bound(spec, tau, loss) })
}

/// Loss and its gradient with respect to every raw policy entry.
pub fn pgl_loss_policy_gradient(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    tau: f64,
) -> Result<(LossReport, Vec<Matrix>)> {
    check_inputs(spec, utilities, profile)?;
    let cache = ForwardCache::new(spec, profile)?;
    let n = spec.n_states();
    let gamma = spec.gamma();
    let mut bars: Vec<Matrix> = spec
        .action_counts()
        .iter()
        .map(|&k| Matrix::zeros(n, k))
        .collect();
    let mut norms = Vec::with_capacity(spec.n_players());
    let mut loss = 0.0;
    for i in 0..spec.n_players() {
        let terms = utilities.terms(i);
        let pass = player_pass(spec, terms, profile, &cache, i, tau)?;
        loss += pass.norm_sq;
        norms.push(pass.norm_sq.sqrt());
        let k = spec.n_actions(i);
        let g_bar = unflatten((&pass.p * 2.0).as_slice(), n, k);

        // through the expected reward vector
        for term in terms {
            if let UtilityTerm::LinearReward { reward } = term {
                contraction_vjp(spec, profile, reward, 1, Some(i), |_, s, a| g_bar[(s, a)], &mut bars);
            }
        }

        // through the own occupancy
        let mu_bar = utility_hvp(terms, &pass.mu, &g_bar, tau);
        occupancy_vjp(spec, profile, &cache, i, &mu_bar, &mut bars)?;

        // through the flow matrix: M_bar(s', s, a) = 2 gamma lambda(s') p(s, a)
        let p = &pass.p;
        let lambda = &pass.lambda;
        contraction_vjp(
            spec,
            profile,
            spec.transition(),
            n,
            Some(i),
            |sn, s, a| 2.0 * gamma * lambda[sn] * p[s * k + a],
            &mut bars,
        );
    }
    Ok((LossReport { loss, norms, tau, bound: bound(spec, tau, loss) }, bars))
}

/// Loss and its gradient with respect to the free logits.
pub fn pgl_loss_gradient(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    logits: &LogitProfile,
    tau: f64,
) -> Result<(LossReport, Vec<Matrix>)> {
    let profile = logits.to_policy()?;
    let (report, bars) = pgl_loss_policy_gradient(spec, utilities, &profile, tau)?;
    Ok((report, logits.pullback(&profile, &bars)))
}
