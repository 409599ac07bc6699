use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CmgError, Result};
use crate::game::{GameSpec, Matrix, PolicyProfile};

/// Unconstrained policy parameters: `[n_states, n_actions - 1]` free logits
/// per player, with an implicit trailing logit of 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitProfile {
    logits: Vec<Matrix>,
}

impl LogitProfile {
    pub fn new(spec: &GameSpec, logits: Vec<Matrix>) -> Result<Self> {
        let profile = Self { logits };
        profile.check_shape(spec)?;
        Ok(profile)
    }

    pub fn from_raw(logits: Vec<Matrix>) -> Self {
        Self { logits }
    }

    /// All-zero logits, i.e. the uniform profile.
    pub fn zeros(spec: &GameSpec) -> Self {
        Self {
            logits: spec
                .action_counts()
                .iter()
                .map(|&k| Matrix::zeros(spec.n_states(), k - 1))
                .collect(),
        }
    }

    /// Independent standard-normal logits.
    pub fn standard_normal<R: Rng>(spec: &GameSpec, rng: &mut R) -> Self {
        Self {
            logits: spec
                .action_counts()
                .iter()
                .map(|&k| Matrix::from_fn(spec.n_states(), k - 1, |_, _| rng.sample(StandardNormal)))
                .collect(),
        }
    }

    /// Logits reproducing a strictly positive policy profile.
    pub fn from_policy(profile: &PolicyProfile) -> Result<Self> {
        let mut logits = Vec::with_capacity(profile.n_players());
        for (i, pi) in profile.policies().iter().enumerate() {
            if pi.iter().any(|&p| !(p > 0.0)) {
                return Err(CmgError::Config(format!(
                    "policy {i} has a zero entry and has no logit representation"
                )));
            }
            let last = pi.ncols() - 1;
            logits.push(Matrix::from_fn(pi.nrows(), last, |s, a| (pi[(s, a)] / pi[(s, last)]).ln()));
        }
        Ok(Self { logits })
    }

    pub fn check_shape(&self, spec: &GameSpec) -> Result<()> {
        if self.logits.len() != spec.n_players() {
            return Err(CmgError::Shape(format!(
                "{} logit blocks for a {}-player game",
                self.logits.len(),
                spec.n_players()
            )));
        }
        for (i, l) in self.logits.iter().enumerate() {
            if l.nrows() != spec.n_states() || l.ncols() + 1 != spec.n_actions(i) {
                return Err(CmgError::Shape(format!(
                    "logits of player {i} are {}x{}, expected {}x{}",
                    l.nrows(),
                    l.ncols(),
                    spec.n_states(),
                    spec.n_actions(i) - 1
                )));
            }
        }
        Ok(())
    }

    pub fn n_players(&self) -> usize {
        self.logits.len()
    }

    pub fn player(&self, i: usize) -> &Matrix {
        &self.logits[i]
    }

    pub fn logits(&self) -> &[Matrix] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [Matrix] {
        &mut self.logits
    }

    /// Row-wise softmax over the free logits extended with a trailing 0.
    pub fn to_policy(&self) -> Result<PolicyProfile> {
        let mut policies = Vec::with_capacity(self.logits.len());
        for (i, l) in self.logits.iter().enumerate() {
            if l.iter().any(|v| !v.is_finite()) {
                return Err(CmgError::Numeric(format!("non-finite logit for player {i}")));
            }
            policies.push(softmax_rows(l));
        }
        Ok(PolicyProfile::from_raw_unchecked(policies))
    }

    /// Chain rule through the softmax: maps policy gradients `pi_bar` to
    /// logit gradients, `theta_bar(s,k) = pi(s,k) (pi_bar(s,k) - <pi(s,.), pi_bar(s,.)>)`.
    pub fn pullback(&self, profile: &PolicyProfile, pi_bar: &[Matrix]) -> Vec<Matrix> {
        (0..self.logits.len())
            .map(|i| self.pullback_player(profile, i, &pi_bar[i]))
            .collect()
    }

    /// [`LogitProfile::pullback`] for a single player.
    pub fn pullback_player(&self, profile: &PolicyProfile, i: usize, bar: &Matrix) -> Matrix {
        let pi = profile.policy(i);
        let l = &self.logits[i];
        Matrix::from_fn(l.nrows(), l.ncols(), |s, k| {
            let mean: f64 = (0..pi.ncols()).map(|a| pi[(s, a)] * bar[(s, a)]).sum();
            pi[(s, k)] * (bar[(s, k)] - mean)
        })
    }
}

/// Convenience form of [`LogitProfile::to_policy`].
pub fn to_policy(logits: &LogitProfile) -> Result<PolicyProfile> {
    logits.to_policy()
}

fn softmax_rows(free: &Matrix) -> Matrix {
    let k = free.ncols() + 1;
    let mut out = Matrix::zeros(free.nrows(), k);
    for s in 0..free.nrows() {
        let logit = |a: usize| if a < k - 1 { free[(s, a)] } else { 0.0 };
        let max = (0..k).map(logit).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for a in 0..k {
            let e = (logit(a) - max).exp();
            out[(s, a)] = e;
            total += e;
        }
        for a in 0..k {
            out[(s, a)] /= total;
        }
    }
    out
}
