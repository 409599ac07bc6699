//! Concave utility families over a player's state-action occupancy.
//!
//! A player's utility is the sum of its terms. Linear rewards enter through
//! the expected reward vector `r_i(pi_{-i})`, which depends on the opponents;
//! every other term is a function of the player's own occupancy only.

use serde::{Deserialize, Serialize};

use crate::error::{CmgError, Result};
use crate::game::{GameSpec, Matrix, PolicyProfile};

/// Coefficient of an entropy or KL term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    /// Follows the solver's annealing temperature.
    Live,
    Fixed(f64),
}

impl Weight {
    pub fn resolve(self, tau: f64) -> f64 {
        match self {
            Weight::Live => tau,
            Weight::Fixed(w) => w,
        }
    }
}

impl Serialize for Weight {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Weight::Live => s.serialize_str("live"),
            Weight::Fixed(w) => s.serialize_f64(*w),
        }
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) => Ok(Weight::Fixed(w)),
            Raw::Tag(t) if t == "live" => Ok(Weight::Live),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "weight must be a number or \"live\", got \"{t}\""
            ))),
        }
    }
}

/// One concave component of a player's utility.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilityTerm {
    /// Reward tensor in `[s, joint action]` order.
    LinearReward { reward: Vec<f64> },
    /// `+tau * H(mu)` with Shannon entropy in nats.
    EntropyBonus { tau: Weight },
    /// `-tau * KL(mu || mu_ref)`.
    KlPenalty { tau: Weight, mu_ref: Matrix },
    /// `-weight * (sum_a mu(s_plus, a) - sum_a mu(s_minus, a))^2`.
    FairnessPenalty { s_plus: usize, s_minus: usize, weight: f64 },
    /// `-weight * max(0, mu(state, action) - threshold)`.
    HingePenalty { state: usize, action: usize, threshold: f64, weight: f64 },
    /// `-weight * [max(0, |mu_a - t_a|_inf - r_a) + max(0, |mu_s - t_s|_inf - r_s)]`
    /// where `mu_a` and `mu_s` are the action and state marginals.
    InfNormSafety {
        t_a: Vec<f64>,
        t_s: Vec<f64>,
        r_a: f64,
        r_s: f64,
        weight: f64,
    },
}

impl UtilityTerm {
    pub fn tag(&self) -> &'static str {
        match self {
            UtilityTerm::LinearReward { .. } => "linear_reward",
            UtilityTerm::EntropyBonus { .. } => "entropy",
            UtilityTerm::KlPenalty { .. } => "kl_ref",
            UtilityTerm::FairnessPenalty { .. } => "fairness_pair",
            UtilityTerm::HingePenalty { .. } => "hinge",
            UtilityTerm::InfNormSafety { .. } => "infnorm_safety",
        }
    }

    /// Whether the term is differentiable on the interior of the simplex.
    pub fn is_smooth(&self) -> bool {
        !matches!(
            self,
            UtilityTerm::HingePenalty { .. } | UtilityTerm::InfNormSafety { .. }
        )
    }
}

/// Utility terms for every player.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UtilitySpec {
    players: Vec<Vec<UtilityTerm>>,
}

impl UtilitySpec {
    pub fn new(players: Vec<Vec<UtilityTerm>>) -> Self {
        Self { players }
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn terms(&self, player: usize) -> &[UtilityTerm] {
        &self.players[player]
    }

    pub fn players(&self) -> &[Vec<UtilityTerm>] {
        &self.players
    }

    /// True when some term carries a live temperature.
    pub fn has_live_terms(&self) -> bool {
        self.players.iter().flatten().any(|t| {
            matches!(
                t,
                UtilityTerm::EntropyBonus { tau: Weight::Live }
                    | UtilityTerm::KlPenalty { tau: Weight::Live, .. }
            )
        })
    }

    /// Checks shapes and coefficient signs against a game.
    pub fn validate(&self, spec: &GameSpec) -> Result<()> {
        if self.players.len() != spec.n_players() {
            return Err(CmgError::Shape(format!(
                "utilities given for {} players, game has {}",
                self.players.len(),
                spec.n_players()
            )));
        }
        let s_count = spec.n_states();
        for (i, terms) in self.players.iter().enumerate() {
            let a_count = spec.n_actions(i);
            for term in terms {
                let bad = |msg: String| Err(CmgError::Config(format!("player {i}, {}: {msg}", term.tag())));
                match term {
                    UtilityTerm::LinearReward { reward } => {
                        let expected = s_count * spec.joint().len();
                        if reward.len() != expected {
                            return Err(CmgError::Shape(format!(
                                "player {i} reward has {} entries, expected {expected}",
                                reward.len()
                            )));
                        }
                        if reward.iter().any(|r| !r.is_finite()) {
                            return bad("non-finite reward".into());
                        }
                    }
                    UtilityTerm::EntropyBonus { tau } => check_weight(*tau).or_else(bad)?,
                    UtilityTerm::KlPenalty { tau, mu_ref } => {
                        check_weight(*tau).or_else(bad)?;
                        if mu_ref.nrows() != s_count || mu_ref.ncols() != a_count {
                            return Err(CmgError::Shape(format!(
                                "player {i} reference occupancy is {}x{}, expected {s_count}x{a_count}",
                                mu_ref.nrows(),
                                mu_ref.ncols()
                            )));
                        }
                        if mu_ref.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
                            return bad("reference occupancy must be strictly positive".into());
                        }
                    }
                    UtilityTerm::FairnessPenalty { s_plus, s_minus, weight } => {
                        if *s_plus >= s_count || *s_minus >= s_count {
                            return bad(format!("state pair ({s_plus}, {s_minus}) out of range"));
                        }
                        check_nonneg(*weight).or_else(bad)?;
                    }
                    UtilityTerm::HingePenalty { state, action, threshold, weight } => {
                        if *state >= s_count || *action >= a_count {
                            return bad(format!("cell ({state}, {action}) out of range"));
                        }
                        if !(0.0..=1.0).contains(threshold) {
                            return bad(format!("threshold {threshold} outside [0, 1]"));
                        }
                        check_nonneg(*weight).or_else(bad)?;
                    }
                    UtilityTerm::InfNormSafety { t_a, t_s, r_a, r_s, weight } => {
                        if t_a.len() != a_count || t_s.len() != s_count {
                            return Err(CmgError::Shape(format!(
                                "player {i} safety targets have lengths ({}, {}), expected ({a_count}, {s_count})",
                                t_a.len(),
                                t_s.len()
                            )));
                        }
                        check_nonneg(*r_a).or_else(bad)?;
                        check_nonneg(*r_s).or_else(bad)?;
                        check_nonneg(*weight).or_else(bad)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_nonneg(w: f64) -> std::result::Result<(), String> {
    if w.is_finite() && w >= 0.0 {
        Ok(())
    } else {
        Err(format!("coefficient {w} must be finite and nonnegative"))
    }
}

fn check_weight(w: Weight) -> std::result::Result<(), String> {
    match w {
        Weight::Live => Ok(()),
        Weight::Fixed(v) => check_nonneg(v),
    }
}

/// `r_i(pi_{-i})(s, a_i) = E_{a_{-i} ~ pi_{-i}}[r_i(s, a_i, a_{-i})]`.
pub fn expected_reward_vector(
    spec: &GameSpec,
    reward: &[f64],
    profile: &PolicyProfile,
    player: usize,
) -> Result<Matrix> {
    spec.check_player(player)?;
    profile.check_shape(spec)?;
    let joint = spec.joint();
    if reward.len() != spec.n_states() * joint.len() {
        return Err(CmgError::Shape(format!(
            "reward has {} entries, expected {}",
            reward.len(),
            spec.n_states() * joint.len()
        )));
    }
    let mut out = Matrix::zeros(spec.n_states(), spec.n_actions(player));
    for s in 0..spec.n_states() {
        for ja in 0..joint.len() {
            let acts = joint.decode(ja);
            let mut w = reward[s * joint.len() + ja];
            for (j, &a) in acts.iter().enumerate() {
                if j != player {
                    w *= profile.prob(j, s, a);
                }
            }
            out[(s, acts[player])] += w;
        }
    }
    Ok(out)
}

/// Sum of the expected reward vectors of every linear term of a player.
pub fn linear_reward_vector(
    spec: &GameSpec,
    terms: &[UtilityTerm],
    profile: &PolicyProfile,
    player: usize,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(spec.n_states(), spec.n_actions(player));
    for term in terms {
        if let UtilityTerm::LinearReward { reward } = term {
            out += expected_reward_vector(spec, reward, profile, player)?;
        }
    }
    Ok(out)
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Occupancy entropy in nats with `0 log 0 = 0`.
pub fn entropy(mu: &Matrix) -> f64 {
    -mu.iter().map(|&m| xlogx(m)).sum::<f64>()
}

fn action_marginal(mu: &Matrix) -> Vec<f64> {
    (0..mu.ncols()).map(|a| mu.column(a).sum()).collect()
}

fn state_marginal(mu: &Matrix) -> Vec<f64> {
    (0..mu.nrows()).map(|s| mu.row(s).sum()).collect()
}

/// Largest `|x_k - t_k|` with its lowest attaining index.
fn inf_dev(x: &[f64], t: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, (xv, tv)) in x.iter().zip(t).enumerate() {
        let d = (xv - tv).abs();
        if d > best.0 {
            best = (d, k);
        }
    }
    best
}

/// `u_i(mu) = r_vec . mu + sum of nonlinear terms`; live weights take `tau`.
pub fn utility_value(terms: &[UtilityTerm], mu: &Matrix, r_vec: &Matrix, tau: f64) -> f64 {
    let mut u = r_vec.dot(mu);
    for term in terms {
        u += match term {
            UtilityTerm::LinearReward { .. } => 0.0,
            UtilityTerm::EntropyBonus { tau: w } => {
                let w = w.resolve(tau);
                if w == 0.0 {
                    0.0
                } else {
                    w * entropy(mu)
                }
            }
            UtilityTerm::KlPenalty { tau: w, mu_ref } => {
                let w = w.resolve(tau);
                if w == 0.0 {
                    0.0
                } else {
                    let kl: f64 = mu
                        .iter()
                        .zip(mu_ref.iter())
                        .map(|(&m, &r)| if m > 0.0 { m * (m / r).ln() } else { 0.0 })
                        .sum();
                    -w * kl
                }
            }
            UtilityTerm::FairnessPenalty { s_plus, s_minus, weight } => {
                let delta = mu.row(*s_plus).sum() - mu.row(*s_minus).sum();
                -weight * delta * delta
            }
            UtilityTerm::HingePenalty { state, action, threshold, weight } => {
                -weight * (mu[(*state, *action)] - threshold).max(0.0)
            }
            UtilityTerm::InfNormSafety { t_a, t_s, r_a, r_s, weight } => {
                let (da, _) = inf_dev(&action_marginal(mu), t_a);
                let (ds, _) = inf_dev(&state_marginal(mu), t_s);
                -weight * ((da - r_a).max(0.0) + (ds - r_s).max(0.0))
            }
        };
    }
    u
}

/// Gradient (or chosen supergradient) of [`utility_value`] in `mu`.
///
/// Hinge kinks take the zero subgradient; infinity-norm ties go to the
/// lowest index. Entropy and KL inputs are floored at the smallest positive
/// double so the gradient stays finite on the boundary.
pub fn utility_gradient(terms: &[UtilityTerm], mu: &Matrix, r_vec: &Matrix, tau: f64) -> Matrix {
    let mut g = r_vec.clone();
    for term in terms {
        match term {
            UtilityTerm::LinearReward { .. } => {}
            UtilityTerm::EntropyBonus { tau: w } => {
                let w = w.resolve(tau);
                if w != 0.0 {
                    g.zip_apply(mu, |gv, m| *gv += w * (-(m.max(f64::MIN_POSITIVE)).ln() - 1.0));
                }
            }
            UtilityTerm::KlPenalty { tau: w, mu_ref } => {
                let w = w.resolve(tau);
                if w != 0.0 {
                    for (k, gv) in g.iter_mut().enumerate() {
                        let m = mu[k].max(f64::MIN_POSITIVE);
                        *gv -= w * ((m / mu_ref[k]).ln() + 1.0);
                    }
                }
            }
            UtilityTerm::FairnessPenalty { s_plus, s_minus, weight } => {
                if s_plus != s_minus {
                    let delta = mu.row(*s_plus).sum() - mu.row(*s_minus).sum();
                    for a in 0..mu.ncols() {
                        g[(*s_plus, a)] -= 2.0 * weight * delta;
                        g[(*s_minus, a)] += 2.0 * weight * delta;
                    }
                }
            }
            UtilityTerm::HingePenalty { state, action, threshold, weight } => {
                if mu[(*state, *action)] > *threshold {
                    g[(*state, *action)] -= weight;
                }
            }
            UtilityTerm::InfNormSafety { t_a, t_s, r_a, r_s, weight } => {
                let ma = action_marginal(mu);
                let (da, ka) = inf_dev(&ma, t_a);
                if da > *r_a {
                    let sign = (ma[ka] - t_a[ka]).signum();
                    for s in 0..mu.nrows() {
                        g[(s, ka)] -= weight * sign;
                    }
                }
                let ms = state_marginal(mu);
                let (ds, ks) = inf_dev(&ms, t_s);
                if ds > *r_s {
                    let sign = (ms[ks] - t_s[ks]).signum();
                    for a in 0..mu.ncols() {
                        g[(ks, a)] -= weight * sign;
                    }
                }
            }
        }
    }
    g
}

/// Hessian-vector product of the smooth part of the utility. Hinge and
/// infinity-norm terms are piecewise linear and contribute nothing.
pub fn utility_hvp(terms: &[UtilityTerm], mu: &Matrix, v: &Matrix, tau: f64) -> Matrix {
    let mut out = Matrix::zeros(mu.nrows(), mu.ncols());
    for term in terms {
        match term {
            UtilityTerm::EntropyBonus { tau: w } | UtilityTerm::KlPenalty { tau: w, .. } => {
                let w = w.resolve(tau);
                if w != 0.0 {
                    for k in 0..out.len() {
                        out[k] -= w * v[k] / mu[k].max(f64::MIN_POSITIVE);
                    }
                }
            }
            UtilityTerm::FairnessPenalty { s_plus, s_minus, weight } => {
                if s_plus != s_minus {
                    let dv = v.row(*s_plus).sum() - v.row(*s_minus).sum();
                    for a in 0..mu.ncols() {
                        out[(*s_plus, a)] -= 2.0 * weight * dv;
                        out[(*s_minus, a)] += 2.0 * weight * dv;
                    }
                }
            }
            UtilityTerm::LinearReward { .. }
            | UtilityTerm::HingePenalty { .. }
            | UtilityTerm::InfNormSafety { .. } => {}
        }
    }
    out
}

/// How the utility behaves along a line segment at temperature `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Linear,
    /// Quadratic along any segment (linear plus fairness terms).
    Quadratic,
    /// Linear terms plus exactly one hinge.
    SingleHinge,
    General,
}

pub fn classify(terms: &[UtilityTerm], tau: f64) -> Shape {
    let mut quadratic = false;
    let mut hinges = 0;
    let mut general = false;
    for term in terms {
        match term {
            UtilityTerm::LinearReward { .. } => {}
            UtilityTerm::EntropyBonus { tau: w } | UtilityTerm::KlPenalty { tau: w, .. } => {
                if w.resolve(tau) != 0.0 {
                    general = true;
                }
            }
            UtilityTerm::FairnessPenalty { weight, .. } => {
                if *weight != 0.0 {
                    quadratic = true;
                }
            }
            UtilityTerm::HingePenalty { weight, .. } => {
                if *weight != 0.0 {
                    hinges += 1;
                }
            }
            UtilityTerm::InfNormSafety { weight, .. } => {
                if *weight != 0.0 {
                    general = true;
                }
            }
        }
    }
    match (general, quadratic, hinges) {
        (false, false, 0) => Shape::Linear,
        (false, true, 0) => Shape::Quadratic,
        (false, false, 1) => Shape::SingleHinge,
        _ => Shape::General,
    }
}
