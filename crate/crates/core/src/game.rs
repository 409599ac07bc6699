//! Game data model: the n-player convex Markov game, policy profiles and
//! occupancy measures.
//!
//! The transition tensor is stored flat in `[s_next, s, a_1, ..., a_n]`
//! row-major order; the joint action `(a_1, ..., a_n)` is flattened with
//! `a_1` varying slowest.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{CmgError, Result};

pub type Matrix = DMatrix<f64>;

/// Tolerance on stochasticity of transition columns, `mu0` and policy rows.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Enumeration of the joint action space `A_1 x ... x A_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointActions {
    counts: Vec<usize>,
    strides: Vec<usize>,
    table: Vec<Vec<usize>>,
}

impl JointActions {
    pub fn new(counts: &[usize]) -> Self {
        let mut strides = vec![1; counts.len()];
        for k in (0..counts.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let total: usize = counts.iter().product();
        let table = (0..total)
            .map(|ja| {
                counts
                    .iter()
                    .zip(&strides)
                    .map(|(&c, &st)| (ja / st) % c)
                    .collect()
            })
            .collect();
        Self {
            counts: counts.to_vec(),
            strides,
            table,
        }
    }

    /// Number of joint actions.
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Per-player actions of joint action `ja`.
    pub fn decode(&self, ja: usize) -> &[usize] {
        &self.table[ja]
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        actions.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }
}

/// An immutable n-player convex Markov game (without utilities).
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    n_states: usize,
    joint: JointActions,
    transition: Vec<f64>,
    gamma: f64,
    mu0: Vec<f64>,
    signed_transitions: bool,
}

impl GameSpec {
    /// Builds and validates a game.
    pub fn new(
        n_states: usize,
        action_counts: Vec<usize>,
        transition: Vec<f64>,
        gamma: f64,
        mu0: Vec<f64>,
    ) -> Result<Self> {
        let spec = Self::from_parts_unchecked(n_states, action_counts, transition, gamma, mu0);
        validate_spec(&spec).map_err(CmgError::Validation)?;
        Ok(spec)
    }

    /// Assembles a game without checking any invariant. Use [`validate_spec`]
    /// before handing the result to the solvers.
    pub fn from_parts_unchecked(
        n_states: usize,
        action_counts: Vec<usize>,
        transition: Vec<f64>,
        gamma: f64,
        mu0: Vec<f64>,
    ) -> Self {
        Self {
            n_states,
            joint: JointActions::new(&action_counts),
            transition,
            gamma,
            mu0,
            signed_transitions: false,
        }
    }

    /// Allows negative transition entries (columns must still sum to one).
    /// Needed to carry published kernels verbatim when they contain signed
    /// complements.
    pub fn with_signed_transitions(mut self, allow: bool) -> Result<Self> {
        self.signed_transitions = allow;
        validate_spec(&self).map_err(CmgError::Validation)?;
        Ok(self)
    }

    /// Same game with a different initial distribution.
    pub fn with_mu0(&self, mu0: Vec<f64>) -> Result<Self> {
        let mut spec = self.clone();
        spec.mu0 = mu0;
        validate_spec(&spec).map_err(CmgError::Validation)?;
        Ok(spec)
    }

    pub fn n_players(&self) -> usize {
        self.joint.counts.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.joint.counts
    }

    pub fn n_actions(&self, player: usize) -> usize {
        self.joint.counts[player]
    }

    pub fn max_actions(&self) -> usize {
        self.joint.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn joint(&self) -> &JointActions {
        &self.joint
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn signed_transitions(&self) -> bool {
        self.signed_transitions
    }

    /// Flat transition tensor in `[s_next, s, joint]` order.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// `P(s_next | s, joint action ja)`.
    #[inline]
    pub fn p(&self, s_next: usize, s: usize, ja: usize) -> f64 {
        self.transition[(s_next * self.n_states + s) * self.joint.len() + ja]
    }

    pub fn check_player(&self, player: usize) -> Result<()> {
        if player >= self.n_players() {
            return Err(CmgError::PlayerIndex {
                index: player,
                players: self.n_players(),
            });
        }
        Ok(())
    }
}

/// One violated game invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoPlayers,
    NoStates,
    ZeroActions { player: usize },
    TransitionLength { expected: usize, found: usize },
    Mu0Length { expected: usize, found: usize },
    Gamma { gamma: f64 },
    NonFinite { index: usize },
    NegativeTransition { s_next: usize, s: usize, actions: Vec<usize>, value: f64 },
    ColumnSum { s: usize, actions: Vec<usize>, sum: f64 },
    NegativeMu0 { s: usize, value: f64 },
    Mu0Sum { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoPlayers => write!(f, "game needs at least one player"),
            Violation::NoStates => write!(f, "game needs at least one state"),
            Violation::ZeroActions { player } => {
                write!(f, "player {player} has no actions")
            }
            Violation::TransitionLength { expected, found } => write!(
                f,
                "transition tensor has {found} entries, declared counts require {expected}"
            ),
            Violation::Mu0Length { expected, found } => {
                write!(f, "mu0 has {found} entries, expected {expected}")
            }
            Violation::Gamma { gamma } => {
                write!(f, "gamma = {gamma}: gamma strictly less than 1 (and >= 0) required")
            }
            Violation::NonFinite { index } => {
                write!(f, "transition entry {index} is not finite")
            }
            Violation::NegativeTransition { s_next, s, actions, value } => write!(
                f,
                "negative probability {value} at [s_next={s_next}, s={s}, actions={actions:?}]"
            ),
            Violation::ColumnSum { s, actions, sum } => write!(
                f,
                "transition column [s={s}, actions={actions:?}] sums to {sum}, expected 1"
            ),
            Violation::NegativeMu0 { s, value } => {
                write!(f, "negative initial probability {value} at state {s}")
            }
            Violation::Mu0Sum { sum } => write!(f, "mu0 sums to {sum}, expected 1"),
        }
    }
}

/// Every invariant violated by a [`GameSpec`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks every [`GameSpec`] invariant and reports all violations at once.
pub fn validate_spec(spec: &GameSpec) -> std::result::Result<(), ValidationReport> {
    let mut violations = Vec::new();
    let n = spec.n_states;
    if spec.n_players() == 0 {
        violations.push(Violation::NoPlayers);
    }
    if n == 0 {
        violations.push(Violation::NoStates);
    }
    for (player, &c) in spec.action_counts().iter().enumerate() {
        if c == 0 {
            violations.push(Violation::ZeroActions { player });
        }
    }
    if !(spec.gamma >= 0.0 && spec.gamma < 1.0) {
        violations.push(Violation::Gamma { gamma: spec.gamma });
    }
    let joint = spec.joint.len();
    let expected = n * n * joint;
    if spec.transition.len() != expected {
        violations.push(Violation::TransitionLength {
            expected,
            found: spec.transition.len(),
        });
    } else {
        for (index, v) in spec.transition.iter().enumerate() {
            if !v.is_finite() {
                violations.push(Violation::NonFinite { index });
            }
        }
        for s in 0..n {
            for ja in 0..joint {
                let mut sum = 0.0;
                for s_next in 0..n {
                    let value = spec.p(s_next, s, ja);
                    if value < 0.0 && !spec.signed_transitions {
                        violations.push(Violation::NegativeTransition {
                            s_next,
                            s,
                            actions: spec.joint.decode(ja).to_vec(),
                            value,
                        });
                    }
                    sum += value;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    violations.push(Violation::ColumnSum {
                        s,
                        actions: spec.joint.decode(ja).to_vec(),
                        sum,
                    });
                }
            }
        }
    }
    if spec.mu0.len() != n {
        violations.push(Violation::Mu0Length {
            expected: n,
            found: spec.mu0.len(),
        });
    } else {
        for (s, &value) in spec.mu0.iter().enumerate() {
            if value < 0.0 || !value.is_finite() {
                violations.push(Violation::NegativeMu0 { s, value });
            }
        }
        let sum: f64 = spec.mu0.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(Violation::Mu0Sum { sum });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationReport { violations })
    }
}

/// Per-player stationary policies, each an `[n_states, n_actions]` row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProfile {
    policies: Vec<Matrix>,
}

impl PolicyProfile {
    pub fn new(spec: &GameSpec, policies: Vec<Matrix>) -> Result<Self> {
        if policies.len() != spec.n_players() {
            return Err(CmgError::Shape(format!(
                "profile has {} policies for a {}-player game",
                policies.len(),
                spec.n_players()
            )));
        }
        for (i, pi) in policies.iter().enumerate() {
            if pi.nrows() != spec.n_states() || pi.ncols() != spec.n_actions(i) {
                return Err(CmgError::Shape(format!(
                    "policy {i} is {}x{}, expected {}x{}",
                    pi.nrows(),
                    pi.ncols(),
                    spec.n_states(),
                    spec.n_actions(i)
                )));
            }
            for s in 0..pi.nrows() {
                let row = pi.row(s);
                if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                    return Err(CmgError::Config(format!(
                        "policy {i} has a negative or non-finite entry at state {s}"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(CmgError::Config(format!(
                        "policy {i} row {s} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(Self { policies })
    }

    /// Wraps raw matrices without checking stochasticity. Occupancy formulas
    /// stay well defined off the simplex, which finite-difference checks use.
    pub fn from_raw_unchecked(policies: Vec<Matrix>) -> Self {
        Self { policies }
    }

    pub fn uniform(spec: &GameSpec) -> Self {
        let policies = spec
            .action_counts()
            .iter()
            .map(|&a| Matrix::from_element(spec.n_states(), a, 1.0 / a as f64))
            .collect();
        Self { policies }
    }

    pub fn n_players(&self) -> usize {
        self.policies.len()
    }

    pub fn policy(&self, player: usize) -> &Matrix {
        &self.policies[player]
    }

    pub fn policies(&self) -> &[Matrix] {
        &self.policies
    }

    pub fn into_policies(self) -> Vec<Matrix> {
        self.policies
    }

    /// `pi_j(a | s)`.
    #[inline]
    pub fn prob(&self, player: usize, s: usize, a: usize) -> f64 {
        self.policies[player][(s, a)]
    }

    pub fn check_shape(&self, spec: &GameSpec) -> Result<()> {
        if self.policies.len() != spec.n_players() {
            return Err(CmgError::Shape(format!(
                "profile has {} policies for a {}-player game",
                self.policies.len(),
                spec.n_players()
            )));
        }
        for (i, pi) in self.policies.iter().enumerate() {
            if pi.nrows() != spec.n_states() || pi.ncols() != spec.n_actions(i) {
                return Err(CmgError::Shape(format!(
                    "policy {i} is {}x{}, expected {}x{}",
                    pi.nrows(),
                    pi.ncols(),
                    spec.n_states(),
                    spec.n_actions(i)
                )));
            }
        }
        Ok(())
    }

    /// Per-state argmax action of one player (ties to the lowest index).
    pub fn argmax(&self, player: usize) -> Vec<usize> {
        let pi = &self.policies[player];
        (0..pi.nrows())
            .map(|s| {
                let mut best = 0;
                for a in 1..pi.ncols() {
                    if pi[(s, a)] > pi[(s, best)] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// State-action occupancy measures of all players under one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    slices: Vec<Matrix>,
}

impl Occupancy {
    pub fn new(slices: Vec<Matrix>) -> Self {
        Self { slices }
    }

    pub fn slice(&self, player: usize) -> &Matrix {
        &self.slices[player]
    }

    pub fn slices(&self) -> &[Matrix] {
        &self.slices
    }

    /// Marginal over own actions: `sum_a mu_i(s, a)`.
    pub fn state_marginal(&self, player: usize) -> Vec<f64> {
        let m = &self.slices[player];
        (0..m.nrows()).map(|s| m.row(s).sum()).collect()
    }
}

/// Flattens an `[s, a]` matrix in row-major `(s, a)` order.
pub fn flatten(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for s in 0..m.nrows() {
        for a in 0..m.ncols() {
            out.push(m[(s, a)]);
        }
    }
    out
}

/// Inverse of [`flatten`].
pub fn unflatten(v: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::from_row_slice(rows, cols, v)
}
