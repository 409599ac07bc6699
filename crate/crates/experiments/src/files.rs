use cmg_core::game::{GameSpec, Matrix, PolicyProfile};
use cmg_core::{CmgError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatePolicy {
    pub probs: Vec<f64>,
    pub argmax: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerPolicy {
    pub states: Vec<StatePolicy>,
}

/// Contents of `policy.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub players: Vec<PlayerPolicy>,
}

impl PolicyFile {
    pub fn from_profile(profile: &PolicyProfile) -> Self {
        let players = (0..profile.n_players())
            .map(|i| {
                let pi = profile.policy(i);
                let argmax = profile.argmax(i);
                PlayerPolicy {
                    states: (0..pi.nrows())
                        .map(|s| StatePolicy { probs: pi.row(s).iter().copied().collect(), argmax: argmax[s] })
                        .collect(),
                }
            })
            .collect();
        Self { players }
    }

    /// Checks the file against the game and builds the profile; `argmax`
    /// entries are informational and ignored.
    pub fn to_profile(&self, spec: &GameSpec) -> Result<PolicyProfile> {
        if self.players.len() != spec.n_players() {
            return Err(CmgError::Shape(format!(
                "policy has {} players, game has {}",
                self.players.len(),
                spec.n_players()
            )));
        }
        let mut policies = Vec::with_capacity(self.players.len());
        for (i, player) in self.players.iter().enumerate() {
            let k = spec.n_actions(i);
            if player.states.len() != spec.n_states() {
                return Err(CmgError::Shape(format!(
                    "player {i} policy has {} states, game has {}",
                    player.states.len(),
                    spec.n_states()
                )));
            }
            if let Some((s, st)) = player.states.iter().enumerate().find(|(_, st)| st.probs.len() != k) {
                return Err(CmgError::Shape(format!(
                    "player {i} state {s} has {} probabilities, expected {k}",
                    st.probs.len()
                )));
            }
            let flat: Vec<f64> = player.states.iter().flat_map(|st| st.probs.iter().copied()).collect();
            policies.push(Matrix::from_row_slice(spec.n_states(), k, &flat));
        }
        PolicyProfile::new(spec, policies)
    }
}

/// Contents of `epsilon.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonFile {
    pub problem: String,
    pub utilities: Vec<f64>,
    pub epsilon: f64,
    pub per_player_epsilon: Vec<f64>,
    pub per_state_epsilon: Vec<f64>,
    /// `[state][player]`.
    pub per_state_player_epsilon: Vec<Vec<f64>>,
    pub max_per_state_epsilon: f64,
    pub certified: bool,
    pub oracle_tol: f64,
}
