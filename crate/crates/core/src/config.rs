//! JSON game documents.
//!
//! ```json
//! {
//!   "players": 2, "states": 1, "actions": [2, 2], "gamma": 0.9, "mu0": [1.0],
//!   "transition": [1, 1, 1, 1],
//!   "reward": [1, 0, 0, 1, 1, 0, 0, 1],
//!   "utilities": [
//!     [{"kind": "linear_reward", "params": {}}, {"kind": "entropy", "params": {"tau": "live"}}],
//!     [{"kind": "linear_reward", "params": {}}]
//!   ]
//! }
//! ```
//!
//! `transition` is flat in `[s_next, s, a_1, .., a_n]` order and `reward` in
//! `[player, s, a_1, .., a_n]` order. A `linear_reward` term without a
//! `reward` parameter takes its player's slice of the top-level `reward`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CmgError, Result};
use crate::game::{flatten, unflatten, GameSpec};
use crate::utilities::{UtilitySpec, UtilityTerm, Weight};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    players: usize,
    states: usize,
    actions: Vec<usize>,
    gamma: f64,
    mu0: Vec<f64>,
    transition: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    signed_transitions: bool,
    utilities: Vec<Vec<RawTerm>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    kind: String,
    #[serde(default)]
    params: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    #[serde(default)]
    reward: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntropyParams {
    tau: Weight,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KlParams {
    tau: Weight,
    mu_ref: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FairnessParams {
    s_plus: usize,
    s_minus: usize,
    weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HingeParams {
    state: usize,
    action: usize,
    threshold: f64,
    weight: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SafetyParams {
    t_a: Vec<f64>,
    t_s: Vec<f64>,
    r_a: f64,
    r_s: f64,
    weight: f64,
}

/// Parses and validates a game document.
pub fn load_spec(document: &str) -> Result<(GameSpec, UtilitySpec)> {
    let doc: Document = serde_json::from_str(document)?;
    if doc.players != doc.actions.len() {
        return Err(CmgError::Shape(format!(
            "players = {} but {} action counts given",
            doc.players,
            doc.actions.len()
        )));
    }
    let spec = GameSpec::from_parts_unchecked(doc.states, doc.actions, doc.transition, doc.gamma, doc.mu0)
        .with_signed_transitions(doc.signed_transitions)?;
    let block = spec.n_states() * spec.joint().len();
    if let Some(r) = &doc.reward {
        if r.len() != spec.n_players() * block {
            return Err(CmgError::Shape(format!(
                "reward has {} entries, expected {}",
                r.len(),
                spec.n_players() * block
            )));
        }
    }
    if doc.utilities.len() != spec.n_players() {
        return Err(CmgError::Shape(format!(
            "utilities given for {} players, game has {}",
            doc.utilities.len(),
            spec.n_players()
        )));
    }
    let mut players = Vec::with_capacity(doc.utilities.len());
    for (i, raw_terms) in doc.utilities.into_iter().enumerate() {
        let mut terms = Vec::with_capacity(raw_terms.len());
        for (k, raw) in raw_terms.into_iter().enumerate() {
            let field = format!("utilities[{i}][{k}]");
            let shared = doc.reward.as_ref().map(|r| r[i * block..(i + 1) * block].to_vec());
            terms.push(parse_term(&spec, raw, shared, &field)?);
        }
        players.push(terms);
    }
    let utilities = UtilitySpec::new(players);
    utilities.validate(&spec)?;
    Ok((spec, utilities))
}

fn params<T: serde::de::DeserializeOwned>(value: Value, field: &str) -> Result<T> {
    let value = if value.is_null() { json!({}) } else { value };
    serde_json::from_value(value).map_err(|e| CmgError::Config(format!("{field}.params: {e}")))
}

fn parse_term(spec: &GameSpec, raw: RawTerm, shared: Option<Vec<f64>>, field: &str) -> Result<UtilityTerm> {
    Ok(match raw.kind.as_str() {
        "linear_reward" => {
            let p: LinearParams = params(raw.params, field)?;
            let reward = p.reward.or(shared).ok_or_else(|| {
                CmgError::Config(format!("{field}: linear_reward needs params.reward or a top-level reward"))
            })?;
            UtilityTerm::LinearReward { reward }
        }
        "entropy" => {
            let p: EntropyParams = params(raw.params, field)?;
            UtilityTerm::EntropyBonus { tau: p.tau }
        }
        "kl_ref" => {
            let p: KlParams = params(raw.params, field)?;
            let player_actions = p.mu_ref.len() / spec.n_states().max(1);
            if p.mu_ref.len() != spec.n_states() * player_actions || player_actions == 0 {
                return Err(CmgError::Shape(format!(
                    "{field}: mu_ref has {} entries for {} states",
                    p.mu_ref.len(),
                    spec.n_states()
                )));
            }
            UtilityTerm::KlPenalty { tau: p.tau, mu_ref: unflatten(&p.mu_ref, spec.n_states(), player_actions) }
        }
        "fairness_pair" => {
            let p: FairnessParams = params(raw.params, field)?;
            UtilityTerm::FairnessPenalty { s_plus: p.s_plus, s_minus: p.s_minus, weight: p.weight }
        }
        "hinge" => {
            let p: HingeParams = params(raw.params, field)?;
            UtilityTerm::HingePenalty { state: p.state, action: p.action, threshold: p.threshold, weight: p.weight }
        }
        "infnorm_safety" => {
            let p: SafetyParams = params(raw.params, field)?;
            UtilityTerm::InfNormSafety { t_a: p.t_a, t_s: p.t_s, r_a: p.r_a, r_s: p.r_s, weight: p.weight }
        }
        other => {
            return Err(CmgError::Config(format!(
                "{field}: unknown utility-term tag \"{other}\"; expected one of linear_reward, entropy, kl_ref, fairness_pair, hinge, infnorm_safety"
            )))
        }
    })
}

fn weight_json(w: Weight) -> Value {
    match w {
        Weight::Live => json!("live"),
        Weight::Fixed(v) => json!(v),
    }
}

fn term_json(term: &UtilityTerm) -> RawTerm {
    let params = match term {
        UtilityTerm::LinearReward { reward } => json!({ "reward": reward }),
        UtilityTerm::EntropyBonus { tau } => json!({ "tau": weight_json(*tau) }),
        UtilityTerm::KlPenalty { tau, mu_ref } => {
            json!({ "tau": weight_json(*tau), "mu_ref": flatten(mu_ref) })
        }
        UtilityTerm::FairnessPenalty { s_plus, s_minus, weight } => {
            json!({ "s_plus": s_plus, "s_minus": s_minus, "weight": weight })
        }
        UtilityTerm::HingePenalty { state, action, threshold, weight } => {
            json!({ "state": state, "action": action, "threshold": threshold, "weight": weight })
        }
        UtilityTerm::InfNormSafety { t_a, t_s, r_a, r_s, weight } => {
            json!({ "t_a": t_a, "t_s": t_s, "r_a": r_a, "r_s": r_s, "weight": weight })
        }
    };
    RawTerm { kind: term.tag().to_string(), params }
}

/// Serializes a game as a pretty-printed document that [`load_spec`] reads
/// back to an identical game.
pub fn save_spec(spec: &GameSpec, utilities: &UtilitySpec) -> String {
    let doc = Document {
        players: spec.n_players(),
        states: spec.n_states(),
        actions: spec.action_counts().to_vec(),
        gamma: spec.gamma(),
        mu0: spec.mu0().to_vec(),
        transition: spec.transition().to_vec(),
        reward: None,
        signed_transitions: spec.signed_transitions(),
        utilities: utilities.players().iter().map(|t| t.iter().map(term_json).collect()).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("game documents always serialize")
}
