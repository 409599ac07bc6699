//! Built-in experimental domains: iterated normal-form games, the synthetic
//! safety game and the two-robot warehouse.

use crate::error::{CmgError, Result};
use crate::game::{GameSpec, JointActions, Matrix, PolicyProfile};
use crate::occupancy::player_occupancy;
use crate::rng::seeded_rng;
use crate::solvers::{AnnealSchedule, LogitProfile, OptimizerConfig};
use crate::utilities::{UtilitySpec, UtilityTerm, Weight};

/// Catalog names, sorted.
pub const DOMAIN_NAMES: [&str; 9] = [
    "bach-stravinsky",
    "bach-stravinsky-fair",
    "elfarol",
    "ipd",
    "ipd-imitation",
    "ipgg",
    "synthetic-safety",
    "warehouse",
    "warehouse-safe",
];

/// Discount of every iterated normal-form game.
pub const ITERATED_GAMMA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Zero logits (uniform policies).
    Zeros,
    /// Seeded standard-normal logits.
    StandardNormal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverDefaults {
    pub lr: f64,
    pub schedule: AnnealSchedule,
    pub iters: usize,
    pub init: InitKind,
}

impl SolverDefaults {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::adam(self.lr)
    }
}

/// A published result the domain is expected to reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub label: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct DomainCatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub spec: GameSpec,
    pub utilities: UtilitySpec,
    pub defaults: SolverDefaults,
    pub references: Vec<Reference>,
}

impl DomainCatalogEntry {
    /// Initial logits per the domain's init rule.
    pub fn initial_logits(&self, seed: u64) -> LogitProfile {
        match self.defaults.init {
            InitKind::Zeros => LogitProfile::zeros(&self.spec),
            InitKind::StandardNormal => LogitProfile::standard_normal(&self.spec, &mut seeded_rng(seed)),
        }
    }
}

/// Iterated normal-form game: the state is the previous joint action.
///
/// `payoffs[i]` lists player `i`'s stage payoff for every joint action in
/// row-major order (player 0 slowest). Returns the game and per-player reward
/// tensors in `[s, joint]` order.
pub fn build_iterated_nfg(
    payoffs: &[Vec<f64>],
    action_counts: &[usize],
    gamma: f64,
) -> Result<(GameSpec, Vec<Vec<f64>>)> {
    let joint = JointActions::new(action_counts);
    let n_states = joint.len();
    if payoffs.len() != action_counts.len() {
        return Err(CmgError::Shape(format!(
            "{} payoff tables for {} players",
            payoffs.len(),
            action_counts.len()
        )));
    }
    if let Some((i, p)) = payoffs.iter().enumerate().find(|(_, p)| p.len() != n_states) {
        return Err(CmgError::Shape(format!(
            "payoff table {i} has {} entries, expected {n_states}",
            p.len()
        )));
    }
    let mut transition = vec![0.0; n_states * n_states * n_states];
    for s in 0..n_states {
        for ja in 0..n_states {
            transition[(ja * n_states + s) * n_states + ja] = 1.0;
        }
    }
    let uniform = vec![1.0 / n_states as f64; n_states];
    let spec = GameSpec::new(n_states, action_counts.to_vec(), transition, gamma, uniform)?;
    let rewards = payoffs
        .iter()
        .map(|p| (0..n_states).flat_map(|_| p.iter().copied()).collect())
        .collect();
    Ok((spec, rewards))
}

/// Normalized prisoner's dilemma stage payoffs, actions (C, D).
pub fn ipd_payoffs() -> Vec<Vec<f64>> {
    vec![
        vec![2.0 / 3.0, 0.0, 1.0, 1.0 / 3.0],
        vec![2.0 / 3.0, 1.0, 0.0, 1.0 / 3.0],
    ]
}

/// Bach-Stravinsky stage payoffs, actions (B, S).
pub fn bach_stravinsky_payoffs() -> Vec<Vec<f64>> {
    vec![vec![3.0, 0.0, 0.0, 2.0], vec![2.0, 0.0, 0.0, 3.0]]
}

/// Public goods stage payoffs for 3 players, actions (None, All-In):
/// each player's profit is `1.3 * contributors / 3 - own contribution`.
pub fn ipgg_payoffs() -> Vec<Vec<f64>> {
    let joint = JointActions::new(&[2, 2, 2]);
    (0..3)
        .map(|i| {
            (0..joint.len())
                .map(|ja| {
                    let acts = joint.decode(ja);
                    let pot: usize = acts.iter().sum();
                    1.3 * pot as f64 / 3.0 - acts[i] as f64
                })
                .collect()
        })
        .collect()
}

/// El Farol stage payoffs for 3 players, actions (home, go): home pays 1,
/// the bar pays 2 unless all three attend, then 0.
pub fn elfarol_payoffs() -> Vec<Vec<f64>> {
    let joint = JointActions::new(&[2, 2, 2]);
    (0..3)
        .map(|i| {
            (0..joint.len())
                .map(|ja| {
                    let acts = joint.decode(ja);
                    let attendance: usize = acts.iter().sum();
                    match (acts[i], attendance < 3) {
                        (0, _) => 1.0,
                        (_, true) => 2.0,
                        (_, false) => 0.0,
                    }
                })
                .collect()
        })
        .collect()
}

fn linear_plus(rewards: Vec<Vec<f64>>, extra: impl Fn(usize) -> Vec<UtilityTerm>) -> UtilitySpec {
    UtilitySpec::new(
        rewards
            .into_iter()
            .enumerate()
            .map(|(i, reward)| {
                let mut terms = vec![UtilityTerm::LinearReward { reward }];
                terms.extend(extra(i));
                terms
            })
            .collect(),
    )
}

fn entropy() -> Vec<UtilityTerm> {
    vec![UtilityTerm::EntropyBonus { tau: Weight::Live }]
}

fn defaults(lr: f64, schedule: AnnealSchedule, iters: usize) -> SolverDefaults {
    SolverDefaults { lr, schedule, iters, init: InitKind::Zeros }
}

fn reference(label: &'static str, value: f64) -> Reference {
    Reference { label, value }
}

pub fn build_ipd() -> DomainCatalogEntry {
    let (spec, rewards) = build_iterated_nfg(&ipd_payoffs(), &[2, 2], ITERATED_GAMMA).expect("ipd");
    DomainCatalogEntry {
        name: "ipd",
        description: "iterated prisoner's dilemma with an annealed occupancy-entropy bonus",
        spec,
        utilities: linear_plus(rewards, |_| entropy()),
        defaults: defaults(0.1, AnnealSchedule::type1(), 8000),
        references: vec![reference("utility", 0.47)],
    }
}

/// Player 1's probability of cooperating in states (CC, CD, DC, DD) under the
/// observed human policy.
pub const HUMAN_COOPERATE: [f64; 4] = [0.86, 0.35, 0.45, 0.13];

/// Symmetric human profile on the iterated prisoner's dilemma. Player 2 sees
/// states with the roles swapped.
pub fn human_ipd_profile() -> PolicyProfile {
    let row = |p: f64| [p, 1.0 - p];
    let p1: Vec<f64> = HUMAN_COOPERATE.iter().flat_map(|&p| row(p)).collect();
    let p2: Vec<f64> = [0, 2, 1, 3]
        .iter()
        .flat_map(|&s| row(HUMAN_COOPERATE[s]))
        .collect();
    PolicyProfile::from_raw_unchecked(vec![
        Matrix::from_row_slice(4, 2, &p1),
        Matrix::from_row_slice(4, 2, &p2),
    ])
}

pub fn build_imitation_ipd() -> DomainCatalogEntry {
    let (spec, rewards) = build_iterated_nfg(&ipd_payoffs(), &[2, 2], ITERATED_GAMMA).expect("ipd");
    let human = PolicyProfile::new(&spec, human_ipd_profile().into_policies()).expect("human profile");
    let refs: Vec<Matrix> = (0..2)
        .map(|i| {
            let mu = player_occupancy(&spec, &human, i).expect("human occupancy");
            let floored = mu.map(|m| m.max(1e-9));
            let total = floored.sum();
            floored / total
        })
        .collect();
    DomainCatalogEntry {
        name: "ipd-imitation",
        description: "iterated prisoner's dilemma with an annealed KL penalty to human play",
        spec,
        utilities: linear_plus(rewards, |i| {
            vec![UtilityTerm::KlPenalty { tau: Weight::Live, mu_ref: refs[i].clone() }]
        }),
        defaults: defaults(0.01, AnnealSchedule::type1().with_min_temperature(1e-3), 8000),
        references: vec![
            reference("utility", 0.48),
            reference("per_state_epsilon", 1.4e-4),
            reference("human_utility", 0.46),
        ],
    }
}

pub fn build_ipgg() -> DomainCatalogEntry {
    let (spec, rewards) = build_iterated_nfg(&ipgg_payoffs(), &[2, 2, 2], ITERATED_GAMMA).expect("ipgg");
    DomainCatalogEntry {
        name: "ipgg",
        description: "iterated 3-player public goods game, multiplier 1.3",
        spec,
        utilities: linear_plus(rewards, |_| entropy()),
        defaults: defaults(0.1, AnnealSchedule::type1(), 8000),
        references: vec![reference("utility", 0.03)],
    }
}

pub fn build_elfarol() -> DomainCatalogEntry {
    let (spec, rewards) = build_iterated_nfg(&elfarol_payoffs(), &[2, 2, 2], ITERATED_GAMMA).expect("elfarol");
    DomainCatalogEntry {
        name: "elfarol",
        description: "iterated 3-player El Farol bar problem",
        spec,
        utilities: linear_plus(rewards, |_| entropy()),
        defaults: defaults(0.1, AnnealSchedule::type1(), 8000),
        references: vec![],
    }
}

pub fn build_bach_stravinsky(fair: bool) -> DomainCatalogEntry {
    let (spec, rewards) =
        build_iterated_nfg(&bach_stravinsky_payoffs(), &[2, 2], ITERATED_GAMMA).expect("bach-stravinsky");
    let mut d = defaults(0.1, AnnealSchedule::type1(), 1000);
    d.init = InitKind::StandardNormal;
    if fair {
        d.schedule = d.schedule.with_initial_tau(0.0);
        DomainCatalogEntry {
            name: "bach-stravinsky-fair",
            description: "iterated Bach-Stravinsky with a (BB) vs (SS) attendance fairness penalty",
            spec,
            utilities: linear_plus(rewards, |_| {
                vec![UtilityTerm::FairnessPenalty { s_plus: 0, s_minus: 3, weight: 1.0 }]
            }),
            defaults: d,
            references: vec![reference("favored_probability", 0.6), reference("epsilon", 2.5e-5)],
        }
    } else {
        DomainCatalogEntry {
            name: "bach-stravinsky",
            description: "iterated Bach-Stravinsky with an annealed occupancy-entropy bonus",
            spec,
            utilities: linear_plus(rewards, |_| entropy()),
            defaults: d,
            references: vec![],
        }
    }
}

/// Targets of the synthetic safety loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyTargets {
    pub t_a: Vec<f64>,
    pub t_s: Vec<f64>,
    pub r_a: f64,
    pub r_s: f64,
}

impl Default for SafetyTargets {
    fn default() -> Self {
        Self { t_a: vec![0.52, 0.48], t_s: vec![0.6, 0.4], r_a: 1.0 / 20.0, r_s: 1.0 / 4.0 }
    }
}

/// Two states; both players picking action 0 swaps the state, anything else stays.
pub fn synthetic_transition() -> Vec<f64> {
    let mut t = vec![0.0; 2 * 2 * 4];
    for s in 0..2 {
        for ja in 0..4 {
            let next = if ja == 0 { 1 - s } else { s };
            t[(next * 2 + s) * 4 + ja] = 1.0;
        }
    }
    t
}

/// Opponent policy fixed in the best-response illustration: action 0 with
/// probability 0.40 in state 0 and 0.80 in state 1.
pub fn synthetic_opponent_policy() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.4, 0.6, 0.8, 0.2])
}

pub fn build_synthetic_safety() -> DomainCatalogEntry {
    build_synthetic_safety_with(SafetyTargets::default())
}

pub fn build_synthetic_safety_with(targets: SafetyTargets) -> DomainCatalogEntry {
    let spec = GameSpec::new(2, vec![2, 2], synthetic_transition(), 0.95, vec![0.5, 0.5]).expect("synthetic");
    let term = UtilityTerm::InfNormSafety {
        t_a: targets.t_a,
        t_s: targets.t_s,
        r_a: targets.r_a,
        r_s: targets.r_s,
        weight: 1.0,
    };
    let utilities = UtilitySpec::new(
        (0..2)
            .map(|_| vec![term.clone(), UtilityTerm::EntropyBonus { tau: Weight::Live }])
            .collect(),
    );
    DomainCatalogEntry {
        name: "synthetic-safety",
        description: "2-state coordination game with infinity-norm safe regions",
        spec,
        utilities,
        defaults: defaults(0.1, AnnealSchedule::type2(), 8000),
        references: vec![reference("epsilon", 0.0)],
    }
}

/// Warehouse transition and reward tensors, value for value. States are
/// (pickup, pickup), (pickup, dropoff), (dropoff, pickup), (dropoff, dropoff);
/// actions are (slow, fast).
///
/// The complement rule for `s' = 0, s = 0` runs over a column that already
/// sums to 1.2 for the mixed-speed actions, so two entries are -0.2.
pub fn warehouse_tensors() -> (Vec<f64>, Vec<Vec<f64>>) {
    let p_reset = 1.0;
    let p_drop_alone_slow = 0.7;
    let p_drop_alone_fast = 0.8;
    let p_low = 0.2;
    let p_mid = 0.5;
    let p_high = 0.8;

    let mut t = [[[[0.0f64; 2]; 2]; 4]; 4];
    let mut reward = [[[[0.0f64; 2]; 2]; 4]; 2];
    for a in 0..2 {
        reward[1][1][a][0] = 1.0;
        reward[1][1][a][1] = 2.0;
        reward[0][2][0][a] = 1.0;
        reward[0][2][1][a] = 2.0;
        reward[0][3][0][a] = 1.0;
        reward[0][3][1][a] = 2.0;
        reward[1][3][a][0] = 1.0;
        reward[1][3][a][1] = 2.0;
    }

    t[0][1] = [
        [(1.0 - p_drop_alone_slow) * p_reset, (1.0 - p_drop_alone_slow) * p_reset],
        [(1.0 - p_drop_alone_fast) * p_reset, (1.0 - p_drop_alone_fast) * p_reset],
    ];
    t[0][2] = [
        [p_reset * (1.0 - p_drop_alone_slow), p_reset * (1.0 - p_drop_alone_fast)],
        [p_reset * (1.0 - p_drop_alone_slow), p_reset * (1.0 - p_drop_alone_fast)],
    ];
    t[0][3] = [[p_reset, p_reset], [p_reset, p_reset]];

    t[1][0] = [[(1.0 - p_mid) * p_mid, p_high], [p_low, p_low]];
    t[1][1] = [
        [(1.0 - p_drop_alone_slow) * (1.0 - p_reset), (1.0 - p_drop_alone_slow) * (1.0 - p_reset)],
        [(1.0 - p_drop_alone_fast) * (1.0 - p_reset), (1.0 - p_drop_alone_fast) * (1.0 - p_reset)],
    ];
    t[1][2] = [
        [p_reset * p_drop_alone_slow, p_reset * p_drop_alone_fast],
        [p_reset * p_drop_alone_slow, p_reset * p_drop_alone_fast],
    ];
    t[1][3] = [[p_reset * (1.0 - p_reset); 2]; 2];

    t[2][0] = [[p_mid * (1.0 - p_mid), p_low], [p_high, p_low]];
    t[2][1] = [
        [p_drop_alone_slow * p_reset, p_drop_alone_slow * p_reset],
        [p_drop_alone_fast * p_reset, p_drop_alone_fast * p_reset],
    ];
    t[2][2] = [
        [(1.0 - p_reset) * (1.0 - p_drop_alone_slow), (1.0 - p_reset) * (1.0 - p_drop_alone_fast)],
        [(1.0 - p_reset) * (1.0 - p_drop_alone_slow), (1.0 - p_reset) * (1.0 - p_drop_alone_fast)],
    ];
    t[2][3] = [[(1.0 - p_reset) * p_reset; 2]; 2];

    t[3][0] = [[p_mid, p_low], [p_low, p_low]];
    let column_sum = |t: &[[[[f64; 2]; 2]; 4]; 4], s: usize, a: usize, b: usize| -> f64 {
        (0..4).map(|sn| t[sn][s][a][b]).sum()
    };
    for s in 1..4 {
        for a in 0..2 {
            for b in 0..2 {
                t[3][s][a][b] = 1.0 - column_sum(&t, s, a, b);
            }
        }
    }
    for a in 0..2 {
        for b in 0..2 {
            t[0][0][a][b] = 1.0 - column_sum(&t, 0, a, b);
        }
    }

    let flat_t = t.iter().flatten().flatten().flatten().copied().collect();
    let flat_r = reward
        .iter()
        .map(|r| r.iter().flatten().flatten().copied().collect())
        .collect();
    (flat_t, flat_r)
}

/// Joint-pickup state and fast action indices of the warehouse.
pub const WAREHOUSE_PICKUP_STATE: usize = 0;
pub const WAREHOUSE_FAST: usize = 1;

pub fn build_warehouse(with_safety: bool) -> DomainCatalogEntry {
    let (transition, rewards) = warehouse_tensors();
    let spec = GameSpec::from_parts_unchecked(4, vec![2, 2], transition, 0.99, vec![0.25; 4])
        .with_signed_transitions(true)
        .expect("warehouse");
    let utilities = linear_plus(rewards, |_| {
        let mut terms = entropy();
        if with_safety {
            terms.push(UtilityTerm::HingePenalty {
                state: WAREHOUSE_PICKUP_STATE,
                action: WAREHOUSE_FAST,
                threshold: 0.10,
                weight: 100.0,
            });
        }
        terms
    });
    DomainCatalogEntry {
        name: if with_safety { "warehouse-safe" } else { "warehouse" },
        description: if with_safety {
            "two-robot warehouse with a fast-at-joint-pickup hinge penalty"
        } else {
            "two-robot warehouse"
        },
        spec,
        utilities,
        defaults: defaults(0.01, AnnealSchedule::type2(), 8000),
        references: if with_safety {
            vec![reference("fast_at_pickup", 0.42), reference("epsilon", 3.4e-2)]
        } else {
            vec![reference("fast_at_pickup", 0.69), reference("epsilon", 1e-3)]
        },
    }
}

/// Builds a catalog entry by name.
pub fn build_domain(name: &str) -> Result<DomainCatalogEntry> {
    Ok(match name {
        "ipd" => build_ipd(),
        "ipd-imitation" => build_imitation_ipd(),
        "ipgg" => build_ipgg(),
        "elfarol" => build_elfarol(),
        "bach-stravinsky" => build_bach_stravinsky(false),
        "bach-stravinsky-fair" => build_bach_stravinsky(true),
        "synthetic-safety" => build_synthetic_safety(),
        "warehouse" => build_warehouse(false),
        "warehouse-safe" => build_warehouse(true),
        other => {
            return Err(CmgError::Config(format!(
                "unknown domain \"{other}\"; available: {}",
                DOMAIN_NAMES.join(", ")
            )))
        }
    })
}

/// Every catalog entry, sorted by name.
pub fn catalog() -> Vec<DomainCatalogEntry> {
    DOMAIN_NAMES.iter().map(|n| build_domain(n).expect("catalog entry")).collect()
}
