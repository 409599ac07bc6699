//! Experiment runs over catalog domains and game documents: solver dispatch
//! with per-domain defaults, run summaries, and the policy and
//! exploitability file formats.

mod files;

use std::fmt;
use std::str::FromStr;

use cmg_core::domains::{self, DomainCatalogEntry, InitKind, SolverDefaults};
use cmg_core::exploitability::{exploitability_with, per_state_exploitability_with, ExploitabilityConfig};
use cmg_core::game::{GameSpec, PolicyProfile};
use cmg_core::solvers::{
    pgl_minimize, player_utilities, rr_descent, sim_descent, AnnealSchedule, EpsCadence, LogitProfile, RunOptions,
    SolveError, SolveResult,
};
use cmg_core::utilities::UtilitySpec;
use cmg_core::{load_spec, CmgError, Result};
use serde::{Deserialize, Serialize};

pub use files::{EpsilonFile, PolicyFile, PlayerPolicy, StatePolicy};

/// Tolerance of the exact exploitability oracle used for reported values.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Pgl,
    Sim,
    Rr,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Pgl => "pgl",
            Algo::Sim => "sim",
            Algo::Rr => "rr",
        })
    }
}

impl FromStr for Algo {
    type Err = CmgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgl" => Ok(Algo::Pgl),
            "sim" => Ok(Algo::Sim),
            "rr" => Ok(Algo::Rr),
            other => Err(CmgError::Config(format!("unknown algorithm \"{other}\"; expected pgl, sim or rr"))),
        }
    }
}

/// Parses `off`, `final`, `anneal:K` or `iters:K`.
pub fn parse_eps_cadence(s: &str) -> Result<EpsCadence> {
    let bad = || CmgError::Config(format!("bad eps cadence \"{s}\"; expected off, final, anneal:K or iters:K"));
    match s {
        "off" => return Ok(EpsCadence::Off),
        "final" => return Ok(EpsCadence::Final),
        _ => {}
    }
    let (kind, k) = s.split_once(':').ok_or_else(bad)?;
    let k: usize = k.parse().map_err(|_| bad())?;
    if k == 0 {
        return Err(bad());
    }
    match kind {
        "anneal" => Ok(EpsCadence::AnnealEvents(k)),
        "iters" => Ok(EpsCadence::Iters(k)),
        _ => Err(bad()),
    }
}

pub fn format_eps_cadence(c: EpsCadence) -> String {
    match c {
        EpsCadence::Off => "off".into(),
        EpsCadence::Final => "final".into(),
        EpsCadence::AnnealEvents(k) => format!("anneal:{k}"),
        EpsCadence::Iters(k) => format!("iters:{k}"),
    }
}

/// Solver defaults for games loaded from documents.
pub fn document_defaults() -> SolverDefaults {
    SolverDefaults { lr: 0.1, schedule: AnnealSchedule::type1(), iters: 8000, init: InitKind::Zeros }
}

/// A game together with its default solver settings.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub spec: GameSpec,
    pub utilities: UtilitySpec,
    pub defaults: SolverDefaults,
    /// Catalog domain this problem was built from, if any.
    pub domain: Option<&'static str>,
}

impl Problem {
    pub fn domain(name: &str) -> Result<Self> {
        domains::build_domain(name).map(Self::from)
    }

    /// Loads a game document; `name` labels the run.
    pub fn document(name: impl Into<String>, text: &str) -> Result<Self> {
        let (spec, utilities) = load_spec(text)?;
        Ok(Self { name: name.into(), spec, utilities, defaults: document_defaults(), domain: None })
    }

    pub fn initial_logits(&self, seed: u64) -> LogitProfile {
        match self.defaults.init {
            InitKind::Zeros => LogitProfile::zeros(&self.spec),
            InitKind::StandardNormal => {
                LogitProfile::standard_normal(&self.spec, &mut cmg_core::rng::seeded_rng(seed))
            }
        }
    }

    /// Per-player probability of the fast action at the joint-pickup state,
    /// for the warehouse domains.
    pub fn fast_at_pickup(&self, policy: &PolicyProfile) -> Option<Vec<f64>> {
        matches!(self.domain, Some("warehouse" | "warehouse-safe")).then(|| {
            (0..self.spec.n_players())
                .map(|i| policy.prob(i, domains::WAREHOUSE_PICKUP_STATE, domains::WAREHOUSE_FAST))
                .collect()
        })
    }
}

impl From<DomainCatalogEntry> for Problem {
    fn from(entry: DomainCatalogEntry) -> Self {
        Self {
            name: entry.name.to_string(),
            spec: entry.spec,
            utilities: entry.utilities,
            defaults: entry.defaults,
            domain: Some(entry.name),
        }
    }
}

/// Settings of one run. `None` fields fall back to the problem defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub algo: Algo,
    pub seed: u64,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub anneal: Option<u8>,
    /// Fixed temperature of the Sim and RR baselines.
    pub baseline_tau: f64,
    pub stride: usize,
    pub eps_cadence: EpsCadence,
    pub oracle: ExploitabilityConfig,
}

impl RunConfig {
    pub fn new(algo: Algo, seed: u64) -> Self {
        Self {
            algo,
            seed,
            iters: None,
            lr: None,
            anneal: None,
            baseline_tau: 0.0,
            stride: 10,
            eps_cadence: EpsCadence::AnnealEvents(10),
            oracle: ExploitabilityConfig::with_tol(ORACLE_TOL),
        }
    }

    pub fn resolve(&self, defaults: &SolverDefaults) -> Result<Resolved> {
        let schedule = match self.anneal {
            None => defaults.schedule,
            Some(k) => {
                let base = AnnealSchedule::from_type(k)
                    .ok_or_else(|| CmgError::Config(format!("anneal type {k}; expected 1, 2 or 3")))?;
                // keep the domain's starting temperature and floor
                base.with_initial_tau(defaults.schedule.initial_tau)
                    .with_min_temperature(defaults.schedule.min_temperature)
            }
        };
        let lr = self.lr.unwrap_or(defaults.lr);
        if !(lr.is_finite() && lr > 0.0) {
            return Err(CmgError::Config(format!("learning rate {lr} must be positive")));
        }
        if !(self.baseline_tau.is_finite() && self.baseline_tau >= 0.0) {
            return Err(CmgError::Config(format!("temperature {} must be nonnegative", self.baseline_tau)));
        }
        Ok(Resolved { iters: self.iters.unwrap_or(defaults.iters), lr, schedule })
    }
}

/// Run settings after defaults are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub iters: usize,
    pub lr: f64,
    pub schedule: AnnealSchedule,
}

/// Runs the configured solver from the problem's default initialization.
pub fn run(problem: &Problem, config: &RunConfig) -> std::result::Result<SolveResult, SolveError> {
    run_from(problem, config, &problem.initial_logits(config.seed))
}

pub fn run_from(
    problem: &Problem,
    config: &RunConfig,
    init: &LogitProfile,
) -> std::result::Result<SolveResult, SolveError> {
    let resolved = config.resolve(&problem.defaults)?;
    let optimizer = cmg_core::solvers::OptimizerConfig::adam(resolved.lr);
    let options = RunOptions { stride: config.stride, eps_cadence: config.eps_cadence, exploitability: config.oracle };
    let (spec, utilities) = (&problem.spec, &problem.utilities);
    match config.algo {
        Algo::Pgl => pgl_minimize(spec, utilities, init, &resolved.schedule, &optimizer, resolved.iters, &options),
        Algo::Sim => sim_descent(spec, utilities, init, &optimizer, config.baseline_tau, resolved.iters, &options),
        Algo::Rr => rr_descent(spec, utilities, init, &optimizer, config.baseline_tau, resolved.iters, &options),
    }
}

/// Settings echoed into a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub problem: String,
    pub algo: Algo,
    pub seed: u64,
    pub iters: usize,
    pub lr: f64,
    pub anneal: u8,
    pub initial_tau: f64,
    pub min_temperature: f64,
    pub baseline_tau: f64,
    pub stride: usize,
    pub eps_cadence: String,
    pub oracle_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ConfigEcho,
    pub seed: u64,
    /// Base-game utilities of the returned profile.
    pub utilities: Vec<f64>,
    pub epsilon: f64,
    pub per_player_epsilon: Vec<f64>,
    /// Exploitability with the run started from each state.
    pub per_state_epsilon: Vec<f64>,
    pub certified: bool,
    pub final_tau: f64,
    pub final_loss: f64,
    pub anneal_events: usize,
    pub trace_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fast_at_pickup: Option<Vec<f64>>,
}

/// Exact evaluation of a finished run.
pub fn summarize(problem: &Problem, config: &RunConfig, result: &SolveResult) -> Result<Summary> {
    let resolved = config.resolve(&problem.defaults)?;
    let (spec, utilities) = (&problem.spec, &problem.utilities);
    let report = exploitability_with(spec, utilities, &result.policy, &config.oracle)?;
    let per_state = per_state_exploitability_with(spec, utilities, &result.policy, &config.oracle)?;
    Ok(Summary {
        config: ConfigEcho {
            problem: problem.name.clone(),
            algo: config.algo,
            seed: config.seed,
            iters: resolved.iters,
            lr: resolved.lr,
            anneal: resolved.schedule.type_number(),
            initial_tau: resolved.schedule.initial_tau,
            min_temperature: resolved.schedule.min_temperature,
            baseline_tau: config.baseline_tau,
            stride: config.stride,
            eps_cadence: format_eps_cadence(config.eps_cadence),
            oracle_tol: config.oracle.tol,
        },
        seed: config.seed,
        utilities: player_utilities(spec, utilities, &result.policy, config.oracle.tau)?,
        epsilon: report.epsilon,
        per_player_epsilon: report.per_player,
        per_state_epsilon: per_state.per_state,
        certified: report.certified && per_state.certified,
        final_tau: result.final_tau,
        final_loss: result.trace.last().map_or(f64::NAN, |r| r.loss),
        anneal_events: result.anneal_events,
        trace_rows: result.trace.len(),
        fast_at_pickup: problem.fast_at_pickup(&result.policy),
    })
}

/// Exact exploitability of an arbitrary profile, as written to `epsilon.json`.
pub fn evaluate(problem: &Problem, profile: &PolicyProfile, oracle: &ExploitabilityConfig) -> Result<EpsilonFile> {
    profile.check_shape(&problem.spec)?;
    let report = exploitability_with(&problem.spec, &problem.utilities, profile, oracle)?;
    let per_state = per_state_exploitability_with(&problem.spec, &problem.utilities, profile, oracle)?;
    Ok(EpsilonFile {
        problem: problem.name.clone(),
        utilities: report.utilities,
        epsilon: report.epsilon,
        per_player_epsilon: report.per_player,
        per_state_epsilon: per_state.per_state,
        per_state_player_epsilon: per_state.per_state_player,
        max_per_state_epsilon: per_state.max,
        certified: report.certified && per_state.certified,
        oracle_tol: oracle.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_names_round_trip() {
        for algo in [Algo::Pgl, Algo::Sim, Algo::Rr] {
            assert_eq!(algo.to_string().parse::<Algo>().unwrap(), algo);
        }
        assert!("adam".parse::<Algo>().is_err());
    }

    #[test]
    fn eps_cadence_parsing() {
        for c in [EpsCadence::Off, EpsCadence::Final, EpsCadence::AnnealEvents(10), EpsCadence::Iters(250)] {
            assert_eq!(parse_eps_cadence(&format_eps_cadence(c)).unwrap(), c);
        }
        for bad in ["", "anneal", "anneal:0", "iters:x", "every:3"] {
            assert!(parse_eps_cadence(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn anneal_override_keeps_domain_temperatures() {
        let problem = Problem::domain("ipd-imitation").unwrap();
        let config = RunConfig { anneal: Some(2), ..RunConfig::new(Algo::Pgl, 0) };
        let resolved = config.resolve(&problem.defaults).unwrap();
        assert_eq!(resolved.schedule.type_number(), 2);
        assert_eq!(resolved.schedule.min_temperature, 1e-3);
        assert_eq!(resolved.lr, 0.01);
        let bad = RunConfig { anneal: Some(4), ..config };
        assert!(matches!(bad.resolve(&problem.defaults), Err(CmgError::Config(_))));
        let bad = RunConfig { lr: Some(-1.0), ..config };
        assert!(bad.resolve(&problem.defaults).is_err());
    }

    #[test]
    fn fast_frequency_only_for_warehouse() {
        let ipd = Problem::domain("ipd").unwrap();
        assert!(ipd.fast_at_pickup(&PolicyProfile::uniform(&ipd.spec)).is_none());
        let wh = Problem::domain("warehouse").unwrap();
        assert_eq!(wh.fast_at_pickup(&PolicyProfile::uniform(&wh.spec)), Some(vec![0.5, 0.5]));
    }
}
