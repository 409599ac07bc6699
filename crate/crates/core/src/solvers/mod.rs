//! PGL with temperature annealing and the simultaneous and round-robin
//! gradient baselines, all over fixed-last-logit softmax policies.

mod adam;
mod anneal;
mod logits;
mod trace;

use std::time::Instant;

pub use adam::{Adam, OptimizerConfig};
pub use anneal::{anneal_step, gates_open, AnnealRule, AnnealSchedule, AnnealState};
pub use logits::{to_policy, LogitProfile};
pub use trace::{RunTrace, TraceRecord};

use crate::error::{CmgError, Result};
use crate::exploitability::{exploitability_with, ExploitabilityConfig};
use crate::game::{GameSpec, Matrix, PolicyProfile};
use crate::occupancy::{occupancy_vjp, ForwardCache};
use crate::pgl::{pgl_loss, pgl_loss_gradient, LossReport};
use crate::utilities::{linear_reward_vector, utility_gradient, utility_value, UtilitySpec};

/// When exact exploitability is attached to trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsCadence {
    Off,
    /// Final record only.
    Final,
    /// Every `k`-th anneal event (at the next recorded row) plus the final record.
    AnnealEvents(usize),
    /// Every `k` iterations (at recorded rows) plus the final record.
    Iters(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Record every `stride` iterations; a final record is always added.
    pub stride: usize,
    pub eps_cadence: EpsCadence,
    pub exploitability: ExploitabilityConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stride: 10,
            eps_cadence: EpsCadence::Off,
            exploitability: ExploitabilityConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Returned profile: the last iterate (PGL, RR) or the running average (Sim).
    pub policy: PolicyProfile,
    /// Final logits of the iterate.
    pub logits: LogitProfile,
    pub trace: RunTrace,
    pub final_tau: f64,
    pub anneal_events: usize,
}

/// A run that stopped on a numeric failure, with the trace recorded so far.
#[derive(Debug)]
pub struct SolveError {
    pub source: CmgError,
    pub trace: RunTrace,
}

impl std::fmt::Display for SolveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} trace records)", self.source, self.trace.len())
    }
}

impl std::error::Error for SolveError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<CmgError> for SolveError {
    fn from(source: CmgError) -> Self {
        Self { source, trace: RunTrace::new() }
    }
}

struct Recorder {
    start: Instant,
    options: RunOptions,
    trace: RunTrace,
    eps_pending: bool,
}

impl Recorder {
    fn new(options: RunOptions) -> Self {
        Self { start: Instant::now(), options, trace: RunTrace::new(), eps_pending: false }
    }

    fn stride(&self) -> usize {
        self.options.stride.max(1)
    }

    fn due(&self, t: usize) -> bool {
        t.is_multiple_of(self.stride())
    }

    fn on_anneal(&mut self, events: usize) {
        if let EpsCadence::AnnealEvents(k) = self.options.eps_cadence {
            if k > 0 && events.is_multiple_of(k) {
                self.eps_pending = true;
            }
        }
    }

    fn wants_eps(&self, t: usize, is_final: bool) -> bool {
        match self.options.eps_cadence {
            EpsCadence::Off => false,
            EpsCadence::Final => is_final,
            EpsCadence::AnnealEvents(_) => is_final || self.eps_pending,
            EpsCadence::Iters(k) => is_final || (k > 0 && t.is_multiple_of(k)),
        }
    }

    fn record(
        &mut self,
        t: usize,
        report: &LossReport,
        spec: &GameSpec,
        utilities: &UtilitySpec,
        profile: &PolicyProfile,
        is_final: bool,
    ) -> Result<()> {
        let epsilon = if self.wants_eps(t, is_final) {
            self.eps_pending = false;
            Some(exploitability_with(spec, utilities, profile, &self.options.exploitability)?.epsilon)
        } else {
            None
        };
        self.trace.push(TraceRecord {
            iter: t,
            tau: report.tau,
            loss: report.loss,
            bound: report.bound,
            epsilon,
            wallclock_ms: self.start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }

    fn fail(self, source: CmgError) -> SolveError {
        SolveError { source, trace: self.trace }
    }
}

fn finite_loss(report: &LossReport, t: usize) -> Result<()> {
    if report.loss.is_finite() {
        Ok(())
    } else {
        Err(CmgError::Numeric(format!("non-finite loss at iteration {t}")))
    }
}

fn check_run(spec: &GameSpec, utilities: &UtilitySpec, init: &LogitProfile) -> Result<()> {
    utilities.validate(spec)?;
    init.check_shape(spec)
}

/// Projected-gradient loss minimization with annealing.
///
/// Each iteration evaluates the loss at the current temperature, lets the
/// schedule anneal, and takes one Adam step on the loss gradient at the
/// (possibly new) temperature. Adam moments persist across anneal events.
pub fn pgl_minimize(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    init: &LogitProfile,
    schedule: &AnnealSchedule,
    optimizer: &OptimizerConfig,
    iters: usize,
    options: &RunOptions,
) -> std::result::Result<SolveResult, SolveError> {
    check_run(spec, utilities, init)?;
    let mut rec = Recorder::new(*options);
    let mut logits = init.clone();
    let mut adam = Adam::new(*optimizer, logits.logits());
    let mut tau = schedule.initial_tau;
    let mut iters_at_tau = 0usize;
    let mut events = 0usize;

    for t in 0..iters {
        let step = (|| -> Result<Vec<Matrix>> {
            let (report, mut grads) = pgl_loss_gradient(spec, utilities, &logits, tau)?;
            finite_loss(&report, t)?;
            if rec.due(t) {
                rec.record(t, &report, spec, utilities, &logits.to_policy()?, false)?;
            }
            let mut state = AnnealState {
                t,
                tau,
                iters_at_tau,
                loss: report.loss,
                dloss_dtau: None,
            };
            if schedule.needs_slope() && gates_open(schedule, &state) && tau > 0.0 {
                let h = 1e-4 * tau;
                let profile = logits.to_policy()?;
                let up = pgl_loss(spec, utilities, &profile, tau + h)?;
                state.dloss_dtau = Some((up.loss - report.loss) / h);
            }
            let next = anneal_step(schedule, &state);
            if next < tau {
                tau = next;
                iters_at_tau = 0;
                events += 1;
                rec.on_anneal(events);
                grads = pgl_loss_gradient(spec, utilities, &logits, tau)?.1;
            }
            Ok(grads)
        })();
        match step {
            Ok(grads) => adam.update(logits.logits_mut(), &grads),
            Err(e) => return Err(rec.fail(e)),
        }
        iters_at_tau += 1;
    }

    let last = (|| -> Result<PolicyProfile> {
        let policy = logits.to_policy()?;
        let report = pgl_loss(spec, utilities, &policy, tau)?;
        finite_loss(&report, iters)?;
        if rec.trace.last().is_none_or(|r| r.iter < iters) {
            rec.record(iters, &report, spec, utilities, &policy, true)?;
        }
        Ok(policy)
    })();
    match last {
        Ok(policy) => Ok(SolveResult {
            policy,
            logits,
            trace: rec.trace,
            final_tau: tau,
            anneal_events: events,
        }),
        Err(e) => Err(rec.fail(e)),
    }
}

/// Gradient of `u_i^tau(mu_i(pi), pi_{-i})` with respect to `pi_i`.
pub fn own_utility_policy_gradient(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    player: usize,
    tau: f64,
) -> Result<Matrix> {
    spec.check_player(player)?;
    let cache = ForwardCache::new(spec, profile)?;
    own_gradient(spec, utilities, profile, &cache, player, tau)
}

fn own_gradient(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    profile: &PolicyProfile,
    cache: &ForwardCache,
    player: usize,
    tau: f64,
) -> Result<Matrix> {
    let terms = utilities.terms(player);
    let mu = cache.occupancy(profile, player);
    let r = linear_reward_vector(spec, terms, profile, player)?;
    let g = utility_gradient(terms, &mu, &r, tau);
    let mut bars: Vec<Matrix> = spec
        .action_counts()
        .iter()
        .map(|&k| Matrix::zeros(spec.n_states(), k))
        .collect();
    occupancy_vjp(spec, profile, cache, player, &g, &mut bars)?;
    Ok(bars.swap_remove(player))
}

/// Per-player utilities `u_i^tau` of a profile.
pub fn player_utilities(spec: &GameSpec, utilities: &UtilitySpec, profile: &PolicyProfile, tau: f64) -> Result<Vec<f64>> {
    let cache = ForwardCache::new(spec, profile)?;
    (0..spec.n_players())
        .map(|i| {
            let terms = utilities.terms(i);
            let mu = cache.occupancy(profile, i);
            let r = linear_reward_vector(spec, terms, profile, i)?;
            Ok(utility_value(terms, &mu, &r, tau))
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Turn {
    Simultaneous,
    RoundRobin,
}

fn descent(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    init: &LogitProfile,
    optimizer: &OptimizerConfig,
    tau: f64,
    iters: usize,
    options: &RunOptions,
    turn: Turn,
) -> std::result::Result<SolveResult, SolveError> {
    check_run(spec, utilities, init)?;
    let mut rec = Recorder::new(*options);
    let mut logits = init.clone();
    let mut adams: Vec<Adam> = logits
        .logits()
        .iter()
        .map(|l| Adam::new(*optimizer, std::slice::from_ref(l)))
        .collect();
    let n = spec.n_players();
    let mut sum: Vec<Matrix> = spec
        .action_counts()
        .iter()
        .map(|&k| Matrix::zeros(spec.n_states(), k))
        .collect();

    for t in 0..iters {
        let step = (|| -> Result<()> {
            let profile = logits.to_policy()?;
            if rec.due(t) {
                let report = pgl_loss(spec, utilities, &profile, tau)?;
                finite_loss(&report, t)?;
                rec.record(t, &report, spec, utilities, &profile, false)?;
            }
            let cache = ForwardCache::new(spec, &profile)?;
            let movers: Vec<usize> = match turn {
                Turn::Simultaneous => (0..n).collect(),
                Turn::RoundRobin => vec![t % n],
            };
            let mut grads = Vec::with_capacity(movers.len());
            for &i in &movers {
                let pi_bar = own_gradient(spec, utilities, &profile, &cache, i, tau)?;
                let theta_bar = logits.pullback_player(&profile, i, &pi_bar);
                if theta_bar.iter().any(|v| !v.is_finite()) {
                    return Err(CmgError::Numeric(format!("non-finite gradient at iteration {t}")));
                }
                grads.push(-theta_bar);
            }
            for (&i, g) in movers.iter().zip(grads) {
                adams[i].update(std::slice::from_mut(&mut logits.logits_mut()[i]), &[g]);
            }
            let after = logits.to_policy()?;
            for (acc, pi) in sum.iter_mut().zip(after.policies()) {
                *acc += pi;
            }
            Ok(())
        })();
        if let Err(e) = step {
            return Err(rec.fail(e));
        }
    }

    let last = (|| -> Result<PolicyProfile> {
        let current = logits.to_policy()?;
        let returned = match (turn, iters) {
            (Turn::Simultaneous, t) if t > 0 => PolicyProfile::from_raw_unchecked(
                sum.into_iter()
                    .map(|mut m| {
                        for s in 0..m.nrows() {
                            let total: f64 = m.row(s).sum();
                            m.row_mut(s).unscale_mut(total);
                        }
                        m
                    })
                    .collect(),
            ),
            _ => current.clone(),
        };
        let report = pgl_loss(spec, utilities, &returned, tau)?;
        finite_loss(&report, iters)?;
        if rec.trace.last().is_none_or(|r| r.iter < iters) {
            rec.record(iters, &report, spec, utilities, &returned, true)?;
        }
        Ok(returned)
    })();
    match last {
        Ok(policy) => Ok(SolveResult { policy, logits, trace: rec.trace, final_tau: tau, anneal_events: 0 }),
        Err(e) => Err(rec.fail(e)),
    }
}

/// Simultaneous gradient ascent of every player's own utility at fixed
/// temperature `tau`. Returns the row-renormalized average of the policy
/// iterates after each step.
pub fn sim_descent(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    init: &LogitProfile,
    optimizer: &OptimizerConfig,
    tau: f64,
    iters: usize,
    options: &RunOptions,
) -> std::result::Result<SolveResult, SolveError> {
    descent(spec, utilities, init, optimizer, tau, iters, options, Turn::Simultaneous)
}

/// Round-robin gradient ascent: one player steps per iteration, in cyclic
/// order. Returns the last iterate.
pub fn rr_descent(
    spec: &GameSpec,
    utilities: &UtilitySpec,
    init: &LogitProfile,
    optimizer: &OptimizerConfig,
    tau: f64,
    iters: usize,
    options: &RunOptions,
) -> std::result::Result<SolveResult, SolveError> {
    descent(spec, utilities, init, optimizer, tau, iters, options, Turn::RoundRobin)
}
