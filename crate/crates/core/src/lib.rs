//! Solver library for convex Markov games.
//!
//! Players choose stationary policies; each player's utility is a concave
//! function of its own discounted state-action occupancy. The crate computes
//! occupancies and their derivatives, minimizes the projected-gradient loss
//! under temperature annealing, and certifies profiles with an exact
//! exploitability oracle.

pub mod config;
pub mod domains;
pub mod error;
pub mod exploitability;
pub mod game;
pub mod occupancy;
pub mod pgl;
pub mod rng;
pub mod solvers;
pub mod utilities;

pub use config::{load_spec, save_spec};
pub use error::{CmgError, Result};
pub use exploitability::{
    best_response, exploitability, linear_best_response, per_state_exploitability, ExploitabilityConfig,
    ExploitabilityReport,
};
pub use game::{validate_spec, GameSpec, Matrix, PolicyProfile};
pub use pgl::{pgl_loss, pgl_loss_gradient, LossReport};
pub use solvers::{pgl_minimize, rr_descent, sim_descent, AnnealSchedule, LogitProfile, OptimizerConfig, RunTrace};
pub use utilities::{UtilitySpec, UtilityTerm, Weight};
