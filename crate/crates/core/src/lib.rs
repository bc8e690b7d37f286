//! Exact dynamic programming for team-optimal control under mean-field sharing.
//!
//! A population of exchangeable minor subsystems (optionally split into types,
//! optionally coupled to a single major subsystem) is controlled through a
//! fictitious coordinator that observes the empirical distribution of local
//! states. The coordinator's action is a *prescription*: one action per local
//! state, applied by every agent in that state. The empirical distribution,
//! together with the major state, is a controlled Markov chain, so the problem
//! reduces to a finite MDP over the lattice of count vectors.
//!
//! Module map:
//!
//! - [`model`]: problem description, kernels, costs, JSON ingestion.
//! - [`lattice`]: enumeration and ranking of count vectors.
//! - [`dynamics`]: exact successor law of the mean-field and reduced stage cost.
//! - [`solver`]: backward induction and discounted value iteration.
//! - [`reductions`]: state augmentation for typed models and the embedding of
//!   the major subsystem as a population-one type.
//! - [`simulator`]: seeded Monte Carlo rollouts of the full n-agent system.
//! - [`oracle`]: brute-force reference implementations used for verification.
//! - [`validation`]: comparisons of the fast paths against the oracles.

pub mod dynamics;
pub mod error;
pub mod lattice;
pub mod model;
pub mod oracle;
pub mod reductions;
pub mod simulator;
pub mod solver;
pub mod validation;

pub use error::{Error, Result};
pub use lattice::{Lattice, MeanField};
pub use model::{ModelSpec, Objective};
pub use solver::{PolicyTable, Solution, Solver, ValueTable};
