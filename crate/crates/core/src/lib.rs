//! Route-choice dynamics on acyclic transportation networks.
//!
//! Drivers travel from a single origin to a single destination. Their
//! aggregate path preference is updated slowly by a perturbed (logit) best
//! response to path delays, while link densities evolve quickly through
//! conservation of mass, with drivers splitting at every node according to a
//! local decision rule. This crate simulates the coupled system, computes the
//! perturbed Wardrop equilibrium by convex potential minimization, and
//! provides the diagnostics used to compare the two.
//!
//! Module map:
//!
//! - [`graph`]: network validation, path enumeration, link-path incidence, min-cut.
//! - [`congestion`]: flow-density laws and link delays.
//! - [`choice`]: path preferences, the perturbed best response, local decisions.
//! - [`dynamics`]: the coupled ODE and its integration.
//! - [`equilibrium`]: the potential, two equilibrium solvers, the Wardrop gap.
//! - [`diagnostics`]: Lyapunov functions and distances.
//! - [`scenario`]: scenario files, built-in scenarios, result persistence.
//! - [`experiment`]: end-to-end runs, sweeps over the update rate, comparisons.

// `!(x > 0.0)` also rejects NaN, which is the point of writing it that way.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod choice;
pub mod congestion;
pub mod diagnostics;
pub mod dynamics;
pub mod equilibrium;
pub mod experiment;
pub mod graph;
pub mod instance;
pub mod quadrature;
pub mod scenario;

pub use choice::{LocalDecision, PathPreference, PerturbedBestResponse};
pub use congestion::{CongestionModel, Exponential, FlowDensity, LinkLaw};
pub use diagnostics::LyapunovConfig;
pub use dynamics::{Dynamics, SimulationSettings, SystemState, Trajectory};
pub use equilibrium::{EquilibriumResult, SolverKind, SolverOptions};
pub use graph::{Network, PathSet};
pub use instance::Instance;
pub use scenario::ScenarioConfig;
