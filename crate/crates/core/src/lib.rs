//! Optimal central-bank intervention bands for an exchange rate that reacts
//! to interventions.
//!
//! The rate follows a geometric Brownian motion. Each intervention pays a
//! fixed cost, resets the rate to a restart point and triggers a reaction
//! period of random length with its own drift and volatility, during which
//! further interventions are not allowed. The optimal policy is a band
//! `(a, b)` with restart point `alpha`:
//!
//! * [`model`]: value-function primitives and the reaction-period cost,
//! * [`expectation`]: the intervention operator over the reaction law,
//! * [`solver`]: the free-boundary system, its Newton solver and the
//!   verification of the optimality conditions,
//! * [`simulator`]: Monte Carlo evaluation of band policies,
//! * [`config`] and [`tables`]: problem files and the reference scenarios.

pub mod config;
pub mod error;
pub mod expectation;
pub mod model;
pub mod simulator;
pub mod solver;
pub mod tables;

pub use error::{Error, Result};
pub use expectation::{build_nodes, BandValue, InterventionOperator, ReactionNode, ReactionNodes};
pub use model::{CostSpec, ModelParams, ReactionLaw, ScalarLaw, ValueCoeffs};
pub use simulator::{BandPolicy, CostEstimate, SimConfig};
pub use solver::{PolicySolution, SolverConfig, VerificationReport};
