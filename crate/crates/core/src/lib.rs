//! Random walks on `Z` in an i.i.d. random environment with jumps in
//! `{-L, ..., 0, 1}`.
//!
//! The crate covers the whole pipeline from environment laws to slowdown
//! experiments:
//!
//! - [`env_model`]: site laws, finite-support environment laws, realized windows;
//! - [`matrix`]: companion matrices and the potentials `delta(k, l)`;
//! - [`lyapunov`]: top Lyapunov exponent, moment curve `F(u)`, rate function,
//!   the slowdown root `s` and regime classification;
//! - [`walk`]: quenched simulation with stopping rules;
//! - [`exit`]: exact exit probabilities, trap quantities, survival in a window;
//! - [`slowdown`]: trap-frequency scans, slowdown curves, annealed tails.

pub mod env_model;
pub mod exit;
pub mod logsum;
pub mod lyapunov;
pub mod matrix;
pub mod report;
pub mod seeding;
pub mod slowdown;
pub mod stats;
pub mod walk;

pub use env_model::{
    sample_environment, shifted_view, validate_site_law, Atom, EnvError, Environment, EnvironmentSpec,
    EnvironmentWindow, LawViolation, ShiftedView, SiteLaw,
};
pub use matrix::{build_matrix, log_delta, log_delta_sum, CompanionMatrix, MatrixError, ProductAccumulator};
