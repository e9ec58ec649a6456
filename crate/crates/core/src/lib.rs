//! Unbiased randomized Monte Carlo for SDE path functionals.
//!
//! The crate is organized bottom-up:
//!
//! - [`kernel`]: reproducible Gaussian substreams and dyadic Brownian grids.
//! - [`models`]: GBM and CIR coefficients, Euler and Milstein steps, and the
//!   coupled terminal values `k(X_{2^-n})` on one shared path.
//! - [`unbiased`]: the randomized level `N`, the estimator `Z`, its work model
//!   and the strong-order diagnostic.
//! - [`mlmc`]: the multilevel Monte Carlo baseline.
//! - [`harness`]: streaming statistics, the sequential stopping rule and the
//!   table protocol.
//! - [`config`] and [`csv`]: JSON experiment configs and CSV tables.
//! - [`diagnostics`] and [`cli`]: self-checks and the command-line front end.

// `!(x > 0.0)` is how NaN gets rejected along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod csv;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod mlmc;
pub mod models;
pub mod unbiased;

pub use error::{Error, Result};
pub use harness::{meta_experiment, true_value, Estimator, RunningStats, StoppingRule, TableRow};
pub use kernel::{derive_substream, BrownianGrid, GaussianSource, RandomStream, StreamBlock};
pub use mlmc::{coupled_level_sample, mlmc_estimate, MlmcConfig, MlmcResult};
pub use models::{PathFunctional, Problem, SchemeKind, SdeModel};
pub use unbiased::{sample_z, validate_gamma, LevelDistribution, ZSample};
