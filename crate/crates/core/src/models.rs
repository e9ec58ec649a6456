//! SDE models, one-step schemes and coupled terminal-value simulation.
//!
//! Scalar SDEs `dX = mu(X) dt + sigma(X) dB` are stepped along a
//! [`BrownianGrid`] with either the Euler or the Milstein map. Building a
//! level-`n` terminal value from the level-`n` grid and then refining the same
//! grid gives the coupled sequence `k(X_{2^0}), k(X_{2^-1}), ...` that both
//! estimators difference.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::{BrownianGrid, RandomStream};

/// Coefficients of a scalar time-homogeneous SDE together with its start value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdeModel {
    /// `mu(x) = rate * x`, `sigma(x) = volatility * x`.
    Gbm { rate: f64, volatility: f64, x0: f64 },
    /// `mu(x) = kappa (theta - x)`, `sigma(x) = sigma * sqrt(max(x, 0))`.
    ///
    /// States are truncated at zero after every step.
    Cir {
        kappa: f64,
        theta: f64,
        sigma: f64,
        x0: f64,
    },
    /// Constant coefficients; `Constant { drift: 0, diffusion: 0, .. }` is frozen dynamics.
    Constant { drift: f64, diffusion: f64, x0: f64 },
}

impl SdeModel {
    /// GBM with `r = 0.05`, `sigma = 0.2`, `X(0) = 1`.
    pub const fn benchmark_gbm() -> Self {
        SdeModel::Gbm {
            rate: 0.05,
            volatility: 0.2,
            x0: 1.0,
        }
    }

    /// CIR with `kappa = 5`, `theta = 0.04`, `sigma = 0.25`, `X(0) = 0.04`.
    pub const fn benchmark_cir() -> Self {
        SdeModel::Cir {
            kappa: 5.0,
            theta: 0.04,
            sigma: 0.25,
            x0: 0.04,
        }
    }

    /// `dX = 0`: every scheme returns `x0` at every level.
    pub const fn frozen(x0: f64) -> Self {
        SdeModel::Constant {
            drift: 0.0,
            diffusion: 0.0,
            x0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SdeModel::Gbm { .. } => "gbm",
            SdeModel::Cir { .. } => "cir",
            SdeModel::Constant { .. } => "constant",
        }
    }

    pub fn initial_value(&self) -> f64 {
        match *self {
            SdeModel::Gbm { x0, .. } | SdeModel::Cir { x0, .. } | SdeModel::Constant { x0, .. } => x0,
        }
    }

    pub fn drift(&self, x: f64) -> f64 {
        match *self {
            SdeModel::Gbm { rate, .. } => rate * x,
            SdeModel::Cir { kappa, theta, .. } => kappa * (theta - x),
            SdeModel::Constant { drift, .. } => drift,
        }
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        match *self {
            SdeModel::Gbm { volatility, .. } => volatility * x,
            SdeModel::Cir { sigma, .. } => sigma * x.max(0.0).sqrt(),
            SdeModel::Constant { diffusion, .. } => diffusion,
        }
    }

    /// `sigma'(x)`, or `None` where it does not exist (CIR at `x <= 0`).
    pub fn diffusion_derivative(&self, x: f64) -> Option<f64> {
        match *self {
            SdeModel::Gbm { volatility, .. } => Some(volatility),
            SdeModel::Cir { sigma, .. } if x > 0.0 => Some(sigma / (2.0 * x.sqrt())),
            SdeModel::Cir { .. } => None,
            SdeModel::Constant { .. } => Some(0.0),
        }
    }

    /// The Milstein coefficient `sigma(x) sigma'(x) / 2`.
    ///
    /// For CIR this is the constant `sigma^2 / 4`, which is the exact product
    /// for `x > 0` and is used unchanged at the boundary.
    pub fn milstein_coefficient(&self, x: f64) -> f64 {
        match *self {
            SdeModel::Gbm { volatility, .. } => 0.5 * volatility * volatility * x,
            SdeModel::Cir { sigma, .. } => 0.25 * sigma * sigma,
            SdeModel::Constant { .. } => 0.0,
        }
    }

    fn truncate(&self, x: f64) -> f64 {
        match self {
            SdeModel::Cir { .. } => x.max(0.0),
            _ => x,
        }
    }
}

/// The path functional `k`, evaluated on the terminal state only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathFunctional {
    TerminalValue,
    /// `exp(-rate * horizon) * max(x - strike, 0)`.
    DiscountedCall { strike: f64, rate: f64, horizon: f64 },
}

impl PathFunctional {
    /// At-the-money call discounted at 5% over one year.
    pub const fn benchmark_call() -> Self {
        PathFunctional::DiscountedCall {
            strike: 1.0,
            rate: 0.05,
            horizon: 1.0,
        }
    }

    pub fn evaluate(&self, terminal: f64) -> f64 {
        match *self {
            PathFunctional::TerminalValue => terminal,
            PathFunctional::DiscountedCall {
                strike,
                rate,
                horizon,
            } => (-rate * horizon).exp() * (terminal - strike).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Euler,
    Milstein,
}

impl SchemeKind {
    /// Strong order of the scheme for smooth coefficients.
    pub fn strong_order(self) -> f64 {
        match self {
            SchemeKind::Euler => 0.5,
            SchemeKind::Milstein => 1.0,
        }
    }

    pub fn step(self, x: f64, h: f64, db: f64, model: &SdeModel) -> f64 {
        match self {
            SchemeKind::Euler => euler_step(x, h, db, model),
            SchemeKind::Milstein => milstein_step(x, h, db, model),
        }
    }
}

/// `x + mu(x) h + sigma(x) dB`.
pub fn euler_step(x: f64, h: f64, db: f64, model: &SdeModel) -> f64 {
    model.truncate(x + model.drift(x) * h + model.diffusion(x) * db)
}

/// `x + mu(x) h + sigma(x) dB + sigma(x) sigma'(x) (dB^2 - h) / 2`.
pub fn milstein_step(x: f64, h: f64, db: f64, model: &SdeModel) -> f64 {
    model.truncate(
        x + model.drift(x) * h
            + model.diffusion(x) * db
            + model.milstein_coefficient(x) * (db * db - h),
    )
}

/// Steps the scheme across every cell of `grid`, starting from `x0`.
pub fn simulate_terminal(grid: &BrownianGrid, model: &SdeModel, scheme: SchemeKind) -> f64 {
    let h = grid.spacing();
    grid.increments()
        .fold(model.initial_value(), |x, db| scheme.step(x, h, db, model))
}

/// A model, a scheme and a functional on a fixed horizon: everything needed
/// to produce `k(X_h)` from a Brownian path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    pub model: SdeModel,
    pub scheme: SchemeKind,
    pub functional: PathFunctional,
    pub horizon: f64,
}

impl Problem {
    pub fn new(model: SdeModel, scheme: SchemeKind, functional: PathFunctional) -> Self {
        Self {
            model,
            scheme,
            functional,
            horizon: 1.0,
        }
    }

    /// Benchmark GBM under Milstein with the discounted at-the-money call.
    pub fn gbm_call() -> Self {
        Self::new(
            SdeModel::benchmark_gbm(),
            SchemeKind::Milstein,
            PathFunctional::benchmark_call(),
        )
    }

    /// Benchmark CIR under Milstein with `k(x) = x(1)`.
    pub fn cir_terminal() -> Self {
        Self::new(
            SdeModel::benchmark_cir(),
            SchemeKind::Milstein,
            PathFunctional::TerminalValue,
        )
    }

    /// `k(X_h)` for the path in `grid`.
    pub fn evaluate(&self, grid: &BrownianGrid) -> f64 {
        self.functional
            .evaluate(simulate_terminal(grid, &self.model, self.scheme))
    }
}

/// Functional values on one shared Brownian path at levels `0..=max_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTerminals {
    pub k_values: Vec<f64>,
    /// Gaussian draws consumed, always `2^max_level`.
    pub work: u64,
}

impl LevelTerminals {
    /// `Delta_n = k_n - k_{n-1}` for `n = 1..=max_level`.
    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.k_values.windows(2).map(|w| w[1] - w[0])
    }
}

/// Builds one path level by level and records `k` at every level on the way.
pub fn simulate_level_terminals(
    problem: &Problem,
    max_level: u32,
    stream: &mut RandomStream,
) -> Result<LevelTerminals> {
    let start = stream.gaussian_draws();
    let mut grid = BrownianGrid::init(stream, problem.horizon)?;
    let mut k_values = Vec::with_capacity(max_level as usize + 1);
    k_values.push(problem.evaluate(&grid));
    for _ in 0..max_level {
        grid.refine(stream);
        k_values.push(problem.evaluate(&grid));
    }
    Ok(LevelTerminals {
        k_values,
        work: stream.gaussian_draws() - start,
    })
}
