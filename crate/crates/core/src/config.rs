//! JSON experiment configuration.
//!
//! Only `model` is required. Everything else is filled from defaults:
//!
//! ```json
//! {
//!   "model": "cir",                 // "gbm" | "cir"
//!   "scheme": "milstein",           // "euler" | "milstein"
//!   "functional": {"kind": "terminal"},
//!                                   // or {"kind": "discounted_call", "strike": 1.0, "rate": 0.05}
//!   "estimator": "unbiased",        // "unbiased" | "mlmc"
//!   "gamma": 1.5,
//!   "ire_list": [25, 10, 5, 2, 1, 0.5],
//!   "meta_reps": 100,
//!   "n_min": 100,
//!   "master_seed": 1,
//!   "mlmc_initial_samples": 1000,
//!   "mlmc_max_level": 25,
//!   "override_gamma_check": false,
//!   "output": null
//! }
//! ```
//!
//! The GBM functional defaults to the discounted at-the-money call, CIR to
//! the terminal value. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{Estimator, StoppingRule};
use crate::mlmc::MlmcConfig;
use crate::models::{PathFunctional, Problem, SchemeKind, SdeModel};
use crate::unbiased::{validate_gamma, LevelDistribution};

/// IRE rows of the published tables, in percent.
pub const DEFAULT_IRE_LIST: [f64; 6] = [25.0, 10.0, 5.0, 2.0, 1.0, 0.5];
pub const DEFAULT_GAMMA: f64 = 1.5;
pub const DEFAULT_META_REPS: u16 = 100;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Gbm,
    Cir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Unbiased,
    Mlmc,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Unbiased => "unbiased",
            EstimatorKind::Mlmc => "mlmc",
        }
    }
}

/// Functional as written in a config; the discount horizon is the model horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    Terminal,
    DiscountedCall { strike: f64, rate: f64 },
}

impl FunctionalConfig {
    fn to_functional(self) -> PathFunctional {
        match self {
            FunctionalConfig::Terminal => PathFunctional::TerminalValue,
            FunctionalConfig::DiscountedCall { strike, rate } => PathFunctional::DiscountedCall {
                strike,
                rate,
                horizon: 1.0,
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelName,
    scheme: Option<SchemeKind>,
    functional: Option<FunctionalConfig>,
    estimator: Option<EstimatorKind>,
    gamma: Option<f64>,
    ire_list: Option<Vec<f64>>,
    meta_reps: Option<u16>,
    n_min: Option<u64>,
    master_seed: Option<u64>,
    mlmc_initial_samples: Option<u64>,
    mlmc_max_level: Option<u32>,
    override_gamma_check: Option<bool>,
    output: Option<String>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelName,
    pub scheme: SchemeKind,
    pub functional: FunctionalConfig,
    pub estimator: EstimatorKind,
    pub gamma: f64,
    pub ire_list: Vec<f64>,
    pub meta_reps: u16,
    pub n_min: u64,
    pub master_seed: u64,
    pub mlmc_initial_samples: u64,
    pub mlmc_max_level: u32,
    pub override_gamma_check: bool,
    pub output: Option<String>,
}

impl ExperimentConfig {
    /// Defaults for `model`, as if parsed from `{"model": ...}`.
    pub fn for_model(model: ModelName) -> Self {
        Self {
            model,
            scheme: SchemeKind::Milstein,
            functional: match model {
                ModelName::Gbm => FunctionalConfig::DiscountedCall {
                    strike: 1.0,
                    rate: 0.05,
                },
                ModelName::Cir => FunctionalConfig::Terminal,
            },
            estimator: EstimatorKind::Unbiased,
            gamma: DEFAULT_GAMMA,
            ire_list: DEFAULT_IRE_LIST.to_vec(),
            meta_reps: DEFAULT_META_REPS,
            n_min: StoppingRule::DEFAULT_N_MIN,
            master_seed: DEFAULT_SEED,
            mlmc_initial_samples: MlmcConfig::DEFAULT_INITIAL_SAMPLES,
            mlmc_max_level: MlmcConfig::DEFAULT_MAX_LEVEL,
            override_gamma_check: false,
            output: None,
        }
    }

    /// Parses and validates a JSON document.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::parse_unvalidated(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and fills defaults without range or gamma checks, so callers
    /// can apply overrides before calling [`ExperimentConfig::validate`].
    pub fn parse_unvalidated(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::for_model(raw.model);
        macro_rules! fill {
            ($($field:ident),*) => { $( if let Some(v) = raw.$field { cfg.$field = v; } )* };
        }
        fill!(
            scheme,
            functional,
            estimator,
            gamma,
            ire_list,
            meta_reps,
            n_min,
            master_seed,
            mlmc_initial_samples,
            mlmc_max_level,
            override_gamma_check
        );
        cfg.output = raw.output;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks ranges and, for the unbiased estimator, the gamma window.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::Config(format!("`{field}`: {reason}")));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", format!("must be positive and finite, got {}", self.gamma));
        }
        if self.ire_list.is_empty() {
            return bad("ire_list", "must not be empty".into());
        }
        if self.ire_list.len() > 256 {
            return bad("ire_list", format!("at most 256 entries, got {}", self.ire_list.len()));
        }
        if let Some(&ire) = self.ire_list.iter().find(|&&v| !(v > 0.0 && v <= 100.0)) {
            return bad("ire_list", format!("values must lie in (0, 100], got {ire}"));
        }
        if self.meta_reps < 2 {
            return bad("meta_reps", format!("must be at least 2, got {}", self.meta_reps));
        }
        if self.n_min < 2 {
            return bad("n_min", format!("must be at least 2, got {}", self.n_min));
        }
        if self.mlmc_initial_samples == 0 {
            return bad("mlmc_initial_samples", "must be at least 1".into());
        }
        if !(2..=40).contains(&self.mlmc_max_level) {
            return bad("mlmc_max_level", format!("must lie in 2..=40, got {}", self.mlmc_max_level));
        }
        if let FunctionalConfig::DiscountedCall { strike, rate } = self.functional {
            if !(strike > 0.0 && strike.is_finite()) {
                return bad("functional.strike", format!("must be positive, got {strike}"));
            }
            if !rate.is_finite() {
                return bad("functional.rate", format!("must be finite, got {rate}"));
            }
        }
        if self.estimator == EstimatorKind::Unbiased && !self.override_gamma_check {
            let check = validate_gamma(self.gamma, self.scheme.strong_order());
            if !check.is_ok() {
                return bad(
                    "gamma",
                    format!("{check} under {:?}; set override_gamma_check to run anyway", self.scheme),
                );
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Problem {
        let model = match self.model {
            ModelName::Gbm => SdeModel::benchmark_gbm(),
            ModelName::Cir => SdeModel::benchmark_cir(),
        };
        Problem::new(model, self.scheme, self.functional.to_functional())
    }

    pub fn estimator(&self) -> Result<Estimator> {
        Ok(match self.estimator {
            EstimatorKind::Unbiased => Estimator::Unbiased {
                dist: LevelDistribution::new(self.gamma)?,
                n_min: self.n_min,
            },
            EstimatorKind::Mlmc => Estimator::Mlmc {
                initial_samples: self.mlmc_initial_samples,
                max_level: self.mlmc_max_level,
            },
        })
    }

    /// SHA-256 of the canonical JSON, ignoring the output path.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
