//! Multilevel Monte Carlo at a target RMSE, with refinement factor 2.
//!
//! Level `l` uses step `h_l = T 2^-l`. The estimator is the sum of per-level
//! sample means of `Y_0 = k_0` and `Y_l = k_l - k_{l-1}`, with sample sizes
//! chosen to bring the statistical variance to `eps^2 / 2` and levels added
//! until the remaining bias is estimated below `eps / sqrt(2)`.

use crate::error::{Error, Result};
use crate::kernel::{RandomStream, StreamBlock, INDEX_BITS};
use crate::models::{simulate_level_terminals, Problem};

/// Bits of a replication index given to the sample counter; the level sits above.
const SAMPLE_BITS: u32 = 34;
const _: () = assert!(SAMPLE_BITS + 6 <= INDEX_BITS);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcConfig {
    pub epsilon: f64,
    /// Samples drawn on a level when it is first activated.
    pub initial_samples: u64,
    /// Highest level the algorithm may add.
    pub max_level: u32,
}

impl MlmcConfig {
    pub const DEFAULT_INITIAL_SAMPLES: u64 = 1_000;
    pub const DEFAULT_MAX_LEVEL: u32 = 25;

    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            initial_samples: Self::DEFAULT_INITIAL_SAMPLES,
            max_level: Self::DEFAULT_MAX_LEVEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcResult {
    pub estimate: f64,
    pub samples: Vec<u64>,
    pub variances: Vec<f64>,
    pub means: Vec<f64>,
    /// Gaussian draws summed over every level sample.
    pub work: u64,
}

impl MlmcResult {
    pub fn finest_level(&self) -> u32 {
        self.samples.len() as u32 - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSample {
    pub value: f64,
    pub work: u64,
}

/// `Y_l` on one path refined to level `l`; costs `2^l` draws.
pub fn coupled_level_sample(level: u32, problem: &Problem, stream: &mut RandomStream) -> Result<LevelSample> {
    let t = simulate_level_terminals(problem, level, stream)?;
    let value = match level {
        0 => t.k_values[0],
        l => t.k_values[l as usize] - t.k_values[l as usize - 1],
    };
    Ok(LevelSample {
        value,
        work: t.work,
    })
}

/// `N_l = ceil(2 eps^-2 sqrt(V_l h_l) sum_k sqrt(V_k / h_k))`, floored at 1.
pub fn optimal_level_sizes(variances: &[f64], steps: &[f64], epsilon: f64) -> Vec<u64> {
    assert_eq!(variances.len(), steps.len(), "one step size per level");
    let total: f64 = variances
        .iter()
        .zip(steps)
        .map(|(v, h)| (v / h).sqrt())
        .sum();
    variances
        .iter()
        .zip(steps)
        .map(|(v, h)| {
            let n = (2.0 / (epsilon * epsilon) * (v * h).sqrt() * total).ceil();
            (n as u64).max(1)
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
struct LevelAccumulator {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl LevelAccumulator {
    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0)
    }
}

/// Runs the adaptive level loop.
///
/// Sample `j` of level `l` is drawn from `block.stream((l << 34) | j)`, so a
/// run is a pure function of the block.
pub fn mlmc_estimate(problem: &Problem, config: &MlmcConfig, block: StreamBlock) -> Result<MlmcResult> {
    if !(config.epsilon > 0.0) {
        return Err(Error::InvalidArgument {
            field: "epsilon",
            reason: format!("target RMSE must be positive, got {}", config.epsilon),
        });
    }
    if config.max_level < 2 {
        return Err(Error::LevelCapExceeded {
            cap: config.max_level,
        });
    }
    let initial = config.initial_samples.max(1);

    let mut levels: Vec<LevelAccumulator> = vec![LevelAccumulator::default(); 3];
    let mut pending: Vec<u64> = vec![initial; 3];
    let mut work = 0u64;

    loop {
        for (l, (acc, extra)) in levels.iter_mut().zip(pending.iter_mut()).enumerate() {
            for _ in 0..*extra {
                let id = ((l as u64) << SAMPLE_BITS) | acc.n;
                let y = coupled_level_sample(l as u32, problem, &mut block.stream(id))?;
                acc.n += 1;
                acc.sum += y.value;
                acc.sum_sq += y.value * y.value;
                work += y.work;
            }
            *extra = 0;
        }

        let variances: Vec<f64> = levels.iter().map(LevelAccumulator::variance).collect();
        let steps: Vec<f64> = (0..levels.len())
            .map(|l| problem.horizon * 0.5f64.powi(l as i32))
            .collect();
        let targets = optimal_level_sizes(&variances, &steps, config.epsilon);
        for ((p, t), acc) in pending.iter_mut().zip(&targets).zip(&levels) {
            *p = t.saturating_sub(acc.n);
        }
        if pending.iter().any(|&p| p > 0) {
            continue;
        }

        let top = levels.len() - 1;
        let remaining_bias = (levels[top - 1].mean().abs() / 2.0).max(levels[top].mean().abs());
        if remaining_bias < config.epsilon / std::f64::consts::SQRT_2 {
            return Ok(MlmcResult {
                estimate: levels.iter().map(LevelAccumulator::mean).sum(),
                samples: levels.iter().map(|a| a.n).collect(),
                means: levels.iter().map(LevelAccumulator::mean).collect(),
                variances,
                work,
            });
        }
        if top as u32 >= config.max_level {
            return Err(Error::LevelCapExceeded {
                cap: config.max_level,
            });
        }
        levels.push(LevelAccumulator::default());
        pending.push(initial);
    }
}
