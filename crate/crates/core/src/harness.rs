//! Running statistics, the sequential stopping rule, and the
//! 100-replication table protocol.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernel::{RandomStream, StreamBlock};
use crate::mlmc::{mlmc_estimate, MlmcConfig};
use crate::models::{PathFunctional, Problem, SdeModel};
use crate::unbiased::{sample_z, LevelDistribution};

/// Two-sided 90% normal quantile.
pub const Z_90: f64 = 1.645;

/// Single-pass mean/variance accumulator with a work total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
    work: u64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64, work: u64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
        self.work += work;
    }

    /// Combines two accumulators as if their inputs had been pushed into one.
    pub fn merge(&self, other: &Self) -> Self {
        if other.count == 0 {
            return *self;
        }
        if self.count == 0 {
            return *other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        Self {
            count,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
            work: self.work + other.work,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sum of squared deviations from the mean.
    pub fn m2(&self) -> f64 {
        self.m2
    }

    pub fn work(&self) -> u64 {
        self.work
    }

    pub fn sample_variance(&self) -> Result<f64> {
        if self.count < 2 {
            return Err(Error::TooFewSamples { count: self.count });
        }
        Ok(self.m2 / (self.count - 1) as f64)
    }

    /// `sqrt(M2 / (n (n - 1)))`, the estimated RMSE of the sample mean.
    pub fn sample_rmse_of_mean(&self) -> Result<f64> {
        let var = self.sample_variance()?;
        Ok((var / self.count as f64).sqrt())
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.push(x, 0);
        }
        s
    }
}

/// Stop at the first `n >= n_min` whose sample RMSE of the mean is at most `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    epsilon: f64,
    n_min: u64,
}

impl StoppingRule {
    pub const DEFAULT_N_MIN: u64 = 100;

    pub fn new(epsilon: f64, n_min: u64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument {
                field: "epsilon",
                reason: format!("must be positive, got {epsilon}"),
            });
        }
        if n_min < 2 {
            return Err(Error::InvalidArgument {
                field: "n_min",
                reason: format!("must be at least 2, got {n_min}"),
            });
        }
        Ok(Self { epsilon, n_min })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_min(&self) -> u64 {
        self.n_min
    }

    pub fn is_satisfied(&self, stats: &RunningStats) -> bool {
        stats.count() >= self.n_min
            && stats
                .sample_rmse_of_mean()
                .is_ok_and(|rmse| rmse <= self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    pub value: f64,
    pub work: u64,
}

/// Produces one i.i.d. replication from a dedicated stream.
pub trait ReplicationSource: Sync {
    fn replicate(&self, stream: &mut RandomStream) -> Result<Replication>;
}

impl<F> ReplicationSource for F
where
    F: Fn(&mut RandomStream) -> Result<Replication> + Sync,
{
    fn replicate(&self, stream: &mut RandomStream) -> Result<Replication> {
        self(stream)
    }
}

/// Replications of `Z` for a fixed problem and level law.
#[derive(Debug, Clone, Copy)]
pub struct UnbiasedSampler {
    pub problem: Problem,
    pub dist: LevelDistribution,
}

impl ReplicationSource for UnbiasedSampler {
    fn replicate(&self, stream: &mut RandomStream) -> Result<Replication> {
        let z = sample_z(&self.problem, &self.dist, stream)?;
        Ok(Replication {
            value: z.value,
            work: z.work,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppedRun {
    /// Sample mean at the stopping time.
    pub estimate: f64,
    /// `N(eps)`.
    pub count: u64,
    pub work: u64,
}

/// Draws replication `i` from `block.stream(i)` until `rule` is met.
pub fn run_until_tolerance<S: ReplicationSource + ?Sized>(
    source: &S,
    rule: &StoppingRule,
    block: StreamBlock,
) -> Result<StoppedRun> {
    let mut stats = RunningStats::new();
    let mut index = 0u64;
    while !rule.is_satisfied(&stats) {
        let r = source.replicate(&mut block.stream(index))?;
        stats.push(r.value, r.work);
        index += 1;
    }
    Ok(StoppedRun {
        estimate: stats.mean(),
        count: stats.count(),
        work: stats.work(),
    })
}

/// Which estimator a table is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    /// Randomized estimator stopped by the sequential rule.
    Unbiased { dist: LevelDistribution, n_min: u64 },
    /// One adaptive MLMC run per meta-replication.
    Mlmc { initial_samples: u64, max_level: u32 },
}

/// One meta-replication of a table row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub estimate: f64,
    pub work: u64,
    /// `N(eps)` for the unbiased estimator, finest level + 1 for MLMC.
    pub count: u64,
}

/// Raw meta-replications for one IRE.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRuns {
    pub ire_pct: f64,
    pub epsilon: f64,
    pub runs: Vec<RunOutcome>,
}

/// One row of a results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub ire_pct: f64,
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub rmse: f64,
    pub work_mean: f64,
    pub work_ci_halfwidth: f64,
}

impl TableRow {
    /// Normal-approximation 90% intervals and the realized RMSE against `truth`.
    pub fn summarize(runs: &RowRuns, truth: f64) -> Result<Self> {
        let est: RunningStats = runs.runs.iter().map(|r| r.estimate).collect();
        let work: RunningStats = runs.runs.iter().map(|r| r.work as f64).collect();
        let n = est.count() as f64;
        let mse = runs
            .runs
            .iter()
            .map(|r| (r.estimate - truth).powi(2))
            .sum::<f64>()
            / n;
        Ok(Self {
            ire_pct: runs.ire_pct,
            estimate: est.mean(),
            ci_halfwidth: Z_90 * (est.sample_variance()? / n).sqrt(),
            rmse: mse.sqrt(),
            work_mean: work.mean(),
            work_ci_halfwidth: Z_90 * (work.sample_variance()? / n).sqrt(),
        })
    }
}

/// Runs one estimator at target RMSE `epsilon` on `block`.
pub fn run_once(problem: &Problem, estimator: &Estimator, epsilon: f64, block: StreamBlock) -> Result<RunOutcome> {
    match *estimator {
        Estimator::Unbiased { dist, n_min } => {
            let rule = StoppingRule::new(epsilon, n_min)?;
            let run = run_until_tolerance(&UnbiasedSampler { problem: *problem, dist }, &rule, block)?;
            Ok(RunOutcome {
                estimate: run.estimate,
                work: run.work,
                count: run.count,
            })
        }
        Estimator::Mlmc {
            initial_samples,
            max_level,
        } => {
            let cfg = MlmcConfig {
                epsilon,
                initial_samples,
                max_level,
            };
            let r = mlmc_estimate(problem, &cfg, block)?;
            Ok(RunOutcome {
                estimate: r.estimate,
                work: r.work,
                count: r.samples.len() as u64,
            })
        }
    }
}

/// All meta-replications for every IRE, without summarizing.
///
/// Row `r`, meta-replication `m` uses `StreamBlock::new(master_seed, r, m)`.
/// Replications run on the current rayon pool and are collected in index
/// order, so the output does not depend on the pool width.
pub fn meta_runs(
    problem: &Problem,
    estimator: &Estimator,
    ire_list: &[f64],
    meta_reps: u16,
    master_seed: u64,
) -> Result<Vec<RowRuns>> {
    let truth = true_value(problem)?;
    if ire_list.len() > usize::from(u8::MAX) + 1 {
        return Err(Error::InvalidArgument {
            field: "ire_list",
            reason: format!("at most 256 rows, got {}", ire_list.len()),
        });
    }
    if meta_reps < 2 {
        return Err(Error::InvalidArgument {
            field: "meta_reps",
            reason: format!("need at least 2 meta-replications, got {meta_reps}"),
        });
    }
    ire_list
        .iter()
        .enumerate()
        .map(|(row, &ire_pct)| {
            let epsilon = ire_pct / 100.0 * truth.abs();
            let runs = (0..meta_reps)
                .into_par_iter()
                .map(|m| run_once(problem, estimator, epsilon, StreamBlock::new(master_seed, row as u8, m)))
                .collect::<Result<Vec<_>>>()?;
            Ok(RowRuns {
                ire_pct,
                epsilon,
                runs,
            })
        })
        .collect()
}

/// Table rows for every IRE, `epsilon = (ire / 100) |alpha|`.
pub fn meta_experiment(
    problem: &Problem,
    estimator: &Estimator,
    ire_list: &[f64],
    meta_reps: u16,
    master_seed: u64,
) -> Result<Vec<TableRow>> {
    let truth = true_value(problem)?;
    meta_runs(problem, estimator, ire_list, meta_reps, master_seed)?
        .iter()
        .map(|r| TableRow::summarize(r, truth))
        .collect()
}

/// Closed-form `E k(X(T))` where one is known.
pub fn true_value(problem: &Problem) -> Result<f64> {
    let t = problem.horizon;
    let unknown = || Error::UnknownTrueValue(format!("{} with {:?}", problem.model.name(), problem.functional));
    match (problem.model, problem.functional) {
        (SdeModel::Cir { kappa, theta, x0, .. }, PathFunctional::TerminalValue) => {
            Ok(theta + (x0 - theta) * (-kappa * t).exp())
        }
        (SdeModel::Gbm { rate, x0, .. }, PathFunctional::TerminalValue) => Ok(x0 * (rate * t).exp()),
        (
            SdeModel::Gbm {
                rate,
                volatility,
                x0,
            },
            PathFunctional::DiscountedCall {
                strike,
                rate: discount,
                horizon,
            },
        ) if volatility > 0.0 && strike > 0.0 => {
            let sd = volatility * t.sqrt();
            let d1 = ((x0 / strike).ln() + (rate + 0.5 * volatility * volatility) * t) / sd;
            let d2 = d1 - sd;
            let phi = Normal::standard();
            let undiscounted = x0 * (rate * t).exp() * phi.cdf(d1) - strike * phi.cdf(d2);
            Ok((-discount * horizon).exp() * undiscounted)
        }
        (SdeModel::Constant { drift, x0, .. }, PathFunctional::TerminalValue) => Ok(x0 + drift * t),
        _ => Err(unknown()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::SchemeKind;

    #[test]
    fn stats_hand_values() {
        let s: RunningStats = [1.0, 2.0, 3.0].into_iter().collect();
        assert_eq!(s.count(), 3);
        assert!((s.mean() - 2.0).abs() < 1e-15);
        assert!((s.m2() - 2.0).abs() < 1e-15);
        assert!((s.sample_variance().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let s: RunningStats = [4.0, -1.0].into_iter().collect();
        assert_eq!(s.merge(&RunningStats::new()), s);
        assert_eq!(RunningStats::new().merge(&s), s);
    }

    #[test]
    fn merge_matches_concatenation() {
        let a: RunningStats = [1.0, 2.0].into_iter().collect();
        let b: RunningStats = [3.0].into_iter().collect();
        let all: RunningStats = [1.0, 2.0, 3.0].into_iter().collect();
        let m = a.merge(&b);
        assert_eq!(m.count(), 3);
        assert!((m.mean() - all.mean()).abs() < 1e-12);
        assert!((m.m2() - all.m2()).abs() < 1e-12);
    }

    #[test]
    fn work_accumulates() {
        let mut s = RunningStats::new();
        s.push(1.0, 4);
        s.push(1.0, 8);
        assert_eq!(s.work(), 12);
    }

    #[test]
    fn rmse_of_mean() {
        let s: RunningStats = [0.0, 2.0].into_iter().collect();
        assert!((s.sample_rmse_of_mean().unwrap() - 1.0).abs() < 1e-15);
        let s: RunningStats = [5.0; 10].into_iter().collect();
        assert_eq!(s.sample_rmse_of_mean().unwrap(), 0.0);
        let s: RunningStats = [5.0].into_iter().collect();
        assert!(matches!(s.sample_rmse_of_mean(), Err(Error::TooFewSamples { count: 1 })));
    }

    #[test]
    fn stopping_rule_validation() {
        assert!(StoppingRule::new(0.0, 100).is_err());
        assert!(StoppingRule::new(0.1, 1).is_err());
        assert!(StoppingRule::new(0.1, 2).is_ok());
    }

    #[test]
    fn huge_epsilon_stops_at_n_min() {
        let p = Problem::cir_terminal();
        let sampler = UnbiasedSampler {
            problem: p,
            dist: LevelDistribution::new(1.5).unwrap(),
        };
        let rule = StoppingRule::new(1e6, 37).unwrap();
        let run = run_until_tolerance(&sampler, &rule, StreamBlock::new(1, 0, 0)).unwrap();
        assert_eq!(run.count, 37);
    }

    #[test]
    fn constant_sampler_stops_at_n_min() {
        let constant = |_: &mut RandomStream| Ok(Replication { value: 3.0, work: 2 });
        let rule = StoppingRule::new(1e-12, 100).unwrap();
        let run = run_until_tolerance(&constant, &rule, StreamBlock::new(0, 0, 0)).unwrap();
        assert_eq!(run.count, 100);
        assert_eq!(run.estimate, 3.0);
        assert_eq!(run.work, 200);
    }

    #[test]
    fn smaller_epsilon_never_stops_earlier() {
        let sampler = UnbiasedSampler {
            problem: Problem::cir_terminal(),
            dist: LevelDistribution::new(1.5).unwrap(),
        };
        let block = StreamBlock::new(12, 0, 0);
        let mut last = 0;
        for eps in [0.02, 0.01, 0.005, 0.003] {
            let run = run_until_tolerance(&sampler, &StoppingRule::new(eps, 10).unwrap(), block).unwrap();
            assert!(run.count >= last);
            last = run.count;
        }
    }

    #[test]
    fn true_values() {
        assert!((true_value(&Problem::cir_terminal()).unwrap() - 0.04).abs() < 1e-15);
        let gbm = Problem::new(SdeModel::benchmark_gbm(), SchemeKind::Milstein, PathFunctional::TerminalValue);
        assert!((true_value(&gbm).unwrap() - 1.051_271_096_376_024).abs() < 1e-12);
        let call = true_value(&Problem::gbm_call()).unwrap();
        assert!((call - 0.104_506).abs() < 5e-7, "{call}");
        let cir_call = Problem {
            functional: PathFunctional::benchmark_call(),
            ..Problem::cir_terminal()
        };
        assert!(matches!(true_value(&cir_call), Err(Error::UnknownTrueValue(_))));
    }

    #[test]
    fn summarize_row() {
        let runs = RowRuns {
            ire_pct: 10.0,
            epsilon: 0.1,
            runs: vec![
                RunOutcome { estimate: 1.0, work: 10, count: 1 },
                RunOutcome { estimate: 3.0, work: 30, count: 1 },
            ],
        };
        let row = TableRow::summarize(&runs, 2.0).unwrap();
        assert_eq!(row.estimate, 2.0);
        assert!((row.ci_halfwidth - Z_90 * (2.0f64 / 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(row.rmse, 1.0);
        assert_eq!(row.work_mean, 20.0);
        assert!((row.work_ci_halfwidth - Z_90 * (200.0f64 / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn meta_experiment_refuses_unknown_truth() {
        let p = Problem {
            functional: PathFunctional::benchmark_call(),
            ..Problem::cir_terminal()
        };
        let est = Estimator::Unbiased {
            dist: LevelDistribution::new(1.5).unwrap(),
            n_min: 10,
        };
        assert!(meta_experiment(&p, &est, &[25.0], 10, 1).is_err());
    }
}
