//! The randomized unbiased estimator.
//!
//! With `k_n = k(X_{2^-n})` built on one shared path and an independent
//! random level `N >= 1`,
//!
//! ```text
//! Z = k_0 + sum_{n=1}^{N} (k_n - k_{n-1}) / P(N >= n)
//! ```
//!
//! has `E Z = lim_n E k_n`. `N` is geometric with `P(N >= i) = 2^{-gamma (i-1)}`.
//! Expected work per `Z` is finite iff `gamma > 1`; the variance is finite when
//! additionally `gamma < 2r` for a scheme of strong order `r`.

use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::kernel::{RandomStream, StreamBlock};
use crate::models::{simulate_level_terminals, Problem};

/// Law of the randomized truncation level `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelDistribution {
    gamma: f64,
}

impl LevelDistribution {
    /// `gamma` must be positive; finiteness of work and variance is checked
    /// separately by [`validate_gamma`].
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument {
                field: "gamma",
                reason: format!("tail exponent must be positive, got {gamma}"),
            });
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `P(N >= i) = 2^{-gamma (i - 1)}` for `i >= 1`.
    pub fn tail_prob(&self, i: u32) -> Result<f64> {
        if i < 1 {
            return Err(Error::LevelIndex(i));
        }
        Ok(self.tail(i))
    }

    fn tail(&self, i: u32) -> f64 {
        (-self.gamma * f64::from(i - 1)).exp2()
    }

    /// Incremental work `t_i` of level `i`: 1 for level 0, `2^{i-1}` after.
    pub fn work_per_level(i: u32) -> f64 {
        if i == 0 {
            1.0
        } else {
            f64::from(i - 1).exp2()
        }
    }

    /// Inverse transform: the `N` for which `P(N >= N+1) < u <= P(N >= N)`.
    pub fn level_count_from_uniform(&self, u: f64) -> u32 {
        debug_assert!(u > 0.0 && u <= 1.0);
        let extra = (u.ln() / (-self.gamma * std::f64::consts::LN_2)).floor();
        1 + extra as u32
    }

    /// Draws `N` from one uniform on `stream`. Not charged as Gaussian work.
    pub fn sample_level_count(&self, stream: &mut RandomStream) -> u32 {
        self.level_count_from_uniform(stream.next_open_uniform())
    }

    /// `sum_{i>=0} t_i P(N >= i) = 1 + 1 / (1 - 2^{1 - gamma})`.
    pub fn expected_work(&self) -> Result<f64> {
        expected_work(self.gamma)
    }
}

/// Closed form of the expected Gaussian draws per replication of `Z`.
pub fn expected_work(gamma: f64) -> Result<f64> {
    if !(gamma > 1.0) {
        return Err(Error::DivergentWork(gamma));
    }
    Ok(1.0 + 1.0 / (1.0 - (1.0 - gamma).exp2()))
}

/// Outcome of checking `gamma` against the window `1 < gamma < 2r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaCheck {
    Ok,
    /// `gamma <= 1`: expected work per replication is infinite.
    InfiniteWork { gamma: f64 },
    /// `gamma >= 2r`: the variance bound no longer applies.
    InfiniteVariance { gamma: f64, strong_order: f64 },
}

impl GammaCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, GammaCheck::Ok)
    }
}

impl std::fmt::Display for GammaCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            GammaCheck::Ok => write!(f, "ok"),
            GammaCheck::InfiniteWork { gamma } => {
                write!(f, "gamma = {gamma} <= 1: expected work per replication is infinite")
            }
            GammaCheck::InfiniteVariance {
                gamma,
                strong_order,
            } => write!(
                f,
                "gamma = {gamma} >= 2r = {}: variance of Z is not guaranteed finite",
                2.0 * strong_order
            ),
        }
    }
}

/// Checks `1 < gamma < 2r`. The work bound is reported first when both fail.
pub fn validate_gamma(gamma: f64, strong_order: f64) -> GammaCheck {
    if !(gamma > 1.0) {
        GammaCheck::InfiniteWork { gamma }
    } else if !(gamma < 2.0 * strong_order) {
        GammaCheck::InfiniteVariance {
            gamma,
            strong_order,
        }
    } else {
        GammaCheck::Ok
    }
}

/// Midpoint of the valid window, `(1 + 2r) / 2`.
pub fn default_gamma(strong_order: f64) -> f64 {
    0.5 * (1.0 + 2.0 * strong_order)
}

/// One replication of `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSample {
    pub value: f64,
    pub level_count: u32,
    /// `k(X_1)`.
    pub base: f64,
    /// `Delta_1..=Delta_N`.
    pub deltas: Vec<f64>,
    pub work: u64,
}

impl ZSample {
    /// Re-sums `Z` from the stored terms in the order [`sample_z`] uses.
    pub fn recompute(&self, dist: &LevelDistribution) -> f64 {
        assemble(self.base, &self.deltas, dist)
    }
}

fn assemble(base: f64, deltas: &[f64], dist: &LevelDistribution) -> f64 {
    deltas
        .iter()
        .zip(1u32..)
        .fold(base, |z, (&d, n)| z + d / dist.tail(n))
}

/// Draws `N`, then the coupled levels `0..=N` on the same stream.
pub fn sample_z(problem: &Problem, dist: &LevelDistribution, stream: &mut RandomStream) -> Result<ZSample> {
    let level_count = dist.sample_level_count(stream);
    sample_z_at_level(problem, dist, level_count, stream)
}

/// [`sample_z`] with the level count supplied by the caller.
pub fn sample_z_at_level(
    problem: &Problem,
    dist: &LevelDistribution,
    level_count: u32,
    stream: &mut RandomStream,
) -> Result<ZSample> {
    let terminals = simulate_level_terminals(problem, level_count, stream)?;
    let base = terminals.k_values[0];
    let deltas: Vec<f64> = terminals.deltas().collect();
    Ok(ZSample {
        value: assemble(base, &deltas, dist),
        level_count,
        base,
        deltas,
        work: terminals.work,
    })
}

/// Least-squares fit of `log2 E[Delta_n^2]` against `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongOrderEstimate {
    /// `-slope / 2`.
    pub order: f64,
    pub slope: f64,
    pub intercept: f64,
    /// `(n, mean of Delta_n^2)` per level.
    pub level_means: Vec<(u32, f64)>,
}

/// Regresses the mean squared level differences on the level index.
///
/// Replication `i` runs on `block.stream(i)` up to the top of `levels`.
pub fn estimate_strong_order(
    problem: &Problem,
    levels: RangeInclusive<u32>,
    reps: u64,
    block: StreamBlock,
) -> Result<StrongOrderEstimate> {
    let (lo, hi) = (*levels.start(), *levels.end());
    if lo < 1 || hi < lo + 3 {
        return Err(Error::InvalidArgument {
            field: "levels",
            reason: format!("need at least 4 levels starting at 1 or above, got {lo}..={hi}"),
        });
    }
    if reps < 1000 {
        return Err(Error::InvalidArgument {
            field: "reps",
            reason: format!("need at least 1000 replications, got {reps}"),
        });
    }

    let mut sums = vec![0.0; (hi - lo + 1) as usize];
    for i in 0..reps {
        let t = simulate_level_terminals(problem, hi, &mut block.stream(i))?;
        for (acc, d) in sums.iter_mut().zip(t.deltas().skip(lo as usize - 1)) {
            *acc += d * d;
        }
    }
    let level_means: Vec<(u32, f64)> = (lo..=hi)
        .zip(sums)
        .map(|(n, s)| (n, s / reps as f64))
        .collect();

    if level_means.iter().any(|&(_, m)| m <= 0.0) {
        return Err(Error::NotEstimable(
            "level differences vanish identically (order unbounded)".into(),
        ));
    }
    let points: Vec<(f64, f64)> = level_means
        .iter()
        .map(|&(n, m)| (f64::from(n), m.log2()))
        .collect();
    let (slope, intercept) = least_squares(&points);
    Ok(StrongOrderEstimate {
        order: -slope / 2.0,
        slope,
        intercept,
        level_means,
    })
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::derive_substream;
    use crate::models::{PathFunctional, SchemeKind, SdeModel};

    fn d15() -> LevelDistribution {
        LevelDistribution::new(1.5).unwrap()
    }

    #[test]
    fn tail_prob_values() {
        for g in [0.5, 1.5, 3.0] {
            assert_eq!(LevelDistribution::new(g).unwrap().tail_prob(1).unwrap(), 1.0);
        }
        assert!((d15().tail_prob(2).unwrap() - 0.353_553_390_593_273_8).abs() < 1e-15);
        assert_eq!(d15().tail_prob(3).unwrap(), 0.125);
        assert!(matches!(d15().tail_prob(0), Err(Error::LevelIndex(0))));
    }

    #[test]
    fn tail_prob_geometric_ratio() {
        let d = d15();
        for i in 1..40 {
            let r = d.tail_prob(i + 1).unwrap() / d.tail_prob(i).unwrap();
            assert!((r - 2f64.powf(-1.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_nonpositive_gamma() {
        assert!(LevelDistribution::new(0.0).is_err());
        assert!(LevelDistribution::new(-1.0).is_err());
        assert!(LevelDistribution::new(f64::NAN).is_err());
    }

    #[test]
    fn inverse_transform_cases() {
        let d = d15();
        assert_eq!(d.level_count_from_uniform(0.9), 1);
        assert_eq!(d.level_count_from_uniform(0.1), 3);
        assert_eq!(d.level_count_from_uniform(1.0), 1);
        // Just above and below the {N >= 3} threshold 2^-3.
        assert_eq!(d.level_count_from_uniform(0.125 + 1e-12), 2);
        assert_eq!(d.level_count_from_uniform(0.125 - 1e-12), 3);
    }

    #[test]
    fn expected_work_values() {
        assert!((expected_work(1.5).unwrap() - 4.414_213_562_373_095).abs() < 1e-12);
        assert_eq!(expected_work(f64::INFINITY).unwrap(), 2.0);
        assert!(matches!(expected_work(1.0), Err(Error::DivergentWork(_))));
        assert!(expected_work(0.5).is_err());
    }

    #[test]
    fn expected_work_matches_truncated_series() {
        for g in [1.2, 1.5, 1.9, 3.0] {
            let d = LevelDistribution::new(g).unwrap();
            let series: f64 = 1.0
                + (1..400)
                    .map(|i| LevelDistribution::work_per_level(i) * d.tail_prob(i).unwrap())
                    .sum::<f64>();
            assert!((series - expected_work(g).unwrap()).abs() < 1e-9 * series, "gamma {g}");
        }
    }

    #[test]
    fn gamma_window() {
        assert!(validate_gamma(1.5, 1.0).is_ok());
        assert_eq!(
            validate_gamma(1.5, 0.5),
            GammaCheck::InfiniteVariance {
                gamma: 1.5,
                strong_order: 0.5
            }
        );
        assert_eq!(validate_gamma(0.9, 1.0), GammaCheck::InfiniteWork { gamma: 0.9 });
        assert_eq!(validate_gamma(1.0, 1.0), GammaCheck::InfiniteWork { gamma: 1.0 });
        assert!(!validate_gamma(2.0, 1.0).is_ok());
        assert_eq!(default_gamma(1.0), 1.5);
        assert!(validate_gamma(default_gamma(0.8), 0.8).is_ok());
    }

    #[test]
    fn frozen_dynamics_collapse() {
        let p = Problem::new(SdeModel::frozen(0.7), SchemeKind::Milstein, PathFunctional::TerminalValue);
        for i in 0..200 {
            let z = sample_z(&p, &d15(), &mut derive_substream(4, i)).unwrap();
            assert_eq!(z.value, 0.7);
            assert!(z.deltas.iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn single_level_is_level_one_value() {
        let p = Problem::gbm_call();
        let z = sample_z_at_level(&p, &d15(), 1, &mut derive_substream(5, 5)).unwrap();
        let t = simulate_level_terminals(&p, 1, &mut derive_substream(5, 5)).unwrap();
        assert!((z.value - t.k_values[1]).abs() < 1e-15);
        assert_eq!(z.work, 2);
    }

    #[test]
    fn sample_records_are_consistent() {
        let p = Problem::cir_terminal();
        let d = d15();
        for i in 0..2000 {
            let z = sample_z(&p, &d, &mut derive_substream(6, i)).unwrap();
            assert_eq!(z.work, 1u64 << z.level_count);
            assert_eq!(z.deltas.len(), z.level_count as usize);
            assert_eq!(z.recompute(&d).to_bits(), z.value.to_bits());
        }
    }

    #[test]
    fn strong_order_rejects_bad_inputs() {
        let p = Problem::gbm_call();
        let b = StreamBlock::new(0, 0, 0);
        assert!(estimate_strong_order(&p, 1..=3, 1000, b).is_err());
        assert!(estimate_strong_order(&p, 0..=5, 1000, b).is_err());
        assert!(estimate_strong_order(&p, 1..=6, 999, b).is_err());
    }

    #[test]
    fn strong_order_frozen_not_estimable() {
        let p = Problem::new(SdeModel::frozen(1.0), SchemeKind::Euler, PathFunctional::TerminalValue);
        let r = estimate_strong_order(&p, 1..=4, 1000, StreamBlock::new(0, 0, 0));
        assert!(matches!(r, Err(Error::NotEstimable(_))));
    }

    #[test]
    fn least_squares_exact_line() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let (s, c) = least_squares(&pts);
        assert!((s + 2.0).abs() < 1e-12 && (c - 3.0).abs() < 1e-12);
    }
}
