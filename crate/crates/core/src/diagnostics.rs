//! Self-checks run by the `diagnose` subcommand.

use std::fmt;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::Result;
use crate::harness::RunningStats;
use crate::kernel::{BrownianGrid, StreamBlock};
use crate::models::{PathFunctional, Problem, SchemeKind, SdeModel};
use crate::unbiased::{estimate_strong_order, sample_z, LevelDistribution};

/// A measured quantity with its acceptance band.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lo,
            hi,
        }
    }

    pub fn passed(&self) -> bool {
        self.value >= self.lo && self.value <= self.hi
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {:.6} (band [{:.6}, {:.6}])",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.lo,
            self.hi
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.notes {
            writeln!(f, "{n}")?;
        }
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

// Row tags keep diagnostic substreams apart from table substreams.
const ROW_ORDER: u8 = 240;
const ROW_BRIDGE: u8 = 241;
const ROW_LEVELS: u8 = 242;
const ROW_WORK: u8 = 243;

/// Strong order, bridge moments, level law and work model.
pub fn run_all(master_seed: u64) -> Result<Report> {
    let mut report = Report::default();

    let gbm = SdeModel::benchmark_gbm();
    let cases = [
        ("gbm/milstein", Problem::new(gbm, SchemeKind::Milstein, PathFunctional::TerminalValue), 1.0),
        ("gbm/euler", Problem::new(gbm, SchemeKind::Euler, PathFunctional::TerminalValue), 0.5),
    ];
    for (i, (name, problem, expected)) in cases.iter().enumerate() {
        let est = estimate_strong_order(problem, 1..=6, 10_000, StreamBlock::new(master_seed, ROW_ORDER, i as u16))?;
        report.notes.push(format!(
            "strong order {name}: r_hat = {:.4}, slope = {:.4}, E[Delta_n^2] = {:?}",
            est.order,
            est.slope,
            est.level_means.iter().map(|(_, m)| format!("{m:.3e}")).collect::<Vec<_>>()
        ));
        report
            .checks
            .push(Check::new(format!("r_hat {name}"), est.order, expected - 0.15, expected + 0.15));
    }
    let cir = estimate_strong_order(&Problem::cir_terminal(), 1..=6, 10_000, StreamBlock::new(master_seed, ROW_ORDER, 2))?;
    report
        .notes
        .push(format!("strong order cir/milstein (informational): r_hat = {:.4}", cir.order));

    // Midpoint of the (0, 0) bridge at h = 1 is N(0, 1/4).
    let n = 100_000u64;
    let block = StreamBlock::new(master_seed, ROW_BRIDGE, 0);
    let mut mid = RunningStats::new();
    for i in 0..n {
        let mut g = BrownianGrid::from_endpoint(1.0, 0.0)?;
        g.refine(&mut block.stream(i));
        mid.push(g.values()[1], 0);
    }
    let band = 4.0 * (0.25 / n as f64).sqrt();
    report.checks.push(Check::new("bridge midpoint mean", mid.mean(), -band, band));
    report
        .checks
        .push(Check::new("bridge midpoint variance", mid.sample_variance()?, 0.25 * 0.97, 0.25 * 1.03));

    let dist = LevelDistribution::new(1.5)?;
    let block = StreamBlock::new(master_seed, ROW_LEVELS, 0);
    let counts = (0..n).fold([0u64; 4], |mut acc, i| {
        let level = dist.sample_level_count(&mut block.stream(i));
        acc[(level as usize - 1).min(3)] += 1;
        acc
    });
    let p2 = dist.tail_prob(2)?;
    let tail2 = (n - counts[0]) as f64 / n as f64;
    let se = (p2 * (1.0 - p2) / n as f64).sqrt();
    report
        .checks
        .push(Check::new("P(N >= 2)", tail2, p2 - 4.0 * se, p2 + 4.0 * se));
    let (stat, critical) = level_chi_square(&dist, &counts)?;
    report
        .checks
        .push(Check::new("chi-square N over {1,2,3,>=4}", stat, 0.0, critical));

    let block = StreamBlock::new(master_seed, ROW_WORK, 0);
    let problem = Problem::cir_terminal();
    let mut work = 0u64;
    for i in 0..n {
        work += sample_z(&problem, &dist, &mut block.stream(i))?.work;
    }
    let analytic = dist.expected_work()?;
    let measured = work as f64 / n as f64;
    report.notes.push(format!(
        "work per Z at gamma = 1.5: measured {measured:.4}, analytic {analytic:.6}"
    ));
    report
        .checks
        .push(Check::new("mean work per Z", measured, 0.95 * analytic, 1.05 * analytic));
    Ok(report)
}

/// Pearson statistic for level counts binned as `{1, 2, 3, >=4}` and the 1% critical value.
pub fn level_chi_square(dist: &LevelDistribution, counts: &[u64; 4]) -> Result<(f64, f64)> {
    let total: u64 = counts.iter().sum();
    let tails = [
        dist.tail_prob(1)?,
        dist.tail_prob(2)?,
        dist.tail_prob(3)?,
        dist.tail_prob(4)?,
    ];
    let probs = [tails[0] - tails[1], tails[1] - tails[2], tails[2] - tails[3], tails[3]];
    let stat = counts
        .iter()
        .zip(probs)
        .map(|(&c, p)| {
            let e = p * total as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new(3.0)
        .expect("3 degrees of freedom")
        .inverse_cdf(0.99);
    Ok((stat, critical))
}
