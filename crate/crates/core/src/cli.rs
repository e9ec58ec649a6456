//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a
//! run or a diagnostic fails.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{EstimatorKind, ExperimentConfig, ModelName};
use crate::csv::{emit_csv, render_table};
use crate::error::{Error, Result};
use crate::harness::{meta_experiment, true_value, TableRow};
use crate::unbiased::expected_work;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "unbiased-sde", version, about = "Unbiased and multilevel Monte Carlo for SDE functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Meta-experiment for the randomized unbiased estimator.
    Unbiased(RunArgs),
    /// Meta-experiment for the multilevel Monte Carlo baseline.
    Mlmc(RunArgs),
    /// Strong-order regression, bridge moments, level law and work checks.
    Diagnose(CommonArgs),
    /// Reproduce all four tables (GBM and CIR, both estimators).
    Tables(TablesArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (file, or directory for `tables`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; output does not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Run even if gamma lies outside (1, 2r).
    #[arg(long)]
    override_gamma_check: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct TablesArgs {
    /// Include the 0.5% rows.
    #[arg(long)]
    full: bool,
    /// Meta-replications per row.
    #[arg(long, default_value_t = crate::config::DEFAULT_META_REPS)]
    meta_reps: u16,
    #[command(flatten)]
    common: CommonArgs,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Unbiased(args) => run_experiment(EstimatorKind::Unbiased, args),
        Command::Mlmc(args) => run_experiment(EstimatorKind::Mlmc, args),
        Command::Diagnose(args) => run_diagnose(args),
        Command::Tables(args) => run_tables(args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> std::result::Result<T, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn load_config(kind: EstimatorKind, args: &RunArgs) -> std::result::Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let explicit = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("estimator").and_then(|e| e.as_str()).map(str::to_owned));
    if let Some(name) = explicit {
        if name != kind.name() {
            return Err(Failure::Config(format!(
                "`estimator`: config says `{name}` but the `{}` subcommand was used",
                kind.name()
            )));
        }
    }
    let mut cfg = ExperimentConfig::parse_unvalidated(&text)?;
    cfg.estimator = kind;
    cfg.override_gamma_check |= args.override_gamma_check;
    if let Some(seed) = args.common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &args.common.out {
        cfg.output = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Metadata block written above every table.
pub fn table_metadata(cfg: &ExperimentConfig) -> Result<Vec<(String, String)>> {
    let problem = cfg.problem();
    let functional = match cfg.functional {
        crate::config::FunctionalConfig::Terminal => "terminal".to_string(),
        crate::config::FunctionalConfig::DiscountedCall { strike, rate } => {
            format!("discounted_call(strike={strike}, rate={rate})")
        }
    };
    let work = match expected_work(cfg.gamma) {
        Ok(w) => format!("{w}"),
        Err(_) => "divergent".to_string(),
    };
    let entries = [
        ("generator", format!("unbiased-sde {}", env!("CARGO_PKG_VERSION"))),
        ("estimator", cfg.estimator.name().to_string()),
        ("model", problem.model.name().to_string()),
        ("scheme", format!("{:?}", cfg.scheme).to_lowercase()),
        ("functional", functional),
        ("true_value", format!("{}", true_value(&problem)?)),
        ("master_seed", cfg.master_seed.to_string()),
        ("config_sha256", cfg.hash()),
        ("gamma", format!("{}", cfg.gamma)),
        ("n_min", cfg.n_min.to_string()),
        ("meta_reps", cfg.meta_reps.to_string()),
        ("analytic_expected_work_per_z", work),
        ("mlmc_initial_samples", cfg.mlmc_initial_samples.to_string()),
        ("mlmc_max_level", cfg.mlmc_max_level.to_string()),
    ];
    Ok(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Runs the meta-experiment described by `cfg` on the current rayon pool.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Vec<TableRow>> {
    meta_experiment(
        &cfg.problem(),
        &cfg.estimator()?,
        &cfg.ire_list,
        cfg.meta_reps,
        cfg.master_seed,
    )
}

fn run_experiment(kind: EstimatorKind, args: RunArgs) -> std::result::Result<(), Failure> {
    let cfg = load_config(kind, &args)?;
    let rows = with_pool(args.common.workers, || run_config(&cfg))??;
    let metadata = table_metadata(&cfg)?;
    match &cfg.output {
        Some(path) => emit_csv(&rows, &metadata, Path::new(path))?,
        None => print!("{}", render_table(&rows, &metadata)?),
    }
    Ok(())
}

fn run_diagnose(args: CommonArgs) -> std::result::Result<(), Failure> {
    let seed = args.seed.unwrap_or(crate::config::DEFAULT_SEED);
    let report = with_pool(args.workers, || crate::diagnostics::run_all(seed))??;
    let text = format!("# diagnostics, master_seed = {seed}\n{report}\n");
    match &args.out {
        Some(path) => std::fs::write(path, &text).map_err(Error::from)?,
        None => print!("{text}"),
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime("one or more diagnostics failed".into()))
    }
}

/// File name and config of each reproduced table.
pub fn table_configs(seed: u64, full: bool, meta_reps: u16) -> Vec<(&'static str, ExperimentConfig)> {
    let ire: Vec<f64> = if full {
        crate::config::DEFAULT_IRE_LIST.to_vec()
    } else {
        crate::config::DEFAULT_IRE_LIST[..5].to_vec()
    };
    let make = |model, estimator| ExperimentConfig {
        estimator,
        ire_list: ire.clone(),
        master_seed: seed,
        meta_reps,
        ..ExperimentConfig::for_model(model)
    };
    vec![
        ("table1_unbiased_gbm.csv", make(ModelName::Gbm, EstimatorKind::Unbiased)),
        ("table2_mlmc_gbm.csv", make(ModelName::Gbm, EstimatorKind::Mlmc)),
        ("table3_unbiased_cir.csv", make(ModelName::Cir, EstimatorKind::Unbiased)),
        ("table4_mlmc_cir.csv", make(ModelName::Cir, EstimatorKind::Mlmc)),
    ]
}

fn run_tables(args: TablesArgs) -> std::result::Result<(), Failure> {
    if args.meta_reps < 2 {
        return Err(Failure::Config(format!("`meta_reps`: must be at least 2, got {}", args.meta_reps)));
    }
    let seed = args.common.seed.unwrap_or(crate::config::DEFAULT_SEED);
    let dir = args.common.out.clone().unwrap_or_else(|| PathBuf::from("tables"));
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    for (file, cfg) in table_configs(seed, args.full, args.meta_reps) {
        cfg.validate()?;
        let rows = with_pool(args.common.workers, || run_config(&cfg))??;
        let metadata = table_metadata(&cfg)?;
        let path = dir.join(file);
        emit_csv(&rows, &metadata, &path)?;
        println!("== {}", path.display());
        for r in &rows {
            println!(
                "{:>5}%  {:.6} +/- {:.6}  RMSE {:.5}  work {:.1} +/- {:.1}",
                r.ire_pct, r.estimate, r.ci_halfwidth, r.rmse, r.work_mean, r.work_ci_halfwidth
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["unbiased-sde"]), EXIT_CONFIG);
        assert_eq!(run(["unbiased-sde", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(run(["unbiased-sde", "unbiased"]), EXIT_CONFIG);
        assert_eq!(run(["unbiased-sde", "diagnose", "--seed", "x"]), EXIT_CONFIG);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["unbiased-sde", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_config_file_exits_one() {
        assert_eq!(
            run(["unbiased-sde", "unbiased", "--config", "/definitely/not/here.json"]),
            EXIT_CONFIG
        );
    }

    #[test]
    fn table_configs_cover_four_tables() {
        let t = table_configs(3, false, 100);
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|(_, c)| c.ire_list == vec![25.0, 10.0, 5.0, 2.0, 1.0]));
        assert!(t.iter().all(|(_, c)| c.validate().is_ok()));
        assert_eq!(table_configs(3, true, 100)[0].1.ire_list.len(), 6);
    }
}
