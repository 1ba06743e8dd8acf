use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfsmooth_harness::{
    emit_report, oracle_report, run_with, selftest, ExperimentConfig, ExperimentKind, HarnessError, Mode, Mutation,
    OutputPaths, RunReport,
};

#[derive(Parser)]
#[command(name = "pfsmooth", version, about = "Particle filtering and smoothing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the first seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; report file names come from the config.
    #[arg(long, global = true, env = "PFSMOOTH_OUT_DIR")]
    out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Filtering expectations against the exact filter where one exists.
    Filter,
    /// Smoothing experiments: oracle_compare, scaling or time_uniform.
    Smooth,
    /// Backward-sampler cost sweep over N.
    Bench,
    /// Exact smoothing expectations at every time index.
    Oracle,
    /// FFBSi sample mean against the exact FFBSm conditional expectation.
    RbCheck,
    /// Small-instance invariant suite.
    Selftest {
        /// Break one component on purpose: gallop-boundary or sigma-plus-understated.
        #[arg(long, default_value = "none")]
        inject: Mutation,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version land here too
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8, HarnessError> {
    let common = cli.common;
    if let Command::Selftest { inject } = cli.command {
        let report = selftest(inject);
        if !common.quiet || !report.passed() {
            print!("{}", report.render());
        }
        return Ok(if report.passed() { 0 } else { 3 });
    }

    let path = common
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Validation("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.experiment.seeds[0] = seed;
    }
    let kind = cfg.experiment.kind;
    let allowed: &[ExperimentKind] = match cli.command {
        Command::Filter | Command::Smooth => &[
            ExperimentKind::OracleCompare,
            ExperimentKind::Scaling,
            ExperimentKind::TimeUniform,
        ],
        Command::Bench => &[ExperimentKind::Bench],
        Command::RbCheck => &[ExperimentKind::RbCheck],
        Command::Oracle | Command::Selftest { .. } => &[],
    };
    if !allowed.is_empty() && !allowed.contains(&kind) {
        let names: Vec<&str> = allowed.iter().map(|k| k.name()).collect();
        return Err(HarnessError::field(
            "experiment.kind",
            format!("`{}` does not fit this command; expected {}", kind.name(), names.join(" | ")),
        ));
    }

    let report = match cli.command {
        Command::Filter => run_with(&cfg, Mode::Filter)?,
        Command::Oracle => oracle_report(&cfg)?,
        _ => run_with(&cfg, Mode::Smooth)?,
    };
    let paths = OutputPaths::resolve(&cfg, common.out.as_deref());
    emit_report(&report, &paths)?;
    if !common.quiet {
        print_summary(&report, &paths);
    }
    Ok(0)
}

fn print_summary(report: &RunReport, paths: &OutputPaths) {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    for g in &report.summary.groups {
        println!(
            "sweep {:>6}  s {:>4}  seeds {:>3}  mean {:>12.6}  sd {:>10.6}  mean err {:>10}  se {:>10}  rmse {:>10}",
            g.sweep_value,
            g.time_index,
            g.n_seeds,
            g.mean_estimate,
            g.std_estimate,
            opt(g.mean_error),
            opt(g.std_err_error),
            opt(g.rmse),
        );
    }
    if let Some(slope) = report.summary.ops_loglog_slope {
        println!("log-log slope of elementary ops vs N: {slope:.4}");
    }
    for w in &report.summary.warnings {
        println!("warning: {w}");
    }
    println!("wrote {} and {}", paths.csv.display(), paths.json.display());
}
