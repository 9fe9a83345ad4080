use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stmle_cli::report::write_json;
use stmle_cli::{analyze, selftest, simulate, CliError, Config, RunOptions};

#[derive(Parser)]
#[command(name = "stmle", version, about = "Structured-model TMLE of average treatment effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output artifacts [default: out].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to the number of logical CPUs).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Write per-fold and per-replication diagnostics.
    #[arg(long)]
    diagnostics: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study over the scenarios in the `simulate` section.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write replication 0 of each scenario as a CSV file.
        #[arg(long)]
        dump_data: bool,
    },
    /// Estimate the ATE on the CSV file named in the `analyze` section.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Fast numerical self-checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

fn setup(common: &Common) -> Result<RunOptions, CliError> {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(RunOptions {
        out_dir: common.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        seed: common.seed,
        diagnostics: common.diagnostics,
    })
}

fn load(common: &Common) -> Result<Config, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    Config::load(path)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, dump_data } => {
            let opts = setup(&common)?;
            let cfg = load(&common)?
                .simulate
                .ok_or_else(|| CliError::Config("field `simulate`: section missing".into()))?;
            let outcome = simulate::run(&cfg, &opts, dump_data)?;
            for r in &outcome.table.rows {
                println!(
                    "{:<36} {:<5} bias {:+.4}  rmse {:.4}  coverage {:.3}  width {:.4}",
                    r.scenario,
                    r.estimator.name(),
                    r.bias,
                    r.rmse,
                    r.coverage,
                    r.width
                );
            }
            let over = outcome.budget_exceeded();
            if !over.is_empty() {
                let msg: Vec<String> = over
                    .iter()
                    .map(|f| format!("{} {}: {} of {} failed", f.scenario, f.estimator.name(), f.failures, f.attempted))
                    .collect();
                return Err(CliError::Runtime(format!("failure budget exceeded: {}", msg.join("; "))));
            }
            Ok(())
        }
        Command::Analyze { common } => {
            let opts = setup(&common)?;
            let cfg = load(&common)?
                .analyze
                .ok_or_else(|| CliError::Config("field `analyze`: section missing".into()))?;
            let report = analyze::run(&cfg, &opts)?;
            println!(
                "n = {} ({} dropped), treated = {}",
                report.rows_used, report.rows_dropped, report.treated
            );
            for r in &report.rows {
                let sd = r.split_sd.map_or("-".to_string(), |s| format!("{s:.3}"));
                println!(
                    "{:<5} estimate {:.3}  se {:.3}  ci [{:.3}, {:.3}]  width {:.3}  split sd {sd}",
                    r.estimator.name(),
                    r.estimate,
                    r.se,
                    r.ci_lo,
                    r.ci_hi,
                    r.width
                );
            }
            Ok(())
        }
        Command::Selftest { common } => {
            let opts = setup(&common)?;
            let report = selftest::run(opts.seed.unwrap_or(7));
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if common.out_dir.is_some() {
                let out = &opts.out_dir;
                std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(e.to_string()))?;
                write_json(&out.join("selftest.json"), &report)?;
            }
            if report.checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(CliError::Runtime("selftest failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stmle: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
