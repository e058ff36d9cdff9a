use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sqs_cli::commands::analytic_checks;
use sqs_cli::{cmd_run, cmd_table1, CliError, ExperimentConfig};
use sqs_core::par::{with_workers, Execution};

#[derive(Parser)]
#[command(name = "sqs", version, about = "SQS variance reduction experiments for stochastic homogenization")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; overrides the sampler and analytic seeds in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Offline tables, then the configured sampler over the box sweep.
    Run,
    /// Variance ratios across contrasts at a fixed box size.
    Table1,
    /// Gaussian-model checks and the 1D harmonic-mean cross-check.
    Analytic,
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if matches!(cli.command, Command::Analytic) => ExperimentConfig::parse("")?,
        None => return Err(CliError::Config("--config is required".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.sampler.seed = seed;
        cfg.analytic.seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let exec = if cli.workers == 1 { Execution::Sequential } else { Execution::Parallel };
    with_workers(cli.workers, || match cli.command {
        Command::Run => {
            let outcome = cmd_run(&cfg, &out, exec)?;
            for s in &outcome.sizes {
                let e = s.report.entry(0, 0);
                println!("{} N={}: A11 mean {:.6} var {:.3e} ci95 {:.2e}", s.report.mode, s.n, e.mean, e.variance, e.ci95);
                if let Some((_, rep)) = &s.paired {
                    let c = rep.entry(0, 0);
                    println!("classical N={}: A11 mean {:.6} var {:.3e} ratio {:.2}", s.n, c.mean, c.variance, c.variance / e.variance);
                }
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Table1 => {
            for row in cmd_table1(&cfg, &out, exec)? {
                let fmt = |r: Option<f64>| r.map_or("degenerate".to_string(), |v| format!("{v:.2}"));
                println!(
                    "contrast {:.2}: V_MC {:.3e} V_exactSQS1 {:.3e} V_SQS2 {:.3e} ratio1 {} ratio2 {}",
                    row.contrast,
                    row.v_mc,
                    row.v_exact,
                    row.v_sqs2,
                    fmt(row.ratio1),
                    fmt(row.ratio2)
                );
            }
            println!("wrote {}", out.join("table1.csv").display());
            Ok(())
        }
        Command::Analytic => {
            let rows = analytic_checks(&cfg, &out, exec)?;
            for r in &rows {
                let verdict = if r.pass { "PASS" } else { "FAIL" };
                println!("{verdict} {} [{}] measured {:.6e} predicted {:.6e} tol {:.1e}", r.check, r.parameter, r.measured, r.predicted, r.tolerance);
            }
            println!("wrote {}", out.join("analytic.csv").display());
            let failed: Vec<String> = rows.iter().filter(|r| !r.pass).map(|r| r.check.clone()).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::CheckFailed(failed))
            }
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sqs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
