//! Command-line front end: `run` executes a config, `plot-data` aggregates
//! existing results into per-metric curve files, `verify` runs the
//! cross-oracle numerical checks, and `trace-check` validates a trace file
//! against the configured round budget.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error,
//! 1 anything else.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use promptwise::analysis::cross_oracle_suite;
use promptwise::config::{config_digest, load_config, parse_config};
use promptwise::error::{Error, Result};
use promptwise::experiment::{emit_plot_data, load_trace, run_experiment};

#[derive(Parser)]
#[command(
    name = "promptwise",
    version,
    about = "Cost-aware contextual bandit experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm and write per-trial CSVs, summary
    /// JSON, and seed-averaged curves.
    Run {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker pool size; defaults to one worker per core.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate existing results into one tidy CSV per metric.
    PlotData {
        /// Results directory to read and write.
        #[arg(long, required_unless_present = "config")]
        out: Option<PathBuf>,
        /// Config whose output_dir names the results directory.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the randomized cross-oracle consistency checks.
    Verify {
        /// Seed for the randomized check instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Validate a trace file against the config's arms and round budget.
    TraceCheck {
        /// Experiment config with env.kind = "trace".
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            jobs,
        } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("reading config {}: {e}", config.display())))?;
            let digest = config_digest(&text);
            let mut config = parse_config(&text)?;
            if let Some(seed) = seed {
                config.root_seed = seed;
            }
            if let Some(out) = out {
                config.output_dir = out;
            }
            let reports = run_experiment(&config, &digest, jobs)?;
            for report in &reports {
                let m = &report.summary;
                let regret = match m.cum_regret {
                    Some(r) => format!(", cum_regret {r:.4}"),
                    None => String::new(),
                };
                println!(
                    "{}: avg_utility {:.4}, avg_cost {:.4}, avg_success {:.4}{regret}",
                    report.kind.as_str(),
                    m.avg_utility,
                    m.avg_cost,
                    m.avg_success
                );
            }
            println!(
                "wrote {} trials x {} algorithms to {}",
                config.num_trials,
                reports.len(),
                config.output_dir.display()
            );
            Ok(())
        }
        Command::PlotData { out, config } => {
            let dir = match (out, config) {
                (Some(dir), _) => dir,
                (None, Some(path)) => load_config(&path)?.output_dir,
                (None, None) => unreachable!("clap enforces --out or --config"),
            };
            for path in emit_plot_data(&dir)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Verify { seed } => {
            for line in cross_oracle_suite(seed)? {
                println!("{line}");
            }
            println!("all checks passed");
            Ok(())
        }
        Command::TraceCheck { config } => {
            let config = load_config(&config)?;
            let records = load_trace(&config)?.ok_or_else(|| {
                Error::Config("trace-check needs a config with env.kind = \"trace\"".into())
            })?;
            if records.is_empty() {
                return Err(Error::Data("trace has no rows".into()));
            }
            let max_tau = config
                .algorithms
                .iter()
                .map(|a| config.effective_hyper(a).tau_max)
                .max()
                .unwrap_or(1);
            let min_outcomes = records
                .iter()
                .flat_map(|r| r.outcomes.iter().map(Vec::len))
                .min()
                .unwrap_or(0);
            println!(
                "trace ok: {} rows, {} arms, context dim {}, >= {min_outcomes} outcomes per \
                 arm (round budget needs {max_tau})",
                records.len(),
                config.env.num_arms(),
                records[0].context.dim()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
