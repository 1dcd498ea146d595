use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use half::commands::{self, SplitArgs};
use half::{CliError, RunConfig};
use half_core::synthetic::SyntheticConfig;

#[derive(Parser)]
#[command(name = "half", version, about = "Review-based rating prediction with hierarchical attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a JSON-Lines dataset into train/val/test files.
    Split {
        #[arg(long)]
        input: PathBuf,
        /// Train, validation and test shares, e.g. 0.8,0.1,0.1.
        #[arg(long, value_parser = parse_ratios, default_value = "0.8,0.1,0.1")]
        ratios: [f64; 3],
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a config file and write the best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the MSE of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict one rating.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        /// Also list each side's reviews ranked by attention weight.
        #[arg(long)]
        explain: bool,
    },
    /// Finite-difference check of every gradient on a small random model.
    Gradcheck {
        /// Config whose hyperparameters to check; defaults to a small model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Debug: corrupt one gradient rule (conv, matmul, hadamard, gather).
        #[arg(long, value_parser = parse_fault)]
        corrupt_gradient: Option<half_core::FaultRule>,
    },
    /// Write a planted-factor synthetic dataset as JSON Lines.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 4000)]
        interactions: usize,
        #[arg(long, default_value_t = 0.3)]
        noise_sd: f64,
    },
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|p: Vec<f64>| format!("expected three ratios, got {}", p.len()))
}

fn parse_fault(s: &str) -> Result<half_core::FaultRule, String> {
    commands::parse_fault(s).ok_or_else(|| format!("unknown rule {s:?}; use conv, matmul, hadamard or gather"))
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Split {
            input,
            ratios,
            seed,
            out: dir,
        } => {
            commands::cmd_split(
                &SplitArgs {
                    input,
                    ratios,
                    seed,
                    out: dir,
                },
                &mut out,
            )?;
        }
        Command::Train { config, out: path } => {
            let config = RunConfig::load(&config)?;
            commands::cmd_train(&config, &path, &mut out)?;
        }
        Command::Eval { checkpoint, data } => {
            commands::cmd_eval(&checkpoint, &data, &mut out)?;
        }
        Command::Predict {
            checkpoint,
            user,
            item,
            explain,
        } => {
            commands::cmd_predict(&checkpoint, &user, &item, explain, &mut out)?;
        }
        Command::Gradcheck {
            config,
            seed,
            corrupt_gradient,
        } => {
            let hp = config.map(|p| RunConfig::load(&p)).transpose()?.map(|c| c.hp);
            let report = commands::cmd_gradcheck(hp, seed, corrupt_gradient, &mut out)?;
            return Ok(report.passed());
        }
        Command::MakeSynthetic {
            out: path,
            seed,
            users,
            items,
            interactions,
            noise_sd,
        } => {
            let cfg = SyntheticConfig {
                seed,
                users,
                items,
                interactions,
                noise_sd,
                ..SyntheticConfig::default()
            };
            commands::cmd_make_synthetic(&cfg, &path, &mut out)?;
        }
    }
    out.flush().map_err(|e| CliError::Other(e.to_string()))?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
