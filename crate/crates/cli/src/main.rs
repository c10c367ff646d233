use clap::{Parser, Subcommand};
use lhs_cli::config::RunConfig;
use lhs_cli::runner;
use lhs_cli::synth::SynthSpec;
use std::path::PathBuf;
use std::process::ExitCode;

/// Latent homophilic structure learning: training, attacks, and
/// heterophily-distribution analytics.
#[derive(Parser)]
#[command(name = "lhs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per configured seed; writes checkpoints and history CSVs.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Attack a trained checkpoint with every attack in the config.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Heterophily-distribution analytics for a dataset directory.
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        /// Emit per-hop marginals up to this hop count.
        #[arg(long, default_value_t = 1)]
        hops: usize,
        /// Output directory; defaults to the dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit codes: 0 success, 1 user error, 2 numeric failure.
fn classify_error(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<lhs_core::Error>() {
        Some(e) if !e.is_user_error() => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<Vec<PathBuf>> {
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::from_file(&config)?;
            runner::run_train(&cfg)
        }
        Command::Attack { config, checkpoint } => {
            let cfg = RunConfig::from_file(&config)?;
            runner::run_attack(&cfg, &checkpoint)
        }
        Command::Analyze { dataset, hops, out } => {
            let out_dir = out.unwrap_or_else(|| dataset.clone());
            runner::run_analyze(&dataset, hops, &out_dir)
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec)?;
            let spec: SynthSpec = serde_json::from_str(&text)?;
            runner::run_synth(&spec, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_error(&err))
        }
    }
}
