use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use augkern::harness;

/// Augmentation-chain toolkit: stationary analysis, induced kernels,
/// classifier equivalence, and training-free diagnostics.
#[derive(Parser)]
#[command(name = "augkern", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run {
        /// Path to a JSON experiment config.
        config: PathBuf,
        /// Output directory (overrides the config's `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for parallel sections (default: all cores).
        /// Results are byte-identical for any worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Parse and check a config without running it.
    Validate {
        /// Path to a JSON experiment config.
        config: PathBuf,
    },
    /// List the available experiment kinds.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> augkern::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
        } => {
            if let Some(n) = workers {
                if n == 0 {
                    return Err(augkern::Error::Config {
                        field: "--workers".into(),
                        message: "worker count must be at least 1".into(),
                    });
                }
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| augkern::Error::Config {
                        field: "--workers".into(),
                        message: e.to_string(),
                    })?;
            }
            let env_seed = match std::env::var("AUGKERN_SEED") {
                Ok(raw) => Some(raw.parse::<u64>().map_err(|_| augkern::Error::Config {
                    field: "AUGKERN_SEED".into(),
                    message: format!("`{raw}` is not an unsigned 64-bit integer"),
                })?),
                Err(_) => None,
            };
            let outcome = harness::run(&config, out.as_deref(), env_seed)?;
            println!(
                "{} -> {} ({} + manifest.json)",
                outcome.kind,
                outcome.out_dir.display(),
                outcome.files.join(", ")
            );
            Ok(())
        }
        Command::Validate { config } => {
            let kind = harness::validate(&config)?;
            println!("ok: {kind}");
            Ok(())
        }
        Command::List => {
            print!("{}", harness::list_experiments());
            Ok(())
        }
    }
}
