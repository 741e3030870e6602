use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semcomm_cli::config::ExperimentConfig;
use semcomm_cli::run;

/// Multi-modal multi-task semantic communication simulator.
#[derive(Parser)]
#[command(name = "semcomm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic datasets and write them as binary containers.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Jointly train all registered tasks; writes checkpoint and loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over every (task, channel, SNR) cell.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path (default: <out_dir>/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Like eval, repeated over several noise seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of evaluation noise seeds.
        #[arg(long, default_value_t = 3)]
        eval_seeds: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Communication-overhead accounting per task.
    Overhead {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Transmitted symbol width in bits (8, 16 or 32).
        #[arg(long)]
        symbol_bits: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite; nonzero exit on failure.
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::GenData { config, out_dir } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            run::gen_data(&cfg, out_dir.as_deref())?;
        }
        Command::Train { config, out_dir } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            run::train_cmd(&cfg, out_dir.as_deref())?;
        }
        Command::Eval { config, checkpoint, out_dir } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let ckpt = checkpoint
                .unwrap_or_else(|| PathBuf::from(&cfg.out_dir).join("checkpoint.bin"));
            run::eval_cmd(&cfg, &ckpt, out_dir.as_deref())?;
        }
        Command::Sweep { config, checkpoint, eval_seeds, out_dir } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            let ckpt = checkpoint
                .unwrap_or_else(|| PathBuf::from(&cfg.out_dir).join("checkpoint.bin"));
            run::sweep_cmd(&cfg, &ckpt, eval_seeds, out_dir.as_deref())?;
        }
        Command::Overhead { config, symbol_bits, out_dir } => {
            let cfg = ExperimentConfig::load(config.as_deref())?;
            run::overhead_cmd(&cfg, symbol_bits, out_dir.as_deref())?;
        }
        Command::Gradcheck { seed } => {
            if !run::gradcheck_cmd(seed)? {
                anyhow::bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse(); // exits with code 2 on usage errors
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
