use std::path::PathBuf;

use anyhow::{Context, Result};
use cdt_bench::{cmd_filter, cmd_simulate, cmd_train, LoadedConfig, RunOptions};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdt-bench", version, about = "Train controlled-diffusion guides and benchmark particle filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train value/control networks for every parameter point and scheme.
    Train(Common),
    /// Run the configured filters over repetitions and write results CSVs.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file, or directory of `<label>_<scheme>.ckpt.json`
        /// files (default: the output directory).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Filter this observations file instead of simulating data.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Simulate observations files.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Training iterations, overriding the config.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn setup(&self) -> Result<(LoadedConfig, RunOptions)> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        let config = LoadedConfig::load(&self.config)?;
        let options = RunOptions {
            out_dir: self.out.clone(),
            seed: self.seed,
            iterations: self.iterations,
            quiet: self.quiet,
            ..RunOptions::default()
        };
        Ok((config, options))
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(common) => {
            let (config, options) = common.setup()?;
            cmd_train(&config, &options)?;
        }
        Command::Filter {
            common,
            checkpoint,
            observations,
        } => {
            let (config, mut options) = common.setup()?;
            options.checkpoint = checkpoint;
            options.observations = observations;
            cmd_filter(&config, &options)?;
        }
        Command::Simulate(common) => {
            let (config, options) = common.setup()?;
            cmd_simulate(&config, &options)?;
        }
    }
    Ok(())
}
