use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use laplgm_cli::commands::{self, Overrides};

#[derive(Parser)]
#[command(name = "laplgm", version, about = "Latent Gaussian models by nested Laplace approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a space-time dataset.
    Simulate(Common),
    /// Fit a model and write posterior summaries.
    Fit(Common),
    /// Fit with a prediction grid and write grid summaries.
    Predict(Common),
    /// Fit and write CPO, PIT, DIC and WAIC.
    Assess(Common),
    /// Fit several models and write a comparison table.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap; defaults to every core.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = ["gaussian"])]
    strategy: Option<String>,
    #[arg(long, value_parser = ["grid", "ccd", "eb"])]
    int_strategy: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            threads: self.threads,
            strategy: self.strategy.clone(),
            int_strategy: self.int_strategy.clone(),
            out: self.out.clone(),
        }
    }
}

fn run(cli: Cli) -> laplgm_cli::Result<PathBuf> {
    let (c, f): (&Common, fn(&laplgm_cli::config::RunConfig, &Overrides) -> laplgm_cli::Result<PathBuf>) =
        match &cli.command {
            Command::Simulate(c) => (c, |cfg, _| commands::simulate(cfg)),
            Command::Fit(c) => (c, |cfg, _| commands::fit(cfg)),
            Command::Predict(c) => (c, |cfg, _| commands::predict(cfg)),
            Command::Assess(c) => (c, |cfg, _| commands::assess(cfg)),
            Command::Compare(c) => (c, commands::compare),
        };
    let o = c.overrides();
    let cfg = commands::load(&c.config, &o)?;
    f(&cfg, &o)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
