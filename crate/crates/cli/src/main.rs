mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

use config::CliConfig;

/// Raw-audio spoofing detector: train, score, and evaluate.
#[derive(Parser)]
#[command(name = "aasist", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the built-in synthetic dataset and write a checkpoint
    Train {
        /// Config file (`key = value` lines, `#` comments)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed or comma-separated seeds, e.g. `--seed 1,2,3`
        #[arg(long)]
        seed: Option<String>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Score listed WAV files with a trained checkpoint
    Score {
        /// Trained checkpoint (`model.aasf`)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text file with one WAV path per line
        #[arg(long)]
        list: PathBuf,
        /// Output score file (`id<TAB>score` lines)
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the equal error rate from scores and labels
    Eval {
        /// Score file (`id<TAB>score` lines)
        #[arg(long)]
        scores: PathBuf,
        /// Label file (`id<TAB>bonafide|spoof` lines)
        #[arg(long)]
        labels: PathBuf,
    },
    /// Verify gradients against finite differences (debug-size model)
    Gradcheck {
        /// Elements probed per parameter tensor
        #[arg(long, default_value_t = 3)]
        samples: usize,
        /// Sampling seed
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Print the architecture summary for a config
    Info {
        /// Config file (`key = value` lines, `#` comments)
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<CliConfig> {
    match path {
        None => Ok(CliConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(CliConfig::parse(&text)?)
        }
    }
}

/// Seeds from `--seed` (comma-separated), falling back to the config file.
/// There is deliberately no wall-clock default.
fn parse_seeds(flag: &Option<String>, cfg: &CliConfig) -> anyhow::Result<Vec<u64>> {
    if let Some(s) = flag {
        let mut seeds = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            seeds.push(
                part.parse::<u64>()
                    .map_err(|_| anyhow!("bad seed `{part}` (expected a non-negative integer)"))?,
            );
        }
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != seeds.len() {
            bail!("duplicate seeds in --seed would overwrite each other's output");
        }
        Ok(seeds)
    } else if let Some(s) = cfg.seed {
        Ok(vec![s])
    } else {
        bail!("a seed is required: pass --seed or set `seed =` in the config");
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Train { config, seed, out } => {
            let cfg = load_config(config)?;
            let seeds = parse_seeds(seed, &cfg)?;
            commands::cmd_train(&cfg, &seeds, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Score { checkpoint, list, out } => {
            let skipped = commands::cmd_score(checkpoint, list, out)?;
            Ok(if skipped { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Cmd::Eval { scores, labels } => {
            println!("{}", commands::cmd_eval(scores, labels)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gradcheck { samples, seed } => {
            let (text, passed) = commands::cmd_gradcheck(*samples, *seed);
            print!("{text}");
            Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Info { config } => {
            let cfg = load_config(config)?;
            print!("{}", commands::cmd_info(&cfg));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
