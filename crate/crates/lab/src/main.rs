use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mlb_lab::experiment::run_experiment;
use mlb_lab::summary::{render, summarize, write_summary};
use mlb_lab::{Algorithm, LabConfig};

#[derive(Parser)]
#[command(name = "mlb", version, about = "Mobility load-balancing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write result files, then a summary.
    Run(RunArgs),
    /// Rebuild summary.csv and gains.csv from a result directory.
    Summarize { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithms to run.
    #[arg(long, value_delimiter = ',')]
    algo: Option<Vec<Algorithm>>,
    /// UE counts.
    #[arg(long, value_delimiter = ',')]
    ues: Option<Vec<usize>>,
    /// Share of mobile UEs, one scenario per value.
    #[arg(long, value_delimiter = ',')]
    mobility_fraction: Option<Vec<f64>>,
    /// Speed of mobile UEs in m/s.
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    episodes: Option<u64>,
    /// Agent steps per episode.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 30 UEs, seeds 1-3, 40 episodes (explicit flags still win).
    #[arg(long)]
    quick: bool,
    /// Save the trained networks of CDQL runs.
    #[arg(long)]
    checkpoints: bool,
}

impl RunArgs {
    fn resolve(self) -> anyhow::Result<LabConfig> {
        let mut cfg = match &self.config {
            Some(path) => LabConfig::from_path(path)?,
            None => LabConfig::default(),
        };
        let plan = &mut cfg.plan;
        if self.quick {
            plan.apply_quick();
        }
        if let Some(v) = self.algo {
            plan.algorithms = v;
        }
        if let Some(v) = self.ues {
            plan.ue_counts = v;
        }
        if let Some(v) = self.mobility_fraction {
            plan.mobility_fractions = v;
        }
        if let Some(v) = self.speed {
            plan.speed_mps = v;
        }
        if let Some(v) = self.seeds {
            plan.seeds = v;
            plan.replications = None;
        }
        if let Some(v) = self.episodes {
            plan.episodes = v;
        }
        if let Some(v) = self.steps {
            plan.steps_per_episode = v;
        }
        if let Some(v) = self.out {
            plan.output_dir = v;
        }
        plan.save_checkpoints |= self.checkpoints;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let out = cfg.plan.output_dir.clone();
            run_experiment(&cfg, |key, seed| {
                eprintln!("done {} seed {seed}", key.dir_name())
            })
            .context("experiment failed")?;
            let summary = summarize(&out)?;
            write_summary(&out, &summary)?;
            print!("{}", render(&summary));
        }
        Command::Summarize { dir } => {
            let summary = summarize(&dir)?;
            write_summary(&dir, &summary)?;
            print!("{}", render(&summary));
        }
    }
    Ok(())
}
