use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use satprecode::config::ExperimentConfig;
use satprecode::harness::{self, TrainOptions};
use satprecode::Error;

/// Satellite downlink precoding: analytical baselines and learned precoders.
#[derive(Parser)]
#[command(name = "satprecode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Selection {
    /// Comma-separated precoder names, overrides the config.
    #[arg(long, value_delimiter = ',')]
    precoder: Option<Vec<String>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    Vanilla,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned precoder.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
        /// Continue from checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many episodes in this run.
        #[arg(long)]
        max_episodes: Option<usize>,
    },
    /// Monte Carlo mean sum rate over an error grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        selection: Selection,
        /// Draws per grid point, overrides the config.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Per-user beam gain over the AOD cosine for one draw.
    Beampattern {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        selection: Selection,
        #[arg(long, default_value_t = 1001)]
        points: usize,
    },
    /// Median precoding time per call.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        selection: Selection,
        #[arg(long, default_value_t = 10_000)]
        calls: usize,
    },
    /// First-layer actor weight mass per input group.
    WeightReport {
        /// Agent checkpoint or training output directory.
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn select(cfg: &mut ExperimentConfig, selection: &Selection) {
    if let Some(p) = &selection.precoder {
        cfg.precoders = p.clone();
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train {
            common,
            ablation,
            resume,
            max_episodes,
        } => {
            let mut cfg = load(&common)?;
            if let Some(Ablation::Vanilla) = ablation {
                cfg.train = cfg.train.vanilla();
            }
            if cfg.train.is_long_running() {
                eprintln!(
                    "warning: {} episodes x {} steps is a long-running configuration",
                    cfg.train.episodes, cfg.train.steps_per_episode
                );
            }
            let summary = harness::cmd_train(&cfg, TrainOptions { resume, max_episodes })?;
            if let Some(e) = summary.resumed_at {
                eprintln!("resumed at episode {e}");
            }
            if let Some(last) = summary.rows.last() {
                println!(
                    "episode {} mean reward {:.4} (smoothed {:.4}, mmse {:.4})",
                    last.episode, last.mean_reward, last.smoothed_reward, last.mmse_reward
                );
            }
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Sweep {
            common,
            selection,
            draws,
        } => {
            let mut cfg = load(&common)?;
            select(&mut cfg, &selection);
            if let Some(d) = draws {
                cfg.n_eval_draws = d;
            }
            for r in harness::cmd_sweep(&cfg)? {
                println!(
                    "{:<10} {}={:<8} {:.4} +- {:.4}",
                    r.precoder, r.parameter, r.error_point, r.mean_rate, r.std_err
                );
            }
        }
        Command::Beampattern {
            common,
            selection,
            points,
        } => {
            let mut cfg = load(&common)?;
            select(&mut cfg, &selection);
            for (name, rate) in harness::cmd_beampattern(&cfg, points)?.rates {
                println!("{name:<10} {rate:.4}");
            }
        }
        Command::Bench {
            common,
            selection,
            calls,
        } => {
            let mut cfg = load(&common)?;
            select(&mut cfg, &selection);
            for r in harness::cmd_bench(&cfg, calls)? {
                println!("{:<10} N={:<3} {:>12.0} ns", r.precoder, r.antennas_per_satellite, r.median_ns);
            }
        }
        Command::WeightReport { checkpoint, out } => {
            for r in harness::cmd_weight_report(&checkpoint, out.as_deref())? {
                println!(
                    "agent {}: phase/amplitude {:.3}, inner/outer amplitude {:.3}, inner/outer phase {:.3}",
                    r.agent, r.phase_to_amplitude, r.inner_to_outer_amplitude, r.inner_to_outer_phase
                );
                if let (Some(a), Some(p)) = (r.own_to_other_amplitude, r.own_to_other_phase) {
                    println!("agent {}: own/other amplitude {a:.3}, own/other phase {p:.3}", r.agent);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
