use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use irlrec::checkpoint::{load_checkpoint, save_checkpoint, write_atomic};
use irlrec::config::Config;
use irlrec::envsim::Environment;
use irlrec::expert::{collect_expert, train_expert_with, DdpgNets, ExpertDataset};
use irlrec::metrics::format_g6;
use irlrec::pipeline::{self, evaluate, RandomPolicy};
use irlrec::{Error, Result};

const EXPERT_NETS_FILE: &str = "expert_nets.irlr";
const EXPERT_DATA_FILE: &str = "expert.irlr";

#[derive(Parser)]
#[command(name = "irlrec", version, about = "Adversarial imitation learning for recommendation")]
struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the DDPG expert; writes expert_nets.irlr and expert_curve.csv.
    TrainExpert,
    /// Roll the trained expert and store demonstration pairs in expert.irlr.
    CollectExpert {
        /// Expert networks (defaults to OUT/expert_nets.irlr).
        #[arg(long)]
        nets: Option<PathBuf>,
        /// Overrides ddpg.expert_pairs.
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Adversarial imitation training against an expert dataset.
    Train {
        /// Expert dataset (defaults to run.expert_path, then OUT/expert.irlr).
        #[arg(long)]
        expert: Option<PathBuf>,
    },
    /// Evaluate a learner checkpoint, the expert networks, or a random policy.
    Evaluate {
        /// Learner checkpoint written by `train`.
        #[arg(long, conflicts_with_all = ["expert_nets", "random"])]
        checkpoint: Option<PathBuf>,
        /// Expert networks written by `train-expert`.
        #[arg(long, conflicts_with = "random")]
        expert_nets: Option<PathBuf>,
        #[arg(long)]
        random: bool,
        /// Overrides run.eval_episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Sample actions instead of using the policy mean.
        #[arg(long)]
        stochastic: bool,
    },
    /// Sweep GAE λ and PPO clip ε; writes OUT/grid.csv.
    Grid {
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.95, 0.97, 0.99])]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3])]
        clip: Vec<f64>,
    },
    /// Occupancy divergence between a learner checkpoint and the expert data.
    DiagJs {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn expert_path(explicit: &Option<PathBuf>, cfg: &Config, out: &Path) -> PathBuf {
    explicit
        .clone()
        .or_else(|| cfg.run.expert_path.clone())
        .unwrap_or_else(|| out.join(EXPERT_DATA_FILE))
}

fn load_expert(path: &Path) -> Result<ExpertDataset> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "expert dataset {} not found; run collect-expert first",
            path.display()
        )));
    }
    ExpertDataset::from_arrays(&load_checkpoint(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::TrainExpert => {
            let (nets, curve) = train_expert_with(&cfg.run.env, &cfg.ddpg, cfg.run.seed, |episode, ctr, _| {
                eprintln!("episode {episode}: eval ctr {}", format_g6(ctr));
            })?;
            save_checkpoint(out.join(EXPERT_NETS_FILE), &nets.to_arrays())?;
            let mut text = String::from("episode,eval_ctr\n");
            for (episode, ctr) in &curve.evaluations {
                text.push_str(&format!("{episode},{}\n", format_g6(*ctr)));
            }
            write_atomic(&out.join("expert_curve.csv"), text.as_bytes())?;
            println!(
                "expert trained for {} episodes; best eval ctr {} at episode {}{}",
                curve.episodes_run,
                format_g6(curve.best_eval_ctr),
                curve.best_episode,
                if curve.stopped_on_plateau { " (plateau)" } else { "" }
            );
        }
        Command::CollectExpert { nets, pairs } => {
            let nets_path = nets.clone().unwrap_or_else(|| out.join(EXPERT_NETS_FILE));
            let nets = DdpgNets::from_arrays(&load_checkpoint(&nets_path)?)?;
            let n = pairs.unwrap_or(cfg.ddpg.expert_pairs);
            let seed = irlrec::seeding::derive(cfg.run.seed, irlrec::seeding::tags::COLLECT, 0);
            let data = collect_expert(&nets.actor, &cfg.run.env, n, seed)?;
            let path = out.join(EXPERT_DATA_FILE);
            save_checkpoint(&path, &data.to_arrays())?;
            println!(
                "{} pairs from {} episodes, {} clicks per step -> {}",
                data.len(),
                data.episodes,
                format_g6(data.mean_env_reward),
                path.display()
            );
        }
        Command::Train { expert } => {
            let expert = load_expert(&expert_path(expert, &cfg, out))?;
            let mut run_cfg = cfg.run.clone();
            run_cfg.out_dir = Some(out.to_path_buf());
            let outcome = pipeline::train_with_expert(&run_cfg, &expert, |s| {
                eprintln!(
                    "iteration {}: ctr {} disc_loss {} policy_loss {}",
                    s.iteration,
                    format_g6(s.ctr),
                    format_g6(s.disc_loss),
                    format_g6(s.policy_loss)
                );
            })?;
            println!(
                "final 20-iteration ctr {}; artifacts in {}",
                format_g6(outcome.final_ctr(20)),
                out.display()
            );
        }
        Command::Evaluate {
            checkpoint,
            expert_nets,
            random,
            episodes,
            stochastic,
        } => {
            let env = Environment::new(cfg.run.env.clone())?;
            let n = episodes.unwrap_or(cfg.run.eval_episodes);
            let deterministic = !stochastic;
            let eval = if *random {
                evaluate(&RandomPolicy, &env, n, cfg.run.seed, false)?
            } else if let Some(path) = expert_nets {
                let nets = DdpgNets::from_arrays(&load_checkpoint(path)?)?;
                evaluate(&nets.actor, &env, n, cfg.run.seed, true)?
            } else {
                let path = checkpoint.clone().unwrap_or_else(|| out.join(pipeline::CHECKPOINT_FILE));
                let actor = pipeline::load_actor(path)?;
                evaluate(&actor, &env, n, cfg.run.seed, deterministic)?
            };
            println!(
                "ctr {} +/- {} over {n} episodes; mean episode reward {}; mean length {}",
                format_g6(eval.mean_ctr),
                format_g6(eval.half_width),
                format_g6(eval.mean_episode_reward),
                format_g6(eval.mean_length)
            );
        }
        Command::Grid { expert, lambdas, clip } => {
            let expert = load_expert(&expert_path(expert, &cfg, out))?;
            let mut run_cfg = cfg.run.clone();
            run_cfg.out_dir = Some(out.to_path_buf());
            pipeline::run_grid(&run_cfg, &expert, lambdas, clip, |row| {
                eprintln!(
                    "lambda {} eps {}: ctr {} +/- {}",
                    row.gae_lambda,
                    row.clip_eps,
                    format_g6(row.ctr),
                    format_g6(row.half_width)
                );
            })?;
            println!("{}", out.join("grid.csv").display());
        }
        Command::DiagJs {
            checkpoint,
            expert,
            episodes,
        } => {
            let expert = load_expert(&expert_path(expert, &cfg, out))?;
            let actor = pipeline::load_actor(checkpoint)?;
            let js = pipeline::diag_js(
                &actor,
                &expert,
                &cfg.run.env,
                *episodes,
                cfg.run.js_bins,
                cfg.run.projection_seed,
                cfg.run.seed,
            )?;
            println!("occupancy_js {}", format_g6(js));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
