//! Command-line entry point: train, eval, inspect, render, oracle.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowdnav::harness::{
    cmd_eval, cmd_inspect, cmd_train, parse_trajectory_csv, render_trajectories, run_suite,
    HarnessError, OracleSuite, Overrides, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "crowdnav",
    version,
    about = "Crowd-navigation laboratory: crossing simulators, ORCA obstacles, \
             graph/attention encoders, and a discrete soft actor-critic trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML configuration file; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Episode-count override (training episodes or evaluation episodes).
    #[arg(long)]
    episodes: Option<usize>,
    /// Encoder override: rg, aw, sa, or lsa.
    #[arg(long)]
    encoder: Option<String>,
    /// Obstacle-count override.
    #[arg(long)]
    obstacles: Option<usize>,
    /// Scenario override: circle or square.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            episodes: self.episodes,
            encoder: self.encoder.clone(),
            obstacles: self.obstacles,
            scenario: self.scenario.clone(),
            out: self.out.as_ref().map(|p| p.display().to_string()),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write checkpoints, the training CSV, and the
    /// reward curve into the run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint with greedy actions on fresh seeds.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint produced by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also dump per-step trajectories for rendering.
        #[arg(long)]
        trajectories: bool,
    },
    /// Replay one episode from an attention checkpoint, dumping per-step
    /// attention scores and an annotated trajectory rendering.
    Inspect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seed of the replayed episode.
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
    },
    /// Render a trajectory CSV into a static SVG.
    Render {
        /// Trajectory CSV (episode,step,agent_id,x,y,vx,vy).
        input: PathBuf,
        /// Output SVG path.
        #[arg(long, default_value = "trajectory.svg")]
        out: PathBuf,
    },
    /// Run a verification suite: grad, tabular, reward, orca, or inject.
    Oracle {
        /// Suite name, or "all".
        suite: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config } => {
            let cfg = config.resolve()?;
            let out = cmd_train(&cfg)?;
            println!(
                "trained {} episodes into {}",
                out.logs.len(),
                out.run_dir.display()
            );
            println!("final checkpoint: {}", out.final_checkpoint.display());
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            trajectories,
        } => {
            let cfg = config.resolve()?;
            let episodes = config.episodes.unwrap_or(cfg.run.eval_episodes);
            let out_dir = PathBuf::from(&cfg.run.out_dir);
            let result = cmd_eval(&cfg, &checkpoint, episodes, Some(&out_dir), trajectories)?;
            let s = &result.summary;
            println!("episodes:          {}", s.episodes);
            println!("success rate:      {:.3}", s.success_rate);
            match s.time_to_goal {
                Some(t) => println!("time to goal:      {t:.2} s (successes only)"),
                None => println!("time to goal:      n/a (no successes)"),
            }
            println!("collision rate:    {:.3}", s.collision_rate);
            println!("timeout rate:      {:.3}", s.timeout_rate);
            match s.mean_min_distance {
                Some(d) => println!("mean min distance: {d:.3} m"),
                None => println!("mean min distance: n/a"),
            }
            println!("mean reward:       {:.3}", s.mean_reward);
            println!("details in {}", out_dir.display());
            Ok(())
        }
        Command::Inspect {
            config,
            checkpoint,
            episode_seed,
        } => {
            let cfg = config.resolve()?;
            let out_dir = PathBuf::from(&cfg.run.out_dir);
            let out = cmd_inspect(&cfg, &checkpoint, episode_seed, Some(&out_dir))?;
            println!(
                "replayed one episode ({} steps, outcome {}), {} attention rows",
                out.record.trajectory.len() / out.record.agents.len().max(1),
                out.record.outcome.label(),
                out.rows.len()
            );
            println!("details in {}", out_dir.display());
            Ok(())
        }
        Command::Render { input, out } => {
            let text = std::fs::read_to_string(&input).map_err(|e| HarnessError::Io {
                path: input.display().to_string(),
                source: e,
            })?;
            let (rows, meta) = parse_trajectory_csv(&text)?;
            let svg = render_trajectories(&rows, &meta, &Default::default());
            std::fs::write(&out, svg).map_err(|e| HarnessError::Io {
                path: out.display().to_string(),
                source: e,
            })?;
            println!("rendered {} rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Oracle { suite } => {
            let suites: Vec<OracleSuite> = if suite == "all" {
                vec![
                    OracleSuite::Reward,
                    OracleSuite::Inject,
                    OracleSuite::Orca,
                    OracleSuite::Grad,
                    OracleSuite::Tabular,
                ]
            } else {
                vec![OracleSuite::parse(&suite).ok_or_else(|| {
                    HarnessError::Usage(format!(
                        "unknown oracle suite {suite:?} (expected grad, tabular, reward, orca, \
                         inject, or all)"
                    ))
                })?]
            };
            let mut all_pass = true;
            for s in suites {
                for check in run_suite(s)? {
                    check.print();
                    all_pass &= check.pass;
                }
            }
            if all_pass {
                Ok(())
            } else {
                Err(HarnessError::CheckFailed(
                    "one or more oracle checks failed".to_string(),
                ))
            }
        }
    }
}
