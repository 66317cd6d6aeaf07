//! The train, eval, and inspect commands, plus checkpoint files.
//!
//! A checkpoint file is a small metadata header (magic, TOML describing the
//! encoder architecture and config provenance) followed by the parameter
//! blob; the parameter payload itself is the plain checkpoint byte format of
//! [`crate::diffcore::serialize_params`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{deserialize_params, serialize_params, CheckpointError, ParameterStore};
use crate::dsac::{run_greedy_episode, run_training, CrowdEnv, Dsac, EpisodeLog, Outcome};
use crate::encoders::{CrowdEncoder, StateEncoder};
use crate::harness::render::{
    render_reward_curve, render_trajectories, write_trajectory_csv, AgentMeta, TrajRow,
};
use crate::harness::{HarnessError, RunConfig};
use crate::scalar::Scalar;
use crate::simulator::JointObservation;

const META_MAGIC: &[u8; 8] = b"CNAVMET1";

/// Architecture fingerprint and provenance stored next to the parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub encoder: String,
    pub n_obstacles: usize,
    pub n_actions: usize,
    pub encoded_len: usize,
    pub hidden: usize,
    pub episode: usize,
    pub config_hash: String,
}

pub fn save_checkpoint(
    path: &Path,
    params: &ParameterStore<Scalar>,
    meta: &CheckpointMeta,
) -> Result<(), HarnessError> {
    let meta_text = toml::to_string(meta).expect("metadata serializes");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(META_MAGIC);
    bytes.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    bytes.extend_from_slice(meta_text.as_bytes());
    bytes.extend_from_slice(&serialize_params(params));
    write_bytes(path, &bytes)
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(ParameterStore<Scalar>, CheckpointMeta), HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if bytes.len() < 12 || &bytes[..8] != META_MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + meta_len {
        return Err(CheckpointError::Truncated("checkpoint metadata").into());
    }
    let meta_text = std::str::from_utf8(&bytes[12..12 + meta_len])
        .map_err(|_| CheckpointError::Corrupt("metadata is not utf-8".to_string()))?;
    let meta: CheckpointMeta = toml::from_str(meta_text)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;
    let params = deserialize_params(&bytes[12 + meta_len..])?;
    Ok((params, meta))
}

pub fn checkpoint_path(dir: &Path, episode: Option<usize>) -> PathBuf {
    match episode {
        Some(ep) => dir.join(format!("ckpt_ep{ep:06}.ckpt")),
        None => dir.join("ckpt_final.ckpt"),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    write_bytes(path, text.as_bytes())
}

fn fmt_opt(v: Option<Scalar>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn build_agent(
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Dsac<JointObservation, CrowdEncoder>, HarnessError> {
    let kind = cfg.encoder_kind()?;
    let encoder = CrowdEncoder::new(kind, cfg.run.n_obstacles);
    let agent = Dsac::new(
        encoder,
        crate::simulator::ACTION_COUNT,
        cfg.dsac_config(),
        rng,
    )?;
    Ok(agent)
}

fn meta_for(cfg: &RunConfig, agent_encoded_len: usize, episode: usize) -> CheckpointMeta {
    CheckpointMeta {
        encoder: cfg
            .encoder_kind()
            .map(|k| k.label())
            .unwrap_or_else(|_| "invalid".to_string()),
        n_obstacles: cfg.run.n_obstacles,
        n_actions: crate::simulator::ACTION_COUNT,
        encoded_len: agent_encoded_len,
        hidden: cfg.dsac.hidden,
        episode,
        config_hash: cfg.hash(),
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub run_dir: PathBuf,
    pub logs: Vec<EpisodeLog>,
    pub final_checkpoint: PathBuf,
    pub training_csv: PathBuf,
}

/// Trains per the configuration, streaming the per-episode CSV, writing
/// periodic checkpoints, and emitting the reward curve. Partial artifacts
/// survive an abort: the CSV is flushed per episode.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput, HarnessError> {
    cfg.validate()?;
    let run_dir = PathBuf::from(&cfg.run.out_dir);
    std::fs::create_dir_all(&run_dir).map_err(|e| HarnessError::Io {
        path: run_dir.display().to_string(),
        source: e,
    })?;
    write_text(&run_dir.join("resolved_config.toml"), &cfg.to_toml())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut agent = build_agent(cfg, &mut rng)?;
    let encoded_len = agent.encoder.encoded_len();
    let mut env = CrowdEnv::new(cfg.scenario(), cfg.scenario_params(), cfg.orca_params());

    let csv_path = run_dir.join("training_log.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| HarnessError::Io {
        path: csv_path.display().to_string(),
        source: e,
    })?;
    let mut csv = std::io::BufWriter::new(file);
    let header = "episode,steps,cum_reward,outcome,alpha,critic_loss,policy_loss,buffer_size";
    writeln!(csv, "{header}").map_err(|e| HarnessError::Io {
        path: csv_path.display().to_string(),
        source: e,
    })?;

    let checkpoint_every = cfg.run.checkpoint_every;
    let result = run_training(
        &mut env,
        &mut agent,
        cfg.run.episodes,
        &mut rng,
        |log, agent| {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                log.episode,
                log.steps,
                log.cum_reward,
                log.outcome,
                log.alpha,
                fmt_opt(log.critic_loss),
                fmt_opt(log.policy_loss),
                log.buffer_size
            )
            .and_then(|_| csv.flush())
            .map_err(|e| e.to_string())?;
            let done = log.episode + 1;
            if done % checkpoint_every == 0 {
                let path = checkpoint_path(&run_dir, Some(done));
                save_checkpoint(&path, &agent.params, &meta_for(cfg, encoded_len, done))
                    .map_err(|e| e.to_string())?;
                eprintln!(
                    "episode {done}/{}: reward {:.3}, alpha {:.4}, buffer {}",
                    cfg.run.episodes, log.cum_reward, log.alpha, log.buffer_size
                );
            }
            Ok(())
        },
    );
    // Keep partial artifacts on failure; the CSV is already flushed.
    let logs = result?;

    let final_checkpoint = checkpoint_path(&run_dir, None);
    save_checkpoint(
        &final_checkpoint,
        &agent.params,
        &meta_for(cfg, encoded_len, logs.len()),
    )?;

    let rewards: Vec<Scalar> = logs.iter().map(|l| l.cum_reward).collect();
    write_text(
        &run_dir.join("reward_curve.svg"),
        &render_reward_curve(&rewards, 100),
    )?;

    Ok(TrainOutput {
        run_dir,
        logs,
        final_checkpoint,
        training_csv: csv_path,
    })
}

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub outcome: Outcome,
    /// Seconds from spawn to termination.
    pub duration: Scalar,
    /// Smallest robot-obstacle clearance over the episode.
    pub min_clearance: Scalar,
    pub cum_reward: Scalar,
    pub trajectory: Vec<TrajRow>,
    pub agents: Vec<AgentMeta>,
}

/// Aggregate metrics over an evaluation set: outcome rates partition one,
/// time to goal averages successes only.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: Scalar,
    pub collision_rate: Scalar,
    pub timeout_rate: Scalar,
    pub time_to_goal: Option<Scalar>,
    pub mean_min_distance: Option<Scalar>,
    pub mean_reward: Scalar,
}

impl EvalSummary {
    pub fn from_records(records: &[EpisodeRecord]) -> EvalSummary {
        let n = records.len();
        let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
        let successes: Vec<&EpisodeRecord> = records
            .iter()
            .filter(|r| r.outcome == Outcome::Success)
            .collect();
        let time_to_goal = if successes.is_empty() {
            None
        } else {
            Some(successes.iter().map(|r| r.duration).sum::<Scalar>() / successes.len() as Scalar)
        };
        let finite_clearances: Vec<Scalar> = records
            .iter()
            .map(|r| r.min_clearance)
            .filter(|c| c.is_finite())
            .collect();
        let mean_min_distance = if finite_clearances.is_empty() {
            None
        } else {
            Some(finite_clearances.iter().sum::<Scalar>() / finite_clearances.len() as Scalar)
        };
        EvalSummary {
            episodes: n,
            success_rate: count(Outcome::Success) as Scalar / n.max(1) as Scalar,
            collision_rate: count(Outcome::Collision) as Scalar / n.max(1) as Scalar,
            timeout_rate: count(Outcome::Timeout) as Scalar / n.max(1) as Scalar,
            time_to_goal,
            mean_min_distance,
            mean_reward: records.iter().map(|r| r.cum_reward).sum::<Scalar>()
                / n.max(1) as Scalar,
        }
    }
}

#[derive(Debug)]
pub struct EvalOutput {
    pub summary: EvalSummary,
    pub records: Vec<EpisodeRecord>,
}

/// Seed for evaluation episode `index` under base seed `seed`: a fixed
/// splitting of the base so evaluation draws are independent of training.
fn eval_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn validate_meta(cfg: &RunConfig, meta: &CheckpointMeta) -> Result<(), HarnessError> {
    let requested = cfg.encoder_kind()?.label();
    if meta.encoder != requested {
        return Err(HarnessError::VariantMismatch {
            checkpoint: meta.encoder.clone(),
            requested,
        });
    }
    if meta.hidden != cfg.dsac.hidden || meta.n_actions != crate::simulator::ACTION_COUNT {
        return Err(HarnessError::Config(format!(
            "checkpoint heads ({} hidden, {} actions) do not match the configuration \
             ({} hidden, {} actions)",
            meta.hidden,
            meta.n_actions,
            cfg.dsac.hidden,
            crate::simulator::ACTION_COUNT
        )));
    }
    Ok(())
}

/// Runs greedy-policy evaluation episodes on fresh per-episode seeds and
/// aggregates the outcome metrics. Episodes run in parallel on the frozen
/// parameter snapshot.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    episodes: usize,
    out_dir: Option<&Path>,
    dump_trajectories: bool,
) -> Result<EvalOutput, HarnessError> {
    cfg.validate()?;
    let (params, meta) = load_checkpoint(checkpoint)?;
    validate_meta(cfg, &meta)?;

    let kind = cfg.encoder_kind()?;
    let encoder = CrowdEncoder::new(kind, cfg.run.n_obstacles);
    if encoder.encoded_len() != meta.encoded_len {
        return Err(HarnessError::Config(format!(
            "checkpoint encodes {} values but the configuration encodes {}",
            meta.encoded_len,
            encoder.encoded_len()
        )));
    }
    let agent = Dsac::with_params(
        encoder,
        crate::simulator::ACTION_COUNT,
        cfg.dsac_config(),
        params,
    );

    let records: Result<Vec<EpisodeRecord>, HarnessError> = (0..episodes)
        .into_par_iter()
        .map(|episode| run_eval_episode(cfg, &agent, episode))
        .collect();
    let records = records?;
    let summary = EvalSummary::from_records(&records);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let mut rows = String::from("episode,outcome,duration,min_clearance,cum_reward\n");
        for r in &records {
            let _ = writeln!(
                rows,
                "{},{},{},{},{}",
                r.episode,
                r.outcome.label(),
                r.duration,
                if r.min_clearance.is_finite() {
                    r.min_clearance.to_string()
                } else {
                    String::new()
                },
                r.cum_reward
            );
        }
        write_text(&dir.join("eval_episodes.csv"), &rows)?;

        let mut summary_csv = String::from(
            "episodes,success_rate,time_to_goal,collision_rate,timeout_rate,mean_min_distance,mean_reward\n",
        );
        let _ = writeln!(
            summary_csv,
            "{},{},{},{},{},{},{}",
            summary.episodes,
            summary.success_rate,
            fmt_opt(summary.time_to_goal),
            summary.collision_rate,
            summary.timeout_rate,
            fmt_opt(summary.mean_min_distance),
            summary.mean_reward
        );
        write_text(&dir.join("eval_summary.csv"), &summary_csv)?;

        if dump_trajectories {
            let mut text = String::new();
            for r in &records {
                write_trajectory_csv(&mut text, &r.trajectory, &r.agents);
            }
            write_text(&dir.join("trajectories.csv"), &text)?;
        }
    }

    Ok(EvalOutput { summary, records })
}

fn run_eval_episode(
    cfg: &RunConfig,
    agent: &Dsac<JointObservation, CrowdEncoder>,
    episode: usize,
) -> Result<EpisodeRecord, HarnessError> {
    let mut env = CrowdEnv::new(cfg.scenario(), cfg.scenario_params(), cfg.orca_params());
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed(cfg.run.seed, episode));
    let mut trajectory = Vec::new();
    let mut agents = Vec::new();
    let outcome = run_greedy_episode(&mut env, agent, &mut rng, |step, env, _obs| {
        let world = env.world().expect("episode active");
        if step == 0 {
            agents.push(AgentMeta {
                agent_id: 0,
                radius: world.robot.radius,
                goal: (world.robot.goal.x, world.robot.goal.y),
            });
            for (i, o) in world.obstacles.iter().enumerate() {
                agents.push(AgentMeta {
                    agent_id: i + 1,
                    radius: o.radius,
                    goal: (o.goal.x, o.goal.y),
                });
            }
        }
        trajectory.push(TrajRow {
            episode,
            step,
            agent_id: 0,
            x: world.robot.position.x,
            y: world.robot.position.y,
            vx: world.robot.velocity.x,
            vy: world.robot.velocity.y,
        });
        for (i, o) in world.obstacles.iter().enumerate() {
            trajectory.push(TrajRow {
                episode,
                step,
                agent_id: i + 1,
                x: o.position.x,
                y: o.position.y,
                vx: o.velocity.x,
                vy: o.velocity.y,
            });
        }
        Ok(())
    })?;

    Ok(EpisodeRecord {
        episode,
        outcome: outcome.outcome.unwrap_or(Outcome::Timeout),
        duration: outcome.steps as Scalar * cfg.sim.dt,
        min_clearance: outcome.min_clearance,
        cum_reward: outcome.cum_reward,
        trajectory,
        agents,
    })
}

/// Attention CSV row emitted by `cmd_inspect`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub episode: usize,
    pub step: usize,
    pub obstacle_id: usize,
    pub raw_score: Scalar,
    pub weight: Scalar,
}

#[derive(Debug)]
pub struct InspectOutput {
    pub rows: Vec<AttentionRow>,
    pub record: EpisodeRecord,
}

/// Replays one greedy episode on an attention checkpoint, dumping the
/// per-step attention report and an annotated trajectory rendering.
pub fn cmd_inspect(
    cfg: &RunConfig,
    checkpoint: &Path,
    episode_seed: u64,
    out_dir: Option<&Path>,
) -> Result<InspectOutput, HarnessError> {
    cfg.validate()?;
    let kind = cfg.encoder_kind()?;
    if !kind.has_attention() {
        return Err(HarnessError::NoAttention {
            encoder: kind.label(),
        });
    }
    let (params, meta) = load_checkpoint(checkpoint)?;
    validate_meta(cfg, &meta)?;

    let encoder = CrowdEncoder::new(kind, cfg.run.n_obstacles);
    let agent = Dsac::with_params(
        encoder,
        crate::simulator::ACTION_COUNT,
        cfg.dsac_config(),
        params,
    );

    let mut env = CrowdEnv::new(cfg.scenario(), cfg.scenario_params(), cfg.orca_params());
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let mut rows: Vec<AttentionRow> = Vec::new();
    let mut trajectory = Vec::new();
    let mut agents = Vec::new();

    let outcome = run_greedy_episode(&mut env, &agent, &mut rng, |step, env, obs| {
        let world = env.world().expect("episode active");
        if step == 0 {
            agents.push(AgentMeta {
                agent_id: 0,
                radius: world.robot.radius,
                goal: (world.robot.goal.x, world.robot.goal.y),
            });
            for (i, o) in world.obstacles.iter().enumerate() {
                agents.push(AgentMeta {
                    agent_id: i + 1,
                    radius: o.radius,
                    goal: (o.goal.x, o.goal.y),
                });
            }
        }
        // The acting network's attention over the state it acts from.
        let report = agent
            .encoder
            .attention_report(&agent.params, "policy.enc", obs)
            .map_err(|e| e.to_string())?
            .expect("attention-family encoder");
        for (i, (&score, &weight)) in report
            .raw_scores
            .iter()
            .zip(&report.weights)
            .enumerate()
        {
            rows.push(AttentionRow {
                episode: 0,
                step,
                obstacle_id: i,
                raw_score: score,
                weight,
            });
        }
        trajectory.push(TrajRow {
            episode: 0,
            step,
            agent_id: 0,
            x: world.robot.position.x,
            y: world.robot.position.y,
            vx: world.robot.velocity.x,
            vy: world.robot.velocity.y,
        });
        for (i, o) in world.obstacles.iter().enumerate() {
            trajectory.push(TrajRow {
                episode: 0,
                step,
                agent_id: i + 1,
                x: o.position.x,
                y: o.position.y,
                vx: o.velocity.x,
                vy: o.velocity.y,
            });
        }
        Ok(())
    })?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let mut csv = String::from("episode,step,obstacle_id,raw_score,softmax_weight\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                r.episode, r.step, r.obstacle_id, r.raw_score, r.weight
            );
        }
        write_text(&dir.join("attention.csv"), &csv)?;

        let mut annotations: BTreeMap<(usize, usize), String> = BTreeMap::new();
        for r in &rows {
            annotations.insert((r.obstacle_id + 1, r.step), format!("{:.2}", r.weight));
        }
        write_text(
            &dir.join("inspect_trajectory.svg"),
            &render_trajectories(&trajectory, &agents, &annotations),
        )?;

        let mut traj_csv = String::new();
        write_trajectory_csv(&mut traj_csv, &trajectory, &agents);
        write_text(&dir.join("inspect_trajectory.csv"), &traj_csv)?;
    }

    Ok(InspectOutput {
        rows,
        record: EpisodeRecord {
            episode: 0,
            outcome: outcome.outcome.unwrap_or(Outcome::Timeout),
            duration: outcome.steps as Scalar * cfg.sim.dt,
            min_clearance: outcome.min_clearance,
            cum_reward: outcome.cum_reward,
            trajectory,
            agents,
        },
    })
}
