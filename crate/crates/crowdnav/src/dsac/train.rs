//! Episode loop: roll sampled-action episodes, flush each episode's
//! transitions into the replay buffer at episode end, and update the networks
//! every environment step once the buffer holds a full batch.

use rand_chacha::ChaCha8Rng;

use super::{ActionMode, Dsac, DsacError, Environment, ReplayBuffer, Transition, UpdateStats};
use crate::encoders::StateEncoder;
use crate::scalar::Scalar;

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: usize,
    pub cum_reward: Scalar,
    /// Terminal outcome label, or "truncated" for a cut-off episode.
    pub outcome: String,
    pub alpha: Scalar,
    pub critic_loss: Option<Scalar>,
    pub policy_loss: Option<Scalar>,
    pub buffer_size: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("episode {episode} step {step}: {source}")]
    AtStep {
        episode: usize,
        step: usize,
        #[source]
        source: DsacError,
    },
    #[error("episode hook failed: {0}")]
    Hook(String),
}

/// Runs `episodes` training episodes, invoking `on_episode` after each one
/// (checkpointing, CSV streaming). Returns the per-episode log.
pub fn run_training<EnvT, Enc>(
    env: &mut EnvT,
    agent: &mut Dsac<EnvT::Obs, Enc>,
    episodes: usize,
    rng: &mut ChaCha8Rng,
    mut on_episode: impl FnMut(&EpisodeLog, &Dsac<EnvT::Obs, Enc>) -> Result<(), String>,
) -> Result<Vec<EpisodeLog>, TrainError>
where
    EnvT: Environment,
    Enc: StateEncoder<EnvT::Obs>,
{
    let mut buffer: ReplayBuffer<EnvT::Obs> = ReplayBuffer::new(agent.cfg.replay_capacity);
    let mut logs = Vec::with_capacity(episodes);

    for episode in 0..episodes {
        let at = |step: usize| move |source: DsacError| TrainError::AtStep { episode, step, source };

        let mut obs = env.reset(rng).map_err(DsacError::from).map_err(at(0))?;
        let mut episode_transitions: Vec<Transition<EnvT::Obs>> = Vec::new();
        let mut cum_reward = 0.0;
        let mut steps = 0;
        let mut outcome = String::from("truncated");
        let mut last_stats: Option<UpdateStats> = None;

        loop {
            let action = agent
                .select_action(&obs, ActionMode::Sample, rng)
                .map_err(at(steps))?;
            let out = env
                .step(action, rng)
                .map_err(DsacError::from)
                .map_err(at(steps))?;
            episode_transitions.push(Transition {
                obs: obs.clone(),
                action,
                reward: out.reward,
                next_obs: out.obs.clone(),
                done: out.done,
            });
            obs = out.obs;
            cum_reward += out.reward;
            steps += 1;

            if agent.cfg.update_every_step {
                if let Some(stats) = agent.update_step(&buffer, rng).map_err(at(steps))? {
                    last_stats = Some(stats);
                }
            }

            if out.done || out.truncated {
                if let Some(o) = out.outcome {
                    outcome = o.label().to_string();
                }
                break;
            }
        }

        for t in episode_transitions.drain(..) {
            buffer.push(t);
        }
        if !agent.cfg.update_every_step {
            if let Some(stats) = agent.update_step(&buffer, rng).map_err(at(steps))? {
                last_stats = Some(stats);
            }
        }

        let log = EpisodeLog {
            episode,
            steps,
            cum_reward,
            outcome,
            alpha: agent.alpha(),
            critic_loss: last_stats.map(|s| s.critic_loss),
            policy_loss: last_stats.map(|s| s.policy_loss),
            buffer_size: buffer.len(),
        };
        on_episode(&log, agent).map_err(TrainError::Hook)?;
        logs.push(log);
    }
    Ok(logs)
}

/// Rolls one greedy-policy episode on frozen parameters, reporting each step
/// to `on_step` (trajectory and attention dumps).
pub fn run_greedy_episode<EnvT, Enc>(
    env: &mut EnvT,
    agent: &Dsac<EnvT::Obs, Enc>,
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(usize, &EnvT, &EnvT::Obs) -> Result<(), String>,
) -> Result<GreedyEpisode, TrainError>
where
    EnvT: Environment,
    Enc: StateEncoder<EnvT::Obs>,
{
    let at = |step: usize| move |source: DsacError| TrainError::AtStep { episode: 0, step, source };
    let mut obs = env.reset(rng).map_err(DsacError::from).map_err(at(0))?;
    on_step(0, env, &obs).map_err(TrainError::Hook)?;

    let mut steps = 0;
    let mut cum_reward = 0.0;
    let mut min_clearance = Scalar::INFINITY;
    loop {
        let action = agent
            .select_action(&obs, ActionMode::Greedy, rng)
            .map_err(at(steps))?;
        let out = env
            .step(action, rng)
            .map_err(DsacError::from)
            .map_err(at(steps))?;
        steps += 1;
        cum_reward += out.reward;
        min_clearance = min_clearance.min(out.clearance);
        obs = out.obs;
        on_step(steps, env, &obs).map_err(TrainError::Hook)?;
        if out.done || out.truncated {
            return Ok(GreedyEpisode {
                steps,
                cum_reward,
                min_clearance,
                outcome: out.outcome,
            });
        }
        if steps > 100_000 {
            return Err(TrainError::Hook(
                "greedy episode failed to terminate".to_string(),
            ));
        }
    }
}

/// Summary of one greedy rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyEpisode {
    pub steps: usize,
    pub cum_reward: Scalar,
    pub min_clearance: Scalar,
    pub outcome: Option<super::Outcome>,
}
