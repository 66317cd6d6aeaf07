//! Discrete soft actor-critic: twin critics over all actions, a categorical
//! policy, automatic temperature tuning, and per-step replay updates.
//!
//! The critic is an encoder plus two prediction heads; the policy is a
//! separate encoder plus one head. A target copy of the critic (encoder and
//! heads) provides bootstrap values and trails the online critic through
//! Polyak averaging. All expectations over the discrete action set are
//! computed in closed form.

mod env;
mod replay;
mod train;

pub use env::{CrowdEnv, Environment, Outcome, Scenario, StepOutcome};
pub use replay::{ReplayBuffer, Transition};
pub use train::{run_greedy_episode, run_training, EpisodeLog, GreedyEpisode, TrainError};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffcore::{
    adam_step, AdamState, DiffError, GradientStore, MlpSpec, ParameterStore, Tape,
};
use crate::encoders::StateEncoder;
use crate::scalar::Scalar;
use crate::simulator::SimError;

pub const CRITIC_PREFIX: &str = "critic";
pub const POLICY_PREFIX: &str = "policy";
pub const LOG_ALPHA: &str = "log_alpha";

/// Fixed chunk count for batch-gradient parallelism. A constant (rather than
/// the thread count) keeps gradient summation order, and therefore training
/// trajectories, identical across machines.
const GRAD_CHUNKS: usize = 8;

/// Bounds on the log-temperature. Without them the temperature controller
/// can wind up: early TD noise keeps the measured policy entropy below the
/// target, the temperature ratchets upward every update, and the inflated
/// entropy bonus in the bootstrap feeds the noise back into the critic.
const LOG_ALPHA_MIN: Scalar = -9.2103403719761836; // ln(1e-4)
const LOG_ALPHA_MAX: Scalar = std::f64::consts::LN_2;

#[derive(Debug, thiserror::Error)]
pub enum DsacError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsacConfig {
    pub gamma: Scalar,
    pub tau: Scalar,
    pub lr: Scalar,
    pub batch_size: usize,
    pub alpha_init: Scalar,
    pub auto_entropy: bool,
    /// Entropy target; defaults to `0.98 * ln(n_actions)` when unset.
    pub target_entropy: Option<Scalar>,
    pub replay_capacity: usize,
    /// Update after every environment step; otherwise once per episode.
    pub update_every_step: bool,
    /// Hidden width of both prediction heads.
    pub hidden: usize,
    /// Temperature learning rate; defaults to ten times `lr`. The critic
    /// inherits whatever value inflation the temperature's entropy bonus
    /// causes, so the controller has to reach its equilibrium much faster
    /// than the networks train.
    pub alpha_lr: Option<Scalar>,
}

impl Default for DsacConfig {
    fn default() -> Self {
        DsacConfig {
            gamma: 0.95,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 128,
            alpha_init: 0.2,
            auto_entropy: true,
            target_entropy: None,
            replay_capacity: 100_000,
            update_every_step: true,
            hidden: 128,
            alpha_lr: None,
        }
    }
}

impl DsacConfig {
    /// Entropy target for the temperature controller. The default leaves
    /// room for exploitation: a target near the uniform maximum pins the
    /// policy to noise-driven sharpness that the controller chases with an
    /// ever-growing temperature, while a third of the maximum lets the
    /// policy concentrate on a handful of good actions.
    pub fn resolved_target_entropy(&self, n_actions: usize) -> Scalar {
        self.target_entropy
            .unwrap_or_else(|| 0.35 * (n_actions as Scalar).ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// Losses and temperature after one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: Scalar,
    pub policy_loss: Scalar,
    pub alpha_loss: Scalar,
    pub alpha: Scalar,
}

pub struct Dsac<O, E> {
    pub cfg: DsacConfig,
    pub encoder: E,
    pub n_actions: usize,
    head: MlpSpec,
    /// Online parameters: critic encoder/heads, policy encoder/head, and the
    /// log-temperature.
    pub params: ParameterStore<Scalar>,
    /// Target copy of the critic subtree; only touched by the soft update.
    target: ParameterStore<Scalar>,
    opt_critic: AdamState<Scalar>,
    opt_policy: AdamState<Scalar>,
    opt_alpha: AdamState<Scalar>,
    _obs: std::marker::PhantomData<fn(O) -> O>,
}

struct ChunkGrads {
    critic: GradientStore<Scalar>,
    policy: GradientStore<Scalar>,
    critic_loss_sum: Scalar,
    policy_loss_sum: Scalar,
    /// Per-sample policy distributions (p, log p), fixed for the temperature
    /// step.
    dists: Vec<(Vec<Scalar>, Vec<Scalar>)>,
}

impl<O: Clone + Send + Sync, E: StateEncoder<O>> Dsac<O, E> {
    pub fn new(
        encoder: E,
        n_actions: usize,
        cfg: DsacConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, DsacError> {
        let head = MlpSpec::relu_hidden(&[encoder.encoded_len(), cfg.hidden, cfg.hidden, n_actions]);
        let mut params = ParameterStore::new();
        encoder.init_params(&mut params, &format!("{CRITIC_PREFIX}.enc"), rng)?;
        head.init_params(&mut params, &format!("{CRITIC_PREFIX}.q1"), rng)?;
        head.init_params(&mut params, &format!("{CRITIC_PREFIX}.q2"), rng)?;
        encoder.init_params(&mut params, &format!("{POLICY_PREFIX}.enc"), rng)?;
        head.init_params(&mut params, &format!("{POLICY_PREFIX}.head"), rng)?;
        params.insert_scalar(LOG_ALPHA, cfg.alpha_init.ln())?;

        let target = params.subset(CRITIC_PREFIX);
        let opt_critic = AdamState::new(&params, cfg.lr, |n| n.starts_with(CRITIC_PREFIX));
        let opt_policy = AdamState::new(&params, cfg.lr, |n| n.starts_with(POLICY_PREFIX));
        let alpha_lr = cfg.alpha_lr.unwrap_or(cfg.lr * 10.0);
        let opt_alpha = AdamState::new(&params, alpha_lr, |n| n == LOG_ALPHA);
        Ok(Dsac {
            cfg,
            encoder,
            n_actions,
            head,
            params,
            target,
            opt_critic,
            opt_policy,
            opt_alpha,
            _obs: std::marker::PhantomData,
        })
    }

    /// Rebuilds an agent around previously trained parameters.
    pub fn with_params(
        encoder: E,
        n_actions: usize,
        cfg: DsacConfig,
        params: ParameterStore<Scalar>,
    ) -> Self {
        let head = MlpSpec::relu_hidden(&[encoder.encoded_len(), cfg.hidden, cfg.hidden, n_actions]);
        let target = params.subset(CRITIC_PREFIX);
        let opt_critic = AdamState::new(&params, cfg.lr, |n| n.starts_with(CRITIC_PREFIX));
        let opt_policy = AdamState::new(&params, cfg.lr, |n| n.starts_with(POLICY_PREFIX));
        let alpha_lr = cfg.alpha_lr.unwrap_or(cfg.lr * 10.0);
        let opt_alpha = AdamState::new(&params, alpha_lr, |n| n == LOG_ALPHA);
        Dsac {
            cfg,
            encoder,
            n_actions,
            head,
            params,
            target,
            opt_critic,
            opt_policy,
            opt_alpha,
            _obs: std::marker::PhantomData,
        }
    }

    pub fn alpha(&self) -> Scalar {
        self.params
            .scalar(LOG_ALPHA)
            .map(Scalar::exp)
            .unwrap_or(self.cfg.alpha_init)
    }

    pub fn target_params(&self) -> &ParameterStore<Scalar> {
        &self.target
    }

    pub fn head_spec(&self) -> &MlpSpec {
        &self.head
    }

    /// Policy distribution and stable log-probabilities over an encoded state.
    pub fn policy_forward(
        &self,
        store: &ParameterStore<Scalar>,
        encoded: &[Scalar],
    ) -> Result<(Vec<Scalar>, Vec<Scalar>), DsacError> {
        let mut tape = Tape::new(store);
        let x = tape.constant(encoded.to_vec());
        let logits = self
            .head
            .record(&mut tape, &format!("{POLICY_PREFIX}.head"), x)?;
        let p = tape.softmax(logits);
        let log_p = tape.log_softmax(logits);
        Ok((tape.value(p).to_vec(), tape.value(log_p).to_vec()))
    }

    /// Twin Q vectors over an encoded state.
    pub fn critic_forward(
        &self,
        store: &ParameterStore<Scalar>,
        encoded: &[Scalar],
    ) -> Result<(Vec<Scalar>, Vec<Scalar>), DsacError> {
        let mut tape = Tape::new(store);
        let x = tape.constant(encoded.to_vec());
        let q1 = self
            .head
            .record(&mut tape, &format!("{CRITIC_PREFIX}.q1"), x)?;
        let q2 = self
            .head
            .record(&mut tape, &format!("{CRITIC_PREFIX}.q2"), x)?;
        Ok((tape.value(q1).to_vec(), tape.value(q2).to_vec()))
    }

    /// Policy distribution for an observation (encoder plus head).
    pub fn policy_distribution(
        &self,
        store: &ParameterStore<Scalar>,
        obs: &O,
    ) -> Result<(Vec<Scalar>, Vec<Scalar>), DsacError> {
        let mut tape = Tape::new(store);
        let enc = self
            .encoder
            .record(&mut tape, &format!("{POLICY_PREFIX}.enc"), obs)?;
        let logits = self
            .head
            .record(&mut tape, &format!("{POLICY_PREFIX}.head"), enc)?;
        let p = tape.softmax(logits);
        let log_p = tape.log_softmax(logits);
        Ok((tape.value(p).to_vec(), tape.value(log_p).to_vec()))
    }

    /// Twin Q vectors for an observation through `store`'s critic.
    pub fn critic_values(
        &self,
        store: &ParameterStore<Scalar>,
        obs: &O,
    ) -> Result<(Vec<Scalar>, Vec<Scalar>), DsacError> {
        let mut tape = Tape::new(store);
        let enc = self
            .encoder
            .record(&mut tape, &format!("{CRITIC_PREFIX}.enc"), obs)?;
        let q1 = self
            .head
            .record(&mut tape, &format!("{CRITIC_PREFIX}.q1"), enc)?;
        let q2 = self
            .head
            .record(&mut tape, &format!("{CRITIC_PREFIX}.q2"), enc)?;
        Ok((tape.value(q1).to_vec(), tape.value(q2).to_vec()))
    }

    /// Draws an action from the policy (categorical or greedy with
    /// lowest-index tie-break).
    pub fn select_action(
        &self,
        obs: &O,
        mode: ActionMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, DsacError> {
        let (p, _) = self.policy_distribution(&self.params, obs)?;
        Ok(match mode {
            ActionMode::Greedy => greedy_index(&p),
            ActionMode::Sample => sample_index(&p, rng),
        })
    }

    /// Discounted bootstrap target per transition: the reward plus the
    /// expected entropy-regularised next value over the target critic,
    /// zeroed on terminal transitions.
    pub fn compute_target(&self, batch: &[&Transition<O>]) -> Result<Vec<Scalar>, DsacError> {
        let alpha = self.alpha();
        batch
            .iter()
            .map(|t| self.target_for(t, alpha))
            .collect()
    }

    fn target_for(&self, t: &Transition<O>, alpha: Scalar) -> Result<Scalar, DsacError> {
        if t.done {
            return Ok(t.reward);
        }
        let (p_next, logp_next) = self.policy_distribution(&self.params, &t.next_obs)?;
        let (q1_next, q2_next) = self.critic_values(&self.target, &t.next_obs)?;
        let mut expectation = 0.0;
        for a in 0..self.n_actions {
            expectation += p_next[a] * (q1_next[a].min(q2_next[a]) - alpha * logp_next[a]);
        }
        Ok(t.reward + self.cfg.gamma * expectation)
    }

    /// Summed squared errors of both critics at the taken actions against
    /// fixed targets; the batch mean of the per-sample values is the loss.
    pub fn critic_loss(
        &self,
        batch: &[&Transition<O>],
        targets: &[Scalar],
    ) -> Result<Scalar, DsacError> {
        let mut total = 0.0;
        for (t, &y) in batch.iter().zip(targets) {
            let (q1, q2) = self.critic_values(&self.params, &t.obs)?;
            let d1 = q1[t.action] - y;
            let d2 = q2[t.action] - y;
            total += d1 * d1 + d2 * d2;
        }
        Ok(total / batch.len() as Scalar)
    }

    /// Mean of `-(E[Q] + alpha * H)` over the batch, with the critic values
    /// held constant.
    pub fn policy_loss(&self, batch: &[&Transition<O>], alpha: Scalar) -> Result<Scalar, DsacError> {
        let mut total = 0.0;
        for t in batch {
            let (p, logp) = self.policy_distribution(&self.params, &t.obs)?;
            let (q1, q2) = self.critic_values(&self.params, &t.obs)?;
            let mut expected_q = 0.0;
            let mut entropy = 0.0;
            for a in 0..self.n_actions {
                expected_q += q1[a].min(q2[a]) * p[a];
                entropy -= p[a] * logp[a];
            }
            total += -(expected_q + alpha * entropy);
        }
        Ok(total / batch.len() as Scalar)
    }

    /// Temperature loss over fixed policy distributions: the batch mean of
    /// `p . (-alpha log p - alpha H_target)` with `alpha = exp(log_alpha)`
    /// live on the tape. Returns the loss node's tape for backward.
    fn record_temperature_loss(
        tape: &mut Tape<Scalar>,
        dists: &[(Vec<Scalar>, Vec<Scalar>)],
        target_entropy: Scalar,
    ) -> Result<crate::diffcore::NodeId, DsacError> {
        let log_alpha = tape.param(LOG_ALPHA)?;
        let alpha = tape.exp(log_alpha);
        let mut acc: Option<crate::diffcore::NodeId> = None;
        for (p, logp) in dists {
            let n = p.len();
            let neg_logp = tape.constant(logp.iter().map(|l| -l).collect());
            let entropy_side = tape.scalar_mul(alpha, neg_logp);
            let h_bar = tape.constant(vec![target_entropy; n]);
            let target_side = tape.scalar_mul(alpha, h_bar);
            let inner = tape.sub(entropy_side, target_side);
            let p_node = tape.constant(p.clone());
            let term = tape.dot(p_node, inner);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
        let total = acc.expect("temperature loss over empty batch");
        Ok(tape.scale(total, 1.0 / dists.len() as Scalar))
    }

    /// Temperature loss value for given policy distributions.
    pub fn temperature_loss(
        &self,
        dists: &[(Vec<Scalar>, Vec<Scalar>)],
        target_entropy: Scalar,
    ) -> Result<Scalar, DsacError> {
        let mut tape = Tape::new(&self.params);
        let loss = Self::record_temperature_loss(&mut tape, dists, target_entropy)?;
        Ok(tape.scalar_value(loss))
    }

    /// Gradients and losses for one chunk of the batch. Pure in the
    /// parameters: safe to run for several chunks in parallel.
    fn chunk_grads(&self, chunk: &[&Transition<O>], alpha: Scalar) -> Result<ChunkGrads, DsacError> {
        let mut out = ChunkGrads {
            critic: GradientStore::new(),
            policy: GradientStore::new(),
            critic_loss_sum: 0.0,
            policy_loss_sum: 0.0,
            dists: Vec::with_capacity(chunk.len()),
        };
        let critic_enc = format!("{CRITIC_PREFIX}.enc");
        let critic_q1 = format!("{CRITIC_PREFIX}.q1");
        let critic_q2 = format!("{CRITIC_PREFIX}.q2");
        let policy_enc = format!("{POLICY_PREFIX}.enc");
        let policy_head = format!("{POLICY_PREFIX}.head");

        for t in chunk {
            let y = self.target_for(t, alpha)?;

            // Critic pass with gradients; the target is a constant.
            let mut tape = Tape::new(&self.params);
            let enc = self.encoder.record(&mut tape, &critic_enc, &t.obs)?;
            let q1 = self.head.record(&mut tape, &critic_q1, enc)?;
            let q2 = self.head.record(&mut tape, &critic_q2, enc)?;
            let y_node = tape.constant_scalar(y);
            let q1_a = tape.gather(q1, t.action);
            let q2_a = tape.gather(q2, t.action);
            let d1 = tape.sub(q1_a, y_node);
            let d2 = tape.sub(q2_a, y_node);
            let sq1 = tape.mul(d1, d1);
            let sq2 = tape.mul(d2, d2);
            let loss_c = tape.add(sq1, sq2);
            out.critic_loss_sum += tape.scalar_value(loss_c);
            tape.backward_into(loss_c, &mut out.critic)?;

            // The policy objective treats the online critic's values at the
            // current state as constants.
            let min_q: Vec<Scalar> = tape
                .value(q1)
                .iter()
                .zip(tape.value(q2))
                .map(|(a, b)| a.min(*b))
                .collect();
            drop(tape);

            let mut tape = Tape::new(&self.params);
            let enc = self.encoder.record(&mut tape, &policy_enc, &t.obs)?;
            let logits = self.head.record(&mut tape, &policy_head, enc)?;
            let p = tape.softmax(logits);
            let logp = tape.log_softmax(logits);
            let min_q_node = tape.constant(min_q);
            let expected_q = tape.dot(min_q_node, p);
            let neg_entropy = tape.dot(p, logp);
            let entropy = tape.neg(neg_entropy);
            let entropy_bonus = tape.scale(entropy, alpha);
            let objective = tape.add(expected_q, entropy_bonus);
            let loss_p = tape.neg(objective);
            out.policy_loss_sum += tape.scalar_value(loss_p);
            out.dists
                .push((tape.value(p).to_vec(), tape.value(logp).to_vec()));
            tape.backward_into(loss_p, &mut out.policy)?;
        }
        Ok(out)
    }

    /// One training update from a sampled batch: critic step, policy step,
    /// temperature step (when auto-tuning), then the Polyak target update.
    /// Skips (returning `None`) while the buffer holds fewer transitions
    /// than a batch.
    pub fn update_step(
        &mut self,
        buffer: &ReplayBuffer<O>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<UpdateStats>, DsacError> {
        if buffer.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let batch = buffer.sample(self.cfg.batch_size, rng);
        let stats = self.update_on_batch(&batch)?;
        Ok(Some(stats))
    }

    /// The update body over an explicit batch.
    pub fn update_on_batch(&mut self, batch: &[&Transition<O>]) -> Result<UpdateStats, DsacError> {
        assert!(!batch.is_empty(), "update on an empty batch");
        let alpha = self.alpha();
        let n = batch.len();

        // Gradient accumulation in a fixed chunk layout; losses are means
        // over the batch, so chunk sums are scaled once at the end.
        let chunk_size = n.div_ceil(GRAD_CHUNKS);
        let chunk_results: Result<Vec<ChunkGrads>, DsacError> = batch
            .par_chunks(chunk_size)
            .map(|chunk| self.chunk_grads(chunk, alpha))
            .collect();
        let chunk_results = chunk_results?;

        let mut critic_grads = GradientStore::new();
        let mut policy_grads = GradientStore::new();
        let mut critic_loss = 0.0;
        let mut policy_loss = 0.0;
        let mut dists = Vec::with_capacity(n);
        for chunk in chunk_results {
            critic_grads.merge(&chunk.critic);
            policy_grads.merge(&chunk.policy);
            critic_loss += chunk.critic_loss_sum;
            policy_loss += chunk.policy_loss_sum;
            dists.extend(chunk.dists);
        }
        let scale = 1.0 / n as Scalar;
        critic_grads.scale(scale);
        policy_grads.scale(scale);
        critic_loss *= scale;
        policy_loss *= scale;

        adam_step(&mut self.params, &critic_grads, &mut self.opt_critic)?;
        adam_step(&mut self.params, &policy_grads, &mut self.opt_policy)?;

        let mut alpha_loss = 0.0;
        if self.cfg.auto_entropy {
            let h_bar = self.cfg.resolved_target_entropy(self.n_actions);
            let mut tape = Tape::new(&self.params);
            let loss_node = Self::record_temperature_loss(&mut tape, &dists, h_bar)?;
            alpha_loss = tape.scalar_value(loss_node);
            let grads = tape.backward(loss_node)?;
            adam_step(&mut self.params, &grads, &mut self.opt_alpha)?;
            let clamped = self
                .params
                .scalar(LOG_ALPHA)?
                .clamp(LOG_ALPHA_MIN, LOG_ALPHA_MAX);
            self.params.set_values(LOG_ALPHA, &[clamped])?;
        }

        self.soft_update_target();

        Ok(UpdateStats {
            critic_loss,
            policy_loss,
            alpha_loss,
            alpha: self.alpha(),
        })
    }

    /// Polyak update of the target critic toward the online critic.
    pub fn soft_update_target(&mut self) {
        let tau = self.cfg.tau;
        for (name, param) in self.params.iter() {
            if !name.starts_with(CRITIC_PREFIX) {
                continue;
            }
            let target = self
                .target
                .values_mut(name)
                .expect("target mirrors the critic subtree");
            for (t, &o) in target.iter_mut().zip(param.values()) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        }
    }
}

/// Greedy argmax with lowest-index tie-break.
pub fn greedy_index(p: &[Scalar]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_index(p: &[Scalar], rng: &mut ChaCha8Rng) -> usize {
    let u: Scalar = rng.gen_range(0.0..1.0);
    let mut cumulative = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        cumulative += pi;
        if u < cumulative {
            return i;
        }
    }
    p.len() - 1
}
