//! Independent verification suites runnable from the CLI.
//!
//! Every check pits the implementation against an independently written
//! oracle: finite differences for gradients, a straight-line piecewise
//! function for the reward, soft value iteration for the trainer, full
//! rollouts for the collision-avoidance safety claims, and the equal-sum
//! multiset witness for the pooling operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{check_gradients, LstmSpec, ParameterStore, Tape};
use crate::dsac::{run_training, Dsac, DsacConfig, Environment, StepOutcome};
use crate::encoders::{
    AttentionVariant, CrowdEncoder, EncoderKind, IdentityEncoder, StateEncoder,
};
use crate::harness::HarnessError;
use crate::orca::{orca_policy, OrcaParams};
use crate::scalar::Scalar;
use crate::simulator::{
    min_clearance, reward, spawn_circle, AgentState, JointObservation, ScenarioParams, SimError,
    StepEvents, WorldState,
};
use crate::vec2::Vec2;

#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: String,
    pub tolerance: String,
    pub detail: String,
    pub pass: bool,
}

impl OracleCheck {
    pub fn print(&self) {
        println!(
            "[{}] {} (tolerance {}) — {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.tolerance,
            self.detail
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleSuite {
    Grad,
    Tabular,
    Reward,
    Orca,
    Inject,
}

impl OracleSuite {
    pub fn parse(text: &str) -> Option<OracleSuite> {
        match text {
            "grad" => Some(OracleSuite::Grad),
            "tabular" => Some(OracleSuite::Tabular),
            "reward" => Some(OracleSuite::Reward),
            "orca" => Some(OracleSuite::Orca),
            "inject" => Some(OracleSuite::Inject),
            _ => None,
        }
    }
}

pub fn run_suite(suite: OracleSuite) -> Result<Vec<OracleCheck>, HarnessError> {
    Ok(match suite {
        OracleSuite::Grad => suite_grad()?,
        OracleSuite::Tabular => suite_tabular()?,
        OracleSuite::Reward => vec![suite_reward()],
        OracleSuite::Orca => suite_orca(),
        OracleSuite::Inject => suite_inject(),
    })
}

// ---------------------------------------------------------------------------
// Gradient oracle: finite differences through every encoder-head composition.

fn fixture_observation(n_obstacles: usize) -> JointObservation {
    JointObservation {
        robot_full: [0.0, -4.0, 0.1, 0.9, 0.3, 0.0, 4.0, 1.0, 1.3],
        obstacles: (0..n_obstacles)
            .map(|i| {
                let a = i as Scalar * 2.1 + 0.4;
                [2.5 * a.cos(), 2.5 * a.sin(), -0.4 * a.cos(), 0.3, 0.3]
            })
            .collect(),
    }
}

/// Finite-difference check (step 1e-5, relative error < 1e-4) of 64 random
/// coordinates through each encoder combined with each prediction head.
pub fn suite_grad() -> Result<Vec<OracleCheck>, HarnessError> {
    let kinds = [
        EncoderKind::RelationalGraph,
        EncoderKind::Attention(AttentionVariant::Aw),
        EncoderKind::Attention(AttentionVariant::Sa),
        EncoderKind::Attention(AttentionVariant::Lsa),
    ];
    let mut checks = Vec::new();
    for kind in kinds {
        for head in ["critic", "policy"] {
            let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF ^ kind.label().len() as u64);
            let encoder = CrowdEncoder::new(kind, 3);
            let agent = Dsac::new(
                encoder,
                crate::simulator::ACTION_COUNT,
                DsacConfig::default(),
                &mut rng,
            )?;
            let obs = fixture_observation(3);
            let probe: Vec<Scalar> = (0..crate::simulator::ACTION_COUNT)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();

            let (enc_prefix, head_prefixes): (&str, Vec<String>) = match head {
                "critic" => (
                    "critic.enc",
                    vec!["critic.q1".to_string(), "critic.q2".to_string()],
                ),
                _ => ("policy.enc", vec!["policy.head".to_string()]),
            };

            // Scalar probe of the composition: a fixed random projection of
            // the head outputs (both heads for the critic).
            let forward = |params: &ParameterStore<Scalar>| -> Scalar {
                let probe_encoder = CrowdEncoder::new(kind, 3);
                let mut tape = Tape::new(params);
                let enc = probe_encoder.record(&mut tape, enc_prefix, &obs).unwrap();
                let mut total = 0.0;
                for hp in &head_prefixes {
                    let out = agent.head_spec().record(&mut tape, hp, enc).unwrap();
                    total += tape
                        .value(out)
                        .iter()
                        .zip(&probe)
                        .map(|(o, q)| o * q)
                        .sum::<Scalar>();
                }
                total
            };

            let mut tape = Tape::new(&agent.params);
            let enc = agent.encoder.record(&mut tape, enc_prefix, &obs)?;
            let probe_node = tape.constant(probe.clone());
            let mut loss = None;
            for hp in &head_prefixes {
                let out = agent.head_spec().record(&mut tape, hp, enc)?;
                let term = tape.dot(out, probe_node);
                loss = Some(match loss {
                    Some(acc) => tape.add(acc, term),
                    None => term,
                });
            }
            let grads = tape.backward(loss.unwrap())?;

            let report = check_gradients(&agent.params, &grads, &forward, 64, 1e-5, &mut rng);
            checks.push(OracleCheck {
                name: format!("grad {} + {head} head", kind.label()),
                tolerance: "rel err < 1e-4 on 64 coordinates, step 1e-5".to_string(),
                detail: format!(
                    "max rel err {:.3e} at {}[{}]",
                    report.max_rel_err, report.worst_param, report.worst_index
                ),
                pass: report.passes(1e-4),
            });
        }
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// Tabular soft-Q oracle.

/// Deterministic 3-state, 2-action MDP with one-hot observations. Episodes
/// never terminate; the trainer sees truncations only, so the learned values
/// solve the infinite-horizon problem.
pub struct TabularMdp {
    state: usize,
    steps: usize,
    pub episode_len: usize,
}

impl TabularMdp {
    pub const STATES: usize = 3;
    pub const ACTIONS: usize = 2;

    pub fn new(episode_len: usize) -> Self {
        TabularMdp {
            state: 0,
            steps: 0,
            episode_len,
        }
    }

    /// `(next_state, reward)` for `(state, action)`.
    pub fn transition(state: usize, action: usize) -> (usize, Scalar) {
        match (state, action) {
            (0, 0) => (1, 0.0),
            (0, _) => (2, 0.1),
            (1, 0) => (2, 0.5),
            (1, _) => (0, -0.1),
            (2, 0) => (0, 0.8),
            _ => (1, 0.0),
        }
    }

    fn one_hot(state: usize) -> Vec<Scalar> {
        let mut v = vec![0.0; Self::STATES];
        v[state] = 1.0;
        v
    }
}

impl Environment for TabularMdp {
    type Obs = Vec<Scalar>;

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<Scalar>, SimError> {
        self.state = rng.gen_range(0..Self::STATES);
        self.steps = 0;
        Ok(Self::one_hot(self.state))
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> Result<StepOutcome<Vec<Scalar>>, SimError> {
        let (next, reward) = Self::transition(self.state, action);
        self.state = next;
        self.steps += 1;
        Ok(StepOutcome {
            obs: Self::one_hot(next),
            reward,
            done: false,
            truncated: self.steps >= self.episode_len,
            outcome: None,
            clearance: Scalar::INFINITY,
        })
    }

    fn n_actions(&self) -> usize {
        Self::ACTIONS
    }
}

/// Soft value iteration at fixed temperature: iterates
/// `Q(s,a) <- r + gamma * alpha * logsumexp(Q(s',.) / alpha)` to a fixed
/// point.
pub struct SoftViOracle {
    pub q: Vec<[Scalar; TabularMdp::ACTIONS]>,
    pub iterations: usize,
}

impl SoftViOracle {
    pub fn solve(gamma: Scalar, alpha: Scalar, tolerance: Scalar) -> SoftViOracle {
        let mut q = vec![[0.0 as Scalar; TabularMdp::ACTIONS]; TabularMdp::STATES];
        for iteration in 0..1_000_000 {
            let mut next = q.clone();
            let mut delta: Scalar = 0.0;
            for (s, row) in next.iter_mut().enumerate() {
                for (a, cell) in row.iter_mut().enumerate() {
                    let (s2, r) = TabularMdp::transition(s, a);
                    // Soft state value via a stable log-sum-exp.
                    let m = q[s2][0].max(q[s2][1]);
                    let v = alpha
                        * (((q[s2][0] - m) / alpha).exp() + ((q[s2][1] - m) / alpha).exp()).ln()
                        + m;
                    let updated = r + gamma * v;
                    delta = delta.max((updated - *cell).abs());
                    *cell = updated;
                }
            }
            q = next;
            if delta < tolerance {
                return SoftViOracle {
                    q,
                    iterations: iteration + 1,
                };
            }
        }
        SoftViOracle {
            q,
            iterations: 1_000_000,
        }
    }
}

/// Training configuration for the tabular check; small heads converge fast.
pub fn tabular_config() -> DsacConfig {
    DsacConfig {
        gamma: 0.9,
        tau: 0.005,
        lr: 1e-3,
        batch_size: 64,
        alpha_init: 0.2,
        auto_entropy: false,
        target_entropy: None,
        replay_capacity: 20_000,
        update_every_step: true,
        hidden: 32,
        alpha_lr: None,
    }
}

/// Exact entropy-regularised value of a fixed tabular policy: iterates
/// `V(s) = sum_a pi(a|s) (r + alpha (-log pi(a|s)) + gamma V(s'))` to
/// convergence.
pub fn soft_policy_value(
    policy: &[[Scalar; TabularMdp::ACTIONS]; TabularMdp::STATES],
    gamma: Scalar,
    alpha: Scalar,
) -> [Scalar; TabularMdp::STATES] {
    let mut v = [0.0; TabularMdp::STATES];
    for _ in 0..100_000 {
        let mut next = [0.0; TabularMdp::STATES];
        let mut delta: Scalar = 0.0;
        for s in 0..TabularMdp::STATES {
            let mut total = 0.0;
            for a in 0..TabularMdp::ACTIONS {
                let (s2, r) = TabularMdp::transition(s, a);
                let pi = policy[s][a].max(1e-300);
                total += pi * (r - alpha * pi.ln() + gamma * v[s2]);
            }
            delta = delta.max((total - v[s]).abs());
            next[s] = total;
        }
        v = next;
        if delta < 1e-12 {
            break;
        }
    }
    v
}

/// Trains on the tabular MDP and checks two things: min(Q1, Q2) converges to
/// the soft value iteration fixed point, and the exact entropy-regularised
/// objective of the learned policy never decreases across checkpoints beyond
/// a 1e-2 noise allowance.
pub fn suite_tabular() -> Result<Vec<OracleCheck>, HarnessError> {
    let cfg = tabular_config();
    let alpha = cfg.alpha_init;
    let gamma = cfg.gamma;
    let oracle = SoftViOracle::solve(gamma, alpha, 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(0x7AB);
    let mut agent = Dsac::new(
        IdentityEncoder {
            len: TabularMdp::STATES,
        },
        TabularMdp::ACTIONS,
        cfg,
        &mut rng,
    )?;
    let mut env = TabularMdp::new(30);

    // Snapshot the exact policy objective every 100 episodes.
    let mut objectives: Vec<Scalar> = Vec::new();
    let mut snapshot_error: Option<String> = None;
    run_training(&mut env, &mut agent, 700, &mut rng, |log, agent| {
        if (log.episode + 1) % 100 != 0 {
            return Ok(());
        }
        let mut policy = [[0.0; TabularMdp::ACTIONS]; TabularMdp::STATES];
        for (s, row) in policy.iter_mut().enumerate() {
            let mut obs = vec![0.0; TabularMdp::STATES];
            obs[s] = 1.0;
            match agent.policy_distribution(&agent.params, &obs) {
                Ok((p, _)) => row.copy_from_slice(&p),
                Err(e) => {
                    snapshot_error = Some(e.to_string());
                    return Ok(());
                }
            }
        }
        let v = soft_policy_value(&policy, gamma, alpha);
        objectives.push(v.iter().sum::<Scalar>() / TabularMdp::STATES as Scalar);
        Ok(())
    })?;
    if let Some(e) = snapshot_error {
        return Err(HarnessError::CheckFailed(e));
    }

    let mut max_err: Scalar = 0.0;
    for s in 0..TabularMdp::STATES {
        let mut obs = vec![0.0; TabularMdp::STATES];
        obs[s] = 1.0;
        let (q1, q2) = agent.critic_values(&agent.params, &obs)?;
        for a in 0..TabularMdp::ACTIONS {
            max_err = max_err.max((q1[a].min(q2[a]) - oracle.q[s][a]).abs());
        }
    }

    let mut worst_drop: Scalar = 0.0;
    for pair in objectives.windows(2) {
        worst_drop = worst_drop.max(pair[0] - pair[1]);
    }
    let improving = objectives.windows(2).all(|p| p[1] >= p[0] - 1e-2);

    Ok(vec![
        OracleCheck {
            name: "tabular soft-Q fixed point".to_string(),
            tolerance: "max |Q - Q*| < 1e-2 (oracle fixed point at 1e-10)".to_string(),
            detail: format!(
                "max error {max_err:.4e} after oracle convergence in {} sweeps",
                oracle.iterations
            ),
            pass: max_err < 1e-2,
        },
        OracleCheck {
            name: "soft policy improvement across checkpoints".to_string(),
            tolerance: "objective non-decreasing within 1e-2".to_string(),
            detail: format!(
                "objectives {:?}, worst drop {worst_drop:.2e}",
                objectives
                    .iter()
                    .map(|v| (v * 1e4).round() / 1e4)
                    .collect::<Vec<Scalar>>()
            ),
            pass: improving && objectives.len() >= 3,
        },
    ])
}

// ---------------------------------------------------------------------------
// Reward equivalence.

/// Independently written piecewise reward over raw inputs, mirroring the
/// outcome precedence: collision, goal, discomfort band, timeout, nothing.
pub fn reward_oracle(
    reached_goal: bool,
    collided: bool,
    timed_out: bool,
    d_min: Scalar,
    remaining: Scalar,
    d_start_to_goal: Scalar,
) -> Scalar {
    if collided {
        return -0.25;
    }
    if reached_goal {
        return 1.0;
    }
    let in_band = d_min > 0.0 && d_min < 0.2;
    if in_band {
        return -0.1 + d_min / 2.0;
    }
    if timed_out {
        return (d_start_to_goal - remaining) / d_start_to_goal * 0.5;
    }
    0.0
}

/// 100k randomized inputs across every branch, compared exactly.
pub fn suite_reward() -> OracleCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut branch_counts = [0usize; 5];
    let mut mismatches = 0usize;
    let total = 100_000;

    for i in 0..total {
        // Cycle deliberately through branch families so each one is hit at
        // least a fifth of the time, with randomized values inside.
        let branch = i % 5;
        let (reached, collided, timed_out, d_min) = match branch {
            0 => (false, true, rng.gen_bool(0.5), -rng.gen_range(0.0..0.5)),
            1 => (true, false, false, rng.gen_range(0.2..5.0)),
            2 => (false, false, rng.gen_bool(0.2), rng.gen_range(1e-9..0.2)),
            3 => (false, false, true, rng.gen_range(0.2..5.0)),
            _ => (false, false, false, rng.gen_range(0.2..5.0)),
        };

        // Random robot pose and goal determine the remaining distance.
        let robot = AgentState {
            position: Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
            velocity: Vec2::zero(),
            radius: 0.3,
            goal: Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
            v_pref: 1.0,
            heading: 0.0,
        };
        let d_start = rng.gen_range(0.5..10.0);
        let world = WorldState {
            robot,
            obstacles: Vec::new(),
            time: if timed_out { 25.0 } else { rng.gen_range(0.0..24.0) },
            dt: 0.25,
            t_max: 25.0,
            terminated: false,
        };
        let events = StepEvents {
            reached_goal: reached,
            collided,
            timed_out: timed_out && !reached && !collided,
            d_min_step: d_min,
        };

        let got = reward(&events, &world, d_start);
        let expect = reward_oracle(
            events.reached_goal,
            events.collided,
            events.timed_out,
            events.d_min_step,
            world.robot.distance_to_goal(),
            d_start,
        );
        if got != expect {
            mismatches += 1;
        }

        let bucket = if events.collided {
            0
        } else if events.reached_goal {
            1
        } else if d_min > 0.0 && d_min < 0.2 {
            2
        } else if events.timed_out {
            3
        } else {
            4
        };
        branch_counts[bucket] += 1;
    }

    let coverage_ok = branch_counts.iter().all(|&c| c >= 1000);
    OracleCheck {
        name: "reward piecewise equivalence".to_string(),
        tolerance: "exact equality on 100000 inputs, every branch >= 1000 hits".to_string(),
        detail: format!("mismatches {mismatches}, branch hits {branch_counts:?}"),
        pass: mismatches == 0 && coverage_ok,
    }
}

// ---------------------------------------------------------------------------
// Collision-avoidance safety rollouts.

/// Synchronous rollout of `n` mutually avoiding agents spawned on a circle
/// with antipodal goals. Returns (all reached goals, min clearance seen).
pub fn orca_crossing_rollout(
    n: usize,
    seed: u64,
    t_limit: Scalar,
) -> Result<(bool, Scalar), SimError> {
    let params = ScenarioParams {
        n_obstacles: n.saturating_sub(1),
        ..ScenarioParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = spawn_circle(&params, &mut rng)?;
    world.t_max = t_limit;
    let orca = OrcaParams::default();

    let mut min_seen = Scalar::INFINITY;
    let all_agents = |w: &WorldState| -> Vec<AgentState> {
        std::iter::once(w.robot.clone())
            .chain(w.obstacles.iter().cloned())
            .collect()
    };

    while world.time < t_limit {
        let velocities: Vec<Vec2<Scalar>> = (0..n)
            .map(|i| {
                let p = OrcaParams {
                    max_speed: if i == 0 {
                        world.robot.v_pref
                    } else {
                        world.obstacles[i - 1].v_pref
                    },
                    ..orca
                };
                orca_policy(&world, i, &p)
            })
            .collect();
        world.robot.velocity = velocities[0];
        world.robot.position = world.robot.position + velocities[0] * world.dt;
        for (o, v) in world.obstacles.iter_mut().zip(velocities[1..].iter()) {
            o.velocity = *v;
            o.position = o.position + *v * world.dt;
        }
        world.time += world.dt;

        // All pairwise clearances, not only robot-obstacle.
        let agents = all_agents(&world);
        for i in 0..agents.len() {
            for j in 0..i {
                let d = (agents[i].position - agents[j].position).norm()
                    - agents[i].radius
                    - agents[j].radius;
                min_seen = min_seen.min(d);
            }
        }
        min_seen = min_seen.min(min_clearance(&world));

        let done = agents
            .iter()
            .all(|a| (a.goal - a.position).norm() <= a.radius);
        if done {
            return Ok((true, min_seen));
        }
    }
    Ok((false, min_seen))
}

/// Head-on pair (100 of 100 seeds) and four-agent circle crossing
/// (at least 95 of 100 seeds) with zero clearance violations.
pub fn suite_orca() -> Vec<OracleCheck> {
    let mut two_ok = 0;
    for seed in 0..100 {
        if let Ok((done, min_seen)) = orca_crossing_rollout(2, seed, 30.0) {
            if done && min_seen >= 0.0 {
                two_ok += 1;
            }
        }
    }
    let mut four_ok = 0;
    for seed in 0..100 {
        if let Ok((done, min_seen)) = orca_crossing_rollout(4, seed, 30.0) {
            if done && min_seen >= 0.0 {
                four_ok += 1;
            }
        }
    }
    vec![
        OracleCheck {
            name: "two-agent head-on crossing".to_string(),
            tolerance: "100 of 100 seeds, clearance >= 0 throughout".to_string(),
            detail: format!("{two_ok} of 100 clean completions"),
            pass: two_ok == 100,
        },
        OracleCheck {
            name: "four-agent circle crossing".to_string(),
            tolerance: ">= 95 of 100 seeds, clearance >= 0 throughout".to_string(),
            detail: format!("{four_ok} of 100 clean completions"),
            pass: four_ok >= 95,
        },
    ]
}

// ---------------------------------------------------------------------------
// Multiset injectivity witness.

/// Equal-sum multisets {3, 1} and {2, 2} broadcast to 50-wide vectors: sum
/// pooling cannot tell them apart (difference exactly zero), LSTM pooling
/// separates them for at least 19 of 20 random initializations.
pub fn suite_inject() -> Vec<OracleCheck> {
    let width = 50;
    let a1: Vec<Scalar> = vec![3.0; width];
    let a2: Vec<Scalar> = vec![1.0; width];
    let b1: Vec<Scalar> = vec![2.0; width];
    let b2: Vec<Scalar> = vec![2.0; width];

    let sum = |x: &[Scalar], y: &[Scalar]| -> Vec<Scalar> {
        x.iter().zip(y).map(|(a, b)| a + b).collect()
    };
    let sum_diff: Scalar = sum(&a1, &a2)
        .iter()
        .zip(&sum(&b1, &b2))
        .map(|(a, b)| (a - b).abs())
        .sum();

    let mut separated = 0;
    let spec = LstmSpec::new(width, width);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut store: ParameterStore<Scalar> = ParameterStore::new();
        spec.init_params(&mut store, "pool", &mut rng).unwrap();
        let ha = spec
            .eval(&store, "pool", &[a1.clone(), a2.clone()])
            .unwrap();
        let hb = spec
            .eval(&store, "pool", &[b1.clone(), b2.clone()])
            .unwrap();
        let dist: Scalar = ha
            .iter()
            .zip(&hb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<Scalar>()
            .sqrt();
        if dist > 1e-6 {
            separated += 1;
        }
    }

    vec![
        OracleCheck {
            name: "sum pooling collapses equal-sum multisets".to_string(),
            tolerance: "difference exactly 0".to_string(),
            detail: format!("L1 difference {sum_diff}"),
            pass: sum_diff == 0.0,
        },
        OracleCheck {
            name: "LSTM pooling separates equal-sum multisets".to_string(),
            tolerance: ">= 19 of 20 seeds with distance > 1e-6".to_string(),
            detail: format!("{separated} of 20 seeds separated"),
            pass: separated >= 19,
        },
    ]
}
