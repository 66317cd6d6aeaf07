//! Environment interface for the trainer, and the crowd-crossing instance.

use rand_chacha::ChaCha8Rng;

use crate::orca::{OrcaObstaclePolicy, OrcaParams};
use crate::scalar::Scalar;
use crate::simulator::{
    observe, reward, spawn_circle, spawn_square, step, Action, JointObservation, ScenarioParams,
    SimError, WorldState,
};

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome<O> {
    pub obs: O,
    pub reward: Scalar,
    /// True terminal state; the value bootstrap is zeroed.
    pub done: bool,
    /// Episode cut off without a terminal state (bootstrap continues).
    pub truncated: bool,
    pub outcome: Option<Outcome>,
    /// Robot-obstacle clearance this step (infinite without obstacles).
    pub clearance: Scalar,
}

/// A sequential decision environment with a discrete action set.
pub trait Environment {
    type Obs: Clone + Send + Sync;

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Self::Obs, SimError>;
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng)
        -> Result<StepOutcome<Self::Obs>, SimError>;
    fn n_actions(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Circle,
    Square,
}

impl Scenario {
    pub fn parse(text: &str) -> Option<Scenario> {
        match text {
            "circle" => Some(Scenario::Circle),
            "square" => Some(Scenario::Square),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::Circle => "circle",
            Scenario::Square => "square",
        }
    }
}

/// Crossing world with ORCA-driven obstacles.
pub struct CrowdEnv {
    pub scenario: Scenario,
    pub params: ScenarioParams,
    policy: OrcaObstaclePolicy,
    world: Option<WorldState>,
    d_start_to_goal: Scalar,
}

impl CrowdEnv {
    pub fn new(scenario: Scenario, params: ScenarioParams, orca: OrcaParams<Scalar>) -> Self {
        CrowdEnv {
            scenario,
            params,
            policy: OrcaObstaclePolicy { params: orca },
            world: None,
            d_start_to_goal: 0.0,
        }
    }

    /// Current world, when an episode is active.
    pub fn world(&self) -> Option<&WorldState> {
        self.world.as_ref()
    }
}

impl Environment for CrowdEnv {
    type Obs = JointObservation;

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<JointObservation, SimError> {
        let world = match self.scenario {
            Scenario::Circle => spawn_circle(&self.params, rng)?,
            Scenario::Square => spawn_square(&self.params, rng)?,
        };
        self.d_start_to_goal = world.robot.distance_to_goal();
        let obs = observe(&world);
        self.world = Some(world);
        Ok(obs)
    }

    fn step(
        &mut self,
        action: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<StepOutcome<JointObservation>, SimError> {
        let world = self.world.as_mut().ok_or(SimError::EpisodeTerminated)?;
        let events = step(world, Action { index: action }, &self.policy)?;
        let r = reward(&events, world, self.d_start_to_goal);
        let obs = observe(world);
        let outcome = if events.collided {
            Some(Outcome::Collision)
        } else if events.reached_goal {
            Some(Outcome::Success)
        } else if events.timed_out {
            Some(Outcome::Timeout)
        } else {
            None
        };
        Ok(StepOutcome {
            obs,
            reward: r,
            done: events.terminal(),
            truncated: false,
            outcome,
            clearance: events.d_min_step,
        })
    }

    fn n_actions(&self) -> usize {
        crate::simulator::ACTION_COUNT
    }
}
