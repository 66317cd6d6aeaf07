//! The 2-D crossing world: agent kinematics, spawning, reward, observation
//! extraction, and termination.
//!
//! Conventions: positions in metres, velocities in m/s, angles in radians,
//! world-frame axes. An agent's state splits into an observable part
//! `[px, py, vx, vy, r]` that other agents can measure and a hidden part
//! `[goal_x, goal_y, v_pref, heading]` that they cannot.

mod spawn;

pub use spawn::{spawn_circle, spawn_square, ScenarioParams};

use crate::scalar::Scalar;
use crate::vec2::Vec2;
use crate::Vec2f;

/// Number of discrete robot actions: a stop action plus 16 directions times
/// 5 speed fractions.
pub const ACTION_COUNT: usize = 81;
const DIRECTIONS: usize = 16;
const SPEEDS: usize = 5;

/// Episode time cap in seconds.
pub const DEFAULT_T_MAX: Scalar = 25.0;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("action index {index} outside [0, {ACTION_COUNT})")]
    InvalidAction { index: usize },
    #[error("cannot step a terminated episode")]
    EpisodeTerminated,
    #[error("failed to place agent {agent} without overlap after {attempts} resamples")]
    SpawnFailed { agent: usize, attempts: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub position: Vec2f,
    pub velocity: Vec2f,
    pub radius: Scalar,
    pub goal: Vec2f,
    pub v_pref: Scalar,
    pub heading: Scalar,
}

impl AgentState {
    /// The five values other agents can measure: position, velocity, radius.
    pub fn observable(&self) -> [Scalar; 5] {
        [
            self.position.x,
            self.position.y,
            self.velocity.x,
            self.velocity.y,
            self.radius,
        ]
    }

    /// Observable plus hidden parts: the full 9-value state.
    pub fn full_state(&self) -> [Scalar; 9] {
        [
            self.position.x,
            self.position.y,
            self.velocity.x,
            self.velocity.y,
            self.radius,
            self.goal.x,
            self.goal.y,
            self.v_pref,
            self.heading,
        ]
    }

    pub fn distance_to_goal(&self) -> Scalar {
        (self.goal - self.position).norm()
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub robot: AgentState,
    pub obstacles: Vec<AgentState>,
    pub time: Scalar,
    pub dt: Scalar,
    pub t_max: Scalar,
    pub terminated: bool,
}

/// What every encoder consumes: the robot's full state plus each obstacle's
/// observable projection, in stable spawn order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub robot_full: [Scalar; 9],
    pub obstacles: Vec<[Scalar; 5]>,
}

/// Discrete robot action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action {
    pub index: usize,
}

/// Per-step termination flags and clearance. At most one terminating flag is
/// set; collision takes precedence over goal, goal over timeout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvents {
    pub reached_goal: bool,
    pub collided: bool,
    pub timed_out: bool,
    pub d_min_step: Scalar,
}

impl StepEvents {
    pub fn terminal(&self) -> bool {
        self.reached_goal || self.collided || self.timed_out
    }
}

/// Velocity source for the obstacles; all obstacles share one policy.
pub trait ObstaclePolicy {
    /// Velocity for `world.obstacles[index]` this step.
    fn velocity(&self, world: &WorldState, index: usize) -> Vec2f;
}

/// Obstacles that never move (test fixture and degenerate scenarios).
pub struct StaticPolicy;

impl ObstaclePolicy for StaticPolicy {
    fn velocity(&self, _world: &WorldState, _index: usize) -> Vec2f {
        Vec2::zero()
    }
}

/// Decodes an action index into `(direction_rad, speed_fraction)`.
///
/// Index 0 is the stop action. Indices 1..81 enumerate direction-major:
/// direction `k * pi/8` for `k` in 0..16 crossed with speed fraction
/// `m * 0.2` for `m` in 1..=5. Directions are measured from the robot's
/// goal bearing (direction 0 points at the goal), matching the goal-rotated
/// frame the encoders observe in; the fraction scales the robot's preferred
/// speed when applied.
pub fn decode_action(index: usize) -> Result<(Scalar, Scalar), SimError> {
    if index >= ACTION_COUNT {
        return Err(SimError::InvalidAction { index });
    }
    if index == 0 {
        return Ok((0.0, 0.0));
    }
    let k = (index - 1) / SPEEDS;
    let m = (index - 1) % SPEEDS + 1;
    debug_assert!(k < DIRECTIONS);
    let direction = k as Scalar * std::f64::consts::PI / 8.0;
    let fraction = m as Scalar * 0.2;
    Ok((direction, fraction))
}

/// Minimum clearance between the robot and any obstacle: centre distance
/// minus the radii sum. Negative means overlapping bodies. Returns infinity
/// for an obstacle-free world.
pub fn min_clearance(world: &WorldState) -> Scalar {
    world
        .obstacles
        .iter()
        .map(|o| (o.position - world.robot.position).norm() - (world.robot.radius + o.radius))
        .fold(Scalar::INFINITY, Scalar::min)
}

/// Evaluates termination on the current state: goal reached when the robot
/// centre is within its own radius of the goal, collision when any clearance
/// is negative, timeout when the clock reaches the cap. Exactly one flag is
/// set when several conditions hold, in the order collision, goal, timeout.
pub fn terminal_check(world: &WorldState) -> StepEvents {
    let d_min = min_clearance(world);
    let collided = d_min < 0.0;
    let at_goal = world.robot.distance_to_goal() <= world.robot.radius;
    let out_of_time = world.time >= world.t_max;
    StepEvents {
        collided,
        reached_goal: at_goal && !collided,
        timed_out: out_of_time && !at_goal && !collided,
        d_min_step: d_min,
    }
}

/// Reward for the step that produced `events`, piecewise over the outcome:
/// a collision costs -0.25; reaching the goal pays 1; grazing inside the
/// 0.2 m discomfort band costs -0.1 + d_min/2; running out of time pays
/// progress toward the goal scaled by 0.5; anything else pays 0.
pub fn reward(events: &StepEvents, world: &WorldState, d_start_to_goal: Scalar) -> Scalar {
    reward_from_parts(
        events.reached_goal,
        events.collided,
        events.timed_out,
        events.d_min_step,
        world.robot.distance_to_goal(),
        d_start_to_goal,
    )
}

pub(crate) fn reward_from_parts(
    reached_goal: bool,
    collided: bool,
    timed_out: bool,
    d_min: Scalar,
    remaining: Scalar,
    d_start_to_goal: Scalar,
) -> Scalar {
    if collided {
        -0.25
    } else if reached_goal {
        1.0
    } else if d_min > 0.0 && d_min < 0.2 {
        -0.1 + d_min / 2.0
    } else if timed_out {
        (d_start_to_goal - remaining) / d_start_to_goal * 0.5
    } else {
        0.0
    }
}

/// Extracts what the learner may see: the robot's nine values and each
/// obstacle's five observable values. Obstacle goals, preferred speeds, and
/// headings never appear here.
pub fn observe(world: &WorldState) -> JointObservation {
    JointObservation {
        robot_full: world.robot.full_state(),
        obstacles: world.obstacles.iter().map(AgentState::observable).collect(),
    }
}

/// Advances the world one step: the robot moves with the decoded action
/// velocity (speed fraction times its preferred speed, direction measured
/// from the pre-move goal bearing), each obstacle moves with the shared
/// policy's velocity, the clock advances, and termination is evaluated on
/// the post-move state.
pub fn step(
    world: &mut WorldState,
    action: Action,
    obstacle_policy: &dyn ObstaclePolicy,
) -> Result<StepEvents, SimError> {
    if world.terminated {
        return Err(SimError::EpisodeTerminated);
    }
    let (relative_direction, fraction) = decode_action(action.index)?;

    let obstacle_velocities: Vec<Vec2f> = (0..world.obstacles.len())
        .map(|i| obstacle_policy.velocity(world, i))
        .collect();

    let to_goal = world.robot.goal - world.robot.position;
    let direction = to_goal.y.atan2(to_goal.x) + relative_direction;
    let speed = fraction * world.robot.v_pref;
    let v_robot = Vec2::new(direction.cos() * speed, direction.sin() * speed);
    world.robot.position = world.robot.position + v_robot * world.dt;
    world.robot.velocity = v_robot;
    if speed > 0.0 {
        world.robot.heading = direction;
    }

    for (obstacle, v) in world.obstacles.iter_mut().zip(obstacle_velocities) {
        obstacle.position = obstacle.position + v * world.dt;
        obstacle.velocity = v;
        if v.norm_sq() > 0.0 {
            obstacle.heading = v.y.atan2(v.x);
        }
    }

    world.time += world.dt;
    let events = terminal_check(world);
    world.terminated = events.terminal();
    Ok(events)
}
