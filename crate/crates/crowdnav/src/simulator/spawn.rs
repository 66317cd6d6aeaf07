//! Episode spawning for the circle- and square-crossing scenarios.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AgentState, SimError, WorldState};
use crate::scalar::Scalar;
use crate::vec2::Vec2;
use crate::Vec2f;

/// World geometry and agent defaults for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub n_obstacles: usize,
    pub dt: Scalar,
    pub t_max: Scalar,
    /// Spawn-circle radius for the circle-crossing scenario.
    pub r_circle: Scalar,
    /// Side length of the square-crossing arena.
    pub arena: Scalar,
    pub robot_radius: Scalar,
    pub obstacle_radius: Scalar,
    pub v_pref: Scalar,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            n_obstacles: 1,
            dt: 0.25,
            t_max: super::DEFAULT_T_MAX,
            r_circle: 4.0,
            arena: 10.0,
            robot_radius: 0.3,
            obstacle_radius: 0.3,
            v_pref: 1.0,
        }
    }
}

const ANGULAR_JITTER: Scalar = std::f64::consts::PI / 18.0;
const RADIAL_JITTER: Scalar = 0.3;
const MAX_RESAMPLES: usize = 100;
/// Width of the left/right spawn bands in the square arena.
const BAND_WIDTH: Scalar = 1.0;
/// Keeps spawn positions and the robot's lane away from the arena walls.
const WALL_MARGIN: Scalar = 0.5;

fn agent(position: Vec2f, goal: Vec2f, radius: Scalar, v_pref: Scalar) -> AgentState {
    let to_goal = goal - position;
    AgentState {
        position,
        velocity: Vec2::zero(),
        radius,
        goal,
        v_pref,
        heading: to_goal.y.atan2(to_goal.x),
    }
}

fn overlaps(candidate: &AgentState, placed: &[&AgentState]) -> bool {
    placed.iter().any(|other| {
        (candidate.position - other.position).norm() - (candidate.radius + other.radius) < 0.0
    })
}

fn world(robot: AgentState, obstacles: Vec<AgentState>, p: &ScenarioParams) -> WorldState {
    WorldState {
        robot,
        obstacles,
        time: 0.0,
        dt: p.dt,
        t_max: p.t_max,
        terminated: false,
    }
}

/// Circle crossing: the robot crosses bottom-to-top through a circle of
/// radius `r_circle`; obstacles spawn near evenly spaced points on the rim
/// (angular and radial jitter) with goals at the points antipodal to their
/// spawns, so every crossing passes near the centre. Overlapping draws are
/// resampled.
pub fn spawn_circle(p: &ScenarioParams, rng: &mut ChaCha8Rng) -> Result<WorldState, SimError> {
    let robot = agent(
        Vec2::new(0.0, -p.r_circle),
        Vec2::new(0.0, p.r_circle),
        p.robot_radius,
        p.v_pref,
    );

    // Evenly spaced rim slots, rotated as a whole by a random offset each
    // episode so a small crowd can appear anywhere around the crossing.
    let offset = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut obstacles: Vec<AgentState> = Vec::with_capacity(p.n_obstacles);
    for i in 0..p.n_obstacles {
        let base = offset + i as Scalar * std::f64::consts::TAU / p.n_obstacles.max(1) as Scalar;
        let mut placed = false;
        for _ in 0..MAX_RESAMPLES {
            let angle = base + rng.gen_range(-ANGULAR_JITTER..ANGULAR_JITTER);
            let radius = p.r_circle + rng.gen_range(-RADIAL_JITTER..RADIAL_JITTER);
            let position = Vec2::new(angle.cos() * radius, angle.sin() * radius);
            let candidate = agent(position, -position, p.obstacle_radius, p.v_pref);
            let others: Vec<&AgentState> =
                std::iter::once(&robot).chain(obstacles.iter()).collect();
            if !overlaps(&candidate, &others) {
                obstacles.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SimError::SpawnFailed {
                agent: i,
                attempts: MAX_RESAMPLES,
            });
        }
    }
    Ok(world(robot, obstacles, p))
}

/// Square crossing: obstacles spawn uniformly inside a band on the left or
/// right edge of the arena and receive a uniformly random goal inside the
/// band on the opposite side; the robot crosses bottom-to-top through the
/// middle.
pub fn spawn_square(p: &ScenarioParams, rng: &mut ChaCha8Rng) -> Result<WorldState, SimError> {
    let half = p.arena / 2.0;
    let robot = agent(
        Vec2::new(0.0, -half + WALL_MARGIN),
        Vec2::new(0.0, half - WALL_MARGIN),
        p.robot_radius,
        p.v_pref,
    );

    let y_span = half - WALL_MARGIN;
    let mut obstacles: Vec<AgentState> = Vec::with_capacity(p.n_obstacles);
    for i in 0..p.n_obstacles {
        let mut placed = false;
        for _ in 0..MAX_RESAMPLES {
            let side: Scalar = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let spawn_x = side * rng.gen_range(half - BAND_WIDTH..half);
            let spawn_y = rng.gen_range(-y_span..y_span);
            let goal_x = -side * rng.gen_range(half - BAND_WIDTH..half);
            let goal_y = rng.gen_range(-y_span..y_span);
            let candidate = agent(
                Vec2::new(spawn_x, spawn_y),
                Vec2::new(goal_x, goal_y),
                p.obstacle_radius,
                p.v_pref,
            );
            let others: Vec<&AgentState> =
                std::iter::once(&robot).chain(obstacles.iter()).collect();
            if !overlaps(&candidate, &others) {
                obstacles.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SimError::SpawnFailed {
                agent: i,
                attempts: MAX_RESAMPLES,
            });
        }
    }
    Ok(world(robot, obstacles, p))
}
