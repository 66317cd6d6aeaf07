//! Optimal reciprocal collision avoidance.
//!
//! Each agent takes the velocity closest to its preferred velocity inside the
//! intersection of one half-plane per neighbour (built from the truncated
//! velocity obstacle with a 1/2 responsibility share) and a speed disk. When
//! the intersection is empty, the solver falls back to minimising the largest
//! constraint violation by pushing all half-planes outward at equal speed.
//!
//! Geometry is generic over the scalar; the simulator-facing policy runs on
//! the crate scalar.

use crate::scalar::{Real, Scalar};
use crate::simulator::WorldState;
use crate::vec2::Vec2;
use crate::Vec2f;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrcaParams<T> {
    /// Collision lookahead used to truncate velocity obstacles (s).
    pub time_horizon: T,
    /// Neighbours farther than this are ignored (m).
    pub neighbor_dist: T,
    /// Speed disk radius for the solved velocity (m/s).
    pub max_speed: T,
}

impl<T: Real> Default for OrcaParams<T> {
    fn default() -> Self {
        OrcaParams {
            time_horizon: T::of(5.0),
            neighbor_dist: T::of(10.0),
            max_speed: T::of(1.0),
        }
    }
}

/// Velocity-space half-plane `{ v : normal . (v - point) <= 0 }` with the
/// unit normal pointing into the forbidden side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane<T> {
    pub point: Vec2<T>,
    pub normal: Vec2<T>,
}

impl<T: Real> HalfPlane<T> {
    /// Signed violation of `v`: positive on the forbidden side.
    pub fn violation(&self, v: Vec2<T>) -> T {
        self.normal.dot(v - self.point)
    }

    /// Boundary direction such that the feasible side lies to its left.
    fn direction(&self) -> Vec2<T> {
        Vec2::new(-self.normal.y, self.normal.x)
    }
}

/// Another agent as seen by the constraint builder: observable state only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservableAgent<T> {
    pub position: Vec2<T>,
    pub velocity: Vec2<T>,
    pub radius: T,
}

/// Builds one half-plane constraint per neighbour for an agent at `position`
/// moving with `velocity`. Non-overlapping pairs use the velocity obstacle
/// truncated at `params.time_horizon`; already-overlapping pairs build the
/// escape constraint over one time step `dt` instead.
pub fn orca_halfplanes<T: Real>(
    position: Vec2<T>,
    velocity: Vec2<T>,
    radius: T,
    neighbors: &[ObservableAgent<T>],
    dt: T,
    params: &OrcaParams<T>,
) -> Vec<HalfPlane<T>> {
    let inv_horizon = T::one() / params.time_horizon;
    let inv_dt = T::one() / dt;
    let mut planes = Vec::with_capacity(neighbors.len());

    for other in neighbors {
        let rel_pos = other.position - position;
        let rel_vel = velocity - other.velocity;
        let dist_sq = rel_pos.norm_sq();
        let combined = radius + other.radius;
        let combined_sq = combined * combined;

        // `u` is the smallest change to the relative velocity that reaches
        // the boundary of the (truncated) velocity obstacle; `n` is the unit
        // normal of that boundary pointing out of the obstacle.
        let (u, n_allowed);
        if dist_sq > combined_sq {
            let w = rel_vel - rel_pos * inv_horizon;
            let w_len_sq = w.norm_sq();
            let dot1 = w.dot(rel_pos);
            if dot1 < T::zero() && dot1 * dot1 > combined_sq * w_len_sq {
                // Project on the cut-off circle.
                let w_len = w_len_sq.sqrt();
                let unit_w = w * (T::one() / w_len);
                n_allowed = unit_w;
                u = unit_w * (combined * inv_horizon - w_len);
            } else {
                // Project on the nearer leg of the cone.
                let leg = (dist_sq - combined_sq).sqrt();
                let dir = if rel_pos.cross(w) > T::zero() {
                    Vec2::new(
                        rel_pos.x * leg - rel_pos.y * combined,
                        rel_pos.x * combined + rel_pos.y * leg,
                    ) * (T::one() / dist_sq)
                } else {
                    -Vec2::new(
                        rel_pos.x * leg + rel_pos.y * combined,
                        -rel_pos.x * combined + rel_pos.y * leg,
                    ) * (T::one() / dist_sq)
                };
                let dot2 = rel_vel.dot(dir);
                n_allowed = Vec2::new(-dir.y, dir.x);
                u = dir * dot2 - rel_vel;
            }
        } else {
            // Bodies already overlap: escape over one time step.
            let w = rel_vel - rel_pos * inv_dt;
            let w_len = w.norm();
            let unit_w = if w_len > T::zero() {
                w * (T::one() / w_len)
            } else {
                // Coincident centres and matching velocities: any direction
                // breaks the tie; pick the x-axis deterministically.
                Vec2::new(T::one(), T::zero())
            };
            n_allowed = unit_w;
            u = unit_w * (combined * inv_dt - w_len);
        }

        planes.push(HalfPlane {
            point: velocity + u * T::of(0.5),
            normal: -n_allowed,
        });
    }
    planes
}

fn lp_epsilon<T: Real>() -> T {
    T::epsilon().sqrt()
}

/// Finds the feasible point on the boundary of `planes[index]` (within the
/// speed disk) closest to `opt`, honouring the planes before `index`.
/// With `direction_opt` the objective is instead to go as far as possible
/// along `opt` (a unit direction).
fn lp_on_line<T: Real>(
    planes: &[HalfPlane<T>],
    index: usize,
    max_speed: T,
    opt: Vec2<T>,
    direction_opt: bool,
) -> Option<Vec2<T>> {
    let line_point = planes[index].point;
    let line_dir = planes[index].direction();
    let dot = line_point.dot(line_dir);
    let discriminant = dot * dot + max_speed * max_speed - line_point.norm_sq();
    if discriminant < T::zero() {
        // The speed disk misses this boundary line entirely.
        return None;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for prev in &planes[..index] {
        let prev_dir = prev.direction();
        let denominator = line_dir.cross(prev_dir);
        let numerator = prev_dir.cross(line_point - prev.point);
        if denominator.abs() <= lp_epsilon() {
            // Parallel boundaries: reject if this line lies on the forbidden
            // side of the previous plane.
            if numerator < T::zero() {
                return None;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= T::zero() {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if direction_opt {
        if opt.dot(line_dir) > T::zero() {
            t_right
        } else {
            t_left
        }
    } else {
        line_dir.dot(opt - line_point).max(t_left).min(t_right)
    };
    Some(line_point + line_dir * t)
}

/// Incremental 2-D LP over the half-planes and the speed disk. Returns the
/// optimum and the index of the first unsatisfiable plane when infeasible.
fn lp_planes<T: Real>(
    planes: &[HalfPlane<T>],
    max_speed: T,
    opt: Vec2<T>,
    direction_opt: bool,
) -> (usize, Vec2<T>) {
    let mut result = if direction_opt {
        opt * max_speed
    } else if opt.norm_sq() > max_speed * max_speed {
        opt.normalized_or_zero() * max_speed
    } else {
        opt
    };

    for (i, plane) in planes.iter().enumerate() {
        if plane.violation(result) > T::zero() {
            match lp_on_line(planes, i, max_speed, opt, direction_opt) {
                Some(v) => result = v,
                None => return (i, result),
            }
        }
    }
    (planes.len(), result)
}

/// Projects onto the intersection of half-planes at equal outward speed: the
/// returned velocity minimises the maximum constraint violation. Used when
/// the plane set is infeasible.
fn lp_min_violation<T: Real>(
    planes: &[HalfPlane<T>],
    begin: usize,
    max_speed: T,
    mut result: Vec2<T>,
) -> Vec2<T> {
    let mut distance = T::zero();
    for i in begin..planes.len() {
        if planes[i].violation(result) <= distance {
            continue;
        }
        let dir_i = planes[i].direction();
        let mut projected: Vec<HalfPlane<T>> = Vec::with_capacity(i);
        for prev in &planes[..i] {
            let dir_j = prev.direction();
            let determinant = dir_i.cross(dir_j);
            let point = if determinant.abs() <= lp_epsilon() {
                if dir_i.dot(dir_j) > T::zero() {
                    // Same orientation: the previous plane is redundant here.
                    continue;
                }
                (planes[i].point + prev.point) * T::of(0.5)
            } else {
                let t = dir_j.cross(planes[i].point - prev.point) / determinant;
                planes[i].point + dir_i * t
            };
            let direction = (dir_j - dir_i).normalized_or_zero();
            projected.push(HalfPlane {
                point,
                normal: Vec2::new(direction.y, -direction.x),
            });
        }
        let fallback = result;
        let (feasible_count, v) =
            lp_planes(&projected, max_speed, Vec2::new(-dir_i.y, dir_i.x), true);
        result = if feasible_count < projected.len() {
            // Rounding artifact: the projected program is feasible by
            // construction, so keep the previous point.
            fallback
        } else {
            v
        };
        distance = planes[i].violation(result);
    }
    result
}

/// Velocity closest to `pref_v` satisfying every half-plane and the speed
/// disk; when the planes are jointly infeasible, the velocity minimising the
/// maximum violation.
pub fn solve_velocity<T: Real>(
    pref_v: Vec2<T>,
    planes: &[HalfPlane<T>],
    max_speed: T,
) -> Vec2<T> {
    let (feasible_count, result) = lp_planes(planes, max_speed, pref_v, false);
    if feasible_count < planes.len() {
        lp_min_violation(planes, feasible_count, max_speed, result)
    } else {
        result
    }
}

/// Full policy for one agent of the world (index 0 is the robot, `i + 1` is
/// obstacle `i`): prefer the goal-directed velocity at preferred speed
/// (easing in to land on the goal without overshoot), constrained by the
/// half-planes of every neighbour within range.
pub fn orca_policy(
    world: &WorldState,
    agent_index: usize,
    params: &OrcaParams<Scalar>,
) -> Vec2f {
    let own = if agent_index == 0 {
        &world.robot
    } else {
        &world.obstacles[agent_index - 1]
    };

    let to_goal = own.goal - own.position;
    let dist = to_goal.norm();
    let pref_speed = own.v_pref.min(dist / world.dt);
    let pref_v = if dist > 0.0 {
        to_goal * (pref_speed / dist)
    } else {
        Vec2::zero()
    };

    let neighbors: Vec<ObservableAgent<Scalar>> = std::iter::once(&world.robot)
        .chain(world.obstacles.iter())
        .enumerate()
        .filter(|(j, _)| *j != agent_index)
        .map(|(_, a)| ObservableAgent {
            position: a.position,
            velocity: a.velocity,
            radius: a.radius,
        })
        .filter(|a| (a.position - own.position).norm() <= params.neighbor_dist)
        .collect();

    let max_speed = own.v_pref;
    let planes = orca_halfplanes(
        own.position,
        own.velocity,
        own.radius,
        &neighbors,
        world.dt,
        params,
    );
    solve_velocity(pref_v, &planes, max_speed)
}

/// Obstacle policy driving every obstacle with ORCA; the robot is visible to
/// them like any other neighbour.
#[derive(Default)]
pub struct OrcaObstaclePolicy {
    pub params: OrcaParams<Scalar>,
}

impl crate::simulator::ObstaclePolicy for OrcaObstaclePolicy {
    fn velocity(&self, world: &WorldState, index: usize) -> Vec2f {
        let own = &world.obstacles[index];
        let params = OrcaParams {
            max_speed: own.v_pref,
            ..self.params
        };
        orca_policy(world, index + 1, &params)
    }
}
