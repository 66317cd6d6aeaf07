//! Environment-state encoders: the relational graph and the three attention
//! variants (plain attention weight, skip-connection attention, LSTM-pooled
//! skip attention), plus the pooling ablations of the graph output.
//!
//! Every encoder maps a [`JointObservation`] to a fixed-length feature vector
//! (56 for the attention family and the default graph output) recorded on a
//! differentiation tape, so gradients flow from the prediction heads back
//! through the encoder parameters.
//!
//! Features are expressed in a goal-rotated, robot-centred frame: the x-axis
//! points from the robot to its goal, obstacle positions are relative to the
//! robot, and velocities are rotated into the same frame.

mod attention;
mod rg;

pub use attention::{AttentionDims, AttentionEncoder, AttentionVariant};
pub use rg::{PoolMode, RgDims, RgEncoder};

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{DiffError, NodeId, ParameterStore, Tape};
use crate::scalar::Scalar;
use crate::simulator::JointObservation;

/// Robot feature length in the rotated frame.
pub const ROBOT_FEATURE_LEN: usize = 6;
/// Observable obstacle feature length in the rotated frame.
pub const OBSTACLE_FEATURE_LEN: usize = 5;
/// Default encoded-state length: robot feature plus pooled obstacle feature.
pub const ENCODED_LEN: usize = 56;

/// Per-obstacle attention scores before and after the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionReport {
    pub raw_scores: Vec<Scalar>,
    pub weights: Vec<Scalar>,
}

/// Differentiable observation encoder with named parameters under a prefix.
pub trait StateEncoder<O>: Send + Sync {
    fn encoded_len(&self) -> usize;

    /// Creates this encoder's parameters under `prefix`.
    fn init_params(
        &self,
        store: &mut ParameterStore<Scalar>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError>;

    /// Records the encoding of `obs` on `tape` and returns the feature node.
    fn record(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &O,
    ) -> Result<NodeId, DiffError>;

    /// Per-obstacle attention weights, when this encoder computes any.
    fn attention_report(
        &self,
        _params: &ParameterStore<Scalar>,
        _prefix: &str,
        _obs: &O,
    ) -> Result<Option<AttentionReport>, DiffError> {
        Ok(None)
    }
}

fn wrap_angle(a: Scalar) -> Scalar {
    let mut x = a % std::f64::consts::TAU;
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    } else if x < -std::f64::consts::PI {
        x += std::f64::consts::TAU;
    }
    x
}

/// Robot feature `[d_goal, v_pref, vx, vy, r, heading]` in the goal-rotated
/// frame.
pub fn robot_feature(obs: &JointObservation) -> [Scalar; ROBOT_FEATURE_LEN] {
    let [px, py, vx, vy, r, gx, gy, v_pref, heading] = obs.robot_full;
    let dx = gx - px;
    let dy = gy - py;
    let d_goal = (dx * dx + dy * dy).sqrt();
    let rot = dy.atan2(dx);
    let (sin, cos) = rot.sin_cos();
    [
        d_goal,
        v_pref,
        vx * cos + vy * sin,
        -vx * sin + vy * cos,
        r,
        wrap_angle(heading - rot),
    ]
}

/// Obstacle feature `[rel_px, rel_py, vx, vy, r]`: position relative to the
/// robot and velocity, both rotated into the goal frame.
pub fn rotated_obstacle(obs: &JointObservation, index: usize) -> [Scalar; OBSTACLE_FEATURE_LEN] {
    let [px, py, _, _, _, gx, gy, _, _] = obs.robot_full;
    let [ox, oy, ovx, ovy, or_] = obs.obstacles[index];
    let rot = (gy - py).atan2(gx - px);
    let (sin, cos) = rot.sin_cos();
    let rx = ox - px;
    let ry = oy - py;
    [
        rx * cos + ry * sin,
        -rx * sin + ry * cos,
        ovx * cos + ovy * sin,
        -ovx * sin + ovy * cos,
        or_,
    ]
}

/// Records the robot feature as a constant input node.
pub(crate) fn robot_feature_node(tape: &mut Tape<Scalar>, obs: &JointObservation) -> NodeId {
    tape.constant(robot_feature(obs).to_vec())
}

/// Pass-through encoder over plain vectors: no parameters, identity feature.
/// Lets the trainer run on environments whose observations already are
/// feature vectors (the tabular verification harness).
pub struct IdentityEncoder {
    pub len: usize,
}

impl StateEncoder<Vec<Scalar>> for IdentityEncoder {
    fn encoded_len(&self) -> usize {
        self.len
    }

    fn init_params(
        &self,
        _store: &mut ParameterStore<Scalar>,
        _prefix: &str,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        Ok(())
    }

    fn record(
        &self,
        tape: &mut Tape<Scalar>,
        _prefix: &str,
        obs: &Vec<Scalar>,
    ) -> Result<NodeId, DiffError> {
        if obs.len() != self.len {
            return Err(DiffError::ShapeMismatch {
                context: format!(
                    "identity encoder expected length {}, got {}",
                    self.len,
                    obs.len()
                ),
            });
        }
        Ok(tape.constant(obs.clone()))
    }
}

/// Which encoder an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    RelationalGraph,
    Attention(AttentionVariant),
    /// Graph encoder with an alternative pooling of its output rows.
    Ablation(PoolMode),
}

impl EncoderKind {
    pub fn has_attention(&self) -> bool {
        matches!(self, EncoderKind::Attention(_))
    }

    pub fn label(&self) -> String {
        match self {
            EncoderKind::RelationalGraph => "rg".to_string(),
            EncoderKind::Attention(AttentionVariant::Aw) => "aw".to_string(),
            EncoderKind::Attention(AttentionVariant::Sa) => "sa".to_string(),
            EncoderKind::Attention(AttentionVariant::Lsa) => "lsa".to_string(),
            EncoderKind::Ablation(mode) => format!("rg:{}", mode.label()),
        }
    }
}

/// Unified crowd-observation encoder.
///
/// `expected_obstacles` pins the obstacle count for the one ablation mode
/// whose output length depends on it (plain row concatenation); training runs
/// keep the obstacle count constant, so the value is known up front.
pub struct CrowdEncoder {
    pub kind: EncoderKind,
    pub expected_obstacles: usize,
    attention: AttentionEncoder,
    graph: RgEncoder,
}

impl CrowdEncoder {
    pub fn new(kind: EncoderKind, expected_obstacles: usize) -> Self {
        let variant = match kind {
            EncoderKind::Attention(v) => v,
            _ => AttentionVariant::Lsa,
        };
        CrowdEncoder {
            kind,
            expected_obstacles,
            attention: AttentionEncoder::new(variant, AttentionDims::default()),
            graph: RgEncoder::new(RgDims::default()),
        }
    }
}

impl StateEncoder<JointObservation> for CrowdEncoder {
    fn encoded_len(&self) -> usize {
        match self.kind {
            EncoderKind::RelationalGraph => ENCODED_LEN,
            EncoderKind::Attention(_) => ENCODED_LEN,
            EncoderKind::Ablation(mode) => {
                self.graph.pooled_len(mode, self.expected_obstacles)
            }
        }
    }

    fn init_params(
        &self,
        store: &mut ParameterStore<Scalar>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        match self.kind {
            EncoderKind::RelationalGraph => self.graph.init_params(store, prefix, rng),
            EncoderKind::Attention(_) => self.attention.init_params(store, prefix, rng),
            EncoderKind::Ablation(mode) => {
                self.graph.init_params_for_mode(store, prefix, mode, rng)
            }
        }
    }

    fn record(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<NodeId, DiffError> {
        match self.kind {
            EncoderKind::RelationalGraph => self.graph.record(tape, prefix, obs),
            EncoderKind::Attention(_) => self.attention.record(tape, prefix, obs),
            EncoderKind::Ablation(mode) => self.graph.record_pooled(tape, prefix, obs, mode),
        }
    }

    fn attention_report(
        &self,
        params: &ParameterStore<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<Option<AttentionReport>, DiffError> {
        match self.kind {
            EncoderKind::Attention(_) => self.attention.report(params, prefix, obs).map(Some),
            _ => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(robot: [Scalar; 9], obstacles: Vec<[Scalar; 5]>) -> JointObservation {
        JointObservation {
            robot_full: robot,
            obstacles,
        }
    }

    #[test]
    fn robot_feature_rotates_into_goal_frame() {
        // Goal straight up: the frame's x-axis points +y in world terms.
        let o = obs([0.0, 0.0, 0.0, 1.0, 0.3, 0.0, 4.0, 1.0, std::f64::consts::FRAC_PI_2], vec![]);
        let f = robot_feature(&o);
        assert!((f[0] - 4.0).abs() < 1e-12); // d_goal
        assert!((f[1] - 1.0).abs() < 1e-12); // v_pref
        assert!((f[2] - 1.0).abs() < 1e-12); // velocity along goal axis
        assert!(f[3].abs() < 1e-12);
        assert!((f[4] - 0.3).abs() < 1e-12);
        assert!(f[5].abs() < 1e-12); // heading aligned with goal axis
    }

    #[test]
    fn rotated_obstacle_is_robot_relative() {
        // Robot at (1, 1) heading to (1, 5); obstacle 2 m straight ahead.
        let o = obs(
            [1.0, 1.0, 0.0, 0.0, 0.3, 1.0, 5.0, 1.0, 0.0],
            vec![[1.0, 3.0, 0.0, -1.0, 0.4]],
        );
        let f = rotated_obstacle(&o, 0);
        assert!((f[0] - 2.0).abs() < 1e-12);
        assert!(f[1].abs() < 1e-12);
        assert!((f[2] - (-1.0)).abs() < 1e-12); // approaching along the axis
        assert!(f[3].abs() < 1e-12);
        assert!((f[4] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_stays_in_pi_range() {
        for k in -8..8 {
            let a = 0.7 + k as Scalar * std::f64::consts::TAU;
            assert!((wrap_angle(a) - 0.7).abs() < 1e-9);
        }
        assert!(wrap_angle(4.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
