//! Relational graph encoder.
//!
//! Robot and obstacle features are embedded to a common width and stacked
//! into a feature matrix X (robot row first). A pairwise relation matrix A is
//! built by a shared scoring layer over concatenated row pairs, and features
//! propagate through residual message passing
//! `H_next = relu(A H W) + H` for a fixed number of rounds. The default
//! output concatenates the robot row with an LSTM pass over the obstacle rows
//! in spawn order; the other pooling modes exist for ablation runs.

use rand_chacha::ChaCha8Rng;

use super::{robot_feature_node, rotated_obstacle, StateEncoder, ENCODED_LEN};
use crate::diffcore::{DiffError, LstmSpec, MlpSpec, NodeId, ParameterStore, Tape};
use crate::scalar::Scalar;
use crate::simulator::JointObservation;

/// How the propagated rows are pooled into the feature fed to the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// Robot row only.
    Rob,
    /// Concatenation of every row (length depends on the obstacle count).
    RobObs,
    /// Element-wise sum of every row.
    SumRobObs,
    /// Robot row concatenated with summed per-obstacle MLP features.
    RobMlpObs,
    /// Summed per-row MLP features over all rows.
    MlpRobObs,
    /// LSTM over all rows, robot first.
    LstmRobObs,
    /// Robot row concatenated with an LSTM over the obstacle rows; the
    /// encoder's default output.
    RobLstmObs,
}

impl PoolMode {
    pub fn parse(text: &str) -> Option<PoolMode> {
        match text {
            "rob" => Some(PoolMode::Rob),
            "rob+obs" => Some(PoolMode::RobObs),
            "sum(rob+obs)" => Some(PoolMode::SumRobObs),
            "rob+mlp(obs)" => Some(PoolMode::RobMlpObs),
            "mlp(rob+obs)" => Some(PoolMode::MlpRobObs),
            "lstm(rob+obs)" => Some(PoolMode::LstmRobObs),
            "rob+lstm(obs)" => Some(PoolMode::RobLstmObs),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PoolMode::Rob => "rob",
            PoolMode::RobObs => "rob+obs",
            PoolMode::SumRobObs => "sum(rob+obs)",
            PoolMode::RobMlpObs => "rob+mlp(obs)",
            PoolMode::MlpRobObs => "mlp(rob+obs)",
            PoolMode::LstmRobObs => "lstm(rob+obs)",
            PoolMode::RobLstmObs => "rob+lstm(obs)",
        }
    }

    fn needs_mlp_pool(&self) -> bool {
        matches!(self, PoolMode::RobMlpObs | PoolMode::MlpRobObs)
    }

    fn needs_lstm(&self) -> bool {
        matches!(self, PoolMode::LstmRobObs | PoolMode::RobLstmObs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RgDims {
    /// Common row width of the feature matrix.
    pub width: usize,
    /// Hidden width of the pooling LSTM (and of the pooling MLP output).
    pub pooled: usize,
    /// Number of message-passing rounds.
    pub rounds: usize,
}

impl Default for RgDims {
    fn default() -> Self {
        RgDims {
            width: 6,
            pooled: 50,
            rounds: 2,
        }
    }
}

pub struct RgEncoder {
    dims: RgDims,
    embed_robot: MlpSpec,
    embed_obstacle: MlpSpec,
    relation: MlpSpec,
    pool_mlp: MlpSpec,
    lstm: LstmSpec,
}

impl RgEncoder {
    pub fn new(dims: RgDims) -> Self {
        RgEncoder {
            dims,
            embed_robot: MlpSpec::relu_first(&[super::ROBOT_FEATURE_LEN, dims.width]),
            embed_obstacle: MlpSpec::relu_first(&[super::OBSTACLE_FEATURE_LEN, dims.width]),
            relation: MlpSpec::relu_first(&[2 * dims.width, 1]),
            pool_mlp: MlpSpec::relu_first(&[dims.width, dims.pooled]),
            lstm: LstmSpec::new(dims.width, dims.pooled),
        }
    }

    pub fn dims(&self) -> RgDims {
        self.dims
    }

    /// Output length of `mode` at a fixed obstacle count.
    pub fn pooled_len(&self, mode: PoolMode, n_obstacles: usize) -> usize {
        match mode {
            PoolMode::Rob => self.dims.width,
            PoolMode::RobObs => self.dims.width * (n_obstacles + 1),
            PoolMode::SumRobObs => self.dims.width,
            PoolMode::RobMlpObs => self.dims.width + self.dims.pooled,
            PoolMode::MlpRobObs => self.dims.pooled,
            PoolMode::LstmRobObs => self.dims.pooled,
            PoolMode::RobLstmObs => self.dims.width + self.dims.pooled,
        }
    }

    pub fn init_params(
        &self,
        store: &mut ParameterStore<Scalar>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        self.init_params_for_mode(store, prefix, PoolMode::RobLstmObs, rng)
    }

    pub fn init_params_for_mode(
        &self,
        store: &mut ParameterStore<Scalar>,
        prefix: &str,
        mode: PoolMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        self.embed_robot
            .init_params(store, &format!("{prefix}.embr"), rng)?;
        self.embed_obstacle
            .init_params(store, &format!("{prefix}.embo"), rng)?;
        self.relation
            .init_params(store, &format!("{prefix}.rel"), rng)?;
        for round in 0..self.dims.rounds {
            let w = format!("{prefix}.w{round}");
            let bound = 1.0 / (self.dims.width as f64).sqrt();
            use rand::Rng;
            let values = (0..self.dims.width * self.dims.width)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            store.insert(w, vec![self.dims.width, self.dims.width], values)?;
        }
        if mode.needs_mlp_pool() {
            self.pool_mlp
                .init_params(store, &format!("{prefix}.poolmlp"), rng)?;
        }
        if mode.needs_lstm() {
            self.lstm.init_params(store, &format!("{prefix}.lstm"), rng)?;
        }
        Ok(())
    }

    /// Embeds the agents, scores all row pairs, and runs the residual
    /// propagation rounds. Returns the final rows (robot first).
    fn record_rows(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<Vec<NodeId>, DiffError> {
        let s_r = robot_feature_node(tape, obs);
        let mut rows = Vec::with_capacity(obs.obstacles.len() + 1);
        rows.push(self.embed_robot.record(tape, &format!("{prefix}.embr"), s_r)?);
        for i in 0..obs.obstacles.len() {
            let o = tape.constant(rotated_obstacle(obs, i).to_vec());
            rows.push(
                self.embed_obstacle
                    .record(tape, &format!("{prefix}.embo"), o)?,
            );
        }
        let n = rows.len();

        // Relation matrix entries A[i][j], shared scorer over row pairs.
        let mut relation = vec![Vec::with_capacity(n); n];
        for i in 0..n {
            for j in 0..n {
                let pair = tape.concat(&[rows[i], rows[j]]);
                let score = self.relation.record(tape, &format!("{prefix}.rel"), pair)?;
                relation[i].push(score);
            }
        }

        // H_next[i] = relu(sum_j A[i][j] * (H[j] W)) + H[i]
        let mut h = rows;
        for round in 0..self.dims.rounds {
            let w = tape.param(&format!("{prefix}.w{round}"))?;
            let transformed: Vec<NodeId> =
                h.iter().map(|&row| tape.matvec_t(w, row)).collect();
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let mut acc: Option<NodeId> = None;
                for j in 0..n {
                    let term = tape.scalar_mul(relation[i][j], transformed[j]);
                    acc = Some(match acc {
                        Some(a) => tape.add(a, term),
                        None => term,
                    });
                }
                let mixed = tape.relu(acc.expect("at least the robot row"));
                next.push(tape.add(mixed, h[i]));
            }
            h = next;
        }
        Ok(h)
    }

    /// Graph encoding with the named pooling of the propagated rows.
    pub fn record_pooled(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &JointObservation,
        mode: PoolMode,
    ) -> Result<NodeId, DiffError> {
        let rows = self.record_rows(tape, prefix, obs)?;
        let robot_row = rows[0];
        let obstacle_rows = &rows[1..];

        let sum_rows = |tape: &mut Tape<Scalar>, rows: &[NodeId]| -> NodeId {
            let mut acc = rows[0];
            for &r in &rows[1..] {
                acc = tape.add(acc, r);
            }
            acc
        };

        match mode {
            PoolMode::Rob => Ok(robot_row),
            PoolMode::RobObs => Ok(tape.concat(&rows)),
            PoolMode::SumRobObs => Ok(sum_rows(tape, &rows)),
            PoolMode::RobMlpObs => {
                let pooled = if obstacle_rows.is_empty() {
                    tape.constant(vec![0.0; self.dims.pooled])
                } else {
                    let mapped: Vec<NodeId> = obstacle_rows
                        .iter()
                        .map(|&r| self.pool_mlp.record(tape, &format!("{prefix}.poolmlp"), r))
                        .collect::<Result<_, _>>()?;
                    sum_rows(tape, &mapped)
                };
                Ok(tape.concat(&[robot_row, pooled]))
            }
            PoolMode::MlpRobObs => {
                let mapped: Vec<NodeId> = rows
                    .iter()
                    .map(|&r| self.pool_mlp.record(tape, &format!("{prefix}.poolmlp"), r))
                    .collect::<Result<_, _>>()?;
                Ok(sum_rows(tape, &mapped))
            }
            PoolMode::LstmRobObs => self.lstm.record(tape, &format!("{prefix}.lstm"), &rows),
            PoolMode::RobLstmObs => {
                let pooled = if obstacle_rows.is_empty() {
                    tape.constant(vec![0.0; self.dims.pooled])
                } else {
                    self.lstm
                        .record(tape, &format!("{prefix}.lstm"), obstacle_rows)?
                };
                Ok(tape.concat(&[robot_row, pooled]))
            }
        }
    }

    pub fn record(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<NodeId, DiffError> {
        self.record_pooled(tape, prefix, obs, PoolMode::RobLstmObs)
    }
}

impl StateEncoder<JointObservation> for RgEncoder {
    fn encoded_len(&self) -> usize {
        ENCODED_LEN
    }

    fn init_params(
        &self,
        store: &mut ParameterStore<Scalar>,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), DiffError> {
        RgEncoder::init_params(self, store, prefix, rng)
    }

    fn record(
        &self,
        tape: &mut Tape<Scalar>,
        prefix: &str,
        obs: &JointObservation,
    ) -> Result<NodeId, DiffError> {
        RgEncoder::record(self, tape, prefix, obs)
    }
}
