//! Run configuration: TOML sections with full defaulting, CLI overrides, and
//! translation into the module-level parameter structs.

use serde::{Deserialize, Serialize};

use crate::dsac::{DsacConfig, Scenario};
use crate::encoders::{AttentionVariant, EncoderKind, PoolMode};
use crate::harness::HarnessError;
use crate::orca::OrcaParams;
use crate::scalar::Scalar;
use crate::simulator::ScenarioParams;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub sim: SimSection,
    pub orca: OrcaSection,
    pub dsac: DsacSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// One of rg, aw, sa, lsa.
    pub encoder: String,
    /// Pooling ablation over the graph output ("none" for the standard
    /// encoders): rob, rob+obs, sum(rob+obs), rob+mlp(obs), mlp(rob+obs),
    /// lstm(rob+obs), rob+lstm(obs).
    pub ablation: String,
    /// circle or square.
    pub scenario: String,
    pub n_obstacles: usize,
    pub episodes: usize,
    pub seed: u64,
    pub out_dir: String,
    /// Episodes per evaluation run.
    pub eval_episodes: usize,
    /// Checkpoint cadence during training (episodes).
    pub checkpoint_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            encoder: "lsa".to_string(),
            ablation: "none".to_string(),
            scenario: "circle".to_string(),
            n_obstacles: 1,
            episodes: 2000,
            seed: 7,
            out_dir: "runs/default".to_string(),
            eval_episodes: 100,
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: Scalar,
    pub t_max: Scalar,
    pub r_circle: Scalar,
    pub arena: Scalar,
    pub robot_radius: Scalar,
    pub obstacle_radius: Scalar,
    pub v_pref: Scalar,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt: 0.25,
            t_max: 25.0,
            r_circle: 4.0,
            arena: 10.0,
            robot_radius: 0.3,
            obstacle_radius: 0.3,
            v_pref: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OrcaSection {
    pub time_horizon: Scalar,
    pub neighbor_dist: Scalar,
}

impl Default for OrcaSection {
    fn default() -> Self {
        OrcaSection {
            time_horizon: 5.0,
            neighbor_dist: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DsacSection {
    pub gamma: Scalar,
    pub tau: Scalar,
    pub lr: Scalar,
    pub batch_size: usize,
    pub alpha_init: Scalar,
    pub auto_entropy: bool,
    /// Defaults to 0.98 * ln(81) when absent.
    pub target_entropy: Option<Scalar>,
    pub replay_capacity: usize,
    pub update_every_step: bool,
    pub hidden: usize,
}

impl Default for DsacSection {
    fn default() -> Self {
        let d = DsacConfig::default();
        DsacSection {
            gamma: d.gamma,
            tau: d.tau,
            lr: d.lr,
            batch_size: d.batch_size,
            alpha_init: d.alpha_init,
            auto_entropy: d.auto_entropy,
            target_entropy: d.target_entropy,
            replay_capacity: d.replay_capacity,
            update_every_step: d.update_every_step,
            hidden: d.hidden,
        }
    }
}

/// Targeted command-line overrides applied over the file config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub encoder: Option<String>,
    pub obstacles: Option<usize>,
    pub scenario: Option<String>,
    pub out: Option<String>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.run.seed = seed;
        }
        if let Some(episodes) = o.episodes {
            self.run.episodes = episodes;
        }
        if let Some(encoder) = &o.encoder {
            self.run.encoder = encoder.clone();
        }
        if let Some(n) = o.obstacles {
            self.run.n_obstacles = n;
        }
        if let Some(scenario) = &o.scenario {
            self.run.scenario = scenario.clone();
        }
        if let Some(out) = &o.out {
            self.run.out_dir = out.clone();
        }
    }

    /// Field-level validation of every enumerated or bounded value.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        if self.encoder_kind().is_err() {
            problems.push(format!(
                "run.encoder: unknown encoder {:?} (expected rg, aw, sa, or lsa)",
                self.run.encoder
            ));
        }
        if self.run.ablation != "none" {
            if PoolMode::parse(&self.run.ablation).is_none() {
                problems.push(format!(
                    "run.ablation: unknown pooling mode {:?}",
                    self.run.ablation
                ));
            }
            if self.run.encoder != "rg" {
                problems.push(format!(
                    "run.ablation: pooling ablations apply to the rg encoder, not {:?}",
                    self.run.encoder
                ));
            }
        }
        if Scenario::parse(&self.run.scenario).is_none() {
            problems.push(format!(
                "run.scenario: unknown scenario {:?} (expected circle or square)",
                self.run.scenario
            ));
        }
        if self.run.checkpoint_every == 0 {
            problems.push("run.checkpoint_every: must be positive".to_string());
        }
        if !(self.sim.dt > 0.0) {
            problems.push("sim.dt: must be positive".to_string());
        }
        if !(self.sim.t_max > 0.0) {
            problems.push("sim.t_max: must be positive".to_string());
        }
        if !(self.sim.robot_radius > 0.0 && self.sim.obstacle_radius > 0.0) {
            problems.push("sim radii: must be positive".to_string());
        }
        if !(self.sim.v_pref > 0.0) {
            problems.push("sim.v_pref: must be positive".to_string());
        }
        if !(self.dsac.gamma > 0.0 && self.dsac.gamma < 1.0) {
            problems.push(format!("dsac.gamma: {} outside (0, 1)", self.dsac.gamma));
        }
        if !(self.dsac.tau > 0.0 && self.dsac.tau <= 1.0) {
            problems.push(format!("dsac.tau: {} outside (0, 1]", self.dsac.tau));
        }
        if self.dsac.batch_size == 0 {
            problems.push("dsac.batch_size: must be positive".to_string());
        }
        if !(self.dsac.lr > 0.0) {
            problems.push("dsac.lr: must be positive".to_string());
        }
        if !(self.dsac.alpha_init > 0.0) {
            problems.push("dsac.alpha_init: must be positive".to_string());
        }
        if self.dsac.replay_capacity < self.dsac.batch_size {
            problems.push("dsac.replay_capacity: smaller than one batch".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(problems.join("\n")))
        }
    }

    pub fn encoder_kind(&self) -> Result<EncoderKind, HarnessError> {
        if self.run.ablation != "none" {
            let mode = PoolMode::parse(&self.run.ablation).ok_or_else(|| {
                HarnessError::Config(format!("unknown ablation {:?}", self.run.ablation))
            })?;
            return Ok(EncoderKind::Ablation(mode));
        }
        match self.run.encoder.as_str() {
            "rg" => Ok(EncoderKind::RelationalGraph),
            "aw" => Ok(EncoderKind::Attention(AttentionVariant::Aw)),
            "sa" => Ok(EncoderKind::Attention(AttentionVariant::Sa)),
            "lsa" => Ok(EncoderKind::Attention(AttentionVariant::Lsa)),
            other => Err(HarnessError::Config(format!("unknown encoder {other:?}"))),
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::parse(&self.run.scenario).unwrap_or(Scenario::Circle)
    }

    pub fn scenario_params(&self) -> ScenarioParams {
        ScenarioParams {
            n_obstacles: self.run.n_obstacles,
            dt: self.sim.dt,
            t_max: self.sim.t_max,
            r_circle: self.sim.r_circle,
            arena: self.sim.arena,
            robot_radius: self.sim.robot_radius,
            obstacle_radius: self.sim.obstacle_radius,
            v_pref: self.sim.v_pref,
        }
    }

    pub fn orca_params(&self) -> OrcaParams<Scalar> {
        OrcaParams {
            time_horizon: self.orca.time_horizon,
            neighbor_dist: self.orca.neighbor_dist,
            max_speed: self.sim.v_pref,
        }
    }

    /// Trainer configuration with the discount expressed per step.
    ///
    /// The configured `gamma` discounts per unit of preferred-speed travel
    /// time (the crowd-navigation value-target convention), so the per-step
    /// factor is `gamma^(dt * v_pref)`. With the defaults that is
    /// 0.95^0.25: a terminal reward still carries weight across a full
    /// 100-step episode instead of vanishing at 0.95^100.
    pub fn dsac_config(&self) -> DsacConfig {
        DsacConfig {
            gamma: self.dsac.gamma.powf(self.sim.dt * self.sim.v_pref),
            tau: self.dsac.tau,
            lr: self.dsac.lr,
            batch_size: self.dsac.batch_size,
            alpha_init: self.dsac.alpha_init,
            auto_entropy: self.dsac.auto_entropy,
            target_entropy: self.dsac.target_entropy,
            replay_capacity: self.dsac.replay_capacity,
            update_every_step: self.dsac.update_every_step,
            hidden: self.dsac.hidden,
            alpha_lr: None,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a hash of the resolved configuration text, used as a checkpoint
    /// provenance marker.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.to_toml().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            "[run]\nencoder = \"aw\"\nn_obstacles = 3\n\n[dsac]\ngamma = 0.9\n",
        )
        .unwrap();
        assert_eq!(cfg.run.encoder, "aw");
        assert_eq!(cfg.run.n_obstacles, 3);
        assert_eq!(cfg.dsac.gamma, 0.9);
        assert_eq!(cfg.sim.dt, 0.25);
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_fields_are_reported_by_name() {
        let mut cfg = RunConfig::default();
        cfg.run.encoder = "transformer".to_string();
        cfg.dsac.gamma = 1.5;
        let err = cfg.validate().unwrap_err();
        let text = err.to_string();
        assert!(text.contains("run.encoder"), "{text}");
        assert!(text.contains("dsac.gamma"), "{text}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: Result<RunConfig, _> = toml::from_str("[run]\nepisodez = 5\n");
        assert!(r.is_err());
    }

    #[test]
    fn ablation_requires_the_graph_encoder() {
        let mut cfg = RunConfig::default();
        cfg.run.ablation = "rob+obs".to_string();
        assert!(cfg.validate().is_err());
        cfg.run.encoder = "rg".to_string();
        cfg.validate().unwrap();
        assert!(matches!(
            cfg.encoder_kind().unwrap(),
            EncoderKind::Ablation(PoolMode::RobObs)
        ));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(99),
            episodes: Some(10),
            encoder: Some("rg".to_string()),
            obstacles: Some(5),
            scenario: Some("square".to_string()),
            out: Some("runs/x".to_string()),
        });
        assert_eq!(cfg.run.seed, 99);
        assert_eq!(cfg.run.episodes, 10);
        assert_eq!(cfg.run.encoder, "rg");
        assert_eq!(cfg.run.n_obstacles, 5);
        assert_eq!(cfg.run.scenario, "square");
        assert_eq!(cfg.run.out_dir, "runs/x");
    }
}
