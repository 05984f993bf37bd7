use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::curiosity::HindsightTrainConfig;
use crate::models::ModelConfig;
use crate::rl::{A2cConfig, PolicyConfig, Regime};
use crate::worlds::{MazeConfig, MazeMap, NoiseSetting, NoiseVariant, DEFAULT_EPISODE_LENGTH, DEFAULT_PIXEL_PROB, NUM_CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    ByolExplore,
    ByolHindsight,
    RandomPolicy,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::ByolExplore => "byol_explore",
            AgentKind::ByolHindsight => "byol_hindsight",
            AgentKind::RandomPolicy => "random_policy",
        }
    }
}

/// Run length, batching and output cadence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Environment steps summed over all parallel environments.
    pub total_steps: u64,
    pub num_envs: usize,
    /// Transitions per environment between learner updates.
    pub segment_len: usize,
    /// One metrics row every this many environment steps (plus one at step 0).
    pub metrics_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, total_steps: 100_000, num_envs: 16, segment_len: 10, metrics_every: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub variant: NoiseVariant,
    pub pixel_prob: f64,
    pub sticky: f64,
    pub episode_length: usize,
    /// Map file; the bundled maze when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    /// Factor applied to the noise layer when observations are fed to the
    /// networks. The default, sqrt(NUM_CHANNELS), gives a full noise layer the
    /// energy it would have if every cell's noise value covered all of that
    /// cell's channels, so the noise is as large as the frame it sits on.
    pub noise_input_scale: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            variant: NoiseVariant::Baseline,
            pixel_prob: DEFAULT_PIXEL_PROB,
            sticky: 0.0,
            episode_length: DEFAULT_EPISODE_LENGTH,
            map: None,
            noise_input_scale: (NUM_CHANNELS as f64).sqrt(),
        }
    }
}

impl EnvSection {
    pub fn noise(&self) -> NoiseSetting {
        NoiseSetting { variant: self.variant, pixel_prob: self.pixel_prob, sticky: self.sticky }
    }

    pub fn maze_config(&self) -> Result<MazeConfig, HarnessError> {
        let map = match &self.map {
            Some(p) => MazeMap::load(p)?,
            None => MazeMap::default_map(),
        };
        Ok(MazeConfig { map, noise: self.noise(), episode_length: self.episode_length })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub kind: AgentKind,
    pub regime: Regime,
    /// Weight of the intrinsic reward in the mixed regime.
    pub mixing: f64,
    /// Decay of the running second moment used to normalize intrinsic rewards.
    pub reward_decay: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self { kind: AgentKind::ByolHindsight, regime: Regime::IntrinsicOnly, mixing: 0.2, reward_decay: 0.99 }
    }
}

/// Everything a run depends on. Parsed from TOML with one table per module;
/// unknown keys are rejected and omitted keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub agent: AgentSection,
    pub model: ModelConfig,
    pub world_model: HindsightTrainConfig,
    pub policy: PolicyConfig,
    pub a2c: A2cConfig,
}

impl RunConfig {
    /// 10k-step preset for smoke tests and CI.
    pub fn quick() -> Self {
        let mut c = Self::default();
        c.run.total_steps = 10_000;
        c.run.metrics_every = 500;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        let r = &self.run;
        if r.total_steps == 0 || r.metrics_every == 0 {
            return err("run.total_steps and run.metrics_every must be positive".into());
        }
        if r.num_envs == 0 || r.segment_len == 0 {
            return err("run.num_envs and run.segment_len must be positive".into());
        }
        if self.agent.kind == AgentKind::ByolHindsight && r.num_envs < 2 {
            return err("byol_hindsight draws negatives from other environments; run.num_envs must be at least 2".into());
        }
        if self.env.episode_length == 0 || !self.env.episode_length.is_multiple_of(r.segment_len) {
            return err(format!(
                "env.episode_length ({}) must be a positive multiple of run.segment_len ({})",
                self.env.episode_length, r.segment_len
            ));
        }
        if let Err(e) = self.env.noise().validate() {
            return err(e.to_string());
        }
        if !(self.env.noise_input_scale.is_finite() && self.env.noise_input_scale >= 0.0) {
            return err("env.noise_input_scale must be finite and non-negative".into());
        }
        if self.agent.mixing < 0.0 {
            return err("agent.mixing must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.agent.reward_decay) {
            return err("agent.reward_decay must lie in [0, 1)".into());
        }
        self.model.validate().map_err(HarnessError::Config)?;
        self.world_model.validate().map_err(HarnessError::Config)?;
        if self.world_model.horizon > r.segment_len {
            return err("world_model.horizon exceeds run.segment_len".into());
        }
        self.policy.validate().map_err(HarnessError::Config)?;
        self.a2c.validate().map_err(HarnessError::Config)?;
        if self.model.obs_dim != crate::worlds::OBS_DIM || self.policy.obs_dim != crate::worlds::OBS_DIM {
            return err(format!("obs_dim must be {} for the maze", crate::worlds::OBS_DIM));
        }
        if self.model.num_actions != crate::worlds::NUM_ACTIONS || self.policy.num_actions != crate::worlds::NUM_ACTIONS {
            return err(format!("num_actions must be {} for the maze", crate::worlds::NUM_ACTIONS));
        }
        Ok(())
    }
}
