//! Global configuration file: TOML with one section per component. Every
//! field is optional and falls back to the built-in default.
//!
//! ```toml
//! [sim]
//! max_steps = 500
//!
//! [reward]
//! t_gap = 1.2
//!
//! [stage2]
//! ratio = 0.4
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{BcConfig, IdmParams};
use crate::control::{CollectConfig, ControlTrainConfig, PowertrainModel};
use crate::ddpg::{DdpgConfig, StageTwoConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::reward::RewardConfig;
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub ddpg: DdpgConfig,
    pub stage2: StageTwoConfig,
    pub idm: IdmParams,
    pub bc: BcConfig,
    pub powertrain: PowertrainModel,
    pub collect: CollectConfig,
    pub control: ControlTrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.reward.validate()?;
        self.ddpg.validate()?;
        self.idm.validate()?;
        self.powertrain.validate()?;
        if !(self.eval.ttc_threshold > 0.0) {
            return Err(Error::Invalid("eval.ttc_threshold must be positive".into()));
        }
        if self.reward.a_min != self.sim.a_min {
            return Err(Error::Invalid("reward.a_min must equal sim.a_min".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_override_defaults() {
        let c = Config::from_toml("[sim]\nmax_steps = 500\n\n[ddpg]\ngamma = 0.9\n\n[idm]\nt_gap = 1.5\n").unwrap();
        assert_eq!(c.sim.max_steps, 500);
        assert_eq!(c.sim.dt, 0.1);
        assert_eq!(c.ddpg.gamma, 0.9);
        assert_eq!(c.ddpg.tau, 0.001);
        assert_eq!(c.idm.t_gap, 1.5);
        assert_eq!(c.reward, RewardConfig::default());
    }

    #[test]
    fn round_trip_and_rejections() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert!(Config::from_toml("[sim]\ndt = -1.0\n").is_err());
        assert!(Config::from_toml("[nope]\nx = 1\n").is_err());
        assert!(Config::from_toml("[sim]\nmax_steps = \"many\"\n").is_err());
    }
}
