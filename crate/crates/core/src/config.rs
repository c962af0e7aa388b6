use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fqi::FqiConfig;
use crate::grouping::{GloveConfig, KMeansConfig};
use crate::params::SimParams;

/// Everything a run needs besides the experiment grid. Simulator fields sit
/// at the top level; the learners get their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    #[serde(flatten)]
    pub sim: SimParams,
    pub glove: GloveConfig,
    pub kmeans: KMeansConfig,
    pub fqi: FqiConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 20_230_601,
            sim: SimParams::default(),
            glove: GloveConfig::default(),
            kmeans: KMeansConfig::default(),
            fqi: FqiConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.fqi.validate()?;
        if self.kmeans.k == 0 || self.kmeans.k > self.sim.n_treatments() {
            return Err(Error::InvalidParams("kmeans.k must lie in 1..=treatments".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_sim_fields_and_sections() {
        let cfg: Config = serde_json::from_str(
            r#"{"seed": 5, "plan_size": 8, "transition_cap": 0.5, "glove": {"dim": 4}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.sim.transition_cap, 0.5);
        assert_eq!(cfg.glove.dim, 4);
        assert_eq!(cfg.glove.epochs, 50);
        assert_eq!(cfg.kmeans.restarts, 1000);
        let round: Config = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }
}
