//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "LFLOW_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub length: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Proposals generated per flow evaluation.
    pub chunk: usize,
    /// Jackknife blocks for reported errors.
    pub blocks: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            length: 10_000,
            burn_in: 0,
            thin: 1,
            chunk: 100,
            blocks: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub chain: ChainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
            chain: ChainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let c = &self.chain;
        if c.length == 0 || c.thin == 0 || c.chunk == 0 || c.blocks < 2 {
            return Err(Error::Config("chain length, thin and chunk must be positive and blocks >= 2".into()));
        }
        Ok(())
    }

    /// Apply the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.target_ess = Some(0.9);
        cfg.chain.length = 123;
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = "output_dir = \"x\"\n[train]\nside = 4\nlearning_rate = 0.1\n";
        assert!(matches!(RunConfig::from_toml(bad), Err(Error::Config(_))));
        let bad_top = "output_dir = \"x\"\nextra = 1\n";
        assert!(RunConfig::from_toml(bad_top).is_err());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::from_toml("output_dir = \"o\"\n[train]\nm_sq = 1.0\nlambda = 0.0\n").unwrap();
        assert_eq!(cfg.train.batch, 100);
        assert_eq!(cfg.chain.length, 10_000);
    }
}
