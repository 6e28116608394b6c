//! Run configuration: an optional TOML file whose values command-line flags
//! override.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mbct_core::analysis::ExperimentConfig;
use mbct_core::codec::DEFAULT_MAX_DRAWS;
use mbct_core::ledger::{DropPolicy, DEFAULT_MIN_FEE};
use mbct_core::session::SessionConfig;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub chain: Option<PathBuf>,
    pub wallet: Option<PathBuf>,
    pub drop_policy: String,
    pub timeout_blocks: u64,
    pub max_draws: u32,
    pub min_fee: u64,
    pub seed: Option<u64>,
    pub analysis: AnalysisSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub groups: usize,
    pub group_size: usize,
    pub reference_size: usize,
    pub ks_samples: usize,
    pub ks_instances: usize,
    pub ks_corpus: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            chain: None,
            wallet: None,
            drop_policy: "none".into(),
            timeout_blocks: SessionConfig::default().feedback_timeout_blocks,
            max_draws: DEFAULT_MAX_DRAWS,
            min_fee: DEFAULT_MIN_FEE,
            seed: None,
            analysis: AnalysisSection::default(),
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let d = ExperimentConfig::desk(0);
        AnalysisSection {
            groups: d.groups,
            group_size: d.group_size,
            reference_size: d.reference_size,
            ks_samples: d.ks_samples,
            ks_instances: d.ks_instances,
            ks_corpus: d.ks_corpus,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            feedback_timeout_blocks: self.timeout_blocks,
            max_draws: self.max_draws,
            fee: self.min_fee,
            ..SessionConfig::default()
        }
    }

    pub fn policy(&self) -> Result<DropPolicy> {
        DropPolicy::parse(&self.drop_policy).map_err(anyhow::Error::msg)
    }

    pub fn chain_path(&self) -> Result<&Path> {
        match &self.chain {
            Some(p) => Ok(p),
            None => bail!("no chain file given (use --chain or set `chain` in the config)"),
        }
    }

    pub fn wallet_path(&self) -> Result<&Path> {
        match &self.wallet {
            Some(p) => Ok(p),
            None => bail!("no wallet given (use --wallet or set `wallet` in the config)"),
        }
    }

    pub fn experiment(&self, seed: u64) -> ExperimentConfig {
        let a = &self.analysis;
        ExperimentConfig {
            groups: a.groups,
            group_size: a.group_size,
            reference_size: a.reference_size,
            ks_samples: a.ks_samples,
            ks_instances: a.ks_instances,
            ks_corpus: a.ks_corpus,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_config() {
        let c: RunConfig = toml::from_str("seed = 7\ndrop_policy = \"random:0.2:3\"\n[analysis]\ngroups = 2\n").unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.analysis.groups, 2);
        assert_eq!(c.analysis.group_size, 2_000);
        assert_eq!(c.policy().unwrap(), DropPolicy::random(0.2, 3));
        assert_eq!(c.session().feedback_timeout_blocks, 10);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<RunConfig>("sede = 7").is_err());
    }
}
