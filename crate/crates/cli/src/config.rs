//! Run configuration: schema-validated JSON, unknown keys rejected.

use crate::synth::SynthSpec;
use anyhow::{bail, Context};
use lhs_core::attack::AttackSpec;
use lhs_core::encoder::PipelineConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Load from a dataset directory.
    Path(PathBuf),
    /// Generate in memory from a spec.
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Lhs,
    VanillaGcn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

fn default_model() -> ModelKind {
    ModelKind::Lhs
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!("config must list at least one seed");
        }
        if let DatasetSource::Synth(spec) = &self.dataset {
            spec.validate()?;
        }
        for a in &self.attacks {
            a.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        Ok(())
    }

    /// Output directory, optionally re-rooted by the LHS_OUTPUT_ROOT
    /// environment variable.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os("LHS_OUTPUT_ROOT") {
            Some(root) if self.output_dir.is_relative() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }
}
