//! Run configuration: file loading, flag overrides and the echoed form.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use batchaudit::geometry::{DistanceConfig, DEFAULT_ELLS};
use batchaudit::probes::{BiasConfig, SitePredictionConfig, DEFAULT_K};
use batchaudit::synthgen::SynthConfig;
use batchaudit_stain::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistancesSection {
    /// Patches per slide, half normal and half tumour.
    pub n_per_group: usize,
    pub n_other_slides: usize,
    /// Explicit reference patch ids; when empty, `n_references` are drawn.
    pub references: Vec<String>,
    pub n_references: usize,
}

impl DistancesSection {
    pub fn sampling(&self) -> DistanceConfig {
        DistanceConfig {
            n_per_group: self.n_per_group,
            n_other_slides: self.n_other_slides,
        }
    }
}

impl Default for DistancesSection {
    fn default() -> Self {
        let d = DistanceConfig::default();
        Self {
            n_per_group: d.n_per_group,
            n_other_slides: d.n_other_slides,
            references: Vec::new(),
            n_references: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReducedSection {
    pub ells: Vec<usize>,
    pub k: usize,
}

impl Default for ReducedSection {
    fn default() -> Self {
        Self {
            ells: DEFAULT_ELLS.to_vec(),
            k: DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparabilitySection {
    pub n_components: usize,
}

impl Default for SeparabilitySection {
    fn default() -> Self {
        Self { n_components: 10 }
    }
}

/// Everything a run depends on. The copy embedded in a report reproduces
/// the run when passed back through `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub experiment: String,
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Site prediction; its budget and split also feed the reduced-feature
    /// experiment.
    pub site: SitePredictionConfig,
    pub bias: BiasConfig,
    pub distances: DistancesSection,
    pub reduced: ReducedSection,
    pub separability: SeparabilitySection,
    pub stain: PipelineConfig,
    pub synth: SynthConfig,
}

impl AuditConfig {
    /// Reads a TOML file (by extension) or JSON. A JSON report is accepted
    /// too; its `config` object is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            return toml::from_str(&text).with_context(|| format!("parsing {}", path.display()));
        }
        let mut value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if value.get("schema_version").is_some() {
            value = value
                .get_mut("config")
                .map(serde_json::Value::take)
                .with_context(|| format!("{} is a report without a config echo", path.display()))?;
        }
        serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn seed(&self) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None => bail!("a seed is required: pass --seed or set `seed` in the config"),
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!("an output directory is required: pass --out or set `out` in the config"),
        }
    }
}
