//! TOML run configuration shared by the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Format;
use crate::error::{Error, Result};
use crate::experiment::{BiasConfig, StrategyGrid, SweepConfig};
use crate::metrics::Metric;
use crate::recommend::RecommenderSpec;
use crate::splitting::SplitParams;

/// A named preset (`"ml100k"`) or an explicit column layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FormatSpec {
    Preset(String),
    Custom(Format),
}

impl FormatSpec {
    pub fn resolve(&self) -> Result<Format> {
        match self {
            FormatSpec::Preset(name) => Format::preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown format {name:?}; expected one of {}",
                    Format::PRESETS.join(", ")
                ))
            }),
            FormatSpec::Custom(f) => Ok(f.clone()),
        }
    }
}

impl Default for FormatSpec {
    fn default() -> Self {
        FormatSpec::Preset("ml100k".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default)]
    pub format: FormatSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub names: Vec<Metric>,
    pub cutoff: usize,
    /// List length; defaults to `cutoff`.
    pub depth: Option<usize>,
    pub exclude_empty_relevant: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            names: vec![Metric::Ndcg, Metric::Precision, Metric::Recall, Metric::RecipRank, Metric::MeanPopRank],
            cutoff: 10,
            depth: None,
            exclude_empty_relevant: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub split: SplitParams,
    #[serde(default)]
    pub algorithms: Vec<RecommenderSpec>,
    #[serde(default)]
    pub strategies: StrategyGrid,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub simulation: Option<BiasConfig>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn dataset(&self) -> Result<(&Path, Format)> {
        let ds = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("missing [dataset] section".into()))?;
        Ok((&ds.path, ds.format.resolve()?))
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let (path, format) = self.dataset()?;
        let cfg = SweepConfig {
            dataset: path.display().to_string(),
            format,
            split: self.split,
            algorithms: self.algorithms.clone(),
            strategies: self.strategies.clone(),
            metrics: self.metrics.names.clone(),
            cutoff: self.metrics.cutoff,
            depth: self.metrics.depth.unwrap_or(self.metrics.cutoff),
            exclude_empty_relevant: self.metrics.exclude_empty_relevant,
            seed: self.seed(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The simulation settings; the top-level seed wins over `simulation.seed`.
    pub fn bias_config(&self) -> Result<BiasConfig> {
        let mut cfg = self
            .simulation
            .clone()
            .ok_or_else(|| Error::Config("missing [simulation] section".into()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}
