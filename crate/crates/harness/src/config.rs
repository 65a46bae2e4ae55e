//! Experiment configs and dataset manifests, both TOML.

use std::path::{Path, PathBuf};

use courtcast::data::{SplitPolicy, SplitRatios, SyntheticConfig};
use courtcast::models::{ModelConfig, ModelKind};
use courtcast::optim::AdamWConfig;
use courtcast::DT;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    InputLengthSweep,
    WithinTeam,
    CrossTeam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Synthetic,
    NbaTracking,
    NeutralCsv,
}

/// Where the games come from and how they are partitioned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: DataFormat,
    #[serde(default)]
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default = "default_split")]
    pub split: SplitPolicy,
    #[serde(default)]
    pub ratios: SplitRatios,
    #[serde(default)]
    pub seed: u64,
}

fn default_split() -> SplitPolicy {
    SplitPolicy::ByGame { team: None }
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let mut m: DatasetManifest =
            toml::from_str(&text).map_err(|e| HarnessError::config(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in &mut m.files {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        if m.format != DataFormat::Synthetic && m.files.is_empty() {
            return Err(HarnessError::config(path, "no files listed"));
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warm-up, capped at the configured learning rate.
    Warmup { steps: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    /// One player per window, cycling through the players.
    Rotate,
    /// Every player of every window.
    AllPlayers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub schedule: LrSchedule,
    /// Stop after this many epochs without a better validation loss.
    pub patience: usize,
    pub train_targets: Targets,
    pub eval_targets: Targets,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            optimizer: AdamWConfig::default(),
            schedule: LrSchedule::Constant,
            patience: 5,
            train_targets: Targets::Rotate,
            eval_targets: Targets::AllPlayers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub models: Vec<ModelKind>,
    /// Input lengths; experiments 2 and 3 use the first entry.
    pub history_s: Vec<f64>,
    pub forecast_s: f64,
    pub stride_s: f64,
    pub seed: u64,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Overrides the manifest's split when set.
    pub split: Option<SplitPolicy>,
    pub ratios: Option<SplitRatios>,
    /// Horizons written to the summary tables.
    pub table_horizons_s: Vec<f64>,
    /// `desk`, `paper` or `miniature`; `model` entries override it.
    pub size: String,
    pub model: toml::Table,
    pub train: TrainConfig,
    /// Experiment-2 summary used for the cross-team deltas.
    pub baseline: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentId::WithinTeam,
            models: ModelKind::ALL.to_vec(),
            history_s: vec![2.0],
            forecast_s: 2.0,
            stride_s: 0.16,
            seed: 0,
            dataset: PathBuf::from("dataset.toml"),
            output: PathBuf::from("out"),
            split: None,
            ratios: None,
            table_horizons_s: vec![0.48, 2.0],
            size: "desk".into(),
            model: toml::Table::new(),
            train: TrainConfig::default(),
            baseline: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let mut c: ExperimentConfig =
            toml::from_str(&text).map_err(|e| HarnessError::config(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.dataset, &mut c.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(b) = c.baseline.as_mut() {
            if b.is_relative() {
                *b = base.join(&*b);
            }
        }
        c.model_config()?;
        Ok(c)
    }

    /// Size preset with the `[model]` overrides applied.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let preset = ModelConfig::preset(&self.size)?;
        if self.model.is_empty() {
            return Ok(preset);
        }
        let mut table = toml::Table::try_from(&preset).map_err(|e| HarnessError::Config {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        for (k, v) in &self.model {
            if !table.contains_key(k) && !matches!(k.as_str(), "d_k") {
                return Err(HarnessError::Config {
                    path: PathBuf::new(),
                    message: format!("unknown model setting {k:?}"),
                });
            }
            table.insert(k.clone(), v.clone());
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Config {
            path: PathBuf::new(),
            message: e.to_string(),
        })
    }

    pub fn forecast_steps(&self) -> Result<usize> {
        seconds_to_steps(self.forecast_s)
    }

    pub fn stride_steps(&self) -> Result<usize> {
        seconds_to_steps(self.stride_s)
    }
}

/// Nearest whole number of 0.04 s steps (halves round up); at least one.
pub fn seconds_to_steps(s: f64) -> Result<usize> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(HarnessError::Invalid(format!("duration must be positive, got {s} s")));
    }
    Ok(((s / DT + 1e-9).round() as usize).max(1))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
