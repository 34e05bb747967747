//! TOML configuration files for `train` and `hpo`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thumbqc_core::backbone::{BackboneConfig, BackboneKind, FreezeMode};
use thumbqc_core::imaging::{Normalization, Scale};
use thumbqc_core::model::{AggregatorConfig, Approach, ModelConfig};
use thumbqc_core::training::{split_dataset, Manifest, TrainConfig};
use thumbqc_hpo::{Dimension, SearchSpace, StudyConfig};

use crate::error::{CliError, CliResult};

/// Either a named backbone (`desk` or a preset) or a full configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackboneSpec {
    Named(String),
    Custom(BackboneConfig),
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::Named("desk".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub approach: Approach,
    pub scale: Option<Scale>,
    #[serde(default)]
    pub backbone: BackboneSpec,
    /// Defaults to the preset widths of a named backbone.
    pub head_layers: Option<[usize; 3]>,
    pub dropout_p: Option<f64>,
    pub aggregator: Option<AggregatorConfig>,
    pub normalization: Option<Normalization>,
}

fn preset(name: &str) -> CliResult<Option<BackboneKind>> {
    if name == "desk" {
        return Ok(None);
    }
    BackboneKind::ALL
        .into_iter()
        .find(|k| serde_json::to_value(k).ok().and_then(|v| v.as_str().map(|s| s == name)).unwrap_or(false))
        .map(Some)
        .ok_or_else(|| CliError::Config(format!("model.backbone: unknown backbone `{name}` (desk, trans_path, uni, virchow2, h_optimus0)")))
}

impl ModelSpec {
    pub fn build(&self) -> CliResult<ModelConfig> {
        let mut cfg = ModelConfig::desk(self.approach);
        match &self.backbone {
            BackboneSpec::Named(name) => {
                if let Some(kind) = preset(name)? {
                    cfg.backbone = kind.config();
                    cfg.head_layers = kind.head_widths();
                }
            }
            BackboneSpec::Custom(b) => cfg.backbone = b.clone(),
        }
        if let Some(s) = self.scale {
            cfg.scale = s;
        }
        if let Some(h) = self.head_layers {
            cfg.head_layers = h;
        }
        if let Some(p) = self.dropout_p {
            cfg.dropout_p = p;
        }
        if let Some(a) = &self.aggregator {
            cfg.aggregator = a.clone();
        }
        if let Some(n) = self.normalization {
            cfg.normalization = n;
        }
        cfg.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        Ok(cfg)
    }
}

/// Optimizer settings; the model comes from [`ModelSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub freeze: Option<FreezeMode>,
    pub max_steps: Option<usize>,
    pub interleave_classes: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::new(ModelConfig::desk(Approach::XsSlides));
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            freeze: None,
            max_steps: None,
            interleave_classes: d.interleave_classes,
        }
    }
}

/// Data source shared by `train` and `hpo`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV or JSONL manifest, relative to the config file.
    pub manifest: PathBuf,
    /// Re-split the manifest into train/val/test with these fractions,
    /// stratified by label, instead of using its `split` column.
    pub split: Option<[f64; 3]>,
    /// Optional pretrained backbone weights (`.tqcw`), relative to the config file.
    pub backbone_weights: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSection,
}

impl TrainFile {
    pub fn train_config(&self, seed: u64) -> CliResult<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            model: self.model.build()?,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            seed,
            freeze: t.freeze,
            max_steps: t.max_steps,
            interleave_classes: t.interleave_classes,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    /// Validation accuracy after training the head widths for `budget` epochs.
    Train,
    /// Negative squared distance to `target`; exercises the study machinery
    /// without training.
    Quadratic { target: Vec<i64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_max_trials")]
    pub max_trials: usize,
    #[serde(default = "default_max_budget")]
    pub max_budget: u64,
    #[serde(default = "default_eta")]
    pub eta: u64,
}

fn default_max_trials() -> usize {
    StudyConfig::default().max_trials
}

fn default_max_budget() -> u64 {
    StudyConfig::default().max_budget
}

fn default_eta() -> u64 {
    StudyConfig::default().eta
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            max_trials: default_max_trials(),
            max_budget: default_max_budget(),
            eta: default_eta(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpoFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    /// Search dimensions; defaults to the three head widths.
    #[serde(default)]
    pub space: Vec<Dimension>,
    /// Required by the `train` objective.
    pub data: Option<DataSection>,
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_objective() -> Objective {
    Objective::Train
}

impl HpoFile {
    pub fn space(&self) -> CliResult<SearchSpace> {
        if self.space.is_empty() {
            return Ok(SearchSpace::head_widths());
        }
        SearchSpace::new(self.space.clone()).map_err(|e| CliError::Config(format!("space: {e}")))
    }

    pub fn study_config(&self, seed: u64) -> StudyConfig {
        StudyConfig {
            seed,
            max_trials: self.study.max_trials,
            max_budget: self.study.max_budget,
            eta: self.study.eta,
            ..Default::default()
        }
    }
}

/// Parses a TOML file; errors name the offending field.
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Loads the manifest of `data` relative to `config_path`, re-splitting it if requested.
pub fn load_manifest(data: &DataSection, config_path: &Path, seed: u64) -> CliResult<Manifest> {
    let path = resolve(config_path, &data.manifest);
    let manifest = Manifest::load(&path).map_err(|e| CliError::Config(format!("data.manifest: {e}")))?;
    match data.split {
        Some(f) => split_dataset(&manifest.records, f, seed).map_err(|e| CliError::Config(format!("data.split: {e}"))),
        None => Ok(manifest),
    }
}
