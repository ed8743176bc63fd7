use std::path::{Path, PathBuf};

use fgnam::synth::SynthSpec;
use fgnam::TrainConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub stratified: bool,
    pub quantiles: Vec<f64>,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            folds: 5,
            stratified: true,
            quantiles: fgnam::metrics::DEFAULT_QUANTILES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub checkpoint: Option<PathBuf>,
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub checkpoint: Option<PathBuf>,
    pub grid_size: usize,
    /// When set, the shape plots show this many features drawn (seeded)
    /// from the `top` most important ones instead of every feature.
    pub plot_features: Option<usize>,
    pub top: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            checkpoint: None,
            grid_size: fgnam::interpret::DEFAULT_GRID_SIZE,
            plot_features: None,
            top: 20,
        }
    }
}

/// Lists of values to cross every combination of; empty lists keep the
/// `[train]` value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub learning_rate: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub widths: Vec<Vec<usize>>,
    pub dropout: Vec<f64>,
    pub feature_dropout: Vec<f64>,
    pub batch_size: Vec<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub train: TrainConfig,
    pub cv: CvSection,
    pub predict: PredictSection,
    pub explain: ExplainSection,
    pub simulate: SynthSpec,
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {}", path.display(), e.message())))
    }
}
