//! The JSON run configuration shared by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use glcm_cnn::nn::{AdamConfig, LayerSpec, NetworkConfig, TrainConfig};
use glcm_cnn::{Error, PrepareOptions, Result, SynthSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Overrides the default image branch stack.
    pub image_branch: Option<Vec<LayerSpec>>,
    pub glcm_branch: Option<Vec<LayerSpec>>,
    pub image_feature_width: Option<usize>,
    pub glcm_feature_width: Option<usize>,
    /// Defaults to the number of labels found in the manifest.
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Evaluate mini-batch samples in parallel (results are unchanged).
    pub parallel_batches: bool,
    /// Train cross-validation folds concurrently.
    pub parallel_folds: bool,
    /// Fold held out by `train`; `null` trains on everything.
    pub test_fold: Option<usize>,
    pub k: usize,
    pub ablate_glcm: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            parallel_batches: false,
            parallel_folds: false,
            test_fold: Some(0),
            k: 5,
            ablate_glcm: false,
        }
    }
}

/// Fully resolved parameters of one run. Every field has a default, so a
/// config file only needs the values it changes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub prepare: PrepareOptions,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
    }

    /// Writes the config as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Json { path: path.into(), source: e })?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
        Ok(path.into())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig { learning_rate: t.learning_rate, beta1: t.beta1, beta2: t.beta2, epsilon: t.epsilon },
            seed: self.seed,
            parallel: t.parallel_batches,
        }
    }

    /// Network for inputs of the given shapes, honoring overrides and the
    /// GLCM ablation switch.
    pub fn network_config(&self, image_shape: [usize; 3], glcm_shape: [usize; 3], classes: usize) -> NetworkConfig {
        let n = &self.network;
        let mut cfg = NetworkConfig::desk(image_shape, glcm_shape, n.classes.unwrap_or(classes));
        cfg.seed = self.seed;
        if let Some(b) = &n.image_branch {
            cfg.image_branch = b.clone();
        }
        if let Some(b) = &n.glcm_branch {
            cfg.glcm_branch = b.clone();
        }
        if let Some(w) = n.image_feature_width {
            cfg.image_feature_width = w;
        }
        if let Some(w) = n.glcm_feature_width {
            cfg.glcm_feature_width = w;
        }
        if self.train.ablate_glcm {
            cfg.image_only()
        } else {
            cfg
        }
    }
}
