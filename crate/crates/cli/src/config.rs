//! Training configuration file.
//!
//! Every schedule, model and loss field lives here; command-line flags only
//! override the handful of top-level keys they mirror. The resolved config
//! is written next to the checkpoints as `train.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dic_core::losses::{DiscriminatorSpec, FeatureExtractorSpec};
use dic_core::trainer::PatchConfig;
use dic_core::{LossWeights, ModelSpec, TrainingSchedule};

use crate::UsageError;

pub const RESOLVED_CONFIG: &str = "train.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Seeds patch extraction and model initialisation; overrides
    /// `schedule.seed`.
    pub seed: u64,
    /// A PNG file or a directory of PNGs.
    pub dataset: PathBuf,
    pub model_dir: PathBuf,
    /// Training patches cut from the dataset.
    pub patches: usize,
    /// Full images for per-checkpoint rate points; when unset,
    /// `validation_patches` extra patches are cut from the dataset.
    pub validation: Option<PathBuf>,
    pub validation_patches: usize,
    pub first_model_id: u8,
    pub patch: PatchConfig,
    pub schedule: TrainingSchedule,
    pub weights: LossWeights,
    pub critic: DiscriminatorSpec,
    /// Perceptual feature network; a random frozen one when unset.
    pub perceptual: Option<FeatureExtractorSpec>,
    pub models: Vec<ModelSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: PathBuf::new(),
            model_dir: PathBuf::from("models"),
            patches: 1024,
            validation: None,
            validation_patches: 16,
            first_model_id: 0,
            patch: PatchConfig::default(),
            schedule: TrainingSchedule::default(),
            weights: LossWeights::default(),
            critic: DiscriminatorSpec::default(),
            perceptual: None,
            models: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(UsageError("no dataset path configured".into()).into());
        }
        if !self.dataset.exists() {
            return Err(UsageError(format!("dataset path {} does not exist", self.dataset.display())).into());
        }
        if let Some(v) = &self.validation {
            if !v.exists() {
                return Err(UsageError(format!("validation path {} does not exist", v.display())).into());
            }
        }
        if self.models.is_empty() {
            return Err(UsageError("config lists no [[models]]".into()).into());
        }
        if self.patches == 0 {
            return Err(UsageError("patches must be positive".into()).into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables_fall_back_to_defaults() {
        let c: TrainConfig = toml::from_str(
            r#"
            dataset = "imgs"
            [schedule]
            pretrain_epochs = 3
            [schedule.optimizer]
            learning_rate = 0.001
            [[models]]
            quant_bits = 6
            [models.encoder]
            residual_units = 2
            downsample_stages = 2
            bottleneck_channels = 4
            interior_channels = 8
            boundary_kernel = 3
            interior_kernel = 3
            allow_reduced_depth = true
            "#,
        )
        .unwrap();
        assert_eq!(c.schedule.pretrain_epochs, 3);
        assert_eq!(c.schedule.lambda_cap, 0.002);
        assert_eq!(c.schedule.optimizer.beta2, 0.999);
        assert_eq!(c.weights.perceptual, 0.003);
        assert_eq!(c.models[0].encoder.bottleneck_channels, 4);
        let back: TrainConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn shipped_configs_parse() {
        for text in [include_str!("../configs/standard.toml"), include_str!("../configs/toy.toml")] {
            let c: TrainConfig = toml::from_str(text).unwrap();
            assert_eq!(c.models.len(), 4);
            assert!(c.models.iter().all(|m| m.validate().is_ok()));
            assert!(c.schedule.validate().is_ok());
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<TrainConfig>("datset = 'x'").is_err());
    }
}
