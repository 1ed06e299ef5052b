use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagevae::ImageVaeConfig;
use crate::latent::{PipelineMode, ProjectionConfig};
use crate::meshvae::MeshVaeConfig;
use crate::preset::Preset;
use crate::synth::DatasetSpec;

use super::force::{ForceConfig, ForceHeadConfig};

/// Architecture and schedule of every trained component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfigs {
    pub mesh_vae: MeshVaeConfig,
    pub image_vae: ImageVaeConfig,
    pub projection: ProjectionConfig,
    pub force: ForceHeadConfig,
}

impl ModelConfigs {
    pub fn preset(p: Preset) -> Self {
        Self {
            mesh_vae: MeshVaeConfig::preset(p),
            image_vae: ImageVaeConfig::preset(p),
            projection: ProjectionConfig::preset(p),
            force: ForceHeadConfig::preset(p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh_vae.validate()?;
        self.image_vae.validate()?;
        self.projection.validate()?;
        self.force.validate()
    }
}

/// Synthetic dataset matching a preset; image size follows the image VAE.
pub fn dataset_preset(p: Preset, seed: u64) -> DatasetSpec {
    let mut spec = match p {
        Preset::Tiny => DatasetSpec::new(3, 3, 3, 8, seed),
        Preset::Desk => DatasetSpec::new(5, 6, 40, 25, seed),
        Preset::Full => {
            let mut s = DatasetSpec::new(10, 13, 40, 25, seed);
            s.holdout_sensors = 2;
            s.holdout_indenters = 2;
            s
        }
    };
    spec.image = ImageVaeConfig::preset(p).input;
    spec
}

fn default_modes() -> Vec<PipelineMode> {
    PipelineMode::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_force_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_force_configs() -> Vec<ForceConfig> {
    ForceConfig::ALL.to_vec()
}

fn default_max_eval() -> usize {
    256
}

fn default_cycles() -> usize {
    40
}

fn default_cycle_starts() -> usize {
    4
}

fn default_transfer_images() -> usize {
    16
}

/// One experiment: where data and artifacts live and what to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub out: PathBuf,
    pub preset: Preset,
    #[serde(default = "default_modes")]
    pub modes: Vec<PipelineMode>,
    /// Seed of data generation and of both VAEs.
    #[serde(default)]
    pub seed: u64,
    /// Projection seeds; Tables 1 and 4 average over them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Force-head seeds.
    #[serde(default = "default_force_seeds")]
    pub force_seeds: Vec<u64>,
    #[serde(default = "default_force_configs")]
    pub force_configs: Vec<ForceConfig>,
    /// Cap on evaluated samples per partition (evenly strided).
    #[serde(default = "default_max_eval")]
    pub max_eval_samples: usize,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    /// Number of starting images for the cyclic experiment.
    #[serde(default = "default_cycle_starts")]
    pub cycle_starts: usize,
    /// Images per sensor in the style-transfer table.
    #[serde(default = "default_transfer_images")]
    pub transfer_images: usize,
    /// Overrides of the preset architectures.
    #[serde(default)]
    pub models: Option<ModelConfigs>,
    /// Overrides of the preset dataset, used by `gen-data`.
    #[serde(default)]
    pub data: Option<DatasetSpec>,
}

impl RunConfig {
    pub fn new(preset: Preset, root: &Path) -> Self {
        Self {
            dataset: root.join("data"),
            checkpoints: root.join("checkpoints"),
            out: root.join("reports"),
            preset,
            modes: default_modes(),
            seed: 0,
            seeds: default_seeds(),
            force_seeds: default_force_seeds(),
            force_configs: default_force_configs(),
            max_eval_samples: default_max_eval(),
            cycles: default_cycles(),
            cycle_starts: default_cycle_starts(),
            transfer_images: default_transfer_images(),
            models: None,
            data: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.seeds.is_empty() || self.force_seeds.is_empty() {
            return Err(Error::Config("modes, seeds and force_seeds must be non-empty".into()));
        }
        if self.max_eval_samples == 0 || self.transfer_images == 0 {
            return Err(Error::Config("max_eval_samples and transfer_images must be >= 1".into()));
        }
        self.model_configs().validate()
    }

    pub fn model_configs(&self) -> ModelConfigs {
        self.models.clone().unwrap_or_else(|| ModelConfigs::preset(self.preset))
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        self.data.clone().unwrap_or_else(|| dataset_preset(self.preset, self.seed))
    }
}
