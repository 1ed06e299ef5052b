//! Force regression heads on top of frozen encoders and latents.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{ForceVec, LatentVec, Partition, TrajectorySample};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::imagevae::images_to_batch;
use crate::latent::{self, Direction, PipelineMode};
use crate::metrics::{force_mae, ForceMae};
use crate::nn::checkpoint::{self, Manifest};
use crate::nn::{Activation, Layer, Linear, Sequential};
use crate::preset::Preset;
use crate::rng;
use crate::train::{self, Standardizer, TrainConfig, TrainReport};

use super::Checkpoints;

pub const MODULE_NAME: &str = "force_head";

/// What the force head sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ForceConfig {
    /// Frozen mesh-encoder trunk on the ground-truth mesh.
    #[serde(rename = "raw_vertices")]
    RawVertices,
    /// Frozen image-encoder trunk on the image.
    #[serde(rename = "raw_images")]
    RawImages,
    /// Mesh posterior mean.
    #[serde(rename = "mesh_latent")]
    MeshLatent,
    /// Image posterior mean.
    #[serde(rename = "image_latent_nosplit")]
    ImageLatentNoSplit,
    /// Image posterior mean minus the sensor's background latent.
    #[serde(rename = "image_latent_split")]
    ImageLatentSplit,
    /// Image latent projected to the mesh latent space (NOSPLIT projection).
    #[serde(rename = "projected_mesh_nosplit")]
    ProjectedMeshNoSplit,
    /// Deformation latent projected to the mesh latent space.
    #[serde(rename = "projected_mesh_split")]
    ProjectedMeshSplit,
}

impl ForceConfig {
    pub const ALL: [ForceConfig; 7] = [
        ForceConfig::RawVertices,
        ForceConfig::RawImages,
        ForceConfig::MeshLatent,
        ForceConfig::ImageLatentNoSplit,
        ForceConfig::ImageLatentSplit,
        ForceConfig::ProjectedMeshNoSplit,
        ForceConfig::ProjectedMeshSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ForceConfig::RawVertices => "raw_vertices",
            ForceConfig::RawImages => "raw_images",
            ForceConfig::MeshLatent => "mesh_latent",
            ForceConfig::ImageLatentNoSplit => "image_latent_nosplit",
            ForceConfig::ImageLatentSplit => "image_latent_split",
            ForceConfig::ProjectedMeshNoSplit => "projected_mesh_nosplit",
            ForceConfig::ProjectedMeshSplit => "projected_mesh_split",
        }
    }

    /// Projection this configuration reads, if any.
    pub fn projection_mode(self) -> Option<PipelineMode> {
        match self {
            ForceConfig::ProjectedMeshNoSplit => Some(PipelineMode::NoSplit),
            ForceConfig::ProjectedMeshSplit => Some(PipelineMode::Split),
            _ => None,
        }
    }
}

impl fmt::Display for ForceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForceConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ForceConfig::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ForceConfig::ALL.iter().map(|c| c.name()).collect();
                Error::Config(format!("unknown force config {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

/// Dense regression head; ELU between layers, dropout after the first ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceHeadConfig {
    pub preset: String,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub train: TrainConfig,
}

impl ForceHeadConfig {
    pub fn full() -> Self {
        Self {
            preset: "full".into(),
            hidden: vec![128, 512, 512, 128],
            dropout: vec![0.2, 0.2],
            train: TrainConfig {
                epochs: 300,
                batch_size: 512,
                lr: 1e-3,
                lr_decay: 0.99,
                weight_decay: 0.0,
                patience: 20,
            },
        }
    }

    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            hidden: vec![64, 256, 256, 64],
            train: TrainConfig {
                epochs: 100,
                batch_size: 128,
                ..Self::full().train
            },
            ..Self::full()
        }
    }

    pub fn tiny() -> Self {
        Self {
            preset: "tiny".into(),
            hidden: vec![32, 64, 64, 32],
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                lr: 3e-3,
                ..Self::full().train
            },
            ..Self::full()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => Self::tiny(),
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(format!("invalid force head config {self:?}")));
        }
        self.train.validate()
    }
}

pub fn build_force_head(in_dim: usize, cfg: &ForceHeadConfig, seed: u64) -> Result<Sequential<f32>> {
    cfg.validate()?;
    let mut r = rng::rng(rng::derive_seed(seed, "force/init"));
    let mut net = Sequential::new(vec![]);
    let mut prev = in_dim;
    for (i, &h) in cfg.hidden.iter().enumerate() {
        net.push(Layer::Linear(Linear::new(prev, h, &mut r)));
        net.push(Layer::Act(Activation::Elu));
        if let Some(&p) = cfg.dropout.get(i) {
            if p > 0.0 {
                net.push(Layer::Dropout(p));
            }
        }
        prev = h;
    }
    net.push(Layer::Linear(Linear::new(prev, 3, &mut r)));
    Ok(net)
}

/// Encoder without its final (posterior) layer.
fn trunk(encoder: &Sequential<f32>) -> Sequential<f32> {
    let n = encoder.layers.len().saturating_sub(1);
    Sequential::new(encoder.layers[..n].to_vec())
}

fn rows(x: ArrayD<f32>) -> Array2<f32> {
    let b = x.shape()[0];
    let f = x.len() / b.max(1);
    x.into_shape_with_order((b, f)).expect("contiguous trunk output")
}

fn stack(z: &[LatentVec]) -> Array2<f32> {
    let d = z.first().map_or(0, LatentVec::dim);
    let mut x = Array2::<f32>::zeros((z.len(), d));
    for (mut row, v) in x.rows_mut().into_iter().zip(z) {
        row.assign(&v.values.mapv(|e| e as f32));
    }
    x
}

/// Samples with their frozen-encoder posterior means.
#[derive(Debug, Clone)]
pub struct EncodedSamples<'a> {
    pub samples: Vec<&'a TrajectorySample>,
    pub z_mesh: Vec<LatentVec>,
    pub z_image: Vec<LatentVec>,
}

impl<'a> EncodedSamples<'a> {
    pub fn new(samples: Vec<&'a TrajectorySample>, ck: &Checkpoints) -> Result<Self> {
        let meshes: Vec<_> = samples.iter().map(|s| s.mesh.as_ref()).collect();
        let images: Vec<_> = samples.iter().map(|s| s.image.as_ref()).collect();
        let z_mesh = ck
            .mesh_vae
            .encode_meshes(&meshes)?
            .iter()
            .map(|p| p.mean_latent(crate::data::LatentSpace::Mesh))
            .collect();
        let z_image = ck
            .image_vae
            .encode_images(&images)?
            .iter()
            .map(|p| p.mean_latent(crate::data::LatentSpace::Image))
            .collect();
        Ok(Self { samples, z_mesh, z_image })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn forces(&self) -> Vec<ForceVec> {
        self.samples.iter().map(|s| s.force).collect()
    }

    /// Deformation latents `z_image − z_base(sensor)`.
    pub fn deformations(&self, ck: &Checkpoints) -> Result<Vec<LatentVec>> {
        self.samples
            .iter()
            .zip(&self.z_image)
            .map(|(s, z)| latent::extract_deformation(z, ck.profile(&s.sensor_id)?.z_base()?))
            .collect()
    }

    /// Image-side latents as a projection in `mode` sees them.
    pub fn image_side(&self, ck: &Checkpoints, mode: PipelineMode) -> Result<Vec<LatentVec>> {
        match mode {
            PipelineMode::NoSplit => Ok(self.z_image.clone()),
            PipelineMode::Split => self.deformations(ck),
        }
    }
}

/// Input matrix of `config` for `set`.
pub fn force_features(config: ForceConfig, set: &EncodedSamples<'_>, ck: &Checkpoints) -> Result<Array2<f32>> {
    const CHUNK: usize = 64;
    Ok(match config {
        ForceConfig::RawVertices => {
            let t = trunk(&ck.mesh_vae.vae.encoder);
            let mut parts = Vec::new();
            for chunk in set.samples.chunks(CHUNK) {
                let meshes: Vec<_> = chunk.iter().map(|s| s.mesh.as_ref()).collect();
                parts.push(rows(t.infer(&ck.mesh_vae.to_input(&meshes)?)));
            }
            concat(parts)
        }
        ForceConfig::RawImages => {
            let t = trunk(&ck.image_vae.vae.encoder);
            let mut parts = Vec::new();
            for chunk in set.samples.chunks(CHUNK) {
                let images: Vec<_> = chunk.iter().map(|s| s.image.as_ref()).collect();
                parts.push(rows(t.infer(&images_to_batch(&images))));
            }
            concat(parts)
        }
        ForceConfig::MeshLatent => stack(&set.z_mesh),
        ForceConfig::ImageLatentNoSplit => stack(&set.z_image),
        ForceConfig::ImageLatentSplit => stack(&set.deformations(ck)?),
        ForceConfig::ProjectedMeshNoSplit | ForceConfig::ProjectedMeshSplit => {
            let mode = config.projection_mode().expect("projected config");
            let proj = ck.projection(Direction::ImageToMesh, mode)?;
            let z = set.image_side(ck, mode)?;
            stack(&proj.apply_batch(&z.iter().collect::<Vec<_>>())?)
        }
    })
}

fn concat(parts: Vec<Array2<f32>>) -> Array2<f32> {
    if parts.is_empty() {
        return Array2::zeros((0, 0));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal feature widths")
}

fn force_matrix(f: &[ForceVec]) -> Array2<f32> {
    Array2::from_shape_fn((f.len(), 3), |(i, k)| f[i].as_array()[k] as f32)
}

/// A trained head with its input and target standardisation.
#[derive(Debug, Clone)]
pub struct ForceHead {
    pub config: ForceConfig,
    pub head: ForceHeadConfig,
    pub in_dim: usize,
    pub net: Sequential<f32>,
    pub input_norm: Standardizer,
    pub target_norm: Standardizer,
    pub seed: u64,
    pub best_val_loss: f64,
}

impl ForceHead {
    pub fn new(config: ForceConfig, head: ForceHeadConfig, in_dim: usize, seed: u64) -> Result<Self> {
        let net = build_force_head(in_dim, &head, seed)?;
        Ok(Self {
            config,
            head,
            in_dim,
            net,
            input_norm: Standardizer::identity(in_dim),
            target_norm: Standardizer::identity(3),
            seed,
            best_val_loss: f64::NAN,
        })
    }

    pub fn predict(&self, features: &Array2<f32>) -> Result<Vec<ForceVec>> {
        if features.ncols() != self.in_dim {
            return Err(Error::Shape(format!(
                "force head expects {} features, got {}",
                self.in_dim,
                features.ncols()
            )));
        }
        let y = self
            .target_norm
            .invert(&train::predict(&self.net, &self.input_norm.apply(features), 1024));
        Ok(y
            .rows()
            .into_iter()
            .map(|r| ForceVec::new(f64::from(r[0]), f64::from(r[1]), f64::from(r[2])))
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            format_version: checkpoint::FORMAT_VERSION,
            module: MODULE_NAME.into(),
            hyperparameters: serde_json::to_value(&self.head)?,
            topology_id: None,
            best_val_loss: self.best_val_loss,
            seed: self.seed,
            extra: serde_json::json!({
                "config": self.config,
                "in_dim": self.in_dim,
                "input_norm": self.input_norm,
                "target_norm": self.target_norm,
            }),
        };
        checkpoint::save(dir, &manifest, &checkpoint::state_of(&self.net))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, state) = checkpoint::load::<f32>(dir)?;
        if manifest.module != MODULE_NAME {
            return Err(Error::format(dir, format!("checkpoint holds {}, not {MODULE_NAME}", manifest.module)));
        }
        let bad = |e: serde_json::Error| Error::format(dir, e.to_string());
        let head: ForceHeadConfig = serde_json::from_value(manifest.hyperparameters).map_err(bad)?;
        let x = &manifest.extra;
        let config: ForceConfig = serde_json::from_value(x["config"].clone()).map_err(bad)?;
        let in_dim: usize = serde_json::from_value(x["in_dim"].clone()).map_err(bad)?;
        let mut h = Self::new(config, head, in_dim, manifest.seed)?;
        h.input_norm = serde_json::from_value(x["input_norm"].clone()).map_err(bad)?;
        h.target_norm = serde_json::from_value(x["target_norm"].clone()).map_err(bad)?;
        checkpoint::load_state(&mut h.net, &state)?;
        h.best_val_loss = manifest.best_val_loss;
        Ok(h)
    }
}

/// Fit one head on precomputed features.
pub fn fit_force_head(
    config: ForceConfig,
    head: &ForceHeadConfig,
    train: (&Array2<f32>, &[ForceVec]),
    val: (&Array2<f32>, &[ForceVec]),
    seed: u64,
) -> Result<(ForceHead, TrainReport)> {
    let (x, y) = (train.0, force_matrix(train.1));
    let (xv, yv) = (val.0, force_matrix(val.1));
    if xv.ncols() != x.ncols() {
        return Err(Error::Shape("validation features differ in width from training features".into()));
    }
    let mut h = ForceHead::new(config, head.clone(), x.ncols(), seed)?;
    h.input_norm = Standardizer::fit(x);
    h.target_norm = Standardizer::fit(&y);
    let (xs, xvs) = (h.input_norm.apply(x), h.input_norm.apply(xv));
    let (ys, yvs) = (h.target_norm.apply(&y), h.target_norm.apply(&yv));
    let report = train::fit_regression(&mut h.net, (&xs, &ys), (&xvs, &yvs), &head.train, seed)?;
    h.best_val_loss = report.best_val_loss;
    Ok((h, report))
}

/// Train/validation/test samples of the force experiment with their
/// latents. The test set is the held-out-sensor part of test_b.
pub struct ForceSplits<'a> {
    pub train: EncodedSamples<'a>,
    pub val: EncodedSamples<'a>,
    pub test: EncodedSamples<'a>,
}

impl<'a> ForceSplits<'a> {
    pub fn new(dataset: &'a Dataset, ck: &Checkpoints) -> Result<Self> {
        let held = dataset.holdout_sensors();
        let test: Vec<_> = dataset
            .eligible(Partition::TestB)
            .into_iter()
            .filter(|s| held.contains(&s.sensor_id))
            .collect();
        let (train, val) = (dataset.eligible(Partition::Train), dataset.eligible(Partition::Val));
        if train.is_empty() || val.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "force experiment needs train, val and held-out-sensor test samples (got {}, {}, {})",
                train.len(),
                val.len(),
                test.len()
            )));
        }
        Ok(Self {
            train: EncodedSamples::new(train, ck)?,
            val: EncodedSamples::new(val, ck)?,
            test: EncodedSamples::new(test, ck)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMae {
    pub seed: u64,
    pub mae: ForceMae,
}

/// Per-seed test MAEs of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTable {
    pub config: ForceConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub per_seed: Vec<SeedMae>,
    pub mean: ForceMae,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: ForceMae,
    /// MAE of always predicting zero force.
    pub zero_baseline: ForceMae,
}

fn mae_fields(m: &ForceMae) -> [f64; 4] {
    [m.fx, m.fy, m.fz, m.norm]
}

fn mae_from(v: [f64; 4]) -> ForceMae {
    ForceMae {
        fx: v[0],
        fy: v[1],
        fz: v[2],
        norm: v[3],
    }
}

/// Mean and sample standard deviation of per-seed MAEs.
pub fn mean_std(maes: &[ForceMae]) -> (ForceMae, ForceMae) {
    let n = maes.len() as f64;
    let mut mean = [0.0; 4];
    for m in maes {
        for (a, v) in mean.iter_mut().zip(mae_fields(m)) {
            *a += v / n;
        }
    }
    let mut var = [0.0; 4];
    if maes.len() > 1 {
        for m in maes {
            for ((a, v), mu) in var.iter_mut().zip(mae_fields(m)).zip(mean) {
                *a += (v - mu).powi(2) / (n - 1.0);
            }
        }
    }
    (mae_from(mean), mae_from(var.map(f64::sqrt)))
}

/// Train one head per seed and score it on the held-out-sensor test set.
pub fn train_force_on(
    config: ForceConfig,
    head: &ForceHeadConfig,
    splits: &ForceSplits<'_>,
    ck: &Checkpoints,
    seeds: &[u64],
) -> Result<(ForceTable, Vec<ForceHead>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("train_force needs at least one seed".into()));
    }
    let x = force_features(config, &splits.train, ck)?;
    let xv = force_features(config, &splits.val, ck)?;
    let xt = force_features(config, &splits.test, ck)?;
    let (y, yv, yt) = (splits.train.forces(), splits.val.forces(), splits.test.forces());
    let mut per_seed = Vec::new();
    let mut heads = Vec::new();
    for &seed in seeds {
        let (h, _) = fit_force_head(config, head, (&x, &y), (&xv, &yv), seed)?;
        per_seed.push(SeedMae {
            seed,
            mae: force_mae(&h.predict(&xt)?, &yt)?,
        });
        heads.push(h);
    }
    let (mean, std) = mean_std(&per_seed.iter().map(|s| s.mae).collect::<Vec<_>>());
    let zero_baseline = force_mae(&vec![ForceVec::ZERO; yt.len()], &yt)?;
    Ok((
        ForceTable {
            config,
            n_train: y.len(),
            n_test: yt.len(),
            per_seed,
            mean,
            std,
            zero_baseline,
        },
        heads,
    ))
}

/// [`train_force_on`] with splits taken from `dataset`.
pub fn train_force(
    config: ForceConfig,
    dataset: &Dataset,
    ck: &Checkpoints,
    head: &ForceHeadConfig,
    seeds: &[u64],
) -> Result<ForceTable> {
    let splits = ForceSplits::new(dataset, ck)?;
    Ok(train_force_on(config, head, &splits, ck, seeds)?.0)
}
