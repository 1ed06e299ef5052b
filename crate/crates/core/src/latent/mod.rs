//! Latent arithmetic between image latents and sensor backgrounds, and the
//! two cross-modal projection MLPs.
//!
//! Under [`PipelineMode::Split`] the image side of every projection is the
//! deformation latent `z_image − z_base(sensor)`; under `NoSplit` it is the
//! raw image latent.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{LatentSpace, LatentVec};
use crate::dataset::SensorProfile;
use crate::error::{Error, Result};
use crate::imagevae::ImageVae;
use crate::nn::checkpoint::{self, Manifest};
use crate::nn::{Activation, Layer, Linear, Scalar, Sequential};
use crate::preset::Preset;
use crate::rng;
use crate::train::{self, Standardizer, TrainConfig, TrainReport};

pub const MODULE_NAME: &str = "projection";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    Split,
    NoSplit,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 2] = [PipelineMode::Split, PipelineMode::NoSplit];

    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::Split => "split",
            PipelineMode::NoSplit => "nosplit",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "split" => Ok(PipelineMode::Split),
            "nosplit" => Ok(PipelineMode::NoSplit),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected split or nosplit)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "m2i")]
    MeshToImage,
    #[serde(rename = "i2m")]
    ImageToMesh,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::MeshToImage => "m2i",
            Direction::ImageToMesh => "i2m",
        }
    }

    pub fn input_space(self) -> LatentSpace {
        match self {
            Direction::MeshToImage => LatentSpace::Mesh,
            Direction::ImageToMesh => LatentSpace::Image,
        }
    }

    pub fn output_space(self) -> LatentSpace {
        match self {
            Direction::MeshToImage => LatentSpace::Image,
            Direction::ImageToMesh => LatentSpace::Mesh,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m2i" => Ok(Direction::MeshToImage),
            "i2m" => Ok(Direction::ImageToMesh),
            _ => Err(Error::Config(format!("unknown direction {s:?} (expected m2i or i2m)"))),
        }
    }
}

/// Hidden widths and dropout of the projection MLP; the output width comes
/// from the target latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub preset: String,
    pub hidden: Vec<usize>,
    /// Dropout after hidden layer i (missing entries mean none).
    pub dropout: Vec<f64>,
    pub train: TrainConfig,
}

impl ProjectionConfig {
    pub fn full() -> Self {
        Self {
            preset: "full".into(),
            hidden: vec![512, 1024, 1024],
            dropout: vec![0.2, 0.4],
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
            hidden: vec![128, 256, 256],
            train: TrainConfig {
                epochs: 150,
                batch_size: 64,
                ..Self::full().train
            },
            ..Self::full()
        }
    }

    pub fn tiny() -> Self {
        Self {
            preset: "tiny".into(),
            hidden: vec![32, 64, 64],
            train: TrainConfig {
                epochs: 60,
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
            return Err(Error::Config(format!("invalid projection config {self:?}")));
        }
        self.train.validate()
    }
}

/// `in_dim → hidden… → out_dim` MLP with ELU and dropout between hidden
/// layers; the output layer is linear.
pub fn build_projection_net<F: Scalar>(in_dim: usize, out_dim: usize, cfg: &ProjectionConfig, seed: u64) -> Result<Sequential<F>> {
    cfg.validate()?;
    let mut r = rng::rng(rng::derive_seed(seed, "projection/init"));
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
    net.push(Layer::Linear(Linear::new(prev, out_dim, &mut r)));
    Ok(net)
}

/// Encode the profile's background image and cache the posterior mean as
/// its `z_base`.
pub fn background_vector(profile: &mut SensorProfile, encoder: &ImageVae) -> Result<LatentVec> {
    if profile.background.pixels.is_empty() {
        return Err(Error::Missing(format!("background image for sensor {}", profile.sensor_id)));
    }
    let z = encoder.encode_image(&profile.background)?.mean_latent(LatentSpace::Image);
    profile.z_base = Some(z.clone());
    Ok(z)
}

fn same_image_space(a: &LatentVec, b: &LatentVec) -> Result<()> {
    a.expect(LatentSpace::Image, a.dim())?;
    b.expect(LatentSpace::Image, a.dim())
}

/// `z_image − z_base`.
pub fn extract_deformation(z_image: &LatentVec, z_base: &LatentVec) -> Result<LatentVec> {
    same_image_space(z_image, z_base)?;
    Ok(LatentVec::new(&z_image.values - &z_base.values, LatentSpace::Image))
}

/// `z_deform + z_base`.
pub fn compose(z_deform: &LatentVec, z_base: &LatentVec) -> Result<LatentVec> {
    same_image_space(z_deform, z_base)?;
    Ok(LatentVec::new(&z_deform.values + &z_base.values, LatentSpace::Image))
}

/// A trained projection: network plus input standardisation.
#[derive(Debug, Clone)]
pub struct Projection {
    pub direction: Direction,
    pub mode: PipelineMode,
    pub config: ProjectionConfig,
    pub in_dim: usize,
    pub out_dim: usize,
    pub net: Sequential<f32>,
    pub input_norm: Standardizer,
    pub seed: u64,
    pub best_val_loss: f64,
}

impl Projection {
    /// `mesh_dim`/`image_dim` are the two VAE latent sizes.
    pub fn new(direction: Direction, mode: PipelineMode, mesh_dim: usize, image_dim: usize, config: ProjectionConfig, seed: u64) -> Result<Self> {
        let (in_dim, out_dim) = match direction {
            Direction::MeshToImage => (mesh_dim, image_dim),
            Direction::ImageToMesh => (image_dim, mesh_dim),
        };
        let net = build_projection_net(in_dim, out_dim, &config, seed)?;
        Ok(Self {
            direction,
            mode,
            config,
            in_dim,
            out_dim,
            net,
            input_norm: Standardizer::identity(in_dim),
            seed,
            best_val_loss: f64::NAN,
        })
    }

    fn input_matrix(&self, z: &[&LatentVec]) -> Result<Array2<f32>> {
        for v in z {
            v.expect(self.direction.input_space(), self.in_dim)?;
        }
        Ok(self.input_norm.apply(&stack(z, self.in_dim)))
    }

    /// Inference with dropout off.
    pub fn apply(&self, z: &LatentVec) -> Result<LatentVec> {
        Ok(self.apply_batch(&[z])?.remove(0))
    }

    pub fn apply_batch(&self, z: &[&LatentVec]) -> Result<Vec<LatentVec>> {
        if z.is_empty() {
            return Ok(vec![]);
        }
        let y = train::predict(&self.net, &self.input_matrix(z)?, 1024);
        let space = self.direction.output_space();
        Ok(y.rows().into_iter().map(|r| LatentVec::new(r.mapv(f64::from), space)).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            format_version: checkpoint::FORMAT_VERSION,
            module: MODULE_NAME.into(),
            hyperparameters: serde_json::to_value(&self.config)?,
            topology_id: None,
            best_val_loss: self.best_val_loss,
            seed: self.seed,
            extra: serde_json::json!({
                "direction": self.direction,
                "mode": self.mode,
                "in_dim": self.in_dim,
                "out_dim": self.out_dim,
                "input_norm": self.input_norm,
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
        let config: ProjectionConfig = serde_json::from_value(manifest.hyperparameters).map_err(bad)?;
        let x = &manifest.extra;
        let direction: Direction = serde_json::from_value(x["direction"].clone()).map_err(bad)?;
        let mode: PipelineMode = serde_json::from_value(x["mode"].clone()).map_err(bad)?;
        let in_dim: usize = serde_json::from_value(x["in_dim"].clone()).map_err(bad)?;
        let out_dim: usize = serde_json::from_value(x["out_dim"].clone()).map_err(bad)?;
        let (mesh_dim, image_dim) = match direction {
            Direction::MeshToImage => (in_dim, out_dim),
            Direction::ImageToMesh => (out_dim, in_dim),
        };
        let mut p = Self::new(direction, mode, mesh_dim, image_dim, config, manifest.seed)?;
        p.input_norm = serde_json::from_value(x["input_norm"].clone()).map_err(bad)?;
        checkpoint::load_state(&mut p.net, &state)?;
        p.best_val_loss = manifest.best_val_loss;
        Ok(p)
    }

    fn expect(&self, direction: Direction, mode: PipelineMode) -> Result<()> {
        if self.direction != direction || self.mode != mode {
            return Err(Error::Config(format!(
                "projection is {}/{}, requested {direction}/{mode}",
                self.direction, self.mode
            )));
        }
        Ok(())
    }
}

fn stack(z: &[&LatentVec], dim: usize) -> Array2<f32> {
    let mut x = Array2::<f32>::zeros((z.len(), dim));
    for (mut row, v) in x.rows_mut().into_iter().zip(z) {
        row.assign(&v.values.mapv(|e| e as f32));
    }
    x
}

/// Mesh latent → image-side latent: `Z_Deform` under SPLIT, `Z_Image` under
/// NOSPLIT.
pub fn project_mesh_to_image(z_mesh: &LatentVec, proj: &Projection, mode: PipelineMode) -> Result<LatentVec> {
    proj.expect(Direction::MeshToImage, mode)?;
    proj.apply(z_mesh)
}

/// Image-side latent (`Z_Deform` under SPLIT, `Z_Image` under NOSPLIT) →
/// mesh latent.
pub fn project_image_to_mesh(z: &LatentVec, proj: &Projection, mode: PipelineMode) -> Result<LatentVec> {
    proj.expect(Direction::ImageToMesh, mode)?;
    proj.apply(z)
}

/// One frame's latents, from frozen encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedLatent {
    pub z_mesh: LatentVec,
    pub z_image: LatentVec,
    pub sensor_id: String,
}

/// Image-side latent of a pair as seen by a projection in `mode`.
pub fn image_side(pair: &PairedLatent, mode: PipelineMode, bases: &BTreeMap<String, LatentVec>) -> Result<LatentVec> {
    match mode {
        PipelineMode::NoSplit => Ok(pair.z_image.clone()),
        PipelineMode::Split => {
            let base = bases
                .get(&pair.sensor_id)
                .ok_or_else(|| Error::Missing(format!("background latent for sensor {}", pair.sensor_id)))?;
            extract_deformation(&pair.z_image, base)
        }
    }
}

/// Input and target matrices for `direction`/`mode`.
pub fn projection_arrays(
    pairs: &[PairedLatent],
    direction: Direction,
    mode: PipelineMode,
    bases: &BTreeMap<String, LatentVec>,
) -> Result<(Array2<f32>, Array2<f32>)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no latent pairs".into()))?;
    let (md, id) = (first.z_mesh.dim(), first.z_image.dim());
    let image: Vec<LatentVec> = pairs.iter().map(|p| image_side(p, mode, bases)).collect::<Result<_>>()?;
    for p in pairs {
        p.z_mesh.expect(LatentSpace::Mesh, md)?;
        p.z_image.expect(LatentSpace::Image, id)?;
    }
    let mesh = stack(&pairs.iter().map(|p| &p.z_mesh).collect::<Vec<_>>(), md);
    let image = stack(&image.iter().collect::<Vec<_>>(), id);
    Ok(match direction {
        Direction::MeshToImage => (mesh, image),
        Direction::ImageToMesh => (image, mesh),
    })
}

/// Fit a projection on frozen-encoder latents. Validation MSE is in raw
/// latent units of the target side.
pub fn train_projection(
    direction: Direction,
    mode: PipelineMode,
    train: &[PairedLatent],
    val: &[PairedLatent],
    bases: &BTreeMap<String, LatentVec>,
    config: &ProjectionConfig,
    seed: u64,
) -> Result<(Projection, TrainReport)> {
    let (x, y) = projection_arrays(train, direction, mode, bases)?;
    let (xv, yv) = projection_arrays(val, direction, mode, bases)?;
    let (md, id) = (train[0].z_mesh.dim(), train[0].z_image.dim());
    let mut proj = Projection::new(direction, mode, md, id, config.clone(), seed)?;
    if (xv.ncols(), yv.ncols()) != (x.ncols(), y.ncols()) {
        return Err(Error::Shape("validation latents differ in size from training latents".into()));
    }
    proj.input_norm = Standardizer::fit(&x);
    let (x, xv) = (proj.input_norm.apply(&x), proj.input_norm.apply(&xv));
    let report = train::fit_regression(&mut proj.net, (&x, &y), (&xv, &yv), &config.train, seed)?;
    proj.best_val_loss = report.best_val_loss;
    Ok((proj, report))
}

/// Mean squared error of `proj` on `pairs`, in raw target units.
pub fn projection_mse(proj: &Projection, pairs: &[PairedLatent], bases: &BTreeMap<String, LatentVec>) -> Result<f64> {
    let (x, y) = projection_arrays(pairs, proj.direction, proj.mode, bases)?;
    let x = proj.input_norm.apply(&x);
    Ok(train::regression_loss(&proj.net, &x, &y, 1024))
}

/// Background latents keyed by sensor, for profiles that have one.
pub fn base_map(profiles: &[SensorProfile]) -> BTreeMap<String, LatentVec> {
    profiles
        .iter()
        .filter_map(|p| p.z_base.clone().map(|z| (p.sensor_id.clone(), z)))
        .collect()
}

#[cfg(test)]
mod tests;
