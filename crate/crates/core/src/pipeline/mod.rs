//! End-to-end flows over trained components: mesh → image simulation,
//! image → mesh reconstruction, style transfer, cyclic reconstruction,
//! force estimation, and the training/evaluation orchestration.

pub mod config;
pub mod force;
pub mod run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{LatentSpace, LatentVec, TactileImage, TriMesh};
use crate::dataset::{Dataset, SensorProfile};
use crate::error::{Error, Result};
use crate::imagevae::ImageVae;
use crate::latent::{self, Direction, PipelineMode, Projection};
use crate::meshvae::MeshVae;
use crate::metrics::{self, DriftReport};

pub use config::{dataset_preset, ModelConfigs, RunConfig};
pub use force::{train_force, ForceConfig, ForceHeadConfig, ForceTable};

/// Checkpoint directory layout.
pub mod layout {
    use super::*;

    pub fn mesh_vae(root: &Path) -> PathBuf {
        root.join("mesh_vae")
    }

    pub fn image_vae(root: &Path) -> PathBuf {
        root.join("image_vae")
    }

    pub fn profiles(root: &Path) -> PathBuf {
        root.join("profiles.json")
    }

    pub fn projection(root: &Path, seed: u64, direction: Direction, mode: PipelineMode) -> PathBuf {
        root.join("projection")
            .join(format!("seed_{seed}"))
            .join(format!("{direction}_{mode}"))
    }

    pub fn force(root: &Path, config: super::ForceConfig) -> PathBuf {
        root.join("force").join(config.name())
    }
}

/// Background latents of every sensor, as stored next to the image VAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub latent_dim: usize,
    pub z_base: BTreeMap<String, Vec<f64>>,
}

impl ProfileFile {
    pub fn from_profiles(profiles: &[SensorProfile], latent_dim: usize) -> Result<Self> {
        let z_base = profiles
            .iter()
            .map(|p| Ok((p.sensor_id.clone(), p.z_base()?.values.to_vec())))
            .collect::<Result<_>>()?;
        Ok(Self { latent_dim, z_base })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing(format!("{what} at {}", path.display())))
    }
}

/// Everything inference needs: both VAEs, sensor profiles with their
/// background latents, and the projections of one seed.
#[derive(Debug, Clone)]
pub struct Checkpoints {
    pub mesh_vae: MeshVae,
    pub image_vae: ImageVae,
    pub profiles: BTreeMap<String, SensorProfile>,
    pub projections: BTreeMap<(Direction, PipelineMode), Projection>,
}

impl Checkpoints {
    pub fn new(mesh_vae: MeshVae, image_vae: ImageVae, profiles: Vec<SensorProfile>) -> Self {
        Self {
            mesh_vae,
            image_vae,
            profiles: profiles.into_iter().map(|p| (p.sensor_id.clone(), p)).collect(),
            projections: BTreeMap::new(),
        }
    }

    /// VAEs and profiles; backgrounds come from `dataset`.
    pub fn load_base(root: &Path, dataset: &Dataset) -> Result<Self> {
        let (mdir, idir, ppath) = (layout::mesh_vae(root), layout::image_vae(root), layout::profiles(root));
        require(&mdir, "mesh VAE checkpoint")?;
        require(&idir, "image VAE checkpoint")?;
        require(&ppath, "sensor profiles")?;
        let mesh_vae = MeshVae::load(&mdir, dataset.topology.clone())?;
        let image_vae = ImageVae::load(&idir)?;
        let file = ProfileFile::load(&ppath)?;
        if file.latent_dim != image_vae.latent_dim() {
            return Err(Error::LatentSpace {
                expected: format!("image latent of dim {}", image_vae.latent_dim()),
                got: format!("profiles of dim {}", file.latent_dim),
            });
        }
        let mut profiles = dataset.profiles()?;
        for p in &mut profiles {
            if let Some(z) = file.z_base.get(&p.sensor_id) {
                let z = LatentVec::new(z.clone().into(), LatentSpace::Image);
                z.expect(LatentSpace::Image, file.latent_dim)?;
                p.z_base = Some(z);
            }
        }
        Ok(Self::new(mesh_vae, image_vae, profiles))
    }

    /// Load the projections of `seed` for `modes`, both directions.
    pub fn load_projections(&mut self, root: &Path, seed: u64, modes: &[PipelineMode]) -> Result<()> {
        self.projections.clear();
        for &mode in modes {
            for direction in [Direction::MeshToImage, Direction::ImageToMesh] {
                let dir = layout::projection(root, seed, direction, mode);
                require(&dir, &format!("{direction}/{mode} projection (seed {seed})"))?;
                self.projections.insert((direction, mode), Projection::load(&dir)?);
            }
        }
        Ok(())
    }

    pub fn load(root: &Path, dataset: &Dataset, seed: u64, modes: &[PipelineMode]) -> Result<Self> {
        let mut ck = Self::load_base(root, dataset)?;
        ck.load_projections(root, seed, modes)?;
        Ok(ck)
    }

    pub fn projection(&self, direction: Direction, mode: PipelineMode) -> Result<&Projection> {
        self.projections
            .get(&(direction, mode))
            .ok_or_else(|| Error::Missing(format!("{direction}/{mode} projection")))
    }

    pub fn profile(&self, sensor: &str) -> Result<&SensorProfile> {
        self.profiles
            .get(sensor)
            .ok_or_else(|| Error::Missing(format!("profile of sensor {sensor}")))
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("{a} inputs but {b} {what}")));
    }
    Ok(())
}

/// Image latents (before decoding) for mesh latents under `mode`.
pub fn image_latents_from_mesh_latents(
    z_mesh: &[&LatentVec],
    targets: &[&SensorProfile],
    ck: &Checkpoints,
    mode: PipelineMode,
) -> Result<Vec<LatentVec>> {
    same_len(z_mesh.len(), targets.len(), "target profiles")?;
    let bases = match mode {
        PipelineMode::Split => targets.iter().map(|p| p.z_base().map(Some)).collect::<Result<Vec<_>>>()?,
        PipelineMode::NoSplit => vec![None; targets.len()],
    };
    let proj = ck.projection(Direction::MeshToImage, mode)?;
    let mut out = Vec::with_capacity(z_mesh.len());
    for (z, base) in proj.apply_batch(z_mesh)?.into_iter().zip(bases) {
        out.push(match base {
            Some(b) => latent::compose(&z, b)?,
            None => z,
        });
    }
    Ok(out)
}

/// Mesh latents for image latents under `mode`.
pub fn mesh_latents_from_image_latents(
    z_image: &[&LatentVec],
    sources: &[&SensorProfile],
    ck: &Checkpoints,
    mode: PipelineMode,
) -> Result<Vec<LatentVec>> {
    same_len(z_image.len(), sources.len(), "source profiles")?;
    let side = match mode {
        PipelineMode::Split => z_image
            .iter()
            .zip(sources)
            .map(|(z, p)| latent::extract_deformation(z, p.z_base()?))
            .collect::<Result<Vec<_>>>()?,
        PipelineMode::NoSplit => z_image.iter().map(|z| (*z).clone()).collect(),
    };
    let proj = ck.projection(Direction::ImageToMesh, mode)?;
    proj.apply_batch(&side.iter().collect::<Vec<_>>())
}

fn mean_latents(posts: Vec<crate::data::Posterior>, space: LatentSpace) -> Vec<LatentVec> {
    posts.iter().map(|p| p.mean_latent(space)).collect()
}

/// Mesh → image-latent, the pre-decoding half of [`simulate_image`].
pub fn simulate_latent(mesh: &TriMesh, target: &SensorProfile, ck: &Checkpoints, mode: PipelineMode) -> Result<LatentVec> {
    let z = ck.mesh_vae.encode_mesh(mesh)?.mean_latent(LatentSpace::Mesh);
    Ok(image_latents_from_mesh_latents(&[&z], &[target], ck, mode)?.remove(0))
}

/// Render meshes as tactile images of the target sensors.
pub fn simulate_images(meshes: &[&TriMesh], targets: &[&SensorProfile], ck: &Checkpoints, mode: PipelineMode) -> Result<Vec<TactileImage>> {
    same_len(meshes.len(), targets.len(), "target profiles")?;
    if mode == PipelineMode::Split {
        for t in targets {
            t.z_base()?;
        }
    }
    let z = mean_latents(ck.mesh_vae.encode_meshes(meshes)?, LatentSpace::Mesh);
    let zi = image_latents_from_mesh_latents(&z.iter().collect::<Vec<_>>(), targets, ck, mode)?;
    ck.image_vae.decode_images(&zi.iter().collect::<Vec<_>>())
}

pub fn simulate_image(mesh: &TriMesh, target: &SensorProfile, ck: &Checkpoints, mode: PipelineMode) -> Result<TactileImage> {
    Ok(simulate_images(&[mesh], &[target], ck, mode)?.remove(0))
}

/// Recover gel meshes from tactile images of the source sensors.
pub fn reconstruct_meshes(images: &[&TactileImage], sources: &[&SensorProfile], ck: &Checkpoints, mode: PipelineMode) -> Result<Vec<TriMesh>> {
    same_len(images.len(), sources.len(), "source profiles")?;
    if mode == PipelineMode::Split {
        for s in sources {
            s.z_base()?;
        }
    }
    let z = mean_latents(ck.image_vae.encode_images(images)?, LatentSpace::Image);
    let zm = mesh_latents_from_image_latents(&z.iter().collect::<Vec<_>>(), sources, ck, mode)?;
    ck.mesh_vae.decode_meshes(&zm.iter().collect::<Vec<_>>())
}

pub fn reconstruct_mesh(image: &TactileImage, source: &SensorProfile, ck: &Checkpoints, mode: PipelineMode) -> Result<TriMesh> {
    Ok(reconstruct_meshes(&[image], &[source], ck, mode)?.remove(0))
}

/// Move images from the source sensor's look to the target's by swapping
/// background latents.
pub fn style_transfer_batch(
    images: &[&TactileImage],
    source: &SensorProfile,
    target: &SensorProfile,
    ck: &Checkpoints,
) -> Result<Vec<TactileImage>> {
    let (bs, bt) = (source.z_base()?, target.z_base()?);
    let z = mean_latents(ck.image_vae.encode_images(images)?, LatentSpace::Image);
    let moved = z
        .iter()
        .map(|z| latent::compose(&latent::extract_deformation(z, bs)?, bt))
        .collect::<Result<Vec<_>>>()?;
    ck.image_vae.decode_images(&moved.iter().collect::<Vec<_>>())
}

pub fn style_transfer(image: &TactileImage, source: &SensorProfile, target: &SensorProfile, ck: &Checkpoints) -> Result<TactileImage> {
    Ok(style_transfer_batch(&[image], source, target, ck)?.remove(0))
}

/// Starting point of a cyclic reconstruction, with an optional ground truth
/// of the other modality used as the absolute reference.
#[derive(Debug, Clone)]
pub enum CycleStart {
    Image { image: TactileImage, mesh: Option<TriMesh> },
    Mesh { mesh: TriMesh, image: Option<TactileImage> },
}

#[derive(Debug, Clone)]
pub struct CycleResult {
    /// One image and one mesh per cycle.
    pub images: Vec<TactileImage>,
    pub meshes: Vec<TriMesh>,
    pub drift: DriftReport,
}

/// Alternate image → mesh → image (or mesh → image → mesh) `n` times.
/// Absolute metrics compare against the start (or its supplied ground
/// truth); the reference of a modality with no ground truth is its first
/// generated sample.
pub fn cyclic_reconstruction(start: &CycleStart, profile: &SensorProfile, ck: &Checkpoints, mode: PipelineMode, n: usize) -> Result<CycleResult> {
    let mut images = Vec::with_capacity(n);
    let mut meshes = Vec::with_capacity(n);
    match start {
        CycleStart::Image { image, .. } => {
            let mut cur = image.clone();
            for _ in 0..n {
                let m = reconstruct_mesh(&cur, profile, ck, mode)?;
                cur = simulate_image(&m, profile, ck, mode)?;
                meshes.push(m);
                images.push(cur.clone());
            }
        }
        CycleStart::Mesh { mesh, .. } => {
            let mut cur = mesh.clone();
            for _ in 0..n {
                let img = simulate_image(&cur, profile, ck, mode)?;
                cur = reconstruct_mesh(&img, profile, ck, mode)?;
                images.push(img);
                meshes.push(cur.clone());
            }
        }
    }
    if n == 0 {
        return Ok(CycleResult {
            images,
            meshes,
            drift: DriftReport::default(),
        });
    }
    let (ref_image, ref_mesh) = match start {
        CycleStart::Image { image, mesh } => (image.clone(), mesh.clone().unwrap_or_else(|| meshes[0].clone())),
        CycleStart::Mesh { mesh, image } => (image.clone().unwrap_or_else(|| images[0].clone()), mesh.clone()),
    };
    let mut drift = DriftReport::default();
    for i in 0..n {
        let (prev_img, prev_mesh) = if i == 0 { (&ref_image, &ref_mesh) } else { (&images[i - 1], &meshes[i - 1]) };
        drift.abs_ssim.push(metrics::ssim(&images[i], &ref_image)?);
        drift.abs_mesh_rmse.push(metrics::mesh_metrics(&meshes[i], &ref_mesh)?.rmse);
        drift.step_ssim.push(metrics::ssim(&images[i], prev_img)?);
        drift.step_mesh_rmse.push(metrics::mesh_metrics(&meshes[i], prev_mesh)?.rmse);
    }
    Ok(CycleResult { images, meshes, drift })
}
