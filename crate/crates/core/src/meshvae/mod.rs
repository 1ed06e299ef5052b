//! Graph-convolutional VAE over gel-surface meshes.
//!
//! Input is per-vertex displacement from the reference mesh, z-scored per
//! coordinate. Encoder: Chebyshev conv + ReLU + downsample per level, then a
//! dense layer to (μ, log σ²). The decoder mirrors it with upsampling and a
//! final linear Chebyshev conv back to three coordinates.

pub mod graph;

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix3};
use serde::{Deserialize, Serialize};

pub use graph::{build_graph_stack, build_graph_stack_with, scaled_laplacian, MeshGraphStack};

use crate::data::{LatentSpace, LatentVec, Posterior, Topology, TriMesh};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, Manifest};
use crate::nn::{Activation, ChebConv, Csr, Layer, Linear, Scalar, Sequential, VertexMap};
use crate::preset::Preset;
use crate::rng;
use crate::train::{TrainConfig, TrainReport};
use crate::vae::{self, BetaSchedule, Vae, VaeData};

pub const MODULE_NAME: &str = "mesh_vae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshVaeConfig {
    pub preset: String,
    /// Output channels of the encoder convolutions, one per level.
    pub filters: Vec<usize>,
    pub cheb_order: usize,
    pub pool_factor: usize,
    pub latent_dim: usize,
    pub beta: f64,
    pub train: TrainConfig,
}

impl MeshVaeConfig {
    pub fn full() -> Self {
        Self {
            preset: "full".into(),
            filters: vec![16, 16, 16, 32],
            cheb_order: 6,
            pool_factor: 2,
            latent_dim: 128,
            beta: 0.005,
            train: TrainConfig {
                epochs: 300,
                batch_size: 128,
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
            latent_dim: 32,
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                lr: 2e-3,
                ..Self::full().train
            },
            ..Self::full()
        }
    }

    pub fn tiny() -> Self {
        Self {
            preset: "tiny".into(),
            filters: vec![4, 4, 4, 8],
            cheb_order: 3,
            latent_dim: 8,
            train: TrainConfig {
                epochs: 20,
                batch_size: 16,
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
        if self.filters.is_empty()
            || self.filters.contains(&0)
            || self.cheb_order == 0
            || self.pool_factor < 2
            || self.latent_dim == 0
            || !(self.beta >= 0.0)
        {
            return Err(Error::Config(format!("invalid mesh VAE config {self:?}")));
        }
        self.train.validate()
    }
}

/// Per-coordinate displacement standardisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for CoordNorm {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl CoordNorm {
    /// Fit on displacements; coordinates with negligible spread keep unit
    /// scale.
    pub fn fit(meshes: &[&TriMesh]) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for m in meshes {
            for row in m.displacement().rows() {
                for c in 0..3 {
                    let v = f64::from(row[c]);
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean = sum.map(|s| s / n);
        let std = std::array::from_fn(|c| {
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            if var.sqrt() > 1e-6 {
                var.sqrt()
            } else {
                1.0
            }
        });
        Self { mean, std }
    }
}

/// Chebyshev graph convolution `Σ_k T_k(L̃)·X·W_k + b` for a single graph
/// signal. `weights` is laid out (K, Cin, Cout).
pub fn cheb_conv(features: &Array2<f64>, lap: &Csr<f64>, weights: &Array3<f64>, bias: &Array1<f64>) -> Result<Array2<f64>> {
    let (k, cin, cout) = weights.dim();
    let (v, c) = features.dim();
    if k == 0 || c != cin || lap.rows != v || lap.cols != v || bias.len() != cout {
        return Err(Error::Shape(format!(
            "cheb_conv: features {v}x{c}, laplacian {}x{}, weights {k}x{cin}x{cout}, bias {}",
            lap.rows,
            lap.cols,
            bias.len()
        )));
    }
    let lap = Arc::new(lap.clone());
    let mut conv = ChebConv::new(lap, k, cin, cout, &mut rng::rng(0));
    conv.w.value = weights.to_shape((k * cin, cout)).unwrap().to_owned().into_dyn();
    conv.b.value = bias.clone().into_dyn();
    let x = features.clone().insert_axis(Axis(0)).into_dyn();
    let (y, _) = conv.forward(&x);
    Ok(y.index_axis_move(Axis(0), 0).into_dimensionality().unwrap())
}

/// Build the encoder/decoder pair over a graph stack.
pub fn build_mesh_vae<F: Scalar>(stack: &MeshGraphStack, cfg: &MeshVaeConfig, seed: u64) -> Result<Vae<F>> {
    cfg.validate()?;
    let levels = cfg.filters.len();
    if stack.levels() != levels {
        return Err(Error::Config(format!(
            "graph stack has {} levels, config needs {levels}",
            stack.levels()
        )));
    }
    let mut r = rng::rng(rng::derive_seed(seed, "mesh_vae/init"));
    let laps: Vec<Arc<Csr<F>>> = stack.laplacians.iter().map(|l| Arc::new(l.cast())).collect();
    let k = cfg.cheb_order;
    let mut enc = Sequential::new(vec![]);
    let mut cin = 3;
    for (lvl, &f) in cfg.filters.iter().enumerate() {
        enc.push(Layer::Cheb(ChebConv::new(Arc::clone(&laps[lvl]), k, cin, f, &mut r)));
        enc.push(Layer::Act(Activation::Relu));
        enc.push(Layer::Map(VertexMap::new(Arc::new(stack.down[lvl].cast()))));
        cin = f;
    }
    let n_last = stack.sizes[levels];
    let flat = n_last * cin;
    enc.push(Layer::Flatten);
    enc.push(Layer::Linear(Linear::new(flat, 2 * cfg.latent_dim, &mut r)));

    let mut dec = Sequential::new(vec![
        Layer::Linear(Linear::new(cfg.latent_dim, flat, &mut r)),
        Layer::Reshape(vec![n_last, cin]),
    ]);
    for lvl in (0..levels).rev() {
        let out = if lvl == 0 { cfg.filters[0] } else { cfg.filters[lvl - 1] };
        dec.push(Layer::Map(VertexMap::new(Arc::new(stack.up[lvl].cast()))));
        dec.push(Layer::Cheb(ChebConv::new(Arc::clone(&laps[lvl]), k, cin, out, &mut r)));
        dec.push(Layer::Act(Activation::Relu));
        cin = out;
    }
    dec.push(Layer::Cheb(ChebConv::new(Arc::clone(&laps[0]), k, cin, 3, &mut r)));
    Ok(Vae {
        encoder: enc,
        decoder: dec,
        latent_dim: cfg.latent_dim,
    })
}

/// A mesh VAE bound to its topology and input normalisation.
#[derive(Debug, Clone)]
pub struct MeshVae {
    pub config: MeshVaeConfig,
    pub topology: Arc<Topology>,
    pub stack: Arc<MeshGraphStack>,
    pub vae: Vae<f32>,
    pub norm: CoordNorm,
    pub seed: u64,
    pub best_val_loss: f64,
}

impl MeshVae {
    pub fn new(topology: Arc<Topology>, config: MeshVaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stack = Arc::new(build_graph_stack_with(&topology, config.filters.len(), config.pool_factor)?);
        let vae = build_mesh_vae(&stack, &config, seed)?;
        Ok(Self {
            config,
            topology,
            stack,
            vae,
            norm: CoordNorm::default(),
            seed,
            best_val_loss: f64::NAN,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_topology(&self, mesh: &TriMesh) -> Result<()> {
        if mesh.topology.id != self.topology.id || mesh.n_vertices() != self.topology.n_vertices() {
            return Err(Error::Topology {
                expected: self.topology.id.clone(),
                got: mesh.topology.id.clone(),
            });
        }
        Ok(())
    }

    /// Normalised displacement batch (B, V, 3).
    pub fn to_input(&self, meshes: &[&TriMesh]) -> Result<ArrayD<f32>> {
        let v = self.topology.n_vertices();
        let mut x = Array3::<f32>::zeros((meshes.len(), v, 3));
        for (b, m) in meshes.iter().enumerate() {
            self.check_topology(m)?;
            let d = m.displacement();
            for i in 0..v {
                for c in 0..3 {
                    x[[b, i, c]] = ((f64::from(d[[i, c]]) - self.norm.mean[c]) / self.norm.std[c]) as f32;
                }
            }
        }
        Ok(x.into_dyn())
    }

    fn from_output(&self, y: ArrayD<f32>) -> Vec<TriMesh> {
        let y = y.into_dimensionality::<Ix3>().expect("decoder output is (B, V, 3)");
        y.axis_iter(Axis(0))
            .map(|m| {
                let mut verts = self.topology.reference.clone();
                for ((i, c), v) in verts.indexed_iter_mut() {
                    *v += (f64::from(m[[i, c]]) * self.norm.std[c] + self.norm.mean[c]) as f32;
                }
                TriMesh {
                    vertices: verts,
                    topology: Arc::clone(&self.topology),
                }
            })
            .collect()
    }

    pub fn encode_mesh(&self, mesh: &TriMesh) -> Result<Posterior> {
        Ok(self.encode_meshes(&[mesh])?.remove(0))
    }

    pub fn encode_meshes(&self, meshes: &[&TriMesh]) -> Result<Vec<Posterior>> {
        let mut out = Vec::with_capacity(meshes.len());
        for chunk in meshes.chunks(256) {
            out.extend(self.vae.posteriors(&self.to_input(chunk)?));
        }
        Ok(out)
    }

    pub fn decode_mesh(&self, z: &LatentVec) -> Result<TriMesh> {
        Ok(self.decode_meshes(&[z])?.remove(0))
    }

    pub fn decode_meshes(&self, z: &[&LatentVec]) -> Result<Vec<TriMesh>> {
        for v in z {
            v.expect(LatentSpace::Mesh, self.latent_dim())?;
        }
        let mut out = Vec::with_capacity(z.len());
        for chunk in z.chunks(256) {
            out.extend(self.from_output(self.vae.decode(&vae::stack_latents(chunk))));
        }
        Ok(out)
    }

    /// Decode the posterior mean.
    pub fn reconstruct(&self, meshes: &[&TriMesh]) -> Result<Vec<TriMesh>> {
        let posts = self.encode_meshes(meshes)?;
        let z: Vec<LatentVec> = posts.iter().map(|p| p.mean_latent(LatentSpace::Mesh)).collect();
        self.decode_meshes(&z.iter().collect::<Vec<_>>())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            format_version: checkpoint::FORMAT_VERSION,
            module: MODULE_NAME.into(),
            hyperparameters: serde_json::to_value(&self.config)?,
            topology_id: Some(self.topology.id.clone()),
            best_val_loss: self.best_val_loss,
            seed: self.seed,
            extra: serde_json::json!({ "normalizer": self.norm, "preset": self.config.preset }),
        };
        checkpoint::save(dir, &manifest, &checkpoint::state_of(&self.vae))
    }

    pub fn load(dir: &Path, topology: Arc<Topology>) -> Result<Self> {
        let (manifest, state) = checkpoint::load::<f32>(dir)?;
        if manifest.module != MODULE_NAME {
            return Err(Error::format(dir, format!("checkpoint holds {}, not {MODULE_NAME}", manifest.module)));
        }
        if manifest.topology_id.as_deref() != Some(topology.id.as_str()) {
            return Err(Error::Topology {
                expected: topology.id.clone(),
                got: manifest.topology_id.unwrap_or_default(),
            });
        }
        let config: MeshVaeConfig =
            serde_json::from_value(manifest.hyperparameters).map_err(|e| Error::format(dir, e.to_string()))?;
        let norm: CoordNorm = serde_json::from_value(manifest.extra["normalizer"].clone())
            .map_err(|e| Error::format(dir, e.to_string()))?;
        let mut model = Self::new(topology, config, manifest.seed)?;
        checkpoint::load_state(&mut model.vae, &state)?;
        model.norm = norm;
        model.best_val_loss = manifest.best_val_loss;
        Ok(model)
    }
}

/// Mean squared vertex error plus `beta`·KL, on raw coordinates.
pub fn mesh_vae_loss(mesh: &TriMesh, recon: &TriMesh, post: &Posterior, beta: f64) -> Result<f64> {
    mesh.same_topology(recon)?;
    let a: Vec<f64> = mesh.vertices.iter().map(|v| f64::from(*v)).collect();
    let b: Vec<f64> = recon.vertices.iter().map(|v| f64::from(*v)).collect();
    vae::vae_loss(&a, &b, post, beta)
}

pub use crate::vae::sample_latent;

/// Fit the normaliser on `train`, then train with early stopping on `val`.
/// The model keeps the best-validation weights.
pub fn train_mesh_vae(model: &mut MeshVae, train: &[&TriMesh], val: &[&TriMesh], seed: u64) -> Result<TrainReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("mesh VAE training needs non-empty train and validation sets".into()));
    }
    model.norm = CoordNorm::fit(train);
    let xt = model.to_input(train)?;
    let xv = model.to_input(val)?;
    let train_batch = |idx: &[usize], _: &mut rng::Rng| xt.select(Axis(0), idx);
    let val_batch = |idx: &[usize]| xv.select(Axis(0), idx);
    let data = VaeData {
        n_train: train.len(),
        n_val: val.len(),
        train_batch: &train_batch,
        val_batch: &val_batch,
    };
    let report = vae::train_vae(
        &mut model.vae,
        &data,
        &model.config.train,
        BetaSchedule::Constant {
            beta: model.config.beta,
        },
        seed,
    )?;
    model.seed = seed;
    model.best_val_loss = report.best_val_loss;
    Ok(report)
}
