//! Residual convolutional VAE over tactile images.
//!
//! Encoder: 3×3 stem, then per stage a run of residual blocks followed by a
//! strided downsampling convolution (kernel = stride = factor) that doubles
//! the width. Decoder mirrors it with nearest upsampling + 3×3 convolution and
//! ends in tanh, so every decoded pixel lies in [-1, 1].

use std::path::Path;

use ndarray::{Array3, Array4, ArrayD, Axis, Ix4};
use serde::{Deserialize, Serialize};

use crate::data::{LatentSpace, LatentVec, Posterior, TactileImage};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, Manifest};
use crate::nn::{Activation, Conv2d, Layer, Linear, ResBlock, Scalar, Sequential};
use crate::preset::Preset;
use crate::rng::{self, Rng, RngExt};
use crate::train::{TrainConfig, TrainReport};
use crate::vae::{self, BetaSchedule, Vae, VaeData};

pub const MODULE_NAME: &str = "image_vae";

/// Train-time image augmentation magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    pub flip_p: f64,
    pub noise_sigma: f64,
    /// Maximum additive brightness shift, as a fraction of the [-1, 1] range.
    pub brightness: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_deg: 5.0,
            flip_p: 0.5,
            noise_sigma: 0.02,
            brightness: 0.1,
            contrast: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageVaeConfig {
    pub preset: String,
    /// Input height and width.
    pub input: [usize; 2],
    /// Residual blocks per stage.
    pub blocks: Vec<usize>,
    /// Downsampling factor after stage i (stages beyond the list keep their
    /// resolution).
    pub factors: Vec<usize>,
    pub base_width: usize,
    pub latent_dim: usize,
    pub beta: f64,
    pub anneal_epochs: usize,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
}

impl ImageVaeConfig {
    pub fn full() -> Self {
        Self {
            preset: "full".into(),
            input: [240, 320],
            blocks: vec![3, 3, 5, 5, 3, 3],
            factors: vec![2, 2, 2, 2, 5],
            base_width: 16,
            latent_dim: 256,
            beta: 0.001,
            anneal_epochs: 50,
            augment: AugmentConfig::default(),
            train: TrainConfig {
                epochs: 300,
                batch_size: 64,
                lr: 1e-3,
                lr_decay: 0.99,
                weight_decay: 1e-5,
                patience: 20,
            },
        }
    }

    pub fn tiny() -> Self {
        Self {
            preset: "tiny".into(),
            input: [24, 32],
            blocks: vec![1, 1, 1],
            factors: vec![2, 2, 2],
            base_width: 4,
            latent_dim: 16,
            beta: 1e-5,
            anneal_epochs: 5,
            train: TrainConfig {
                epochs: 10,
                batch_size: 16,
                lr: 3e-3,
                ..Self::full().train
            },
            ..Self::full()
        }
    }

    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            input: [32, 48],
            factors: vec![2, 2, 4],
            base_width: 8,
            latent_dim: 64,
            anneal_epochs: 10,
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                lr: 2e-3,
                ..Self::full().train
            },
            ..Self::tiny()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => Self::tiny(),
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    pub fn downsampling(&self) -> usize {
        self.factors.iter().product()
    }

    /// Spatial size of the innermost feature map.
    pub fn bottleneck(&self) -> (usize, usize, usize) {
        let d = self.downsampling();
        let width = self.base_width << self.factors.len();
        (width, self.input[0] / d, self.input[1] / d)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.downsampling();
        if self.blocks.len() < self.factors.len()
            || self.factors.iter().any(|f| *f < 2)
            || self.base_width == 0
            || self.latent_dim == 0
            || d == 0
            || !self.input[0].is_multiple_of(d)
            || !self.input[1].is_multiple_of(d)
            || !(self.beta >= 0.0)
        {
            return Err(Error::Config(format!("invalid image VAE config {self:?}")));
        }
        self.train.validate()
    }

    pub fn beta_schedule(&self) -> BetaSchedule {
        BetaSchedule::Linear {
            anneal_epochs: self.anneal_epochs,
            final_beta: self.beta,
        }
    }
}

/// Linear KL-weight ramp from 0 at epoch 0 to `beta_final` at
/// `anneal_epochs`, constant afterwards.
pub fn beta_schedule(epoch: usize, anneal_epochs: usize, beta_final: f64) -> f64 {
    BetaSchedule::Linear {
        anneal_epochs,
        final_beta: beta_final,
    }
    .at(epoch)
}

pub fn build_image_vae<F: Scalar>(cfg: &ImageVaeConfig, seed: u64) -> Result<Vae<F>> {
    cfg.validate()?;
    let mut r = rng::rng(rng::derive_seed(seed, "image_vae/init"));
    let widths: Vec<usize> = (0..cfg.blocks.len())
        .map(|i| cfg.base_width << i.min(cfg.factors.len()))
        .collect();
    let mut enc = Sequential::new(vec![Layer::Conv(Conv2d::new(3, widths[0], 3, 1, 1, &mut r))]);
    for (i, &n) in cfg.blocks.iter().enumerate() {
        for _ in 0..n {
            enc.push(Layer::Res(ResBlock::new(widths[i], widths[i], &mut r)));
        }
        if let Some(&f) = cfg.factors.get(i) {
            let next = cfg.base_width << (i + 1);
            enc.push(Layer::Conv(Conv2d::new(widths[i], next, f, f, 0, &mut r)));
        }
    }
    let (c, h, w) = cfg.bottleneck();
    enc.push(Layer::Act(Activation::Tanh));
    enc.push(Layer::Flatten);
    enc.push(Layer::Linear(Linear::new(c * h * w, 2 * cfg.latent_dim, &mut r)));

    let mut dec = Sequential::new(vec![
        Layer::Linear(Linear::new(cfg.latent_dim, c * h * w, &mut r)),
        Layer::Reshape(vec![c, h, w]),
    ]);
    for i in (0..cfg.blocks.len()).rev() {
        if let Some(&f) = cfg.factors.get(i) {
            dec.push(Layer::Upsample(f));
            dec.push(Layer::Conv(Conv2d::new(cfg.base_width << (i + 1), widths[i], 3, 1, 1, &mut r)));
        }
        for _ in 0..cfg.blocks[i] {
            dec.push(Layer::Res(ResBlock::new(widths[i], widths[i], &mut r)));
        }
    }
    dec.push(Layer::Act(Activation::Tanh));
    dec.push(Layer::Conv(Conv2d::new(widths[0], 3, 3, 1, 1, &mut r)));
    dec.push(Layer::Act(Activation::Tanh));
    Ok(Vae {
        encoder: enc,
        decoder: dec,
        latent_dim: cfg.latent_dim,
    })
}

/// (H, W, 3) images to a (B, 3, H, W) batch.
pub fn images_to_batch(images: &[&TactileImage]) -> ArrayD<f32> {
    let (h, w) = images.first().map_or((0, 0), |i| i.shape());
    let mut x = Array4::<f32>::zeros((images.len(), 3, h, w));
    for (b, img) in images.iter().enumerate() {
        x.index_axis_mut(Axis(0), b)
            .assign(&img.pixels.view().permuted_axes([2, 0, 1]));
    }
    x.into_dyn()
}

fn batch_to_images(y: ArrayD<f32>) -> Vec<TactileImage> {
    let y = y.into_dimensionality::<Ix4>().expect("decoder output is (B, 3, H, W)");
    y.axis_iter(Axis(0))
        .map(|img| TactileImage {
            pixels: img
                .permuted_axes([1, 2, 0])
                .mapv(|v| v.clamp(-1.0, 1.0))
                .as_standard_layout()
                .into_owned(),
            sensor_id: None,
        })
        .collect()
}

/// Apply one random draw of the train-time augmentations to a (3, H, W)
/// image in place. Output stays within [-1, 1].
pub fn augment(img: &mut Array3<f32>, cfg: &AugmentConfig, r: &mut Rng) {
    if !cfg.enabled {
        return;
    }
    let (_, h, w) = img.dim();
    let angle = r.random_range(-1.0..=1.0) * cfg.rotation_deg.to_radians();
    let flip_h = r.random::<f64>() < cfg.flip_p;
    let flip_v = r.random::<f64>() < cfg.flip_p;
    let brightness = r.random_range(-1.0..=1.0) * cfg.brightness * 2.0;
    let contrast = 1.0 + r.random_range(-1.0..=1.0) * cfg.contrast;
    if angle != 0.0 {
        *img = rotate(img, angle);
    }
    if flip_h {
        img.invert_axis(Axis(2));
    }
    if flip_v {
        img.invert_axis(Axis(1));
    }
    let mut out = img.as_standard_layout().into_owned();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let noise = if cfg.noise_sigma > 0.0 { cfg.noise_sigma * rng::normal(r) } else { 0.0 };
                let v = f64::from(out[[c, y, x]]) * contrast + brightness + noise;
                out[[c, y, x]] = v.clamp(-1.0, 1.0) as f32;
            }
        }
    }
    *img = out;
}

/// Bilinear rotation about the image centre with edge clamping.
fn rotate(img: &Array3<f32>, angle: f64) -> Array3<f32> {
    let (ch, h, w) = img.dim();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let mut out = Array3::<f32>::zeros((ch, h, w));
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = (c * dx + s * dy + cx).clamp(0.0, (w - 1) as f64);
            let sy = (-s * dx + c * dy + cy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for k in 0..ch {
                let p = |yy: usize, xx: usize| f64::from(img[[k, yy, xx]]);
                let v = (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1));
                out[[k, y, x]] = v as f32;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ImageVae {
    pub config: ImageVaeConfig,
    pub vae: Vae<f32>,
    pub seed: u64,
    pub best_val_loss: f64,
}

impl ImageVae {
    pub fn new(config: ImageVaeConfig, seed: u64) -> Result<Self> {
        let vae = build_image_vae(&config, seed)?;
        Ok(Self {
            config,
            vae,
            seed,
            best_val_loss: f64::NAN,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check(&self, img: &TactileImage) -> Result<()> {
        let want = (self.config.input[0], self.config.input[1]);
        if img.shape() != want {
            return Err(Error::Shape(format!("image is {:?}, model expects {want:?}", img.shape())));
        }
        if let Some(v) = img.pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn encode_image(&self, img: &TactileImage) -> Result<Posterior> {
        Ok(self.encode_images(&[img])?.remove(0))
    }

    pub fn encode_images(&self, images: &[&TactileImage]) -> Result<Vec<Posterior>> {
        for img in images {
            self.check(img)?;
        }
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            out.extend(self.vae.posteriors(&images_to_batch(chunk)));
        }
        Ok(out)
    }

    pub fn decode_image(&self, z: &LatentVec) -> Result<TactileImage> {
        Ok(self.decode_images(&[z])?.remove(0))
    }

    pub fn decode_images(&self, z: &[&LatentVec]) -> Result<Vec<TactileImage>> {
        for v in z {
            v.expect(LatentSpace::Image, self.latent_dim())?;
        }
        let mut out = Vec::with_capacity(z.len());
        for chunk in z.chunks(64) {
            out.extend(batch_to_images(self.vae.decode(&vae::stack_latents(chunk))));
        }
        Ok(out)
    }

    /// Decode the posterior mean of each image.
    pub fn reconstruct(&self, images: &[&TactileImage]) -> Result<Vec<TactileImage>> {
        let z: Vec<LatentVec> = self
            .encode_images(images)?
            .iter()
            .map(|p| p.mean_latent(LatentSpace::Image))
            .collect();
        self.decode_images(&z.iter().collect::<Vec<_>>())
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
                "input_shape": [self.config.input[0], self.config.input[1], 3],
                "preset": self.config.preset,
            }),
        };
        checkpoint::save(dir, &manifest, &checkpoint::state_of(&self.vae))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, state) = checkpoint::load::<f32>(dir)?;
        if manifest.module != MODULE_NAME {
            return Err(Error::format(dir, format!("checkpoint holds {}, not {MODULE_NAME}", manifest.module)));
        }
        let config: ImageVaeConfig =
            serde_json::from_value(manifest.hyperparameters).map_err(|e| Error::format(dir, e.to_string()))?;
        let mut model = Self::new(config, manifest.seed)?;
        checkpoint::load_state(&mut model.vae, &state)?;
        model.best_val_loss = manifest.best_val_loss;
        Ok(model)
    }
}

/// Per-pixel mean squared error plus `beta`·KL.
pub fn image_vae_loss(img: &TactileImage, recon: &TactileImage, post: &Posterior, beta: f64) -> Result<f64> {
    if img.pixels.shape() != recon.pixels.shape() {
        return Err(Error::Shape(format!(
            "reconstruction is {:?}, image {:?}",
            recon.pixels.shape(),
            img.pixels.shape()
        )));
    }
    let a: Vec<f64> = img.pixels.iter().map(|v| f64::from(*v)).collect();
    let b: Vec<f64> = recon.pixels.iter().map(|v| f64::from(*v)).collect();
    vae::vae_loss(&a, &b, post, beta)
}

fn run_training(
    vae: &mut Vae<f32>,
    cfg: &ImageVaeConfig,
    train: &[&TactileImage],
    val: &[&TactileImage],
    beta: BetaSchedule,
    seed: u64,
) -> Result<TrainReport> {
    let xv = images_to_batch(val);
    let aug = cfg.augment;
    let train_batch = |idx: &[usize], r: &mut Rng| {
        let picked: Vec<&TactileImage> = idx.iter().map(|&i| train[i]).collect();
        let mut x = images_to_batch(&picked);
        if aug.enabled {
            for mut img in x.axis_iter_mut(Axis(0)) {
                let mut a = img.to_owned().into_dimensionality().unwrap();
                augment(&mut a, &aug, r);
                img.assign(&a);
            }
        }
        x
    };
    let val_batch = |idx: &[usize]| xv.select(Axis(0), idx);
    let data = VaeData {
        n_train: train.len(),
        n_val: val.len(),
        train_batch: &train_batch,
        val_batch: &val_batch,
    };
    vae::train_vae(vae, &data, &cfg.train, beta, seed)
}

fn check_images(model: &ImageVae, sets: [&[&TactileImage]; 2]) -> Result<()> {
    if sets.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidArgument("image VAE training needs non-empty train and validation sets".into()));
    }
    for img in sets.iter().flat_map(|s| s.iter()) {
        model.check(img)?;
    }
    Ok(())
}

/// Train with the annealed β schedule and on-the-fly augmentation.
pub fn train_image_vae(model: &mut ImageVae, train: &[&TactileImage], val: &[&TactileImage], seed: u64) -> Result<TrainReport> {
    check_images(model, [train, val])?;
    let beta = model.config.beta_schedule();
    let report = run_training(&mut model.vae, &model.config, train, val, beta, seed)?;
    model.seed = seed;
    model.best_val_loss = report.best_val_loss;
    Ok(report)
}

/// Continue training a copy of `source` on a new domain. The KL weight stays
/// at its final value (no re-annealing); `schedule` replaces the source's
/// optimisation settings. The source model is left untouched.
pub fn finetune_image_vae(
    source: &ImageVae,
    schedule: &TrainConfig,
    latent_dim: usize,
    train: &[&TactileImage],
    val: &[&TactileImage],
    seed: u64,
) -> Result<(ImageVae, TrainReport)> {
    if latent_dim != source.latent_dim() {
        return Err(Error::LatentSpace {
            expected: format!("image[{}]", source.latent_dim()),
            got: format!("image[{latent_dim}]"),
        });
    }
    let mut model = source.clone();
    model.config.train = *schedule;
    check_images(&model, [train, val])?;
    let beta = BetaSchedule::Constant { beta: model.config.beta };
    let report = run_training(&mut model.vae, &model.config, train, val, beta, seed)?;
    model.seed = seed;
    model.best_val_loss = report.best_val_loss;
    Ok((model, report))
}

#[cfg(test)]
mod tests;
