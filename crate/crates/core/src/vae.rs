//! Variational autoencoder core shared by the mesh and image models.
//!
//! The encoder ends in a linear layer of width `2·latent_dim`; the first half
//! is the posterior mean, the second half the log-variance.

use ndarray::{s, Array1, Array2, ArrayD, Axis, Ix2};
use serde::{Deserialize, Serialize};

use crate::data::{LatentSpace, LatentVec, Posterior};
use crate::error::{Error, Result};
use crate::nn::layers::join;
use crate::nn::{Ctx, Module, Param, Scalar, Sequential};
use crate::rng::{self, Rng};
use crate::train::{epoch_batches, EarlyStopping, EpochStats, TrainConfig, TrainReport};

/// Below this log-variance the posterior is treated as a point mass.
pub const LOGVAR_FLOOR: f64 = -80.0;

/// KL(q ‖ N(0, I)) of a diagonal Gaussian posterior.
pub fn kl_divergence(post: &Posterior) -> f64 {
    post.mean
        .iter()
        .zip(post.log_variance.iter())
        .map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum()
}

/// Per-element mean squared reconstruction error plus `beta`·KL.
pub fn vae_loss(x: &[f64], recon: &[f64], post: &Posterior, beta: f64) -> Result<f64> {
    if x.len() != recon.len() || x.is_empty() {
        return Err(Error::Shape(format!(
            "reconstruction has {} values, input {}",
            recon.len(),
            x.len()
        )));
    }
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be finite and non-negative, got {beta}")));
    }
    let mse = x.iter().zip(recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    let loss = mse + beta * kl_divergence(post);
    if !loss.is_finite() {
        return Err(Error::InvalidArgument("non-finite loss".into()));
    }
    Ok(loss)
}

/// Reparameterised draw `μ + exp(lv/2)·ε`.
pub fn sample_latent(post: &Posterior, space: LatentSpace, r: &mut Rng) -> LatentVec {
    let values = Array1::from_iter(post.mean.iter().zip(post.log_variance.iter()).map(|(&m, &lv)| {
        let e = rng::normal(r);
        if lv <= LOGVAR_FLOOR {
            m
        } else {
            m + (0.5 * lv).exp() * e
        }
    }));
    LatentVec::new(values, space)
}

/// KL weight over training epochs (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    Constant { beta: f64 },
    /// Linear ramp from 0 at epoch 0 to `final_beta` at `anneal_epochs`.
    Linear { anneal_epochs: usize, final_beta: f64 },
}

impl BetaSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            BetaSchedule::Constant { beta } => beta,
            BetaSchedule::Linear {
                anneal_epochs,
                final_beta,
            } => {
                if anneal_epochs == 0 {
                    final_beta
                } else {
                    final_beta * (epoch as f64 / anneal_epochs as f64).min(1.0)
                }
            }
        }
    }

    pub fn final_beta(&self) -> f64 {
        match *self {
            BetaSchedule::Constant { beta } => beta,
            BetaSchedule::Linear { final_beta, .. } => final_beta,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct Vae<F> {
    pub encoder: Sequential<F>,
    pub decoder: Sequential<F>,
    pub latent_dim: usize,
}

impl<F: Scalar> Module<F> for Vae<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

fn split_heads<F: Scalar>(h: ArrayD<F>, d: usize) -> (Array2<F>, Array2<F>) {
    let h = h.into_dimensionality::<Ix2>().expect("encoder output is (batch, 2·latent)");
    assert_eq!(h.ncols(), 2 * d, "encoder output width");
    (h.slice(s![.., ..d]).to_owned(), h.slice(s![.., d..]).to_owned())
}

fn f64_of<F: Scalar>(v: F) -> f64 {
    v.to_f64().unwrap()
}

impl<F: Scalar> Vae<F> {
    /// Posterior mean and log-variance, one row per batch item.
    pub fn encode(&self, x: &ArrayD<F>) -> (Array2<F>, Array2<F>) {
        split_heads(self.encoder.infer(x), self.latent_dim)
    }

    pub fn decode(&self, z: &Array2<F>) -> ArrayD<F> {
        self.decoder.infer(&z.clone().into_dyn())
    }

    pub fn posteriors(&self, x: &ArrayD<F>) -> Vec<Posterior> {
        let (mu, lv) = self.encode(x);
        mu.rows()
            .into_iter()
            .zip(lv.rows())
            .map(|(m, l)| Posterior {
                mean: m.mapv(f64_of),
                log_variance: l.mapv(f64_of),
            })
            .collect()
    }

    /// Deterministic loss: decode the posterior mean.
    pub fn eval_loss(&self, x: &ArrayD<F>, beta: f64) -> LossParts {
        let (mu, lv) = self.encode(x);
        let recon = self.decode(&mu);
        let b = mu.nrows().max(1) as f64;
        let kl = batch_kl(&mu, &lv) / b;
        let mse = crate::nn::mse(&recon, x);
        LossParts {
            total: mse + beta * kl,
            recon: mse,
            kl,
        }
    }

    /// One stochastic forward/backward pass. Gradients are accumulated into
    /// the parameters (the caller zeroes them); returns the batch loss.
    pub fn accumulate(&mut self, x: &ArrayD<F>, beta: f64, r: &mut Rng) -> LossParts {
        let d = self.latent_dim;
        let (h, enc_tape) = self.encoder.forward(x.clone(), &mut Ctx::train(r));
        let (mu, lv) = split_heads(h, d);
        let b = mu.nrows();
        let eps = Array2::from_shape_fn((b, d), |_| F::c(rng::normal(r)));
        let floor = F::c(LOGVAR_FLOOR);
        let half = F::c(0.5);
        let mut z = mu.clone();
        ndarray::Zip::from(&mut z).and(&lv).and(&eps).for_each(|z, &l, &e| {
            if l > floor {
                *z += (half * l).exp() * e;
            }
        });
        let (recon, dec_tape) = self.decoder.forward(z.into_dyn(), &mut Ctx::train(r));
        let n = recon.len().max(1) as f64;
        let mse = crate::nn::mse(&recon, x);
        let kl = batch_kl(&mu, &lv) / b.max(1) as f64;
        let scale = F::c(2.0 / n);
        let g_recon = (&recon - x).mapv(|v| v * scale);
        let gz = self
            .decoder
            .backward(dec_tape, g_recon)
            .into_dimensionality::<Ix2>()
            .expect("latent gradient");
        let kb = F::c(beta / b.max(1) as f64);
        let mut gh = Array2::<F>::zeros((b, 2 * d));
        for i in 0..b {
            for j in 0..d {
                let (m, l, e, g) = (mu[[i, j]], lv[[i, j]], eps[[i, j]], gz[[i, j]]);
                gh[[i, j]] = g + kb * m;
                let sample = if l > floor { g * e * half * (half * l).exp() } else { F::zero() };
                gh[[i, d + j]] = sample + kb * half * (l.exp() - F::one());
            }
        }
        self.encoder.backward(enc_tape, gh.into_dyn());
        LossParts {
            total: mse + beta * kl,
            recon: mse,
            kl,
        }
    }
}

/// Summed KL over a batch.
fn batch_kl<F: Scalar>(mu: &Array2<F>, lv: &Array2<F>) -> f64 {
    mu.iter()
        .zip(lv.iter())
        .map(|(&m, &l)| {
            let (m, l) = (f64_of(m), f64_of(l));
            -0.5 * (1.0 + l - m * m - l.exp())
        })
        .sum()
}

/// Evaluate the deterministic loss over `n` items in chunks of `batch`.
pub fn dataset_loss<F: Scalar>(
    vae: &Vae<F>,
    n: usize,
    batch: usize,
    beta: f64,
    make: &dyn Fn(&[usize]) -> ArrayD<F>,
) -> LossParts {
    let mut acc = LossParts::default();
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let l = vae.eval_loss(&make(chunk), beta);
        let w = chunk.len() as f64 / n.max(1) as f64;
        acc.total += l.total * w;
        acc.recon += l.recon * w;
        acc.kl += l.kl * w;
    }
    acc
}

/// Training and validation sources for [`train_vae`]. The training batch
/// builder receives the augmentation stream.
pub struct VaeData<'a, F> {
    pub n_train: usize,
    pub n_val: usize,
    pub train_batch: &'a dyn Fn(&[usize], &mut Rng) -> ArrayD<F>,
    pub val_batch: &'a dyn Fn(&[usize]) -> ArrayD<F>,
}

/// Mini-batch training with Adam, per-epoch learning-rate decay and early
/// stopping on the validation loss (scored at the schedule's final beta so
/// that annealing does not mask progress). The best weights are restored.
pub fn train_vae(
    vae: &mut Vae<f32>,
    data: &VaeData<'_, f32>,
    cfg: &TrainConfig,
    beta: BetaSchedule,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.n_train == 0 || data.n_val == 0 {
        return Err(Error::InvalidArgument("VAE training needs non-empty train and validation sets".into()));
    }
    let mut order_rng = rng::rng(rng::derive_seed(seed, "vae/order"));
    let mut noise_rng = rng::rng(rng::derive_seed(seed, "vae/noise"));
    let mut aug_rng = rng::rng(rng::derive_seed(seed, "vae/augment"));
    let mut adam = cfg.adam();
    let eval_beta = beta.final_beta();
    let eval_batch = cfg.batch_size.max(64);
    let init = dataset_loss(vae, data.n_val, eval_batch, eval_beta, data.val_batch).total;
    let mut stop = EarlyStopping::new(cfg.patience, init, vae);
    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss: f64::NAN,
        val_loss: init,
    }];
    for epoch in 1..=cfg.epochs {
        let b = beta.at(epoch - 1);
        let mut total = 0.0;
        for idx in epoch_batches(data.n_train, cfg.batch_size, &mut order_rng) {
            let x = (data.train_batch)(&idx, &mut aug_rng);
            vae.zero_grad();
            let l = vae.accumulate(&x, b, &mut noise_rng);
            if !l.total.is_finite() {
                return Err(Error::Diverged { epoch, loss: l.total });
            }
            adam.step(vae);
            total += l.total * idx.len() as f64;
        }
        adam.decay(cfg.lr_decay);
        let val = dataset_loss(vae, data.n_val, eval_batch, eval_beta, data.val_batch).total;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, loss: val });
        }
        history.push(EpochStats {
            epoch,
            train_loss: total / data.n_train as f64,
            val_loss: val,
        });
        log::info!("vae epoch {epoch}: beta {b:.5} val {val:.6}");
        if stop.update(epoch, val, vae) {
            break;
        }
    }
    stop.restore(vae)?;
    Ok(TrainReport {
        best_epoch: stop.best_epoch,
        best_val_loss: stop.best_loss,
        history,
    })
}

/// Stack latent rows (as f32) for batch decoding.
pub fn stack_latents(z: &[&LatentVec]) -> Array2<f32> {
    let d = z.first().map_or(0, |v| v.dim());
    let mut out = Array2::zeros((z.len(), d));
    for (mut row, v) in out.axis_iter_mut(Axis(0)).zip(z) {
        row.assign(&v.values.mapv(|x| x as f32));
    }
    out
}
