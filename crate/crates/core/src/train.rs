//! Shared training loop pieces: optimiser settings, early stopping, and a
//! mini-batch regression trainer for the MLP heads.

use ndarray::{Array2, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, State};
use crate::nn::{Adam, AdamConfig, Ctx, Module, Sequential};
use crate::rng::{self, Rng};

/// Optimisation schedule shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub weight_decay: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lr_decay > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("invalid training schedule {self:?}")));
        }
        Ok(())
    }

    pub fn adam(&self) -> Adam<f32> {
        Adam::new(AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0 is the untrained initialisation; training epochs count from 1.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochStats>,
}

/// Tracks the best validation loss and the weights that achieved it.
pub struct EarlyStopping<F: crate::nn::Scalar> {
    patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    best_state: State<F>,
    since_best: usize,
}

impl<F: crate::nn::Scalar> EarlyStopping<F> {
    pub fn new(patience: usize, init_loss: f64, init: &dyn Module<F>) -> Self {
        Self {
            patience,
            best_loss: init_loss,
            best_epoch: 0,
            best_state: checkpoint::state_of(init),
            since_best: 0,
        }
    }

    /// Record an epoch; returns true when training should stop.
    pub fn update(&mut self, epoch: usize, val_loss: f64, model: &dyn Module<F>) -> bool {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.best_state = checkpoint::state_of(model);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    /// Restore the best weights into `model`.
    pub fn restore(&self, model: &mut dyn Module<F>) -> Result<()> {
        checkpoint::load_state(model, &self.best_state)
    }
}

/// Seeded mini-batch order for one epoch.
pub fn epoch_batches(n: usize, batch: usize, r: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut idx, r);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn gather_rows(x: &Array2<f32>, idx: &[usize]) -> ArrayD<f32> {
    x.select(Axis(0), idx).into_dyn()
}

/// Mean-squared-error loss and its gradient.
fn mse_grad(pred: &ArrayD<f32>, target: &ArrayD<f32>) -> (f64, ArrayD<f32>) {
    let n = pred.len().max(1) as f32;
    let diff = pred - target;
    let loss = diff.iter().map(|d| f64::from(*d) * f64::from(*d)).sum::<f64>() / f64::from(n);
    (loss, diff.mapv(|d| 2.0 * d / n))
}

/// Batched inference over the rows of `x`.
pub fn predict(net: &Sequential<f32>, x: &Array2<f32>, batch: usize) -> Array2<f32> {
    let mut out: Option<Array2<f32>> = None;
    for start in (0..x.nrows()).step_by(batch.max(1)) {
        let end = (start + batch).min(x.nrows());
        let y = net
            .infer(&x.slice(ndarray::s![start..end, ..]).to_owned().into_dyn())
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-D output");
        out = Some(match out {
            None => y,
            Some(o) => ndarray::concatenate(Axis(0), &[o.view(), y.view()]).unwrap(),
        });
    }
    out.unwrap_or_else(|| Array2::zeros((0, 0)))
}

pub fn regression_loss(net: &Sequential<f32>, x: &Array2<f32>, y: &Array2<f32>, batch: usize) -> f64 {
    let p = predict(net, x, batch);
    crate::nn::mse(&p.into_dyn(), &y.clone().into_dyn())
}

/// Train `net` to regress `y` from `x` with MSE, Adam, per-epoch learning
/// rate decay and early stopping on `(xv, yv)`. The best weights are left
/// in `net`.
pub fn fit_regression(
    net: &mut Sequential<f32>,
    train: (&Array2<f32>, &Array2<f32>),
    val: (&Array2<f32>, &Array2<f32>),
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    let (x, y) = train;
    if x.nrows() == 0 || val.0.nrows() == 0 {
        return Err(Error::InvalidArgument("regression needs non-empty train and validation sets".into()));
    }
    let mut order_rng = rng::rng(rng::derive_seed(seed, "fit/order"));
    let mut drop_rng = rng::rng(rng::derive_seed(seed, "fit/dropout"));
    let mut adam = cfg.adam();
    let eval_batch = 1024;
    let init = regression_loss(net, val.0, val.1, eval_batch);
    let mut stop = EarlyStopping::new(cfg.patience, init, net);
    let mut history = vec![EpochStats { epoch: 0, train_loss: f64::NAN, val_loss: init }];
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for b in epoch_batches(x.nrows(), cfg.batch_size, &mut order_rng) {
            let (xb, yb) = (gather_rows(x, &b), gather_rows(y, &b));
            net.zero_grad();
            let (pred, tape) = net.forward(xb, &mut Ctx::train(&mut drop_rng));
            let (loss, g) = mse_grad(&pred, &yb);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            net.backward(tape, g);
            adam.step(net);
            total += loss * b.len() as f64;
        }
        adam.decay(cfg.lr_decay);
        let val_loss = regression_loss(net, val.0, val.1, eval_batch);
        history.push(EpochStats { epoch, train_loss: total / x.nrows() as f64, val_loss });
        log::debug!("epoch {epoch}: val {val_loss:.6}");
        if stop.update(epoch, val_loss, net) {
            break;
        }
    }
    stop.restore(net)?;
    Ok(TrainReport {
        best_epoch: stop.best_epoch,
        best_val_loss: stop.best_loss,
        history,
    })
}

/// Per-column standardisation, fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Columns with (near) zero spread get unit scale.
    pub fn fit(x: &Array2<f32>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = vec![0.0; x.ncols()];
        let mut std = vec![0.0; x.ncols()];
        for (j, col) in x.columns().into_iter().enumerate() {
            let m = col.iter().map(|v| f64::from(*v)).sum::<f64>() / n;
            let var = col.iter().map(|v| (f64::from(*v) - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| ((f64::from(v) - m) / s) as f32);
        }
        out
    }

    pub fn invert(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (f64::from(v) * s + m) as f32);
        }
        out
    }
}
