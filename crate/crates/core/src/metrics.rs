//! Evaluation battery: image fidelity, colour/style alignment, mesh geometry,
//! force error, latent export.
//!
//! Image metrics work on the 8-bit-equivalent scale: pixel x in [-1, 1] maps
//! to (x + 1) * 127.5.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{ForceVec, LatentSpace, LatentVec, TactileImage, TriMesh};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::rng;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// +inf is written as the string "inf" (JSON has no infinities).
pub(crate) fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageFidelityReport {
    pub l1: f64,
    pub mse: f64,
    pub ssim: f64,
    /// +inf when mse == 0.
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr: f64,
}

impl ImageFidelityReport {
    /// Average of per-pair reports.
    pub fn mean(reports: &[ImageFidelityReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no image pairs to average".into()));
        }
        let n = reports.len() as f64;
        Ok(Self {
            l1: reports.iter().map(|r| r.l1).sum::<f64>() / n,
            mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
        })
    }
}

fn to_255(img: &TactileImage) -> Array3<f64> {
    img.pixels.mapv(|x| (f64::from(x) + 1.0) * 127.5)
}

fn same_shape(a: &TactileImage, b: &TactileImage) -> Result<()> {
    if a.pixels.shape() != b.pixels.shape() {
        return Err(Error::Shape(format!(
            "image shapes differ: {:?} vs {:?}",
            a.pixels.shape(),
            b.pixels.shape()
        )));
    }
    Ok(())
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

pub fn image_metrics(a: &TactileImage, b: &TactileImage) -> Result<ImageFidelityReport> {
    same_shape(a, b)?;
    let (x, y) = (to_255(a), to_255(b));
    let n = x.len() as f64;
    let l1 = x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()).sum::<f64>() / n;
    let mse = x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
    Ok(ImageFidelityReport {
        l1,
        mse,
        ssim: ssim_255(&x, &y),
        psnr: psnr_from_mse(mse),
    })
}

/// Normalised 1-D Gaussian of odd length `size`.
fn gaussian_1d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Window size: 11, or the largest odd size that fits a smaller image.
fn ssim_window(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

/// Separable "valid" Gaussian filtering of one channel.
fn filter_valid(x: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let k = g.len();
    let (h, w) = x.dim();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = Array2::<f64>::zeros((h, wo));
    for r in 0..h {
        for c in 0..wo {
            rows[[r, c]] = (0..k).map(|i| g[i] * x[[r, c + i]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((ho, wo));
    for r in 0..ho {
        for c in 0..wo {
            out[[r, c]] = (0..k).map(|i| g[i] * rows[[r + i, c]]).sum();
        }
    }
    out
}

/// Mean SSIM, channel-averaged, on [0, 255] images of shape (H, W, C).
fn ssim_255(x: &Array3<f64>, y: &Array3<f64>) -> f64 {
    let (h, w, ch) = x.dim();
    let win = ssim_window(h, w);
    if win == 0 {
        return if x == y { 1.0 } else { 0.0 };
    }
    let g = gaussian_1d(win, SSIM_SIGMA);
    let mut total = 0.0;
    for k in 0..ch {
        let a = x.index_axis(Axis(2), k).to_owned();
        let b = y.index_axis(Axis(2), k).to_owned();
        let mu_a = filter_valid(&a, &g);
        let mu_b = filter_valid(&b, &g);
        let aa = filter_valid(&(&a * &a), &g);
        let bb = filter_valid(&(&b * &b), &g);
        let ab = filter_valid(&(&a * &b), &g);
        let mut sum = 0.0;
        for (((ma, mb), (saa, sbb)), sab) in mu_a.iter().zip(mu_b.iter()).zip(aa.iter().zip(bb.iter())).zip(ab.iter()) {
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / mu_a.len() as f64;
    }
    total / ch as f64
}

pub fn ssim(a: &TactileImage, b: &TactileImage) -> Result<f64> {
    same_shape(a, b)?;
    Ok(ssim_255(&to_255(a), &to_255(b)))
}

/// Normalised per-channel histograms of a set, `bins` bins over [0, 255].
fn histograms(set: &[&TactileImage], bins: usize) -> Result<Vec<Vec<f64>>> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty image set".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let ch = set[0].pixels.shape()[2];
    let mut hist = vec![vec![0.0; bins]; ch];
    let mut count = 0usize;
    for img in set {
        if img.pixels.shape()[2] != ch {
            return Err(Error::Shape("channel count differs within image set".into()));
        }
        for ((_, _, k), x) in img.pixels.indexed_iter() {
            let v = (f64::from(*x) + 1.0) * 127.5;
            let b = ((v / 255.0 * bins as f64) as usize).min(bins - 1);
            hist[k][b] += 1.0;
        }
        count += img.height() * img.width();
    }
    for h in &mut hist {
        h.iter_mut().for_each(|v| *v /= count as f64);
    }
    Ok(hist)
}

/// Sum of bin-wise minima of normalised histograms, averaged over channels.
pub fn histogram_intersection(a: &[&TactileImage], b: &[&TactileImage], bins: usize) -> Result<f64> {
    let (ha, hb) = (histograms(a, bins)?, histograms(b, bins)?);
    if ha.len() != hb.len() {
        return Err(Error::Shape("channel counts differ".into()));
    }
    Ok(ha
        .iter()
        .zip(&hb)
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| x.min(*y)).sum::<f64>())
        .sum::<f64>()
        / ha.len() as f64)
}

/// Pearson correlation of normalised histograms, averaged over channels.
/// A flat histogram has no variance; its correlation is taken as 1 against
/// an identical histogram and 0 otherwise.
pub fn histogram_correlation(a: &[&TactileImage], b: &[&TactileImage], bins: usize) -> Result<f64> {
    let (ha, hb) = (histograms(a, bins)?, histograms(b, bins)?);
    let corr = |p: &[f64], q: &[f64]| {
        let n = p.len() as f64;
        let (mp, mq) = (p.iter().sum::<f64>() / n, q.iter().sum::<f64>() / n);
        let cov: f64 = p.iter().zip(q).map(|(x, y)| (x - mp) * (y - mq)).sum();
        let vp: f64 = p.iter().map(|x| (x - mp).powi(2)).sum();
        let vq: f64 = q.iter().map(|y| (y - mq).powi(2)).sum();
        if vp == 0.0 || vq == 0.0 {
            f64::from(u8::from(p == q))
        } else {
            cov / (vp * vq).sqrt()
        }
    };
    Ok(ha.iter().zip(&hb).map(|(p, q)| corr(p, q)).sum::<f64>() / ha.len() as f64)
}

/// Source of per-layer feature maps for the Gram-matrix style distance.
pub trait FeatureExtractor {
    fn layer_names(&self) -> Vec<String>;
    /// One (C, N) feature matrix per layer, N = spatial positions.
    fn features(&self, image: &TactileImage) -> Vec<Array2<f64>>;
}

/// Fixed random-weight convolutional stack (3x3 stride-2 convolutions with
/// ReLU). Weights depend only on the seed, so distances are comparable
/// across runs.
pub struct RandomConvExtractor {
    convs: Vec<Conv2d<f64>>,
}

impl RandomConvExtractor {
    pub const DEFAULT_SEED: u64 = 0x5717_1e;

    pub fn new(channels: &[usize], seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let mut cin = 3;
        let convs = channels
            .iter()
            .map(|&c| {
                let conv = Conv2d::new(cin, c, 3, 2, 1, &mut r);
                cin = c;
                conv
            })
            .collect();
        Self { convs }
    }

    pub fn convs(&self) -> &[Conv2d<f64>] {
        &self.convs
    }
}

impl Default for RandomConvExtractor {
    fn default() -> Self {
        Self::new(&[8, 16, 32], Self::DEFAULT_SEED)
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn layer_names(&self) -> Vec<String> {
        (0..self.convs.len()).map(|i| format!("conv{}", i + 1)).collect()
    }

    fn features(&self, image: &TactileImage) -> Vec<Array2<f64>> {
        let (h, w) = image.shape();
        // (H, W, C) in [-1, 1] -> (1, C, H, W) in [0, 1]
        let mut x = ArrayD::from_shape_fn(IxDyn(&[1, 3, h, w]), |i| (f64::from(image.pixels[[i[2], i[3], i[1]]]) + 1.0) * 0.5);
        let mut out = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            x = conv.forward(&x).mapv(|v| v.max(0.0));
            let s = x.shape().to_vec();
            out.push(x.clone().into_shape_with_order((s[1], s[2] * s[3])).unwrap());
        }
        out
    }
}

/// Gram matrix F F^T / N of a (C, N) feature matrix.
pub fn gram(features: &Array2<f64>) -> Array2<f64> {
    features.dot(&features.t()) / features.ncols().max(1) as f64
}

/// Mean squared difference between the set-averaged Gram matrices of `a`
/// and `b`, averaged over the extractor's layers.
pub fn style_distance(a: &[&TactileImage], b: &[&TactileImage], extractor: &dyn FeatureExtractor) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("empty image set".into()));
    }
    let mean_grams = |set: &[&TactileImage]| -> Result<Vec<Array2<f64>>> {
        let mut acc: Option<Vec<Array2<f64>>> = None;
        for img in set {
            let g: Vec<Array2<f64>> = extractor.features(img).iter().map(gram).collect();
            match &mut acc {
                None => acc = Some(g),
                Some(acc) => {
                    if acc.len() != g.len() || acc.iter().zip(&g).any(|(x, y)| x.dim() != y.dim()) {
                        return Err(Error::Shape("feature extractor layer mismatch".into()));
                    }
                    acc.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
            }
        }
        let mut acc = acc.expect("non-empty");
        acc.iter_mut().for_each(|g| *g /= set.len() as f64);
        Ok(acc)
    };
    let (ga, gb) = (mean_grams(a)?, mean_grams(b)?);
    if ga.len() != gb.len() || ga.is_empty() || ga.iter().zip(&gb).any(|(x, y)| x.dim() != y.dim()) {
        return Err(Error::Shape("feature extractor layer mismatch".into()));
    }
    Ok(ga
        .iter()
        .zip(&gb)
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64)
        .sum::<f64>()
        / ga.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeshErrorReport {
    pub rmse: f64,
    pub l1: f64,
    pub euclidean: f64,
}

impl MeshErrorReport {
    pub fn mean(reports: &[MeshErrorReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no mesh pairs to average".into()));
        }
        let n = reports.len() as f64;
        Ok(Self {
            rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / n,
            l1: reports.iter().map(|r| r.l1).sum::<f64>() / n,
            euclidean: reports.iter().map(|r| r.euclidean).sum::<f64>() / n,
        })
    }
}

/// Coordinate RMSE, coordinate L1 and mean per-vertex distance, in mm.
pub fn mesh_metrics(a: &TriMesh, b: &TriMesh) -> Result<MeshErrorReport> {
    a.same_topology(b)?;
    let n = a.vertices.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut eu = 0.0;
    for (ra, rb) in a.vertices.rows().into_iter().zip(b.vertices.rows()) {
        let mut d2 = 0.0;
        for (p, q) in ra.iter().zip(rb.iter()) {
            let d = f64::from(*p) - f64::from(*q);
            sq += d * d;
            abs += d.abs();
            d2 += d * d;
        }
        eu += d2.sqrt();
    }
    Ok(MeshErrorReport {
        rmse: (sq / n).sqrt(),
        l1: abs / n,
        euclidean: eu / a.n_vertices() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceMae {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    /// MAE between force magnitudes.
    pub norm: f64,
}

pub fn force_mae(pred: &[ForceVec], truth: &[ForceVec]) -> Result<ForceMae> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "force lists must be equal and non-empty, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let mut m = ForceMae::default();
    for (p, t) in pred.iter().zip(truth) {
        m.fx += (p.fx - t.fx).abs() / n;
        m.fy += (p.fy - t.fy).abs() / n;
        m.fz += (p.fz - t.fz).abs() / n;
        m.norm += (p.norm() - t.norm()).abs() / n;
    }
    Ok(m)
}

/// Per-cycle measurements of a cyclic image <-> mesh reconstruction.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DriftReport {
    /// SSIM of cycle i's image against the starting image.
    pub abs_ssim: Vec<f64>,
    /// RMSE of cycle i's mesh against the starting mesh.
    pub abs_mesh_rmse: Vec<f64>,
    /// SSIM between images of consecutive cycles (first entry vs the start).
    pub step_ssim: Vec<f64>,
    /// RMSE between meshes of consecutive cycles (first entry vs the start).
    pub step_mesh_rmse: Vec<f64>,
}

/// One exported latent: label values and the vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub labels: Vec<String>,
    pub latent: LatentVec,
}

/// Write latents as CSV: label columns, `space`, then `z0..z{D-1}`.
pub fn export_latents(path: &Path, label_names: &[&str], rows: &[LatentRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.latent.dim());
    if let Some(r) = rows.iter().find(|r| r.latent.dim() != dim || r.labels.len() != label_names.len()) {
        return Err(Error::Shape(format!(
            "inconsistent latent row: {} labels, dim {} (expected {}, {dim})",
            r.labels.len(),
            r.latent.dim(),
            label_names.len()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = label_names.iter().map(|s| s.to_string()).collect();
    header.push("space".into());
    header.extend((0..dim).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = r.labels.clone();
        rec.push(r.latent.space.to_string());
        rec.extend(r.latent.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse a file written by [`export_latents`].
pub fn read_latents(path: &Path) -> Result<(Vec<String>, Vec<LatentRow>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let space_col = header
        .iter()
        .position(|h| h == "space")
        .ok_or_else(|| Error::format(path, "no space column"))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let space = match &rec[space_col] {
            "mesh" => LatentSpace::Mesh,
            "image" => LatentSpace::Image,
            s => return Err(Error::format(path, format!("unknown latent space {s}"))),
        };
        let values = rec
            .iter()
            .skip(space_col + 1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::format(path, e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(LatentRow {
            labels: rec.iter().take(space_col).map(str::to_string).collect(),
            latent: LatentVec::new(values.into(), space),
        });
    }
    Ok((header[..space_col].to_vec(), rows))
}
