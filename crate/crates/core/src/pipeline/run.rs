//! Training orchestration and the evaluation tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::data::{LatentVec, Partition, TactileImage, TrajectorySample, TriMesh};
use crate::dataset::{Dataset, DatasetMeta, SensorProfile};
use crate::error::{Error, Result};
use crate::gel::{self, CalibrationBounds, Calibration, ForceTrajectory, GelParams, Simulator, ToyGel};
use crate::imagevae::{self, ImageVae};
use crate::latent::{self, Direction, PairedLatent, PipelineMode};
use crate::meshvae::{self, MeshVae};
use crate::metrics::{self, ImageFidelityReport, LatentRow, MeshErrorReport, RandomConvExtractor};
use crate::rng;
use crate::synth;
use crate::train::TrainReport;

use super::force::{self, EncodedSamples, ForceConfig, ForceSplits, ForceTable};
use super::{layout, Checkpoints, CycleStart, ProfileFile, RunConfig};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn timed<T>(what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    log::info!("{what}: {:.1} s", t.elapsed().as_secs_f64());
    Ok(out)
}

/// Evenly strided subset of at most `cap` items, order preserved.
pub fn strided<T: Clone>(items: &[T], cap: usize) -> Vec<T> {
    let n = items.len();
    if n <= cap {
        return items.to_vec();
    }
    (0..cap).map(|i| items[i * n / cap].clone()).collect()
}

pub fn gen_data(run: &RunConfig) -> Result<DatasetMeta> {
    timed("generate dataset", || synth::generate_dataset(&run.dataset_spec(), &run.dataset))
}

pub fn load_dataset(run: &RunConfig) -> Result<Dataset> {
    if !run.dataset.join("meta.json").exists() {
        return Err(Error::Missing(format!("dataset at {}", run.dataset.display())));
    }
    timed("load dataset", || Dataset::load(&run.dataset))
}

fn meshes<'a>(s: &[&'a TrajectorySample]) -> Vec<&'a TriMesh> {
    s.iter().map(|s| s.mesh.as_ref()).collect()
}

fn images<'a>(s: &[&'a TrajectorySample]) -> Vec<&'a TactileImage> {
    s.iter().map(|s| s.image.as_ref()).collect()
}

pub fn train_mesh_vae_step(run: &RunConfig, ds: &Dataset) -> Result<TrainReport> {
    let cfg = run.model_configs().mesh_vae;
    let seed = rng::derive_seed(run.seed, "mesh_vae");
    let mut model = MeshVae::new(Arc::clone(&ds.topology), cfg, seed)?;
    let (train, val) = (ds.partition(Partition::Train), ds.partition(Partition::Val));
    let report = timed("train mesh VAE", || {
        meshvae::train_mesh_vae(&mut model, &meshes(&train), &meshes(&val), seed)
    })?;
    let dir = layout::mesh_vae(&run.checkpoints);
    model.save(&dir)?;
    write_json(&dir.join("history.json"), &report)?;
    Ok(report)
}

/// Encode every sensor background and store the latents.
pub fn write_profiles(run: &RunConfig, ds: &Dataset, model: &ImageVae) -> Result<Vec<SensorProfile>> {
    let mut profiles = ds.profiles()?;
    for p in &mut profiles {
        latent::background_vector(p, model)?;
    }
    ProfileFile::from_profiles(&profiles, model.latent_dim())?.save(&layout::profiles(&run.checkpoints))?;
    Ok(profiles)
}

pub fn train_image_vae_step(run: &RunConfig, ds: &Dataset) -> Result<TrainReport> {
    let cfg = run.model_configs().image_vae;
    if cfg.input != ds.meta.image_shape {
        return Err(Error::Config(format!(
            "image VAE input {:?} does not match dataset images {:?}",
            cfg.input, ds.meta.image_shape
        )));
    }
    let seed = rng::derive_seed(run.seed, "image_vae");
    let mut model = ImageVae::new(cfg, seed)?;
    let (train, val) = (ds.partition(Partition::Train), ds.partition(Partition::Val));
    let report = timed("train image VAE", || {
        imagevae::train_image_vae(&mut model, &images(&train), &images(&val), seed)
    })?;
    let dir = layout::image_vae(&run.checkpoints);
    model.save(&dir)?;
    write_json(&dir.join("history.json"), &report)?;
    std::fs::create_dir_all(&run.checkpoints).map_err(|e| Error::io(&run.checkpoints, e))?;
    write_profiles(run, ds, &model)?;
    Ok(report)
}

fn pairs(set: &EncodedSamples<'_>) -> Vec<PairedLatent> {
    set.samples
        .iter()
        .zip(set.z_mesh.iter().zip(&set.z_image))
        .map(|(s, (m, i))| PairedLatent {
            z_mesh: m.clone(),
            z_image: i.clone(),
            sensor_id: s.sensor_id.clone(),
        })
        .collect()
}

fn bases(ck: &Checkpoints) -> BTreeMap<String, LatentVec> {
    latent::base_map(&ck.profiles.values().cloned().collect::<Vec<_>>())
}

/// Train projections for every (seed, direction, mode) requested.
pub fn train_projections(
    run: &RunConfig,
    ds: &Dataset,
    seeds: &[u64],
    directions: &[Direction],
    modes: &[PipelineMode],
) -> Result<BTreeMap<(u64, Direction, PipelineMode), TrainReport>> {
    let ck = Checkpoints::load_base(&run.checkpoints, ds)?;
    let (train, val) = timed("encode projection data", || {
        Ok((
            pairs(&EncodedSamples::new(ds.partition(Partition::Train), &ck)?),
            pairs(&EncodedSamples::new(ds.partition(Partition::Val), &ck)?),
        ))
    })?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("projection training needs train and validation samples".into()));
    }
    let cfg = run.model_configs().projection;
    let b = bases(&ck);
    let mut out = BTreeMap::new();
    for &seed in seeds {
        for &mode in modes {
            for &direction in directions {
                let (proj, report) = timed(&format!("train projection {direction}/{mode} seed {seed}"), || {
                    latent::train_projection(direction, mode, &train, &val, &b, &cfg, seed)
                })?;
                let dir = layout::projection(&run.checkpoints, seed, direction, mode);
                proj.save(&dir)?;
                write_json(&dir.join("history.json"), &report)?;
                out.insert((seed, direction, mode), report);
            }
        }
    }
    Ok(out)
}

/// Force heads use the projections of the first projection seed.
pub fn train_force_step(run: &RunConfig, ds: &Dataset, configs: &[ForceConfig]) -> Result<Vec<ForceTable>> {
    let seed = run.seeds[0];
    let modes: BTreeSet<PipelineMode> = configs.iter().filter_map(|c| c.projection_mode()).collect();
    let ck = Checkpoints::load(&run.checkpoints, ds, seed, &modes.into_iter().collect::<Vec<_>>())?;
    let splits = timed("encode force data", || ForceSplits::new(ds, &ck))?;
    let head = run.model_configs().force;
    let mut tables = Vec::new();
    for &config in configs {
        let (table, heads) = timed(&format!("train force {config}"), || {
            force::train_force_on(config, &head, &splits, &ck, &run.force_seeds)
        })?;
        let dir = layout::force(&run.checkpoints, config);
        for h in &heads {
            h.save(&dir.join(format!("seed_{}", h.seed)))?;
        }
        write_json(&dir.join("table.json"), &table)?;
        tables.push(table);
    }
    Ok(tables)
}

/// Mesh VAE and image VAE, then projections on the frozen encoders, then
/// force heads.
pub fn train_all(run: &RunConfig, ds: &Dataset) -> Result<()> {
    run.validate()?;
    train_mesh_vae_step(run, ds)?;
    train_image_vae_step(run, ds)?;
    train_projections(run, ds, &run.seeds, &[Direction::MeshToImage, Direction::ImageToMesh], &run.modes)?;
    train_force_step(run, ds, &run.force_configs)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRow {
    pub partition: String,
    pub mode: PipelineMode,
    /// `None` marks the mean over seeds.
    pub seed: Option<u64>,
    pub n: usize,
    pub metrics: ImageFidelityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshRow {
    pub partition: String,
    pub mode: PipelineMode,
    pub seed: Option<u64>,
    pub n: usize,
    pub metrics: MeshErrorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub source: String,
    pub target: String,
    pub n: usize,
    pub hist_before: f64,
    pub hist_after: f64,
    pub corr_before: f64,
    pub corr_after: f64,
    pub style_before: f64,
    pub style_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub mode: PipelineMode,
    pub cycle: usize,
    pub abs_ssim: f64,
    pub abs_mesh_rmse: f64,
    pub step_ssim: f64,
    pub step_mesh_rmse: f64,
}

/// Everything `evaluate` writes, in memory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub preset: String,
    pub seeds: Vec<u64>,
    pub image: Vec<ImageRow>,
    pub mesh: Vec<MeshRow>,
    pub transfer: Vec<TransferRow>,
    pub force: Vec<ForceTable>,
    pub drift: Vec<DriftRow>,
}

impl EvalReport {
    pub fn image_mean(&self, partition: &str, mode: PipelineMode) -> Option<&ImageFidelityReport> {
        self.image
            .iter()
            .find(|r| r.partition == partition && r.mode == mode && r.seed.is_none())
            .map(|r| &r.metrics)
    }

    pub fn mesh_mean(&self, partition: &str, mode: PipelineMode) -> Option<&MeshErrorReport> {
        self.mesh
            .iter()
            .find(|r| r.partition == partition && r.mode == mode && r.seed.is_none())
            .map(|r| &r.metrics)
    }

    pub fn force_table(&self, config: ForceConfig) -> Option<&ForceTable> {
        self.force.iter().find(|t| t.config == config)
    }

    pub fn drift_of(&self, mode: PipelineMode) -> Vec<&DriftRow> {
        self.drift.iter().filter(|r| r.mode == mode).collect()
    }
}

pub const TEST_A: &str = "test_a";
pub const TEST_B: &str = "test_b";
/// test_b restricted to held-out sensors.
pub const TEST_B_SENSOR: &str = "test_b_sensor";

fn eval_sets(ds: &Dataset, cap: usize) -> Vec<(&'static str, Vec<&TrajectorySample>)> {
    let held = ds.holdout_sensors();
    let b = ds.eligible(Partition::TestB);
    let b_sensor: Vec<_> = b.iter().copied().filter(|s| held.contains(&s.sensor_id)).collect();
    [
        (TEST_A, ds.eligible(Partition::TestA)),
        (TEST_B, b),
        (TEST_B_SENSOR, b_sensor),
    ]
    .into_iter()
    .filter(|(_, v)| !v.is_empty())
    .map(|(n, v)| (n, strided(&v, cap)))
    .collect()
}

fn profiles_of<'a>(ck: &'a Checkpoints, s: &[&TrajectorySample]) -> Result<Vec<&'a SensorProfile>> {
    s.iter().map(|s| ck.profile(&s.sensor_id)).collect()
}

fn image_scores(set: &EncodedSamples<'_>, ck: &Checkpoints, mode: PipelineMode) -> Result<ImageFidelityReport> {
    let targets = profiles_of(ck, &set.samples)?;
    let mut reports = Vec::with_capacity(set.len());
    for (chunk, (z, t)) in set.samples.chunks(64).zip(set.z_mesh.chunks(64).zip(targets.chunks(64))) {
        let zi = super::image_latents_from_mesh_latents(&z.iter().collect::<Vec<_>>(), t, ck, mode)?;
        let imgs = ck.image_vae.decode_images(&zi.iter().collect::<Vec<_>>())?;
        for (s, img) in chunk.iter().zip(&imgs) {
            reports.push(metrics::image_metrics(img, &s.image)?);
        }
    }
    ImageFidelityReport::mean(&reports)
}

fn mesh_scores(set: &EncodedSamples<'_>, ck: &Checkpoints, mode: PipelineMode) -> Result<MeshErrorReport> {
    let sources = profiles_of(ck, &set.samples)?;
    let mut reports = Vec::with_capacity(set.len());
    for (chunk, (z, p)) in set.samples.chunks(64).zip(set.z_image.chunks(64).zip(sources.chunks(64))) {
        let zm = super::mesh_latents_from_image_latents(&z.iter().collect::<Vec<_>>(), p, ck, mode)?;
        let ms = ck.mesh_vae.decode_meshes(&zm.iter().collect::<Vec<_>>())?;
        for (s, m) in chunk.iter().zip(&ms) {
            reports.push(metrics::mesh_metrics(m, &s.mesh)?);
        }
    }
    MeshErrorReport::mean(&reports)
}

fn transfer_rows(ds: &Dataset, ck: &Checkpoints, per_sensor: usize) -> Result<Vec<TransferRow>> {
    let extractor = RandomConvExtractor::default();
    let all = ds.eligible(Partition::Train).into_iter().chain(ds.eligible(Partition::Val)).chain(ds.eligible(Partition::TestA)).chain(ds.eligible(Partition::TestB));
    let mut by_sensor: BTreeMap<&str, Vec<&TrajectorySample>> = BTreeMap::new();
    for s in all {
        by_sensor.entry(s.sensor_id.as_str()).or_default().push(s);
    }
    // partition order is not sample order; restore dataset order first
    for v in by_sensor.values_mut() {
        v.sort_by(|a, b| (&a.trajectory_id, a.frame).cmp(&(&b.trajectory_id, b.frame)));
        *v = strided(v, per_sensor);
    }
    let mut rows = Vec::new();
    for (src, src_samples) in &by_sensor {
        let src_images = images(src_samples);
        let source = ck.profile(src)?;
        for (tgt, tgt_samples) in &by_sensor {
            if src == tgt {
                continue;
            }
            let tgt_images = images(tgt_samples);
            let moved = super::style_transfer_batch(&src_images, source, ck.profile(tgt)?, ck)?;
            let moved_refs: Vec<_> = moved.iter().collect();
            rows.push(TransferRow {
                source: src.to_string(),
                target: tgt.to_string(),
                n: src_images.len(),
                hist_before: metrics::histogram_intersection(&src_images, &tgt_images, 32)?,
                hist_after: metrics::histogram_intersection(&moved_refs, &tgt_images, 32)?,
                corr_before: metrics::histogram_correlation(&src_images, &tgt_images, 32)?,
                corr_after: metrics::histogram_correlation(&moved_refs, &tgt_images, 32)?,
                style_before: metrics::style_distance(&src_images, &tgt_images, &extractor)?,
                style_after: metrics::style_distance(&moved_refs, &tgt_images, &extractor)?,
            });
        }
    }
    Ok(rows)
}

fn drift_rows(ds: &Dataset, ck: &Checkpoints, mode: PipelineMode, cycles: usize, starts: usize) -> Result<Vec<DriftRow>> {
    let mut pool = ds.eligible(Partition::TestA);
    if pool.is_empty() {
        pool = ds.eligible(Partition::Val);
    }
    let starts = strided(&pool, starts);
    if starts.is_empty() || cycles == 0 {
        return Ok(vec![]);
    }
    let mut acc = vec![[0.0f64; 4]; cycles];
    for s in &starts {
        let start = CycleStart::Image {
            image: (*s.image).clone(),
            mesh: Some((*s.mesh).clone()),
        };
        let r = super::cyclic_reconstruction(&start, ck.profile(&s.sensor_id)?, ck, mode, cycles)?;
        let k = starts.len() as f64;
        for (i, a) in acc.iter_mut().enumerate() {
            a[0] += r.drift.abs_ssim[i] / k;
            a[1] += r.drift.abs_mesh_rmse[i] / k;
            a[2] += r.drift.step_ssim[i] / k;
            a[3] += r.drift.step_mesh_rmse[i] / k;
        }
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(i, a)| DriftRow {
            mode,
            cycle: i + 1,
            abs_ssim: a[0],
            abs_mesh_rmse: a[1],
            step_ssim: a[2],
            step_mesh_rmse: a[3],
        })
        .collect())
}

fn mean_image(r: &[ImageFidelityReport]) -> Result<ImageFidelityReport> {
    ImageFidelityReport::mean(r)
}

/// Build every table from trained artifacts and write them to `run.out`.
pub fn evaluate(run: &RunConfig, ds: &Dataset) -> Result<EvalReport> {
    run.validate()?;
    let mut ck = Checkpoints::load_base(&run.checkpoints, ds)?;
    let force_tables = run
        .force_configs
        .iter()
        .map(|&c| {
            let path = layout::force(&run.checkpoints, c).join("table.json");
            let text = std::fs::read_to_string(&path)
                .map_err(|_| Error::Missing(format!("force results for {c} at {}", path.display())))?;
            serde_json::from_str::<ForceTable>(&text).map_err(|e| Error::format(&path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let sets = timed("encode evaluation sets", || {
        eval_sets(ds, run.max_eval_samples)
            .into_iter()
            .map(|(name, s)| Ok((name, EncodedSamples::new(s, &ck)?)))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut image_rows = Vec::new();
    let mut mesh_rows = Vec::new();
    let mut per: BTreeMap<(&str, PipelineMode), (Vec<ImageFidelityReport>, Vec<MeshErrorReport>)> = BTreeMap::new();
    for &seed in &run.seeds {
        ck.load_projections(&run.checkpoints, seed, &run.modes)?;
        for (name, set) in &sets {
            for &mode in &run.modes {
                let (im, me) = timed(&format!("score {name} {mode} seed {seed}"), || {
                    Ok((image_scores(set, &ck, mode)?, mesh_scores(set, &ck, mode)?))
                })?;
                image_rows.push(ImageRow {
                    partition: name.to_string(),
                    mode,
                    seed: Some(seed),
                    n: set.len(),
                    metrics: im,
                });
                mesh_rows.push(MeshRow {
                    partition: name.to_string(),
                    mode,
                    seed: Some(seed),
                    n: set.len(),
                    metrics: me,
                });
                let e = per.entry((name, mode)).or_default();
                e.0.push(im);
                e.1.push(me);
            }
        }
    }
    for (name, set) in &sets {
        for &mode in &run.modes {
            let (im, me) = &per[&(*name, mode)];
            image_rows.push(ImageRow {
                partition: name.to_string(),
                mode,
                seed: None,
                n: set.len(),
                metrics: mean_image(im)?,
            });
            mesh_rows.push(MeshRow {
                partition: name.to_string(),
                mode,
                seed: None,
                n: set.len(),
                metrics: MeshErrorReport::mean(me)?,
            });
        }
    }

    ck.load_projections(&run.checkpoints, run.seeds[0], &run.modes)?;
    let transfer = timed("style transfer table", || transfer_rows(ds, &ck, run.transfer_images))?;
    let mut drift = Vec::new();
    for &mode in &run.modes {
        drift.extend(timed(&format!("cyclic reconstruction {mode}"), || {
            drift_rows(ds, &ck, mode, run.cycles, run.cycle_starts)
        })?);
    }
    let report = EvalReport {
        preset: run.preset.name().into(),
        seeds: run.seeds.clone(),
        image: image_rows,
        mesh: mesh_rows,
        transfer,
        force: force_tables,
        drift,
    };
    write_reports(&run.out, &report)?;
    Ok(report)
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn seed_label(s: Option<u64>) -> String {
    s.map_or_else(|| "mean".into(), |s| s.to_string())
}

pub const TABLE1: &str = "table1_image.csv";
pub const TABLE2: &str = "table2_alignment.csv";
pub const TABLE4: &str = "table4_mesh.csv";
pub const TABLE5: &str = "table5_force.csv";
pub const DRIFT: &str = "drift.csv";
pub const REPORT: &str = "report.json";

pub fn write_reports(out: &Path, r: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_at = |name: &str| csv::Writer::from_path(out.join(name));

    let mut w = csv_at(TABLE1)?;
    w.write_record(["partition", "mode", "seed", "n", "l1", "mse", "ssim", "psnr"])?;
    for row in &r.image {
        let m = &row.metrics;
        w.write_record([row.partition.clone(), row.mode.to_string(), seed_label(row.seed), row.n.to_string(), f(m.l1), f(m.mse), f(m.ssim), f(m.psnr)])?;
    }
    w.flush().map_err(|e| Error::io(out.join(TABLE1), e))?;

    let mut w = csv_at(TABLE2)?;
    w.write_record(["source", "target", "n", "hist_before", "hist_after", "corr_before", "corr_after", "style_before", "style_after"])?;
    for t in &r.transfer {
        w.write_record([
            t.source.clone(),
            t.target.clone(),
            t.n.to_string(),
            f(t.hist_before),
            f(t.hist_after),
            f(t.corr_before),
            f(t.corr_after),
            f(t.style_before),
            f(t.style_after),
        ])?;
    }
    w.flush().map_err(|e| Error::io(out.join(TABLE2), e))?;

    let mut w = csv_at(TABLE4)?;
    w.write_record(["partition", "mode", "seed", "n", "rmse_mm", "l1_mm", "euclidean_mm"])?;
    for row in &r.mesh {
        let m = &row.metrics;
        w.write_record([row.partition.clone(), row.mode.to_string(), seed_label(row.seed), row.n.to_string(), f(m.rmse), f(m.l1), f(m.euclidean)])?;
    }
    w.flush().map_err(|e| Error::io(out.join(TABLE4), e))?;

    let mut w = csv_at(TABLE5)?;
    w.write_record(["config", "seed", "n_test", "fx", "fy", "fz", "norm"])?;
    let mae_row = |config: &str, seed: &str, n: usize, m: &metrics::ForceMae| {
        vec![config.to_string(), seed.to_string(), n.to_string(), f(m.fx), f(m.fy), f(m.fz), f(m.norm)]
    };
    for t in &r.force {
        for s in &t.per_seed {
            w.write_record(mae_row(t.config.name(), &s.seed.to_string(), t.n_test, &s.mae))?;
        }
        w.write_record(mae_row(t.config.name(), "mean", t.n_test, &t.mean))?;
        w.write_record(mae_row(t.config.name(), "std", t.n_test, &t.std))?;
    }
    if let Some(t) = r.force.first() {
        w.write_record(mae_row("zero_baseline", "-", t.n_test, &t.zero_baseline))?;
    }
    w.flush().map_err(|e| Error::io(out.join(TABLE5), e))?;

    let mut w = csv_at(DRIFT)?;
    w.write_record(["mode", "cycle", "abs_ssim", "abs_mesh_rmse_mm", "step_ssim", "step_mesh_rmse_mm"])?;
    for d in &r.drift {
        w.write_record([d.mode.to_string(), d.cycle.to_string(), f(d.abs_ssim), f(d.abs_mesh_rmse), f(d.step_ssim), f(d.step_mesh_rmse)])?;
    }
    w.flush().map_err(|e| Error::io(out.join(DRIFT), e))?;

    write_json(&out.join(REPORT), r)
}

/// Which latent to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentKind {
    Mesh,
    Image,
    /// `z_image − z_base(sensor)`.
    Deformation,
}

impl std::str::FromStr for LatentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mesh" => Ok(Self::Mesh),
            "image" => Ok(Self::Image),
            "deformation" => Ok(Self::Deformation),
            _ => Err(Error::Config(format!("unknown latent kind {s:?} (expected mesh, image or deformation)"))),
        }
    }
}

/// Posterior means of a partition as CSV, labelled by trajectory, sensor,
/// indenter and frame.
pub fn export_latents_step(run: &RunConfig, ds: &Dataset, partition: Partition, kind: LatentKind, path: &Path) -> Result<usize> {
    let ck = Checkpoints::load_base(&run.checkpoints, ds)?;
    let set = EncodedSamples::new(strided(&ds.partition(partition), run.max_eval_samples), &ck)?;
    let z = match kind {
        LatentKind::Mesh => set.z_mesh.clone(),
        LatentKind::Image => set.z_image.clone(),
        LatentKind::Deformation => set.deformations(&ck)?,
    };
    let rows: Vec<LatentRow> = set
        .samples
        .iter()
        .zip(z)
        .map(|(s, z)| LatentRow {
            labels: vec![s.trajectory_id.clone(), s.sensor_id.clone(), s.indenter_id.clone(), s.frame.to_string()],
            latent: z,
        })
        .collect();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    metrics::export_latents(path, &["trajectory", "sensor", "indenter", "frame"], &rows)?;
    Ok(rows.len())
}

/// Recorded presses of the toy gel under `truth`, the stand-in for real
/// force measurements.
pub fn synthetic_force_trajectories(sim: &ToyGel, truth: &GelParams, n: usize, frames: usize, seed: u64) -> Result<Vec<ForceTrajectory>> {
    gel::press_trajectories(n, frames, seed)
        .into_iter()
        .map(|(indenter, poses)| {
            let forces = Simulator::simulate(sim, &indenter, &poses, truth)?;
            Ok(ForceTrajectory { indenter, poses, forces })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrateOptions {
    pub trials: usize,
    pub trajectories: usize,
    pub trajectories_per_trial: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            trajectories: 12,
            trajectories_per_trial: 4,
            frames: 10,
            seed: 0,
        }
    }
}

/// Outcome of [`calibrate_step`]; both losses are on the full recorded set.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub calibration: Calibration,
    pub best_loss: f64,
    pub midpoint_loss: f64,
}

/// Self-calibration against synthetic ground truth.
pub fn calibrate_step(opts: &CalibrateOptions, truth: &GelParams, out: Option<&Path>) -> Result<CalibrationOutcome> {
    let sim = ToyGel::new(Arc::new(gel::gel_topology(21, 16)?));
    let real = synthetic_force_trajectories(&sim, truth, opts.trajectories, opts.frames, rng::derive_seed(opts.seed, "calibrate/data"))?;
    let bounds = CalibrationBounds::default();
    let calibration = gel::calibrate(&sim, &real, &bounds, opts.trials, opts.trajectories_per_trial, opts.seed)?;
    let refs: Vec<_> = real.iter().collect();
    let (best_loss, _) = gel::evaluate_params(&sim, &refs, &calibration.best)?;
    let (midpoint_loss, _) = gel::evaluate_params(&sim, &refs, &bounds.midpoint())?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        calibration.write_trial_log(&dir.join("trials.csv"))?;
        calibration.write_result(&dir.join("calibration.json"))?;
    }
    Ok(CalibrationOutcome {
        calibration,
        best_loss,
        midpoint_loss,
    })
}
