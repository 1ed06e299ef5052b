//! `splitsim` command-line interface. Every command prints a JSON summary on
//! stdout; failures print `{"kind", "message"}` on stderr and exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use splitsim_core::gel::GelParams;
use splitsim_core::io;
use splitsim_core::metrics::{self, ImageFidelityReport, MeshErrorReport};
use splitsim_core::pipeline::run::{self, CalibrateOptions, LatentKind};
use splitsim_core::pipeline::{self, CycleStart, ForceConfig};
use splitsim_core::{Checkpoints, Dataset, Direction, Error, Partition, PipelineMode, Preset, Result, RunConfig, TrajectorySample};

#[derive(Parser)]
#[command(name = "splitsim", version, about = "Cross-modal tactile simulation with disentangled latent spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Model and dataset scale.
    #[arg(long)]
    preset: Option<Preset>,
    /// Seed of data generation and both VAEs.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (reports for pipeline commands).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding data/, checkpoints/ and reports/ when no config is given.
    #[arg(long, default_value = "splitsim-run")]
    root: PathBuf,
}

#[derive(Args, Clone)]
struct SampleArgs {
    /// Dataset partition to draw samples from.
    #[arg(long, default_value = "test_a")]
    partition: Partition,
    /// Maximum number of samples (evenly strided).
    #[arg(long, default_value_t = 16)]
    limit: usize,
    #[arg(long, default_value = "split")]
    mode: PipelineMode,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[command(flatten)]
        run: RunArgs,
        /// Run configuration (JSON).
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
    },
    /// Train the mesh VAE.
    TrainMeshVae {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
    },
    /// Train the image VAE and encode every sensor background.
    TrainImageVae {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
    },
    /// Train one projection for every projection seed of the run.
    TrainProjection {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
        #[arg(long)]
        direction: Direction,
        #[arg(long)]
        mode: PipelineMode,
    },
    /// Train force heads of one configuration over the force seeds.
    TrainForce {
        #[command(flatten)]
        run: RunArgs,
        /// Run configuration (JSON).
        #[arg(long = "run-config", value_name = "JSON")]
        run_config: Option<PathBuf>,
        /// Force configuration, e.g. image_latent_split.
        #[arg(long)]
        config: ForceConfig,
    },
    /// Train everything: VAEs, projections, force heads.
    TrainAll {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
    },
    /// Render meshes as tactile images of a target sensor.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
        #[command(flatten)]
        samples: SampleArgs,
        /// Target sensor; defaults to each sample's own sensor.
        #[arg(long)]
        sensor: Option<String>,
        /// Simulate this mesh file instead of dataset samples (needs --sensor).
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Reconstruct meshes from tactile images.
    Reconstruct {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
        #[command(flatten)]
        samples: SampleArgs,
        /// Reconstruct this image instead of dataset samples (needs --sensor).
        #[arg(long)]
        image: Option<PathBuf>,
        /// Source sensor of --image.
        #[arg(long)]
        sensor: Option<String>,
    },
    /// Move images of one sensor into the style of another.
    Transfer {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "test_a")]
        partition: Partition,
        #[arg(long, default_value_t = 16)]
        limit: usize,
    },
    /// Cyclic image → mesh → image reconstruction of one sample.
    Cycle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value = "test_a")]
        partition: Partition,
        /// Index among the partition's contact samples.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "split")]
        mode: PipelineMode,
        /// Start from the mesh instead of the image.
        #[arg(long)]
        from_mesh: bool,
    },
    /// Recover gel parameters from synthetic force recordings.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 12)]
        trajectories: usize,
        #[arg(long, default_value_t = 4)]
        per_trial: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Ground-truth Young's modulus, kPa.
        #[arg(long, default_value_t = GelParams::CALIBRATED.elasticity_modulus)]
        modulus: f64,
        #[arg(long, default_value_t = GelParams::CALIBRATED.poisson_ratio)]
        poisson: f64,
        #[arg(long, default_value_t = GelParams::CALIBRATED.friction_coefficient)]
        friction: f64,
    },
    /// Evaluate trained checkpoints and write the report tables.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
    },
    /// Write posterior means of a partition as CSV.
    ExportLatents {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "JSON")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test_a")]
        partition: Partition,
        /// mesh, image or deformation.
        #[arg(long, default_value = "deformation")]
        kind: LatentKind,
    },
}

fn resolve(args: &RunArgs, config: Option<&Path>) -> Result<RunConfig> {
    let mut run = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(args.preset.unwrap_or(Preset::Tiny), &args.root),
    };
    if let Some(p) = args.preset {
        run.preset = p;
    }
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if let Some(out) = &args.out {
        run.out = out.clone();
    }
    run.validate()?;
    Ok(run)
}

/// Output directory of a sample-level command.
fn out_dir(run: &RunConfig, args: &RunArgs, name: &str) -> Result<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| run.out.join(name));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn checkpoints(run: &RunConfig, ds: &Dataset, modes: &[PipelineMode]) -> Result<Checkpoints> {
    Checkpoints::load(&run.checkpoints, ds, run.seeds[0], modes)
}

fn contact_samples(ds: &Dataset, p: Partition, limit: usize) -> Result<Vec<&TrajectorySample>> {
    let all = run::strided(&ds.eligible(p), limit);
    if all.is_empty() {
        return Err(Error::Missing(format!("contact samples in partition {}", p.name())));
    }
    Ok(all)
}

fn stem(s: &TrajectorySample) -> String {
    format!("{}_f{:03}", s.trajectory_id, s.frame)
}

fn execute(command: Command) -> Result<Value> {
    match command {
        Command::GenData { run, config } => {
            let r = resolve(&run, config.as_deref())?;
            let meta = run::gen_data(&r)?;
            Ok(json!({
                "dataset": r.dataset,
                "sensors": meta.sensors.len(),
                "trajectories": meta.trajectories.len(),
                "image_shape": meta.image_shape,
            }))
        }
        Command::TrainMeshVae { run, config } => {
            let r = resolve(&run, config.as_deref())?;
            let rep = run::train_mesh_vae_step(&r, &run::load_dataset(&r)?)?;
            Ok(json!({"best_epoch": rep.best_epoch, "best_val_loss": rep.best_val_loss}))
        }
        Command::TrainImageVae { run, config } => {
            let r = resolve(&run, config.as_deref())?;
            let rep = run::train_image_vae_step(&r, &run::load_dataset(&r)?)?;
            Ok(json!({"best_epoch": rep.best_epoch, "best_val_loss": rep.best_val_loss}))
        }
        Command::TrainProjection { run, config, direction, mode } => {
            let r = resolve(&run, config.as_deref())?;
            let ds = run::load_dataset(&r)?;
            let reports = run::train_projections(&r, &ds, &r.seeds, &[direction], &[mode])?;
            let rows: Vec<Value> = reports
                .iter()
                .map(|((seed, d, m), rep)| json!({"seed": seed, "direction": d.name(), "mode": m.name(), "best_epoch": rep.best_epoch, "best_val_loss": rep.best_val_loss}))
                .collect();
            Ok(Value::Array(rows))
        }
        Command::TrainForce { run, run_config, config } => {
            let r = resolve(&run, run_config.as_deref())?;
            let tables = run::train_force_step(&r, &run::load_dataset(&r)?, &[config])?;
            Ok(serde_json::to_value(&tables)?)
        }
        Command::TrainAll { run, config } => {
            let r = resolve(&run, config.as_deref())?;
            run::train_all(&r, &run::load_dataset(&r)?)?;
            Ok(json!({"checkpoints": r.checkpoints}))
        }
        Command::Simulate { run, config, samples, sensor, mesh } => {
            let r = resolve(&run, config.as_deref())?;
            let ds = run::load_dataset(&r)?;
            let ck = checkpoints(&r, &ds, &[samples.mode])?;
            let dir = out_dir(&r, &run, "simulate")?;
            if let Some(path) = mesh {
                let sensor = sensor.ok_or_else(|| Error::InvalidArgument("--mesh needs --sensor".into()))?;
                let m = io::load_mesh(&path, &ds.topology)?;
                let img = pipeline::simulate_image(&m, ck.profile(&sensor)?, &ck, samples.mode)?;
                let file = dir.join(format!("simulated_{sensor}.png"));
                io::save_image(&file, &img)?;
                return Ok(json!({"written": [file]}));
            }
            let set = contact_samples(&ds, samples.partition, samples.limit)?;
            let targets = set
                .iter()
                .map(|s| ck.profile(sensor.as_deref().unwrap_or(&s.sensor_id)))
                .collect::<Result<Vec<_>>>()?;
            let meshes: Vec<_> = set.iter().map(|s| s.mesh.as_ref()).collect();
            let images = pipeline::simulate_images(&meshes, &targets, &ck, samples.mode)?;
            let mut fidelity = Vec::new();
            for ((s, t), img) in set.iter().zip(&targets).zip(&images) {
                io::save_image(&dir.join(format!("{}_{}.png", stem(s), t.sensor_id)), img)?;
                if t.sensor_id == s.sensor_id {
                    fidelity.push(metrics::image_metrics(img, &s.image)?);
                }
            }
            let mean = if fidelity.is_empty() { None } else { Some(ImageFidelityReport::mean(&fidelity)?) };
            Ok(json!({"out": dir, "images": images.len(), "fidelity_vs_real": mean}))
        }
        Command::Reconstruct { run, config, samples, image, sensor } => {
            let r = resolve(&run, config.as_deref())?;
            let ds = run::load_dataset(&r)?;
            let ck = checkpoints(&r, &ds, &[samples.mode])?;
            let dir = out_dir(&r, &run, "reconstruct")?;
            if let Some(path) = image {
                let sensor = sensor.ok_or_else(|| Error::InvalidArgument("--image needs --sensor".into()))?;
                let img = io::load_image(&path)?;
                let m = pipeline::reconstruct_mesh(&img, ck.profile(&sensor)?, &ck, samples.mode)?;
                let file = dir.join("reconstructed.mesh");
                io::save_mesh(&file, &m)?;
                return Ok(json!({"written": [file]}));
            }
            let set = contact_samples(&ds, samples.partition, samples.limit)?;
            let sources = set.iter().map(|s| ck.profile(&s.sensor_id)).collect::<Result<Vec<_>>>()?;
            let images: Vec<_> = set.iter().map(|s| s.image.as_ref()).collect();
            let meshes = pipeline::reconstruct_meshes(&images, &sources, &ck, samples.mode)?;
            let mut errors = Vec::new();
            for (s, m) in set.iter().zip(&meshes) {
                io::save_mesh(&dir.join(format!("{}.mesh", stem(s))), m)?;
                errors.push(metrics::mesh_metrics(m, &s.mesh)?);
            }
            Ok(json!({"out": dir, "meshes": meshes.len(), "error_mm": MeshErrorReport::mean(&errors)?}))
        }
        Command::Transfer { run, config, source, target, partition, limit } => {
            let r = resolve(&run, config.as_deref())?;
            let ds = run::load_dataset(&r)?;
            let ck = Checkpoints::load_base(&r.checkpoints, &ds)?;
            let dir = out_dir(&r, &run, "transfer")?;
            let of = |id: &str| -> Vec<&TrajectorySample> {
                let v: Vec<_> = ds.eligible(partition).into_iter().filter(|s| s.sensor_id == id).collect();
                run::strided(&v, limit)
            };
            let (src, tgt) = (of(&source), of(&target));
            if src.is_empty() || tgt.is_empty() {
                return Err(Error::Missing(format!("contact samples of {source} and {target} in {}", partition.name())));
            }
            let images: Vec<_> = src.iter().map(|s| s.image.as_ref()).collect();
            let moved = pipeline::style_transfer_batch(&images, ck.profile(&source)?, ck.profile(&target)?, &ck)?;
            for (s, img) in src.iter().zip(&moved) {
                io::save_image(&dir.join(format!("{}_to_{target}.png", stem(s))), img)?;
            }
            let real: Vec<_> = tgt.iter().map(|s| s.image.as_ref()).collect();
            let after: Vec<_> = moved.iter().collect();
            Ok(json!({
                "out": dir,
                "images": moved.len(),
                "hist_intersection_before": metrics::histogram_intersection(&images, &real, 32)?,
                "hist_intersection_after": metrics::histogram_intersection(&after, &real, 32)?,
            }))
        }
        Command::Cycle { run, config, n, partition, index, mode, from_mesh } => {
            let r = resolve(&run, config.as_deref())?;
            let ds = run::load_dataset(&r)?;
            let ck = checkpoints(&r, &ds, &[mode])?;
            let dir = out_dir(&r, &run, "cycle")?;
            let pool = ds.eligible(partition);
            let s = pool
                .get(index)
                .ok_or_else(|| Error::InvalidArgument(format!("index {index} out of range ({} contact samples)", pool.len())))?;
            let start = if from_mesh {
                CycleStart::Mesh { mesh: (*s.mesh).clone(), image: Some((*s.image).clone()) }
            } else {
                CycleStart::Image { image: (*s.image).clone(), mesh: Some((*s.mesh).clone()) }
            };
            let res = pipeline::cyclic_reconstruction(&start, ck.profile(&s.sensor_id)?, &ck, mode, n)?;
            for (i, img) in res.images.iter().enumerate() {
                io::save_image(&dir.join(format!("cycle_{i:03}.png")), img)?;
            }
            std::fs::write(dir.join("drift.json"), serde_json::to_string_pretty(&res.drift)?)
                .map_err(|e| Error::Io { path: dir.join("drift.json"), source: e })?;
            Ok(json!({"out": dir, "sample": stem(s), "cycles": n, "drift": res.drift}))
        }
        Command::Calibrate { run, trials, trajectories, per_trial, frames, modulus, poisson, friction } => {
            let truth = GelParams::new(modulus, poisson, friction)?;
            let opts = CalibrateOptions {
                trials,
                trajectories,
                trajectories_per_trial: per_trial,
                frames,
                seed: run.seed.unwrap_or(0),
            };
            let dir = run.out.clone().unwrap_or_else(|| run.root.join("calibration"));
            let o = run::calibrate_step(&opts, &truth, Some(&dir))?;
            Ok(json!({
                "out": dir,
                "truth": truth,
                "best": o.calibration.best,
                "best_trial": o.calibration.best_trial,
                "best_loss": o.best_loss,
                "midpoint_loss": o.midpoint_loss,
            }))
        }
        Command::Evaluate { run, config } => {
            let r = resolve(&run, config.as_deref())?;
            let rep = run::evaluate(&r, &run::load_dataset(&r)?)?;
            Ok(json!({"out": r.out, "image_rows": rep.image.len(), "force_tables": rep.force.len()}))
        }
        Command::ExportLatents { run, config, partition, kind } => {
            let r = resolve(&run, config.as_deref())?;
            let ds = run::load_dataset(&r)?;
            let path = out_dir(&r, &run, "latents")?.join(format!("{}_{kind:?}.csv", partition.name()).to_lowercase());
            let rows = run::export_latents_step(&r, &ds, partition, kind, &path)?;
            Ok(json!({"path": path, "rows": rows}))
        }
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({"kind": kind, "message": message}));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim()),
    };
    match execute(cli.command) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("summary serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
