//! Procedural multi-sensor tactile data: per-sensor optical styles, a
//! Lambertian pseudo-renderer for gel meshes, and dataset generation.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{ForceVec, TactileImage, TriMesh, FXY_LIMIT};
use crate::dataset::{DatasetMeta, SensorMeta, SplitRecord, TrajectoryMeta};
use crate::error::{Error, Result};
use crate::gel::{self, GelParams, IndenterPose, ToyGel, GEL_HEIGHT_MM, GEL_WIDTH_MM};
use crate::io::{self, ForceRow};
use crate::rng::{self, RngExt};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit vector pointing from the surface towards the light.
    pub direction: [f64; 3],
    pub color: [f64; 3],
}

/// Optical appearance of one synthetic sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalStyle {
    /// Gradient end colours, in [-1, 1].
    pub corner_a: [f64; 3],
    pub corner_b: [f64; 3],
    /// Direction of the background gradient (rad).
    pub gradient_angle: f64,
    pub lights: [Light; 3],
    /// Per-mm depth tint added inside contacts.
    pub depth_tint: [f64; 3],
    /// Radial darkening at the corners, in [0, 1).
    pub vignette: f64,
    pub noise_seed: u64,
    pub noise_amplitude: f64,
    pub brightness: f64,
    pub contrast: f64,
}

fn hsv_to_signed_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m].map(|u| 2.0 * u - 1.0)
}

/// Deterministic style for `seed`. Styles form one sensor family: units of
/// the same design, with hue, value, LED placement and texture varying
/// around a shared nominal. Hue and value follow a low-discrepancy sequence
/// in the seed, so nearby seeds stay well separated within the family.
pub fn make_style(seed: u64) -> OpticalStyle {
    let mut r = rng::rng(rng::derive_seed(seed, "style"));
    // R2 sequence: consecutive seeds are spread over the (hue, value) square
    let (a1, a2) = (0.754_877_666_246_693, 0.569_840_290_998_053);
    let hue = 0.5 + 0.36 * ((0.5 + seed as f64 * a1).fract() - 0.5);
    let value = 0.3 + 0.55 * (0.5 + seed as f64 * a2).fract();
    let sat = r.random_range(0.45..0.7);
    let corner_a = hsv_to_signed_rgb(hue, sat, value);
    let corner_b = hsv_to_signed_rgb(hue + r.random_range(-0.04..0.04), sat * 0.8, value * r.random_range(0.75..0.95));
    let azimuth0 = 0.4 + r.random_range(-0.3..0.3);
    let lights = [0usize, 1, 2].map(|k| {
        let az = azimuth0 + std::f64::consts::TAU * k as f64 / 3.0;
        let el: f64 = r.random_range(0.55..0.85);
        let mut color = [0.1; 3];
        color[k] = r.random_range(0.6..0.9);
        color[(k + 1) % 3] = r.random_range(0.0..0.2);
        Light {
            direction: [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()],
            color,
        }
    });
    OpticalStyle {
        corner_a,
        corner_b,
        gradient_angle: r.random_range(0.0..std::f64::consts::TAU),
        lights,
        depth_tint: [0; 3].map(|_| r.random_range(-0.15..0.05)),
        vignette: r.random_range(0.05..0.3),
        noise_seed: r.random(),
        noise_amplitude: r.random_range(0.01..0.04),
        brightness: r.random_range(-0.1..0.1),
        contrast: r.random_range(-0.1..0.1),
    }
}

impl OpticalStyle {
    /// Background colour before brightness/contrast, clamping and noise.
    fn gradient(&self, u: f64, v: f64) -> [f64; 3] {
        let (s, c) = self.gradient_angle.sin_cos();
        let t = 0.5 + 0.5 * (u * c + v * s) / (c.abs() + s.abs());
        [0, 1, 2].map(|k| self.corner_a[k] + (self.corner_b[k] - self.corner_a[k]) * t)
    }

    /// Image of the undeformed gel, `height` x `width`, in [-1, 1].
    pub fn background(&self, height: usize, width: usize) -> Array3<f32> {
        let noise = ValueNoise::new(self.noise_seed);
        Array3::from_shape_fn((height, width, 3), |(r, c, k)| {
            let u = 2.0 * (c as f64 + 0.5) / width as f64 - 1.0;
            let v = 2.0 * (r as f64 + 0.5) / height as f64 - 1.0;
            let vig = 1.0 - self.vignette * 0.5 * (u * u + v * v);
            let x = self.gradient(u, v)[k] * vig + self.noise_amplitude * noise.at(u, v, k);
            (x * (1.0 + self.contrast) + self.brightness).clamp(-1.0, 1.0) as f32
        })
    }
}

/// Smooth per-sensor texture: bilinear interpolation of a coarse random grid.
struct ValueNoise {
    grid: Array3<f64>,
}

impl ValueNoise {
    const CELLS: usize = 6;

    fn new(seed: u64) -> Self {
        let mut r = rng::rng(seed);
        let n = Self::CELLS + 1;
        Self {
            grid: Array3::from_shape_fn((n, n, 3), |_| r.random_range(-1.0..1.0)),
        }
    }

    fn at(&self, u: f64, v: f64, k: usize) -> f64 {
        let s = Self::CELLS as f64;
        let (x, y) = ((u + 1.0) * 0.5 * s, (v + 1.0) * 0.5 * s);
        let (i, j) = ((x.floor() as usize).min(Self::CELLS - 1), (y.floor() as usize).min(Self::CELLS - 1));
        let (fx, fy) = (x - i as f64, y - j as f64);
        let g = |a: usize, b: usize| self.grid[[b, a, k]];
        (1.0 - fy) * ((1.0 - fx) * g(i, j) + fx * g(i + 1, j)) + fy * ((1.0 - fx) * g(i, j + 1) + fx * g(i + 1, j + 1))
    }
}

/// Gel x/y (mm) of the centre of unmirrored pixel (row, col).
fn pixel_to_gel(row: usize, col: usize, height: usize, width: usize) -> (f64, f64) {
    (
        -GEL_WIDTH_MM / 2.0 + (col as f64 + 0.5) * GEL_WIDTH_MM / width as f64,
        -GEL_HEIGHT_MM / 2.0 + (row as f64 + 0.5) * GEL_HEIGHT_MM / height as f64,
    )
}

/// Indentation depth (mm, positive into the gel) sampled at pixel centres by
/// rasterising the mesh faces over their reference footprint.
fn depth_field(mesh: &TriMesh, height: usize, width: usize) -> Array2<f64> {
    let reference = &mesh.topology.reference;
    let mut out = Array2::zeros((height, width));
    let disp = mesh.displacement();
    if disp.iter().all(|d| *d == 0.0) {
        return out;
    }
    let (px, py) = (GEL_WIDTH_MM / width as f64, GEL_HEIGHT_MM / height as f64);
    for f in &mesh.topology.faces {
        let idx = f.map(|i| i as usize);
        let d = idx.map(|i| -f64::from(disp[[i, 2]]));
        if d.iter().all(|v| *v == 0.0) {
            continue;
        }
        let p = idx.map(|i| (f64::from(reference[[i, 0]]), f64::from(reference[[i, 1]])));
        let det = (p[1].1 - p[2].1) * (p[0].0 - p[2].0) + (p[2].0 - p[1].0) * (p[0].1 - p[2].1);
        if det.abs() < 1e-12 {
            continue;
        }
        let col = |x: f64| (x + GEL_WIDTH_MM / 2.0) / px - 0.5;
        let row = |y: f64| (y + GEL_HEIGHT_MM / 2.0) / py - 0.5;
        let (xs, ys) = (p.map(|q| col(q.0)), p.map(|q| row(q.1)));
        let c0 = xs.iter().copied().fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let c1 = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor().min(width as f64 - 1.0);
        let r0 = ys.iter().copied().fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let r1 = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor().min(height as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let (x, y) = pixel_to_gel(r, c, height, width);
                let l0 = ((p[1].1 - p[2].1) * (x - p[2].0) + (p[2].0 - p[1].0) * (y - p[2].1)) / det;
                let l1 = ((p[2].1 - p[0].1) * (x - p[2].0) + (p[0].0 - p[2].0) * (y - p[2].1)) / det;
                let l2 = 1.0 - l0 - l1;
                if l0 >= -1e-9 && l1 >= -1e-9 && l2 >= -1e-9 {
                    out[[r, c]] = l0 * d[0] + l1 * d[1] + l2 * d[2];
                }
            }
        }
    }
    out
}

/// Lambertian pseudo-image of `mesh` under `style` at `height` x `width`.
///
/// Shading is the change in diffuse response relative to the flat gel, so
/// an undeformed mesh renders exactly to [`OpticalStyle::background`]. The
/// result is mirrored left-right (the camera looks at the gel from behind);
/// image rows follow +y.
pub fn render_pseudo_image(mesh: &TriMesh, style: &OpticalStyle, height: usize, width: usize) -> Result<TactileImage> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(format!("render size {height}x{width} too small")));
    }
    let bg = style.background(height, width);
    let depth = depth_field(mesh, height, width);
    let (px, py) = (GEL_WIDTH_MM / width as f64, GEL_HEIGHT_MM / height as f64);
    let flat: [f64; 3] = style.lights.map(|l| l.direction[2].max(0.0));
    let mut pixels = bg;
    for r in 0..height {
        for c in 0..width {
            let d = depth[[r, c]];
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(width - 1));
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(height - 1));
            let gx = (depth[[r, cr]] - depth[[r, cl]]) / ((cr - cl) as f64 * px);
            let gy = (depth[[rd, c]] - depth[[ru, c]]) / ((rd - ru) as f64 * py);
            if d == 0.0 && gx == 0.0 && gy == 0.0 {
                continue;
            }
            let norm = (gx * gx + gy * gy + 1.0).sqrt();
            let n = [gx / norm, gy / norm, 1.0 / norm];
            let mut shade = [0.0; 3];
            for (l, f) in style.lights.iter().zip(flat) {
                let lambert = (n[0] * l.direction[0] + n[1] * l.direction[1] + n[2] * l.direction[2]).max(0.0);
                for k in 0..3 {
                    shade[k] += l.color[k] * (lambert - f);
                }
            }
            let mc = width - 1 - c;
            for k in 0..3 {
                let v = f64::from(pixels[[r, mc, k]]) + shade[k] + style.depth_tint[k] * d;
                pixels[[r, mc, k]] = v.clamp(-1.0, 1.0) as f32;
            }
        }
    }
    Ok(TactileImage { pixels, sensor_id: None })
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_sensors: usize,
    pub n_indenters: usize,
    pub trajectories_per_pair: usize,
    pub frames_per_trajectory: usize,
    pub seed: u64,
    /// Gel grid vertices along x and y.
    pub grid: [usize; 2],
    /// Rendered image height and width.
    pub image: [usize; 2],
    pub gel: GelParams,
    /// How many sensors / indenters (taken from the end of each list) are held out.
    pub holdout_sensors: usize,
    pub holdout_indenters: usize,
    pub split_fractions: [f64; 4],
}

impl DatasetSpec {
    pub fn new(n_sensors: usize, n_indenters: usize, trajectories_per_pair: usize, frames_per_trajectory: usize, seed: u64) -> Self {
        Self {
            n_sensors,
            n_indenters,
            trajectories_per_pair,
            frames_per_trajectory,
            seed,
            grid: [21, 16],
            image: [48, 64],
            gel: GelParams::CALIBRATED,
            holdout_sensors: usize::from(n_sensors > 1),
            holdout_indenters: usize::from(n_indenters > 1),
            split_fractions: [0.8, 0.1, 0.1, 0.0],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 || self.n_indenters == 0 || self.trajectories_per_pair == 0 || self.frames_per_trajectory == 0 {
            return Err(Error::InvalidArgument("dataset counts must all be >= 1".into()));
        }
        if self.n_indenters > 13 {
            return Err(Error::InvalidArgument("at most 13 indenters are available".into()));
        }
        if self.holdout_sensors >= self.n_sensors.max(1) && self.holdout_sensors > 0
            || self.holdout_indenters >= self.n_indenters.max(1) && self.holdout_indenters > 0
        {
            return Err(Error::InvalidArgument("cannot hold out every sensor or indenter".into()));
        }
        Ok(())
    }
}

pub fn sensor_id(i: usize) -> String {
    format!("sensor_{i:02}")
}

/// Style seed of sensor `i`; consecutive so the low-discrepancy hue spread applies.
pub fn style_seed(dataset_seed: u64, i: usize) -> u64 {
    (dataset_seed % 1_000_003) * 64 + i as u64
}

/// Ramp of poses for one trajectory: frame 0 is contact-free, then depth
/// starts at a random onset and grows by 0.1 mm per frame.
fn trajectory_poses(frames: usize, r: &mut rng::Rng) -> Vec<IndenterPose> {
    let x = r.random_range(-9.0..9.0);
    let y = r.random_range(-6.0..6.0);
    let tilt = [r.random_range(-0.08..0.08), r.random_range(-0.08..0.08)];
    let onset = r.random_range(0.3..0.9);
    let dir = r.random_range(0.0..std::f64::consts::TAU);
    let slide_rate = r.random_range(0.0..0.03);
    (0..frames)
        .map(|t| {
            if t == 0 {
                return IndenterPose { x, y, tilt, ..Default::default() };
            }
            let s = slide_rate * (t - 1) as f64;
            IndenterPose {
                x,
                y,
                depth: onset + 0.1 * (t - 1) as f64,
                tilt,
                slide: [s * dir.cos(), s * dir.sin()],
            }
        })
        .collect()
}

/// Write a synthetic dataset to `out_dir` and return its metadata.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetMeta> {
    spec.validate()?;
    let topology = Arc::new(gel::gel_topology(spec.grid[0], spec.grid[1])?);
    let model = ToyGel::new(Arc::clone(&topology));
    let lib = gel::indenter_library();
    let indenters = &lib[..spec.n_indenters];
    let [h, w] = spec.image;
    io::save_topology(&out_dir.join("topologies").join(format!("{}.faces", topology.id)), &topology)?;

    let mut sensors: Vec<SensorMeta> = (0..spec.n_sensors)
        .map(|i| SensorMeta {
            id: sensor_id(i),
            style: Some(make_style(style_seed(spec.seed, i))),
            background: None,
        })
        .collect();
    let mut trajectories = Vec::new();
    let mut forces = Vec::new();
    let mut r = rng::rng(rng::derive_seed(spec.seed, "trajectories"));
    for (si, sensor) in sensors.iter_mut().enumerate() {
        let style = sensor.style.clone().expect("synthetic style");
        for tip in indenters {
            for k in 0..spec.trajectories_per_pair {
                let id = format!("s{si:02}_{}_{k:03}", tip.id);
                let poses = trajectory_poses(spec.frames_per_trajectory, &mut r);
                for (t, pose) in poses.iter().enumerate() {
                    let (mesh, f) = model.simulate(tip, pose, &spec.gel)?;
                    let f = ForceVec::new(f.fx.clamp(-FXY_LIMIT, FXY_LIMIT), f.fy.clamp(-FXY_LIMIT, FXY_LIMIT), f.fz);
                    let image = io::quantize_image(&render_pseudo_image(&mesh, &style, h, w)?);
                    io::save_mesh(&out_dir.join("meshes").join(&id).join(format!("{t}.vtx")), &mesh)?;
                    io::save_image(&out_dir.join("images").join(&id).join(format!("{t}.png")), &image)?;
                    forces.push(ForceRow {
                        trajectory_id: id.clone(),
                        frame: t,
                        fx: f.fx,
                        fy: f.fy,
                        fz: f.fz,
                    });
                }
                if sensor.background.is_none() {
                    sensor.background = Some((id.clone(), 0));
                }
                trajectories.push(TrajectoryMeta {
                    id,
                    sensor: sensor.id.clone(),
                    indenter: tip.id.clone(),
                    frames: spec.frames_per_trajectory,
                    poses,
                });
            }
        }
    }
    io::write_forces(&out_dir.join("forces.csv"), &forces)?;

    let holdout_sensors: BTreeSet<String> =
        sensors[spec.n_sensors - spec.holdout_sensors..].iter().map(|s| s.id.clone()).collect();
    let holdout_indenters: BTreeSet<String> =
        indenters[spec.n_indenters - spec.holdout_indenters..].iter().map(|i| i.id.clone()).collect();
    let keys: Vec<_> = trajectories.iter().map(TrajectoryMeta::key).collect();
    let mut fractions = spec.split_fractions;
    if holdout_sensors.is_empty() && holdout_indenters.is_empty() {
        fractions[3] = 0.0;
    }
    let split = crate::data::split_trajectories(&keys, fractions, &holdout_sensors, &holdout_indenters, rng::derive_seed(spec.seed, "split"))?;

    let meta = DatasetMeta {
        format_version: io::FORMAT_VERSION,
        generator: Some(spec.clone()),
        image_shape: [h, w],
        topology_ids: vec![topology.id.clone()],
        sensors,
        indenters: indenters.to_vec(),
        trajectories,
        split: SplitRecord {
            holdout_sensors,
            holdout_indenters,
            fractions,
            split,
        },
    };
    meta.save(&out_dir.join("meta.json"))?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::gel::find_indenter;

    fn topo() -> Arc<crate::data::Topology> {
        Arc::new(gel::gel_topology(33, 25).unwrap())
    }

    fn mse(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| f64::from(x - y).powi(2)).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn styles_reproducible_and_pairwise_distinct() {
        assert_eq!(make_style(3), make_style(3));
        let bgs: Vec<_> = (0..10).map(|s| make_style(s).background(48, 64)).collect();
        for i in 0..10 {
            for j in i + 1..10 {
                let m = mse(&bgs[i], &bgs[j]);
                assert!(m >= 0.01, "styles {i} and {j}: background MSE {m}");
            }
        }
    }

    #[test]
    fn plain_style_background_mean_is_gradient_mean() {
        let mut s = make_style(1);
        s.vignette = 0.0;
        s.noise_amplitude = 0.0;
        s.brightness = 0.0;
        s.contrast = 0.0;
        s.corner_a = [-0.5, 0.0, 0.2];
        s.corner_b = [0.1, 0.4, -0.2];
        let bg = s.background(30, 40);
        for k in 0..3 {
            let mean: f64 = bg.index_axis(ndarray::Axis(2), k).iter().map(|v| f64::from(*v)).sum::<f64>() / 1200.0;
            let want = 0.5 * (s.corner_a[k] + s.corner_b[k]);
            assert!((mean - want).abs() < 1e-6, "{mean} vs {want}");
        }
    }

    #[test]
    fn undeformed_mesh_renders_background_exactly() {
        let t = topo();
        let s = make_style(5);
        let img = render_pseudo_image(&t.rest_mesh(), &s, 48, 64).unwrap();
        assert_eq!(img.pixels, s.background(48, 64));
        assert_eq!(render_pseudo_image(&t.rest_mesh(), &s, 48, 64).unwrap(), img);
    }

    #[test]
    fn indentation_appears_mirrored() {
        let t = topo();
        let g = ToyGel::new(Arc::clone(&t));
        let (h, w) = (48, 64);
        let (x, y) = (-8.0, 4.0);
        let pose = IndenterPose { x, y, depth: 1.0, ..Default::default() };
        let (mesh, _) = g.simulate(&find_indenter("sphere_small").unwrap(), &pose, &GelParams::CALIBRATED).unwrap();
        let s = make_style(2);
        let img = render_pseudo_image(&mesh, &s, h, w).unwrap();
        let bg = s.background(h, w);
        let (mut sr, mut sc, mut m) = (0.0, 0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                let d: f64 = (0..3).map(|k| f64::from(img.pixels[[r, c, k]] - bg[[r, c, k]]).abs()).sum();
                sr += d * (r as f64 + 0.5);
                sc += d * (c as f64 + 0.5);
                m += d;
            }
        }
        let (cr, cc) = (sr / m, sc / m);
        let want_c = w as f64 - (x + GEL_WIDTH_MM / 2.0) / GEL_WIDTH_MM * w as f64;
        let want_r = (y + GEL_HEIGHT_MM / 2.0) / GEL_HEIGHT_MM * h as f64;
        assert!((cc - want_c).abs() < 1.5, "column centroid {cc} vs {want_c}");
        assert!((cr - want_r).abs() < 1.5, "row centroid {cr} vs {want_r}");
    }

    #[test]
    fn brightness_shift_only_shifts_the_image() {
        let t = topo();
        let g = ToyGel::new(Arc::clone(&t));
        let pose = IndenterPose { depth: 0.8, ..Default::default() };
        let (mesh, _) = g.simulate(&find_indenter("cone").unwrap(), &pose, &GelParams::CALIBRATED).unwrap();
        let mut s = make_style(4);
        s.brightness = 0.0;
        let a = render_pseudo_image(&mesh, &s, 24, 32).unwrap();
        s.brightness = 0.05;
        let b = render_pseudo_image(&mesh, &s, 24, 32).unwrap();
        for (x, y) in a.pixels.iter().zip(b.pixels.iter()) {
            if x.abs() < 0.9 && y.abs() < 0.9 {
                assert!((y - x - 0.05).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn generated_dataset_layout_and_determinism() {
        let spec = DatasetSpec { grid: [9, 7], image: [12, 16], ..DatasetSpec::new(2, 2, 3, 10, 5) };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let meta = generate_dataset(&spec, a.path()).unwrap();
        generate_dataset(&spec, b.path()).unwrap();
        assert_eq!(std::fs::read_dir(a.path().join("meshes")).unwrap().count(), 12);
        assert_eq!(std::fs::read_dir(a.path().join("images")).unwrap().count(), 12);
        assert_eq!(
            std::fs::read(a.path().join("meta.json")).unwrap(),
            std::fs::read(b.path().join("meta.json")).unwrap()
        );
        assert_eq!(meta.trajectories.len(), 12);
        assert!(meta.split.split.is_disjoint());

        let ds = Dataset::load(a.path()).unwrap();
        assert_eq!(ds.samples.len(), 120);
        for s in ds.samples.iter().filter(|s| s.training_eligible()) {
            assert!((1.0..=13.0).contains(&s.force.fz));
        }
        for traj in ds.trajectories() {
            let fz: Vec<f64> = traj.iter().map(|s| s.force.fz).collect();
            assert!(fz.windows(2).all(|w| w[0] <= w[1]), "{fz:?}");
            assert!(traj.iter().enumerate().all(|(i, s)| s.frame == i));
        }
        // Frame 0 is contact-free and equals the sensor background.
        for p in ds.profiles().unwrap() {
            let style = p.style.as_ref().unwrap();
            let bg = io::quantize_image(&TactileImage { pixels: style.background(12, 16), sensor_id: None });
            assert_eq!(p.background.pixels, bg.pixels);
        }
    }
}
