//! Gel material model: Shore-A to modulus conversion, a quasi-static
//! elastic-foundation contact model, the force-matching loss, and budgeted
//! black-box calibration of (E, nu, mu_f).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{ForceVec, Topology, TriMesh};
use crate::error::{Error, Result};
use crate::rng::{self, RngExt};

/// Gel pad extent along x (mm).
pub const GEL_WIDTH_MM: f64 = 32.0;
/// Gel pad extent along y (mm).
pub const GEL_HEIGHT_MM: f64 = 24.0;
/// Elastomer layer thickness (mm).
pub const GEL_THICKNESS_MM: f64 = 2.0;
/// Smoothing kernel sigma as a fraction of the thickness.
const KERNEL_SIGMA_PER_THICKNESS: f64 = 0.35;
/// Gaussian truncation radius, in sigmas.
const KERNEL_TRUNCATION: f64 = 3.0;

/// Material parameters of the gel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GelParams {
    /// Young's modulus, kPa.
    pub elasticity_modulus: f64,
    pub poisson_ratio: f64,
    pub friction_coefficient: f64,
}

impl GelParams {
    /// Reference values from the FEM calibration of the real sensor.
    pub const CALIBRATED: GelParams = GelParams {
        elasticity_modulus: 841.509,
        poisson_ratio: 0.464,
        friction_coefficient: 0.987,
    };

    pub fn new(elasticity_modulus: f64, poisson_ratio: f64, friction_coefficient: f64) -> Result<Self> {
        let p = Self {
            elasticity_modulus,
            poisson_ratio,
            friction_coefficient,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.elasticity_modulus.is_finite()
            && self.elasticity_modulus > 0.0
            && (0.0..0.5 + 1e-12).contains(&self.poisson_ratio)
            && self.friction_coefficient > 0.0
            && self.friction_coefficient <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid gel parameters {self:?}")))
        }
    }

    /// Plane-strain modulus E / (1 - nu^2), in N/mm^2.
    fn plane_strain_modulus(&self) -> f64 {
        self.elasticity_modulus * 1e-3 / (1.0 - self.poisson_ratio * self.poisson_ratio)
    }

    /// Shear modulus E / (2 (1 + nu)), in N/mm^2.
    fn shear_modulus(&self) -> f64 {
        self.elasticity_modulus * 1e-3 / (2.0 * (1.0 + self.poisson_ratio))
    }
}

impl Default for GelParams {
    fn default() -> Self {
        Self::CALIBRATED
    }
}

/// Box constraints of the calibration search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBounds {
    pub elasticity_modulus: (f64, f64),
    pub poisson_ratio: (f64, f64),
    pub friction_coefficient: (f64, f64),
}

impl Default for CalibrationBounds {
    fn default() -> Self {
        Self {
            elasticity_modulus: (838.0, 970.0),
            poisson_ratio: (0.45, 0.5),
            friction_coefficient: (0.5, 0.99),
        }
    }
}

impl CalibrationBounds {
    /// Collapsed (lo == hi) axes are allowed; inverted ones are not.
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in self.axes() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!("bad bounds for {name}: [{lo}, {hi}]")));
            }
        }
        GelParams::new(self.elasticity_modulus.0, self.poisson_ratio.0, self.friction_coefficient.0)?;
        GelParams::new(self.elasticity_modulus.1, self.poisson_ratio.1, self.friction_coefficient.1)?;
        Ok(())
    }

    fn axes(&self) -> [(&'static str, (f64, f64)); 3] {
        [
            ("elasticity_modulus", self.elasticity_modulus),
            ("poisson_ratio", self.poisson_ratio),
            ("friction_coefficient", self.friction_coefficient),
        ]
    }

    pub fn midpoint(&self) -> GelParams {
        let m = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        GelParams {
            elasticity_modulus: m(self.elasticity_modulus),
            poisson_ratio: m(self.poisson_ratio),
            friction_coefficient: m(self.friction_coefficient),
        }
    }

    pub fn point(p: GelParams) -> Self {
        Self {
            elasticity_modulus: (p.elasticity_modulus, p.elasticity_modulus),
            poisson_ratio: (p.poisson_ratio, p.poisson_ratio),
            friction_coefficient: (p.friction_coefficient, p.friction_coefficient),
        }
    }
}

/// Young's modulus (kPa) from a Shore-A durometer reading via Gent's relation.
pub fn gent_modulus(shore_a: f64) -> Result<f64> {
    if !(shore_a > 0.0 && shore_a < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "Shore A hardness must lie in (0, 100), got {shore_a}"
        )));
    }
    let mpa = 0.0981 * (56.0 + 7.62336 * shore_a) / (0.137505 * (254.0 - 2.54 * shore_a));
    Ok(mpa * 1000.0)
}

/// Parametric rigid indenter tip; heights are measured upward from the
/// lowest point of the tip (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    /// Flat circular punch.
    Cylinder { radius: f64 },
    Cone { half_angle: f64, radius: f64 },
    Torus { major: f64, minor: f64 },
    /// Flat rectangular punch.
    Box { half_u: f64, half_v: f64 },
    /// Horizontal rod lying along u.
    Rod { radius: f64, half_length: f64 },
    Ellipsoid { a: f64, b: f64, c: f64 },
    Pyramid { slope: f64, half: f64 },
    /// Triangular ridge along v.
    Prism { slope: f64, half_u: f64, half_v: f64 },
    /// Flat hexagonal punch (circumradius).
    Hexagon { radius: f64 },
    /// Two crossed flat bars.
    Cross { half_long: f64, half_short: f64 },
    /// Small spheres evenly spaced on a circle.
    Dots { count: usize, ring: f64, radius: f64 },
}

impl Shape {
    /// Tip surface height at in-plane offset (u, v); `None` outside the tip.
    pub fn height(&self, u: f64, v: f64) -> Option<f64> {
        let r = u.hypot(v);
        let cap = |radius: f64, r: f64| (r < radius).then(|| radius - (radius * radius - r * r).sqrt());
        match *self {
            Shape::Sphere { radius } => cap(radius, r),
            Shape::Cylinder { radius } => (r < radius).then_some(0.0),
            Shape::Cone { half_angle, radius } => (r < radius).then(|| r / half_angle.tan()),
            Shape::Torus { major, minor } => cap(minor, (r - major).abs()),
            Shape::Box { half_u, half_v } => (u.abs() < half_u && v.abs() < half_v).then_some(0.0),
            Shape::Rod { radius, half_length } => {
                if u.abs() < half_length {
                    cap(radius, v.abs())
                } else {
                    None
                }
            }
            Shape::Ellipsoid { a, b, c } => {
                let q = (u / a).powi(2) + (v / b).powi(2);
                (q < 1.0).then(|| c * (1.0 - (1.0 - q).sqrt()))
            }
            Shape::Pyramid { slope, half } => {
                let m = u.abs().max(v.abs());
                (m < half).then_some(slope * m)
            }
            Shape::Prism { slope, half_u, half_v } => {
                (u.abs() < half_u && v.abs() < half_v).then(|| slope * u.abs())
            }
            Shape::Hexagon { radius } => {
                let (x, y) = (u.abs(), v.abs());
                let apothem = radius * 3f64.sqrt() / 2.0;
                (y < apothem && 3f64.sqrt() * x + y < 2.0 * apothem).then_some(0.0)
            }
            Shape::Cross { half_long, half_short } => {
                let (x, y) = (u.abs(), v.abs());
                ((x < half_long && y < half_short) || (x < half_short && y < half_long)).then_some(0.0)
            }
            Shape::Dots { count, ring, radius } => (0..count)
                .filter_map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / count as f64;
                    cap(radius, (u - ring * a.cos()).hypot(v - ring * a.sin()))
                })
                .min_by(f64::total_cmp),
        }
    }

    /// Radius of a disc containing the tip footprint.
    pub fn extent(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } | Shape::Cylinder { radius } | Shape::Cone { radius, .. } => radius,
            Shape::Torus { major, minor } => major + minor,
            Shape::Box { half_u, half_v } => half_u.hypot(half_v),
            Shape::Rod { radius, half_length } => radius.hypot(half_length),
            Shape::Ellipsoid { a, b, .. } => a.max(b),
            Shape::Pyramid { half, .. } => half * 2f64.sqrt(),
            Shape::Prism { half_u, half_v, .. } => half_u.hypot(half_v),
            Shape::Hexagon { radius } => radius,
            Shape::Cross { half_long, half_short } => half_long.hypot(half_short),
            Shape::Dots { ring, radius, .. } => ring + radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indenter {
    pub id: String,
    pub shape: Shape,
}

/// The 13 standard indenter tips.
pub fn indenter_library() -> Vec<Indenter> {
    use std::f64::consts::FRAC_PI_3;
    let mk = |id: &str, shape| Indenter { id: id.into(), shape };
    vec![
        mk("sphere_large", Shape::Sphere { radius: 5.0 }),
        mk("sphere_small", Shape::Sphere { radius: 2.5 }),
        mk("cylinder", Shape::Cylinder { radius: 2.0 }),
        mk("cone", Shape::Cone { half_angle: FRAC_PI_3, radius: 5.0 }),
        mk("torus", Shape::Torus { major: 3.0, minor: 1.0 }),
        mk("box", Shape::Box { half_u: 1.5, half_v: 1.5 }),
        mk("rod", Shape::Rod { radius: 2.0, half_length: 5.0 }),
        mk("ellipsoid", Shape::Ellipsoid { a: 5.0, b: 2.5, c: 3.0 }),
        mk("pyramid", Shape::Pyramid { slope: 0.7, half: 5.0 }),
        mk("prism", Shape::Prism { slope: 0.8, half_u: 4.0, half_v: 4.0 }),
        mk("hexagon", Shape::Hexagon { radius: 2.0 }),
        mk("cross", Shape::Cross { half_long: 3.5, half_short: 0.75 }),
        mk("dots", Shape::Dots { count: 3, ring: 2.5, radius: 1.5 }),
    ]
}

pub fn find_indenter(id: &str) -> Result<Indenter> {
    indenter_library()
        .into_iter()
        .find(|i| i.id == id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown indenter {id}")))
}

/// Pose of an indenter relative to the gel centre.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IndenterPose {
    /// Contact position on the gel plane (mm).
    pub x: f64,
    pub y: f64,
    /// Penetration of the tip's lowest point (mm).
    pub depth: f64,
    /// Tilt about the y and x axes (rad).
    pub tilt: [f64; 2],
    /// Tangential slide after contact (mm).
    pub slide: [f64; 2],
}

impl IndenterPose {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.depth, self.tilt[0], self.tilt[1], self.slide[0], self.slide[1]]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.depth < 0.0 {
            return Err(Error::InvalidArgument(format!("invalid indenter pose {self:?}")));
        }
        if self.x.abs() > GEL_WIDTH_MM / 2.0 || self.y.abs() > GEL_HEIGHT_MM / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "pose ({}, {}) outside the {GEL_WIDTH_MM} x {GEL_HEIGHT_MM} mm gel",
                self.x, self.y
            )));
        }
        if self.tilt.iter().any(|t| t.abs() >= std::f64::consts::FRAC_PI_4) {
            return Err(Error::InvalidArgument("tilt must stay below 45 degrees".into()));
        }
        Ok(())
    }

    /// Raw (unsmoothed) penetration at gel point (px, py).
    fn penetration(&self, shape: &Shape, px: f64, py: f64) -> f64 {
        if self.depth == 0.0 {
            return 0.0;
        }
        let (u, v) = (px - self.x, py - self.y);
        match shape.height(u, v) {
            Some(h) => {
                let h = h + u * self.tilt[0].tan() + v * self.tilt[1].tan();
                (self.depth - h).max(0.0)
            }
            None => 0.0,
        }
    }
}

/// Flat rectangular gel-surface grid of `nx` x `ny` vertices centred at 0.
pub fn gel_topology(nx: usize, ny: usize) -> Result<Topology> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument("gel grid needs at least 2 x 2 vertices".into()));
    }
    let mut reference = Array2::zeros((nx * ny, 3));
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            reference[[k, 0]] = (-GEL_WIDTH_MM / 2.0 + GEL_WIDTH_MM * i as f64 / (nx - 1) as f64) as f32;
            reference[[k, 1]] = (-GEL_HEIGHT_MM / 2.0 + GEL_HEIGHT_MM * j as f64 / (ny - 1) as f64) as f32;
        }
    }
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = (j * nx + i) as u32;
            let (b, c, d) = (a + 1, a + nx as u32, a + nx as u32 + 1);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    Topology::new(format!("gel-{nx}x{ny}"), faces, reference)
}

/// Elastic-foundation gel model bound to one topology. Construction
/// precomputes vertex areas and smoothing neighbourhoods; each call to
/// [`ToyGel::simulate`] is then a pure function of (pose, params).
#[derive(Debug, Clone)]
pub struct ToyGel {
    topology: Arc<Topology>,
    areas: Vec<f64>,
    /// Per vertex: (neighbour, normalised weight) within the kernel radius.
    kernel: Vec<Vec<(u32, f64)>>,
    sigma: f64,
}

impl ToyGel {
    pub fn new(topology: Arc<Topology>) -> Self {
        let sigma = KERNEL_SIGMA_PER_THICKNESS * GEL_THICKNESS_MM;
        let radius = KERNEL_TRUNCATION * sigma;
        let reference = &topology.reference;
        let v = topology.n_vertices();
        let xy = |k: usize| (f64::from(reference[[k, 0]]), f64::from(reference[[k, 1]]));

        let mut areas = vec![0.0; v];
        for f in &topology.faces {
            let [a, b, c] = f.map(|i| xy(i as usize));
            let area = 0.5 * ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs();
            for i in f {
                areas[*i as usize] += area / 3.0;
            }
        }

        let cell = |p: (f64, f64)| ((p.0 / radius).floor() as i64, (p.1 / radius).floor() as i64);
        let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for k in 0..v {
            grid.entry(cell(xy(k))).or_default().push(k as u32);
        }
        let kernel = (0..v)
            .map(|k| {
                let p = xy(k);
                let (cx, cy) = cell(p);
                let mut out = Vec::new();
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for &j in grid.get(&(cx + dx, cy + dy)).into_iter().flatten() {
                            let q = xy(j as usize);
                            let d2 = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
                            if d2 <= radius * radius {
                                out.push((j, (-d2 / (2.0 * sigma * sigma)).exp()));
                            }
                        }
                    }
                }
                out.sort_by_key(|e| e.0);
                let total: f64 = out.iter().map(|e| e.1).sum();
                out.iter_mut().for_each(|e| e.1 /= total);
                out
            })
            .collect();
        Self {
            topology,
            areas,
            kernel,
            sigma,
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    /// Truncation radius of the smoothing kernel (mm).
    pub fn kernel_radius(&self) -> f64 {
        KERNEL_TRUNCATION * self.sigma
    }

    /// Deformed gel mesh and contact force for one pose.
    pub fn simulate(&self, indenter: &Indenter, pose: &IndenterPose, params: &GelParams) -> Result<(TriMesh, ForceVec)> {
        pose.validate()?;
        params.validate()?;
        let reference = &self.topology.reference;
        let pen: Vec<f64> = (0..self.topology.n_vertices())
            .map(|k| {
                pose.penetration(&indenter.shape, f64::from(reference[[k, 0]]), f64::from(reference[[k, 1]]))
            })
            .collect();

        // Normal load: Winkler foundation over the raw penetration field.
        let volume: f64 = pen.iter().zip(&self.areas).map(|(p, a)| p * a).sum();
        let contact_area: f64 = pen.iter().zip(&self.areas).filter(|(p, _)| **p > 0.0).map(|(_, a)| a).sum();
        let fz = params.plane_strain_modulus() * volume / GEL_THICKNESS_MM;

        // Tangential load: elastic shear until the friction cone is reached.
        let slide = pose.slide[0].hypot(pose.slide[1]);
        let stick = params.shear_modulus() * contact_area * slide / GEL_THICKNESS_MM;
        let ft = stick.min(params.friction_coefficient * fz);
        let (fx, fy) = if slide > 0.0 {
            (ft * pose.slide[0] / slide, ft * pose.slide[1] / slide)
        } else {
            (0.0, 0.0)
        };
        // Surface shear displacement follows the transmitted tangential load.
        let shear = if stick > 0.0 { ft / stick } else { 0.0 };

        let mut vertices = reference.clone();
        if pen.iter().any(|p| *p > 0.0) {
            let depth: Vec<f64> = self
                .kernel
                .iter()
                .map(|nb| nb.iter().map(|&(j, w)| w * pen[j as usize]).sum())
                .collect();
            let peak = depth.iter().copied().fold(0.0, f64::max);
            for (k, d) in depth.iter().enumerate() {
                if *d > 0.0 {
                    let lateral = shear * d / peak;
                    vertices[[k, 0]] = (f64::from(reference[[k, 0]]) + lateral * pose.slide[0]) as f32;
                    vertices[[k, 1]] = (f64::from(reference[[k, 1]]) + lateral * pose.slide[1]) as f32;
                    vertices[[k, 2]] = (f64::from(reference[[k, 2]]) - d) as f32;
                }
            }
        }
        Ok((TriMesh::new(vertices, Arc::clone(&self.topology))?, ForceVec::new(fx, fy, fz)))
    }
}

/// One-shot convenience wrapper around [`ToyGel`].
pub fn toy_gel_simulate(
    indenter: &Indenter,
    pose: &IndenterPose,
    params: &GelParams,
    topology: &Arc<Topology>,
) -> Result<(TriMesh, ForceVec)> {
    ToyGel::new(Arc::clone(topology)).simulate(indenter, pose, params)
}

/// Mean over trajectories of the per-frame mean absolute force-norm residual.
pub fn force_matching_loss(real: &[Vec<f64>], sim: &[Vec<f64>]) -> Result<f64> {
    if real.len() != sim.len() || real.is_empty() {
        return Err(Error::Shape(format!(
            "force-matching needs equal non-zero trajectory counts, got {} and {}",
            real.len(),
            sim.len()
        )));
    }
    let mut total = 0.0;
    for (n, (r, s)) in real.iter().zip(sim).enumerate() {
        if r.len() != s.len() || r.is_empty() {
            return Err(Error::Shape(format!(
                "trajectory {n}: {} real vs {} simulated frames",
                r.len(),
                s.len()
            )));
        }
        total += r.iter().zip(s).map(|(a, b)| (a - b).abs()).sum::<f64>() / r.len() as f64;
    }
    Ok(total / real.len() as f64)
}

/// A recorded press: the poses driven and the forces measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTrajectory {
    pub indenter: String,
    pub poses: Vec<IndenterPose>,
    pub forces: Vec<ForceVec>,
}

/// Anything that maps a pose sequence and gel parameters to forces.
pub trait Simulator {
    fn simulate(&self, indenter: &str, poses: &[IndenterPose], params: &GelParams) -> Result<Vec<ForceVec>>;
}

impl Simulator for ToyGel {
    fn simulate(&self, indenter: &str, poses: &[IndenterPose], params: &GelParams) -> Result<Vec<ForceVec>> {
        let tip = find_indenter(indenter)?;
        poses
            .iter()
            .map(|p| ToyGel::simulate(self, &tip, p, params).map(|(_, f)| f))
            .collect()
    }
}

/// Force-matching loss of `params` on `trajectories`, plus per-axis MAEs.
pub fn evaluate_params(
    sim: &dyn Simulator,
    trajectories: &[&ForceTrajectory],
    params: &GelParams,
) -> Result<(f64, [f64; 3])> {
    let mut real = Vec::with_capacity(trajectories.len());
    let mut simulated = Vec::with_capacity(trajectories.len());
    let mut axis = [0.0; 3];
    for t in trajectories {
        let forces = sim.simulate(&t.indenter, &t.poses, params)?;
        if forces.len() != t.forces.len() {
            return Err(Error::Simulator(format!(
                "simulator returned {} frames for {} poses",
                forces.len(),
                t.forces.len()
            )));
        }
        if let Some(f) = forces.iter().find(|f| !f.is_finite()) {
            return Err(Error::Simulator(format!("non-finite force {f:?}")));
        }
        let scale = 1.0 / (trajectories.len() * forces.len().max(1)) as f64;
        for (r, s) in t.forces.iter().zip(&forces) {
            let (r, s) = (r.as_array(), s.as_array());
            for k in 0..3 {
                axis[k] += (r[k] - s[k]).abs() * scale;
            }
        }
        real.push(t.forces.iter().map(ForceVec::norm).collect());
        simulated.push(forces.iter().map(ForceVec::norm).collect());
    }
    Ok((force_matching_loss(&real, &simulated)?, axis))
}

/// One calibration trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub params: GelParams,
    /// `None` when the simulator failed on this trial.
    pub loss: Option<f64>,
    pub axis_mae: [f64; 3],
    pub best_so_far: Option<f64>,
    pub error: Option<String>,
}

/// Outcome of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub best: GelParams,
    pub best_loss: f64,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

/// Proposal strategy of the black-box search. Implementations see the log
/// of finished trials, so model-based optimisers fit behind this interface.
pub trait Proposer {
    fn propose(&mut self, bounds: &CalibrationBounds, history: &[TrialRecord]) -> GelParams;
}

/// Uniform sampling inside the bounds.
pub struct RandomSearch {
    rng: rng::Rng,
}

impl RandomSearch {
    pub fn new(seed: u64) -> Self {
        Self { rng: rng::rng(seed) }
    }
}

impl Proposer for RandomSearch {
    fn propose(&mut self, bounds: &CalibrationBounds, _history: &[TrialRecord]) -> GelParams {
        let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * self.rng.random::<f64>();
        GelParams {
            elasticity_modulus: draw(bounds.elasticity_modulus),
            poisson_ratio: draw(bounds.poisson_ratio),
            friction_coefficient: draw(bounds.friction_coefficient),
        }
    }
}

/// Seeded random-search calibration; see [`calibrate_with`].
pub fn calibrate(
    sim: &dyn Simulator,
    real: &[ForceTrajectory],
    bounds: &CalibrationBounds,
    trials: usize,
    trajectories_per_trial: usize,
    seed: u64,
) -> Result<Calibration> {
    let mut proposer = RandomSearch::new(rng::derive_seed(seed, "calibrate/propose"));
    calibrate_with(sim, real, bounds, trials, trajectories_per_trial, seed, &mut proposer)
}

/// Budgeted black-box minimisation of the force-matching loss. Each trial
/// scores its proposal on a fresh random subset of the recorded
/// trajectories; a simulator failure is logged and the trial skipped.
pub fn calibrate_with(
    sim: &dyn Simulator,
    real: &[ForceTrajectory],
    bounds: &CalibrationBounds,
    trials: usize,
    trajectories_per_trial: usize,
    seed: u64,
    proposer: &mut dyn Proposer,
) -> Result<Calibration> {
    if trials == 0 || trajectories_per_trial == 0 {
        return Err(Error::InvalidArgument("trials and trajectories per trial must be >= 1".into()));
    }
    if real.is_empty() {
        return Err(Error::InvalidArgument("no recorded trajectories to calibrate against".into()));
    }
    bounds.validate()?;
    let mut subset_rng = rng::rng(rng::derive_seed(seed, "calibrate/subset"));
    let mut log: Vec<TrialRecord> = Vec::with_capacity(trials);
    let mut best: Option<(f64, usize, GelParams)> = None;
    for trial in 0..trials {
        let params = proposer.propose(bounds, &log);
        let mut idx: Vec<usize> = (0..real.len()).collect();
        rng::shuffle(&mut idx, &mut subset_rng);
        idx.truncate(trajectories_per_trial);
        idx.sort_unstable();
        let chosen: Vec<&ForceTrajectory> = idx.iter().map(|&i| &real[i]).collect();
        let outcome = params.validate().and_then(|_| evaluate_params(sim, &chosen, &params));
        let (loss, axis_mae, error) = match outcome {
            Ok((l, a)) => (Some(l), a, None),
            Err(e) => {
                log::warn!("calibration trial {trial} failed: {e}");
                (None, [f64::NAN; 3], Some(e.to_string()))
            }
        };
        if let Some(l) = loss {
            if best.is_none_or(|(b, _, _)| l < b) {
                best = Some((l, trial, params));
            }
        }
        log.push(TrialRecord {
            trial,
            params,
            loss,
            axis_mae,
            best_so_far: best.map(|b| b.0),
            error,
        });
    }
    let (best_loss, best_trial, best) =
        best.ok_or_else(|| Error::Simulator(format!("all {trials} calibration trials failed")))?;
    Ok(Calibration {
        best,
        best_loss,
        best_trial,
        trials: log,
    })
}

impl Calibration {
    /// Trial log as CSV: `trial,E_kPa,nu,mu,loss` plus per-axis diagnostics.
    pub fn write_trial_log(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["trial", "E_kPa", "nu", "mu", "loss", "mae_fx", "mae_fy", "mae_fz", "best_so_far", "error"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                t.params.elasticity_modulus.to_string(),
                t.params.poisson_ratio.to_string(),
                t.params.friction_coefficient.to_string(),
                opt(t.loss),
                t.axis_mae[0].to_string(),
                t.axis_mae[1].to_string(),
                t.axis_mae[2].to_string(),
                opt(t.best_so_far),
                t.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_result(&self, path: &Path) -> Result<()> {
        let doc = serde_json::json!({
            "elasticity_modulus_kpa": self.best.elasticity_modulus,
            "poisson_ratio": self.best.poisson_ratio,
            "friction_coefficient": self.best.friction_coefficient,
            "loss": self.best_loss,
            "best_trial": self.best_trial,
            "trials": self.trials.len(),
            "failed_trials": self.trials.iter().filter(|t| t.loss.is_none()).count(),
        });
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, &doc)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }
}

/// Pure-depth press trajectories with a small lateral slide, as used for
/// calibration data: depth ramps in 0.1 mm steps from `start`.
pub fn press_trajectories(n: usize, frames: usize, seed: u64) -> Vec<(String, Vec<IndenterPose>)> {
    let lib = indenter_library();
    let mut r = rng::rng(seed);
    (0..n)
        .map(|_| {
            let tip = &lib[r.random_range(0..lib.len())];
            let x = r.random_range(-8.0..8.0);
            let y = r.random_range(-5.0..5.0);
            let start = r.random_range(0.2..0.5);
            let dir = r.random_range(0.0..std::f64::consts::TAU);
            let slide_per_frame = r.random_range(0.0..0.02);
            let poses = (0..frames)
                .map(|t| {
                    let s = slide_per_frame * t as f64;
                    IndenterPose {
                        x,
                        y,
                        depth: start + 0.1 * t as f64,
                        tilt: [0.0, 0.0],
                        slide: [s * dir.cos(), s * dir.sin()],
                    }
                })
                .collect();
            (tip.id.clone(), poses)
        })
        .collect()
}
