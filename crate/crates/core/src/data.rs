//! Shared data model: meshes, tactile images, latents, forces, samples and
//! trajectory-level dataset splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Face list shared by every mesh of one resolution class, together with the
/// undeformed reference positions (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub id: String,
    pub faces: Vec<[u32; 3]>,
    pub reference: Array2<f32>,
}

impl Topology {
    pub fn new(id: impl Into<String>, faces: Vec<[u32; 3]>, reference: Array2<f32>) -> Result<Self> {
        let id = id.into();
        let v = reference.nrows();
        if v == 0 || reference.ncols() != 3 {
            return Err(Error::Shape(format!(
                "topology {id}: reference must be V x 3 with V > 0, got {:?}",
                reference.shape()
            )));
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i as usize >= v)) {
            return Err(Error::Shape(format!("topology {id}: face {f:?} indexes past V = {v}")));
        }
        Ok(Self { id, faces, reference })
    }

    pub fn n_vertices(&self) -> usize {
        self.reference.nrows()
    }

    /// Undirected edges, each listed once as (lo, hi), sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let (a, b) = (a.min(b) as usize, a.max(b) as usize);
                if a != b {
                    set.insert((a, b));
                }
            }
        }
        set.into_iter().collect()
    }

    /// The undeformed mesh.
    pub fn rest_mesh(self: &Arc<Self>) -> TriMesh {
        TriMesh {
            vertices: self.reference.clone(),
            topology: Arc::clone(self),
        }
    }
}

/// Gel-surface triangle mesh on a shared topology; vertex positions in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Array2<f32>,
    pub topology: Arc<Topology>,
}

impl TriMesh {
    pub fn new(vertices: Array2<f32>, topology: Arc<Topology>) -> Result<Self> {
        if vertices.dim() != (topology.n_vertices(), 3) {
            return Err(Error::Topology {
                expected: format!("{} x 3 ({})", topology.n_vertices(), topology.id),
                got: format!("{:?}", vertices.shape()),
            });
        }
        Ok(Self { vertices, topology })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn topology_id(&self) -> &str {
        &self.topology.id
    }

    pub fn same_topology(&self, other: &TriMesh) -> Result<()> {
        if self.topology.id != other.topology.id || self.n_vertices() != other.n_vertices() {
            return Err(Error::Topology {
                expected: self.topology.id.clone(),
                got: other.topology.id.clone(),
            });
        }
        Ok(())
    }

    /// Per-vertex displacement from the reference configuration.
    pub fn displacement(&self) -> Array2<f32> {
        &self.vertices - &self.topology.reference
    }
}

/// Canonical tactile image height and width.
pub const IMAGE_HEIGHT: usize = 240;
pub const IMAGE_WIDTH: usize = 320;

/// H x W x 3 tactile image with pixel values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TactileImage {
    pub pixels: Array3<f32>,
    pub sensor_id: Option<String>,
}

impl TactileImage {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        if pixels.shape()[2] != 3 {
            return Err(Error::Shape(format!(
                "tactile image must have 3 channels, got {:?}",
                pixels.shape()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [-1, 1]"
            )));
        }
        Ok(Self {
            pixels,
            sensor_id: None,
        })
    }

    pub fn with_sensor(mut self, sensor: impl Into<String>) -> Self {
        self.sensor_id = Some(sensor.into());
        self
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            pixels: Array3::zeros((height, width, 3)),
            sensor_id: None,
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }
}

/// Which encoder produced a latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSpace {
    Mesh,
    Image,
}

impl fmt::Display for LatentSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatentSpace::Mesh => write!(f, "mesh"),
            LatentSpace::Image => write!(f, "image"),
        }
    }
}

/// Fixed-dimension latent vector tagged with its space.
///
/// Values are held in `f64`: encoder outputs are `f32`, so sums and
/// differences of two latents are exact and the background arithmetic
/// round-trips bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVec {
    pub values: Array1<f64>,
    pub space: LatentSpace,
}

impl LatentVec {
    pub fn new(values: Array1<f64>, space: LatentSpace) -> Self {
        Self { values, space }
    }

    pub fn zeros(dim: usize, space: LatentSpace) -> Self {
        Self::new(Array1::zeros(dim), space)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Check the space and dimension against an expectation.
    pub fn expect(&self, space: LatentSpace, dim: usize) -> Result<()> {
        if self.space != space || self.dim() != dim {
            return Err(Error::LatentSpace {
                expected: format!("{space}[{dim}]"),
                got: format!("{}[{}]", self.space, self.dim()),
            });
        }
        Ok(())
    }
}

/// Diagonal Gaussian posterior from an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Array1<f64>,
    pub log_variance: Array1<f64>,
}

impl Posterior {
    pub fn new(mean: Array1<f64>, log_variance: Array1<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::Shape(format!(
                "posterior mean has {} dims, log-variance {}",
                mean.len(),
                log_variance.len()
            )));
        }
        if log_variance.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite log-variance".into()));
        }
        Ok(Self { mean, log_variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The posterior mean as a latent of the given space.
    pub fn mean_latent(&self, space: LatentSpace) -> LatentVec {
        LatentVec::new(self.mean.clone(), space)
    }
}

/// 3-DoF contact force in newtons.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceVec {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
}

impl ForceVec {
    pub const ZERO: ForceVec = ForceVec {
        fx: 0.0,
        fy: 0.0,
        fz: 0.0,
    };

    pub fn new(fx: f64, fy: f64, fz: f64) -> Self {
        Self { fx, fy, fz }
    }

    pub fn norm(&self) -> f64 {
        (self.fx * self.fx + self.fy * self.fy + self.fz * self.fz).sqrt()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.fx, self.fy, self.fz]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Normal-force window of training-eligible frames (N).
pub const FZ_RANGE: (f64, f64) = (1.0, 13.0);
/// Per-axis lateral force window (N).
pub const FXY_LIMIT: f64 = 3.0;

/// One frame of one trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub trajectory_id: String,
    pub sensor_id: String,
    pub indenter_id: String,
    pub frame: usize,
    pub mesh: Arc<TriMesh>,
    pub image: Arc<TactileImage>,
    pub force: ForceVec,
}

impl TrajectorySample {
    /// Whether the frame falls in the force window used for training.
    pub fn training_eligible(&self) -> bool {
        let f = self.force;
        f.fz >= FZ_RANGE.0 && f.fz <= FZ_RANGE.1 && f.fx.abs() <= FXY_LIMIT && f.fy.abs() <= FXY_LIMIT
    }
}

/// Trajectory-level partition of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    /// Unseen trajectories of seen sensors and indenters.
    pub test_a: BTreeSet<String>,
    /// Trajectories touching a held-out sensor or indenter.
    pub test_b: BTreeSet<String>,
}

/// Named split partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    TestA,
    TestB,
}

impl Partition {
    pub const ALL: [Partition; 4] = [Partition::Train, Partition::Val, Partition::TestA, Partition::TestB];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::TestA => "test_a",
            Partition::TestB => "test_b",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Partition::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown partition {s:?} (expected train, val, test_a or test_b)")))
    }
}

impl DatasetSplit {
    pub fn set(&self, p: Partition) -> &BTreeSet<String> {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::TestA => &self.test_a,
            Partition::TestB => &self.test_b,
        }
    }

    pub fn partition_of(&self, trajectory: &str) -> Option<Partition> {
        Partition::ALL
            .into_iter()
            .find(|p| self.set(*p).contains(trajectory))
    }

    pub fn is_disjoint(&self) -> bool {
        let sets = [&self.train, &self.val, &self.test_a, &self.test_b];
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if !sets[i].is_disjoint(sets[j]) {
                    return false;
                }
            }
        }
        true
    }
}

/// Identity of one trajectory for splitting purposes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrajectoryKey {
    pub trajectory_id: String,
    pub sensor_id: String,
    pub indenter_id: String,
}

/// Assign trajectories to train / val / test_a / test_b.
///
/// Every trajectory that touches a held-out sensor or indenter goes to
/// `test_b`. The remaining trajectories are shuffled with `seed` and divided
/// among train, val and test_a in proportion to the first three fractions
/// (largest-remainder rounding on trajectory counts).
pub fn split_dataset(
    samples: &[TrajectorySample],
    fractions: [f64; 4],
    holdout_sensors: &BTreeSet<String>,
    holdout_indenters: &BTreeSet<String>,
    seed: u64,
) -> Result<DatasetSplit> {
    let keys: BTreeSet<TrajectoryKey> = samples
        .iter()
        .map(|s| TrajectoryKey {
            trajectory_id: s.trajectory_id.clone(),
            sensor_id: s.sensor_id.clone(),
            indenter_id: s.indenter_id.clone(),
        })
        .collect();
    split_trajectories(&keys.into_iter().collect::<Vec<_>>(), fractions, holdout_sensors, holdout_indenters, seed)
}

/// [`split_dataset`] over bare trajectory keys.
pub fn split_trajectories(
    keys: &[TrajectoryKey],
    fractions: [f64; 4],
    holdout_sensors: &BTreeSet<String>,
    holdout_indenters: &BTreeSet<String>,
    seed: u64,
) -> Result<DatasetSplit> {
    if keys.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty sample list".into()));
    }
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidArgument(format!("invalid split fractions {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1 (got {total})"
        )));
    }
    if fractions[3] > 0.0 && holdout_sensors.is_empty() && holdout_indenters.is_empty() {
        return Err(Error::InvalidArgument(
            "test_b fraction > 0 requires held-out sensors or indenters".into(),
        ));
    }
    let mut ids: BTreeMap<&str, &TrajectoryKey> = BTreeMap::new();
    for k in keys {
        if let Some(prev) = ids.insert(&k.trajectory_id, k) {
            if prev != k {
                return Err(Error::InvalidArgument(format!(
                    "trajectory {} has inconsistent sensor/indenter ids",
                    k.trajectory_id
                )));
            }
        }
    }

    let mut split = DatasetSplit::default();
    let mut rest: Vec<String> = Vec::new();
    for (id, k) in &ids {
        if holdout_sensors.contains(&k.sensor_id) || holdout_indenters.contains(&k.indenter_id) {
            split.test_b.insert(id.to_string());
        } else {
            rest.push(id.to_string());
        }
    }

    let head = fractions[0] + fractions[1] + fractions[2];
    if fractions[0] > 0.0 && rest.is_empty() {
        return Err(Error::InvalidArgument(
            "train fraction > 0 but every trajectory touches a held-out sensor or indenter".into(),
        ));
    }
    if rest.is_empty() {
        return Ok(split);
    }
    if head <= 0.0 {
        return Err(Error::InvalidArgument(
            "trajectories remain outside the holdout but train/val/test_a fractions are zero".into(),
        ));
    }
    let counts = apportion(rest.len(), &[fractions[0] / head, fractions[1] / head, fractions[2] / head]);
    let mut r = rng::rng(seed);
    rng::shuffle(&mut rest, &mut r);
    let mut it = rest.into_iter();
    split.train.extend(it.by_ref().take(counts[0]));
    split.val.extend(it.by_ref().take(counts[1]));
    split.test_a.extend(it);
    Ok(split)
}

/// Largest-remainder apportionment of `n` items by `weights` (summing to 1).
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}
