//! Dataset directory layout:
//!
//! ```text
//! meta.json                   sensors, indenters, trajectories, topology ids, split
//! meshes/<traj>/<frame>.vtx
//! images/<traj>/<frame>.png
//! forces.csv                  trajectory_id,frame,fx,fy,fz
//! topologies/<id>.faces
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, LatentVec, Partition, TactileImage, Topology, TrajectoryKey, TrajectorySample};
use crate::error::{Error, Result};
use crate::gel::{Indenter, IndenterPose};
use crate::io;
use crate::synth::{DatasetSpec, OpticalStyle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub id: String,
    /// Present for synthetic sensors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<OpticalStyle>,
    /// Designated contact-free frame `(trajectory, frame)`.
    pub background: Option<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub id: String,
    pub sensor: String,
    pub indenter: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub poses: Vec<IndenterPose>,
}

impl TrajectoryMeta {
    pub fn key(&self) -> TrajectoryKey {
        TrajectoryKey {
            trajectory_id: self.id.clone(),
            sensor_id: self.sensor.clone(),
            indenter_id: self.indenter.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub holdout_sensors: BTreeSet<String>,
    pub holdout_indenters: BTreeSet<String>,
    pub fractions: [f64; 4],
    pub split: DatasetSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<DatasetSpec>,
    /// Image height and width.
    pub image_shape: [usize; 2],
    pub topology_ids: Vec<String>,
    pub sensors: Vec<SensorMeta>,
    #[serde(default)]
    pub indenters: Vec<Indenter>,
    pub trajectories: Vec<TrajectoryMeta>,
    pub split: SplitRecord,
}

impl DatasetMeta {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if meta.format_version != io::FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported dataset version {}", meta.format_version)));
        }
        Ok(meta)
    }
}

/// Sensor identity: its contact-free background and, once an image encoder
/// is available, the cached background latent.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorProfile {
    pub sensor_id: String,
    pub background: TactileImage,
    pub style: Option<OpticalStyle>,
    pub z_base: Option<LatentVec>,
}

impl SensorProfile {
    pub fn new(sensor_id: impl Into<String>, background: TactileImage) -> Self {
        Self {
            sensor_id: sensor_id.into(),
            background,
            style: None,
            z_base: None,
        }
    }

    pub fn z_base(&self) -> Result<&LatentVec> {
        self.z_base
            .as_ref()
            .ok_or_else(|| Error::Missing(format!("background latent for sensor {}", self.sensor_id)))
    }
}

/// A fully loaded dataset. Samples are ordered by trajectory (meta order),
/// then frame.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub topology: Arc<Topology>,
    pub samples: Vec<TrajectorySample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let meta = DatasetMeta::load(&root.join("meta.json"))?;
        let topo_id = meta
            .topology_ids
            .first()
            .ok_or_else(|| Error::format(root.join("meta.json"), "no topology ids"))?;
        let topology = Arc::new(io::load_topology(&root.join("topologies").join(format!("{topo_id}.faces")))?);
        if &topology.id != topo_id {
            return Err(Error::Topology {
                expected: topo_id.clone(),
                got: topology.id.clone(),
            });
        }
        let forces: BTreeMap<(String, usize), _> = io::read_forces(&root.join("forces.csv"))?
            .into_iter()
            .map(|r| ((r.trajectory_id.clone(), r.frame), r.force()))
            .collect();
        let mut samples = Vec::new();
        for t in &meta.trajectories {
            for frame in 0..t.frames {
                let mesh = io::load_mesh(&root.join("meshes").join(&t.id).join(format!("{frame}.vtx")), &topology)?;
                let image = io::load_image(&root.join("images").join(&t.id).join(format!("{frame}.png")))?
                    .with_sensor(t.sensor.clone());
                if image.shape() != (meta.image_shape[0], meta.image_shape[1]) {
                    return Err(Error::Shape(format!(
                        "image {}/{frame} is {:?}, dataset declares {:?}",
                        t.id,
                        image.shape(),
                        meta.image_shape
                    )));
                }
                let force = *forces
                    .get(&(t.id.clone(), frame))
                    .ok_or_else(|| Error::Missing(format!("force for {} frame {frame}", t.id)))?;
                samples.push(TrajectorySample {
                    trajectory_id: t.id.clone(),
                    sensor_id: t.sensor.clone(),
                    indenter_id: t.indenter.clone(),
                    frame,
                    mesh: Arc::new(mesh),
                    image: Arc::new(image),
                    force,
                });
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            meta,
            topology,
            samples,
        })
    }

    pub fn split(&self) -> &DatasetSplit {
        &self.meta.split.split
    }

    /// Samples grouped by trajectory.
    pub fn trajectories(&self) -> Vec<&[TrajectorySample]> {
        self.samples
            .chunk_by(|a, b| a.trajectory_id == b.trajectory_id)
            .collect()
    }

    pub fn partition(&self, p: Partition) -> Vec<&TrajectorySample> {
        let set = self.split().set(p);
        self.samples.iter().filter(|s| set.contains(&s.trajectory_id)).collect()
    }

    /// Training-eligible samples of a partition.
    pub fn eligible(&self, p: Partition) -> Vec<&TrajectorySample> {
        self.partition(p).into_iter().filter(|s| s.training_eligible()).collect()
    }

    pub fn sample(&self, trajectory: &str, frame: usize) -> Result<&TrajectorySample> {
        self.samples
            .iter()
            .find(|s| s.trajectory_id == trajectory && s.frame == frame)
            .ok_or_else(|| Error::Missing(format!("sample {trajectory}/{frame}")))
    }

    /// One profile per sensor, built from its designated background frame.
    pub fn profiles(&self) -> Result<Vec<SensorProfile>> {
        self.meta
            .sensors
            .iter()
            .map(|s| {
                let (traj, frame) = s
                    .background
                    .as_ref()
                    .ok_or_else(|| Error::Missing(format!("background image for sensor {}", s.id)))?;
                let bg = self.sample(traj, *frame)?;
                Ok(SensorProfile {
                    sensor_id: s.id.clone(),
                    background: (*bg.image).clone(),
                    style: s.style.clone(),
                    z_base: None,
                })
            })
            .collect()
    }

    pub fn holdout_sensors(&self) -> &BTreeSet<String> {
        &self.meta.split.holdout_sensors
    }
}
