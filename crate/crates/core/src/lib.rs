//! Cross-modal tactile simulation with disentangled latent spaces.

pub mod data;
pub mod dataset;
pub mod error;
pub mod gel;
pub mod imagevae;
pub mod io;
pub mod latent;
pub mod meshvae;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod preset;
pub mod rng;
pub mod synth;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
pub use data::{ForceVec, LatentSpace, LatentVec, Partition, Posterior, TactileImage, Topology, TrajectorySample, TriMesh};
pub use dataset::{Dataset, SensorProfile};
pub use latent::{Direction, PipelineMode};
pub use pipeline::config::{ModelConfigs, RunConfig};
pub use pipeline::Checkpoints;
pub use preset::Preset;
