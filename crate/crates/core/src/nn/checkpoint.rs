//! Named-array checkpoint container.
//!
//! A checkpoint is a directory holding `manifest.json` plus
//! `weights.safetensors` with every parameter under its dotted path.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::layers::Module;
use super::Scalar;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub module: String,
    pub hyperparameters: serde_json::Value,
    #[serde(default)]
    pub topology_id: Option<String>,
    pub best_val_loss: f64,
    pub seed: u64,
    /// Module-specific metadata (input shape, preset, direction, mode, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Parameter snapshot keyed by dotted path.
pub type State<F> = BTreeMap<String, ArrayD<F>>;

pub fn state_of<F: Scalar>(module: &dyn Module<F>) -> State<F> {
    let mut s = State::new();
    module.visit("", &mut |name, p| {
        s.insert(name.to_string(), p.value.clone());
    });
    s
}

/// Copy a snapshot into `module`; every parameter must be present with the
/// same shape.
pub fn load_state<F: Scalar>(module: &mut dyn Module<F>, state: &State<F>) -> Result<()> {
    let mut err = None;
    module.visit_mut("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        match state.get(name) {
            Some(a) if a.shape() == p.value.shape() => p.value.assign(a),
            Some(a) => {
                err = Some(Error::Shape(format!(
                    "parameter {name}: checkpoint {:?} vs model {:?}",
                    a.shape(),
                    p.value.shape()
                )))
            }
            None => err = Some(Error::Missing(format!("parameter {name} not in checkpoint"))),
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn write_arrays<F: Scalar>(path: &Path, arrays: &State<F>) -> Result<()> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = arrays
        .iter()
        .map(|(k, a)| {
            let std = a.as_standard_layout();
            (
                k.clone(),
                a.shape().to_vec(),
                F::to_le_bytes_vec(std.as_slice().unwrap()),
            )
        })
        .collect();
    let views: Vec<(String, safetensors::tensor::TensorView<'_>)> = bytes
        .iter()
        .map(|(k, s, b)| {
            (
                k.clone(),
                safetensors::tensor::TensorView::new(F::DTYPE, s.clone(), b).expect("tensor view"),
            )
        })
        .collect();
    let buf = safetensors::serialize(views, &None::<HashMap<String, String>>)
        .map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_arrays<F: Scalar>(path: &Path) -> Result<State<F>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = safetensors::SafeTensors::deserialize(&buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = State::new();
    for (name, view) in st.tensors() {
        let data = F::from_le_bytes_slice(view.data(), view.dtype())
            .ok_or_else(|| Error::format(path, format!("unsupported dtype for {name}")))?;
        let a = ArrayD::from_shape_vec(IxDyn(view.shape()), data)
            .map_err(|e| Error::format(path, e.to_string()))?;
        out.insert(name, a);
    }
    Ok(out)
}

/// Write `manifest.json` and the parameter container into `dir`.
pub fn save<F: Scalar>(dir: &Path, manifest: &Manifest, arrays: &State<F>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    write_arrays(&dir.join(WEIGHTS_FILE), arrays)
}

pub fn load<F: Scalar>(dir: &Path) -> Result<(Manifest, State<F>)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &mpath,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let arrays = read_arrays(&dir.join(WEIGHTS_FILE))?;
    Ok((manifest, arrays))
}

/// Prefix every key of `state` with `prefix.`.
pub fn prefixed<F: Scalar>(prefix: &str, state: State<F>) -> State<F> {
    state
        .into_iter()
        .map(|(k, v)| (format!("{prefix}.{k}"), v))
        .collect()
}

/// Select the entries under `prefix.` and strip it.
pub fn sub_state<F: Scalar>(prefix: &str, state: &State<F>) -> State<F> {
    let p = format!("{prefix}.");
    state
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
        .collect()
}
