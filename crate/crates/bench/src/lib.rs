//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};

use splitsim_core::gel::{find_indenter, gel_topology, GelParams, IndenterPose, ToyGel};
use splitsim_core::rng::{self, RngExt};
use splitsim_core::synth::{make_style, render_pseudo_image};
use splitsim_core::{TactileImage, Topology, TriMesh};

pub fn gel(nx: usize, ny: usize) -> Arc<Topology> {
    Arc::new(gel_topology(nx, ny).expect("gel topology"))
}

pub fn press() -> IndenterPose {
    IndenterPose {
        x: 1.5,
        y: -0.5,
        depth: 1.0,
        tilt: [0.0; 2],
        slide: [0.2, 0.0],
    }
}

/// Pressed mesh of the default gel grid.
pub fn pressed_mesh(topo: &Arc<Topology>) -> TriMesh {
    let tip = find_indenter("sphere_small").or_else(|_| find_indenter("sphere")).expect("indenter");
    ToyGel::new(Arc::clone(topo)).simulate(&tip, &press(), &GelParams::CALIBRATED).expect("press").0
}

pub fn rendered(topo: &Arc<Topology>, h: usize, w: usize) -> TactileImage {
    render_pseudo_image(&pressed_mesh(topo), &make_style(1), h, w).expect("render")
}

pub fn random_features(v: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::rng(seed);
    Array2::from_shape_fn((v, c), |_| r.random_range(-1.0..1.0))
}

pub fn random_weights(k: usize, cin: usize, cout: usize, seed: u64) -> (Array3<f64>, Array1<f64>) {
    let mut r = rng::rng(seed);
    (
        Array3::from_shape_fn((k, cin, cout), |_| r.random_range(-0.5..0.5)),
        Array1::zeros(cout),
    )
}
