use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};

use super::gradcheck::{check_params, rel_err};
use super::*;
use crate::rng::{self, RngExt};

fn rand_tensor(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut r = rng::rng(seed);
    let n: usize = shape.iter().product();
    ArrayD::from_shape_vec(IxDyn(shape), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn path_laplacian(n: usize) -> Csr<f64> {
    // Scaled normalised Laplacian of a path graph: -D^-1/2 A D^-1/2.
    let deg: Vec<f64> = (0..n).map(|i| if i == 0 || i == n - 1 { 1.0 } else { 2.0 }).collect();
    let mut t = Vec::new();
    for i in 0..n - 1 {
        let v = -1.0 / (deg[i] * deg[i + 1]).sqrt();
        t.push((i, i + 1, v));
        t.push((i + 1, i, v));
    }
    Csr::from_triplets(n, n, &t)
}

/// Loss = sum(y * r) for a fixed random projection r; returns the input grad check too.
fn check_seq(mut net: Sequential<f64>, x: ArrayD<f64>, dropout_seed: Option<u64>) {
    let run = |net: &Sequential<f64>, x: &ArrayD<f64>| -> (ArrayD<f64>, Tape<f64>) {
        match dropout_seed {
            Some(s) => {
                let mut r = rng::rng(s);
                net.forward(x.clone(), &mut Ctx::train(&mut r))
            }
            None => net.forward(x.clone(), &mut Ctx::eval()),
        }
    };
    let (y, tape) = run(&net, &x);
    let proj = rand_tensor(y.shape(), 99);
    net.zero_grad();
    let gx = net.backward(tape, proj.clone());
    let mut loss = |n: &Sequential<f64>| (run(n, &x).0 * &proj).sum();
    let res = check_params(&mut net, &mut loss, 6, 1e-6);
    assert!(res.max_rel_err <= 1e-4, "param grad rel err {}", res.max_rel_err);

    // Input gradient on a few coordinates.
    let h = 1e-6;
    let n = x.len();
    for i in (0..n).step_by((n / 7).max(1)) {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[i] += h;
        let mut xm = x.clone();
        xm.as_slice_mut().unwrap()[i] -= h;
        let num = ((run(&net, &xp).0 * &proj).sum() - (run(&net, &xm).0 * &proj).sum()) / (2.0 * h);
        let ana = gx.as_slice().unwrap()[i];
        assert!(rel_err(ana, num) <= 1e-4, "input grad {i}: {ana} vs {num}");
    }
}

#[test]
fn mlp_with_dropout_gradients() {
    let mut r = rng::rng(1);
    let net = Sequential::new(vec![
        Layer::Linear(Linear::new(5, 7, &mut r)),
        Layer::Act(Activation::Elu),
        Layer::Dropout(0.3),
        Layer::Linear(Linear::new(7, 4, &mut r)),
        Layer::Act(Activation::Tanh),
        Layer::Linear(Linear::new(4, 3, &mut r)),
    ]);
    check_seq(net, rand_tensor(&[4, 5], 2), Some(5));
}

#[test]
fn cheb_conv_and_vertex_map_gradients() {
    let mut r = rng::rng(3);
    let lap = Arc::new(path_laplacian(6));
    let pool = Arc::new(Csr::from_triplets(3, 6, &[(0, 0, 1.0), (1, 2, 1.0), (2, 5, 1.0)]));
    let net = Sequential::new(vec![
        Layer::Cheb(ChebConv::new(lap, 4, 2, 3, &mut r)),
        Layer::Act(Activation::Elu),
        Layer::Map(VertexMap::new(pool)),
        Layer::Flatten,
        Layer::Linear(Linear::new(9, 2, &mut r)),
    ]);
    check_seq(net, rand_tensor(&[2, 6, 2], 4), None);
}

#[test]
fn conv_resblock_upsample_gradients() {
    let mut r = rng::rng(5);
    let net = Sequential::new(vec![
        Layer::Conv(Conv2d::new(2, 3, 3, 1, 1, &mut r)),
        Layer::Res(ResBlock::new(3, 4, &mut r)),
        Layer::Res(ResBlock::new(4, 4, &mut r)),
        Layer::Conv(Conv2d::new(4, 4, 2, 2, 0, &mut r)),
        Layer::Upsample(2),
        Layer::Conv(Conv2d::new(4, 2, 3, 1, 1, &mut r)),
        Layer::Act(Activation::Tanh),
    ]);
    check_seq(net, rand_tensor(&[2, 2, 4, 6], 6), None);
}

#[test]
fn conv_matches_direct_sum() {
    let mut r = rng::rng(8);
    let conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut r);
    let x = rand_tensor(&[1, 2, 5, 4], 9);
    let y = conv.forward(&x);
    assert_eq!(y.shape(), &[1, 3, 3, 2]);
    for o in 0..3 {
        for oy in 0..3 {
            for ox in 0..2 {
                let mut acc = conv.b.value[[o]];
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if (0..5).contains(&iy) && (0..4).contains(&ix) {
                                acc += conv.w.value[[o, (c * 3 + ky) * 3 + kx]]
                                    * x[[0, c, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
                assert!((acc - y[[0, o, oy, ox]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn adam_reduces_quadratic() {
    let mut r = rng::rng(0);
    let mut lin = Sequential::new(vec![Layer::Linear(Linear::<f64>::new(3, 1, &mut r))]);
    let x = rand_tensor(&[16, 3], 1);
    let target = x.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
    let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() });
    let loss0 = mse(&lin.infer(&x), &target);
    for _ in 0..200 {
        let (y, tape) = lin.forward(x.clone(), &mut Ctx::eval());
        lin.zero_grad();
        let g = (y - &target) * (2.0 / 16.0);
        lin.backward(tape, g);
        opt.step(&mut lin);
    }
    let loss1 = mse(&lin.infer(&x), &target);
    assert!(loss1 < loss0 * 1e-3, "{loss0} -> {loss1}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng::rng(0);
    let net = Sequential::new(vec![Layer::Linear(Linear::<f32>::new(3, 2, &mut r))]);
    let manifest = checkpoint::Manifest {
        format_version: checkpoint::FORMAT_VERSION,
        module: "test".into(),
        hyperparameters: serde_json::json!({}),
        topology_id: None,
        best_val_loss: 0.5,
        seed: 3,
        extra: serde_json::Value::Null,
    };
    checkpoint::save(dir.path(), &manifest, &checkpoint::state_of(&net)).unwrap();
    let (m2, st) = checkpoint::load::<f32>(dir.path()).unwrap();
    assert_eq!(m2, manifest);
    let mut other = Sequential::new(vec![Layer::Linear(Linear::<f32>::new(3, 2, &mut rng::rng(9)))]);
    checkpoint::load_state(&mut other, &st).unwrap();
    assert_eq!(checkpoint::state_of(&other), checkpoint::state_of(&net));
}
