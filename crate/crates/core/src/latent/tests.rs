use super::*;
use crate::nn::Module;
use crate::imagevae::{train_image_vae, AugmentConfig, ImageVaeConfig};
use crate::nn::gradcheck::check_params;
use crate::nn::Ctx;
use crate::rng::RngExt;
use approx::assert_abs_diff_eq;
use ndarray::{Array1, ArrayD, IxDyn};
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

/// Encoder outputs are `f32`; draw test latents from the same set.
fn f32_latent(dim: usize, space: LatentSpace, r: &mut rng::Rng) -> LatentVec {
    LatentVec::new(Array1::from_shape_fn(dim, |_| f64::from(r.random_range(-4.0f32..4.0))), space)
}

fn img(values: Vec<f64>) -> LatentVec {
    LatentVec::new(Array1::from(values), LatentSpace::Image)
}

#[test]
fn names_roundtrip() {
    for m in PipelineMode::ALL {
        assert_eq!(m.name().parse::<PipelineMode>().unwrap(), m);
        assert_eq!(serde_json::to_value(m).unwrap(), m.name());
    }
    for d in [Direction::MeshToImage, Direction::ImageToMesh] {
        assert_eq!(d.name().parse::<Direction>().unwrap(), d);
        assert_eq!(serde_json::to_value(d).unwrap(), d.name());
    }
    assert!("both".parse::<PipelineMode>().is_err());
    assert!("x2y".parse::<Direction>().is_err());
}

#[test]
fn arithmetic_fixtures() {
    let b = img(vec![0.5, -1.0, 2.0]);
    assert_eq!(extract_deformation(&b, &b).unwrap().values, Array1::<f64>::zeros(3));
    assert_eq!(compose(&LatentVec::zeros(3, LatentSpace::Image), &b).unwrap(), b);

    let mut r = rng::rng(1);
    let i = f32_latent(256, LatentSpace::Image, &mut r);
    let z = f32_latent(256, LatentSpace::Image, &mut r);
    let d = extract_deformation(&i, &z).unwrap();
    for k in 0..256 {
        assert_eq!(d.values[k], i.values[k] - z.values[k]);
    }

    let mesh = LatentVec::zeros(3, LatentSpace::Mesh);
    assert!(matches!(extract_deformation(&mesh, &b), Err(Error::LatentSpace { .. })));
    assert!(compose(&b, &mesh).is_err());
    assert!(compose(&b, &LatentVec::zeros(4, LatentSpace::Image)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn identities_are_exact(seed in 0u64..u64::MAX) {
        let mut r = rng::rng(seed);
        let (i, d, b1) = (f32_latent(256, LatentSpace::Image, &mut r), f32_latent(256, LatentSpace::Image, &mut r), f32_latent(256, LatentSpace::Image, &mut r));
        let b2 = f32_latent(256, LatentSpace::Image, &mut r);
        prop_assert_eq!(extract_deformation(&compose(&d, &b1).unwrap(), &b1).unwrap(), d.clone());
        prop_assert_eq!(compose(&extract_deformation(&i, &b1).unwrap(), &b1).unwrap(), i);
        let swap = &compose(&d, &b1).unwrap().values - &compose(&d, &b2).unwrap().values;
        prop_assert_eq!(swap, &b1.values - &b2.values);
    }

    #[test]
    fn compose_commutes_with_scaling(seed in 0u64..u64::MAX, s in -8.0f64..8.0) {
        let mut r = rng::rng(seed);
        let (d, b) = (f32_latent(64, LatentSpace::Image, &mut r), f32_latent(64, LatentSpace::Image, &mut r));
        let scaled = compose(&img((&d.values * s).to_vec()), &img((&b.values * s).to_vec())).unwrap();
        let expect = &compose(&d, &b).unwrap().values * s;
        for k in 0..64 {
            prop_assert!((scaled.values[k] - expect[k]).abs() <= 1e-12 * expect[k].abs().max(1.0));
        }
    }
}

fn tiny_projection(direction: Direction, mode: PipelineMode, seed: u64) -> Projection {
    Projection::new(direction, mode, 4, 6, ProjectionConfig::tiny(), seed).unwrap()
}

#[test]
fn projection_shapes_and_checks() {
    let m2i = tiny_projection(Direction::MeshToImage, PipelineMode::Split, 1);
    let out = project_mesh_to_image(&LatentVec::zeros(4, LatentSpace::Mesh), &m2i, PipelineMode::Split).unwrap();
    assert_eq!((out.dim(), out.space), (6, LatentSpace::Image));
    assert!(project_mesh_to_image(&LatentVec::zeros(4, LatentSpace::Mesh), &m2i, PipelineMode::NoSplit).is_err());
    assert!(project_mesh_to_image(&LatentVec::zeros(6, LatentSpace::Image), &m2i, PipelineMode::Split).is_err());
    assert!(project_image_to_mesh(&LatentVec::zeros(6, LatentSpace::Image), &m2i, PipelineMode::Split).is_err());

    let i2m = tiny_projection(Direction::ImageToMesh, PipelineMode::NoSplit, 1);
    let out = project_image_to_mesh(&LatentVec::zeros(6, LatentSpace::Image), &i2m, PipelineMode::NoSplit).unwrap();
    assert_eq!((out.dim(), out.space), (4, LatentSpace::Mesh));

    let full = Projection::new(Direction::MeshToImage, PipelineMode::Split, 128, 256, ProjectionConfig::full(), 0).unwrap();
    let widths: Vec<usize> = full
        .net
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::Linear(l) => Some(l.w.value.shape()[1]),
            _ => None,
        })
        .collect();
    assert_eq!(widths, vec![512, 1024, 1024, 256]);
    let drops: Vec<f64> = full
        .net
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::Dropout(p) => Some(*p),
            _ => None,
        })
        .collect();
    assert_eq!(drops, vec![0.2, 0.4]);
}

#[test]
fn zero_weights_give_bias() {
    let mut p = tiny_projection(Direction::MeshToImage, PipelineMode::NoSplit, 2);
    p.net.zero_weights();
    let Some(Layer::Linear(last)) = p.net.layers.last_mut() else {
        panic!("projection ends in a dense layer")
    };
    let bias = [0.5f32, -1.0, 0.25, 3.0, 0.0, -2.0];
    last.b.value = ArrayD::from_shape_vec(IxDyn(&[6]), bias.to_vec()).unwrap();
    let out = project_mesh_to_image(&img_mesh(&[1.0, 2.0, 3.0, 4.0]), &p, PipelineMode::NoSplit).unwrap();
    assert_eq!(out.values.to_vec(), bias.iter().map(|b| f64::from(*b)).collect::<Vec<_>>());
}

fn img_mesh(v: &[f64]) -> LatentVec {
    LatentVec::new(Array1::from(v.to_vec()), LatentSpace::Mesh)
}

#[test]
fn inference_is_deterministic_and_pinned() {
    let p = tiny_projection(Direction::MeshToImage, PipelineMode::Split, 3);
    let z = img_mesh(&[0.3, -1.2, 0.7, 2.0]);
    let a = project_mesh_to_image(&z, &p, PipelineMode::Split).unwrap();
    assert_eq!(a, project_mesh_to_image(&z, &p, PipelineMode::Split).unwrap());
    assert_eq!(a, project_mesh_to_image(&z, &tiny_projection(Direction::MeshToImage, PipelineMode::Split, 3), PipelineMode::Split).unwrap());
    assert_abs_diff_eq!(a.values[0], GOLDEN_M2I0, epsilon = 1e-6);
    assert_abs_diff_eq!(a.values[5], GOLDEN_M2I5, epsilon = 1e-6);
    let q = tiny_projection(Direction::ImageToMesh, PipelineMode::Split, 3);
    let b = project_image_to_mesh(&img(vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6]), &q, PipelineMode::Split).unwrap();
    assert_abs_diff_eq!(b.values[2], GOLDEN_I2M2, epsilon = 1e-6);
}

const GOLDEN_M2I0: f64 = 0.31557613611221313;
const GOLDEN_M2I5: f64 = -0.2742438316345215;
const GOLDEN_I2M2: f64 = 0.07771499454975128;

#[test]
fn projection_gradients() {
    let cfg = ProjectionConfig::tiny();
    let mut net = build_projection_net::<f64>(5, 3, &cfg, 4).unwrap();
    let mut r = rng::rng(5);
    let x = ArrayD::from_shape_fn(IxDyn(&[7, 5]), |_| r.random_range(-1.0..1.0));
    let t = ArrayD::from_shape_fn(IxDyn(&[7, 3]), |_| r.random_range(-1.0..1.0));
    let loss = |net: &Sequential<f64>, backward: bool| {
        let mut net = net.clone();
        let mut dr = rng::rng(6);
        let (y, tape) = net.forward(x.clone(), &mut Ctx::train(&mut dr));
        let diff = &y - &t;
        let n = diff.len() as f64;
        if backward {
            net.backward(tape, diff.mapv(|d| 2.0 * d / n));
        }
        (diff.mapv(|d| d * d).sum() / n, net)
    };
    net.zero_grad();
    let (_, with_grad) = loss(&net, true);
    net = with_grad;
    let res = check_params(&mut net, &mut |m: &Sequential<f64>| loss(m, false).0, 6, 1e-6);
    assert!(res.checked > 30);
    assert!(res.max_rel_err < 1e-4, "{res:?}");
}

/// Toy latents: the image latent is a linear image of the mesh latent plus
/// a per-sensor background offset.
fn toy_pairs(sensors: &[&str], n_per: usize, seed: u64) -> (Vec<PairedLatent>, BTreeMap<String, LatentVec>) {
    let mut r = rng::rng(99);
    let a = Array2::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
    let all: BTreeMap<String, LatentVec> = (0..6)
        .map(|s| (format!("s{s}"), f32_latent(6, LatentSpace::Image, &mut r)))
        .collect();
    let bases: BTreeMap<String, LatentVec> = sensors.iter().map(|s| (s.to_string(), all[*s].clone())).collect();
    let mut r = rng::rng(seed);
    let mut pairs = vec![];
    for s in sensors {
        for _ in 0..n_per {
            let g = f32_latent(4, LatentSpace::Mesh, &mut r);
            let deform = a.dot(&g.values).mapv(|v| f64::from(v as f32));
            pairs.push(PairedLatent {
                z_image: LatentVec::new(&deform + &bases[*s].values, LatentSpace::Image),
                z_mesh: g,
                sensor_id: s.to_string(),
            });
        }
    }
    (pairs, bases)
}

#[test]
fn split_beats_nosplit_on_held_out_sensor() {
    let (train, mut bases) = toy_pairs(&["s0", "s1", "s2", "s3"], 150, 1);
    let (val, held) = toy_pairs(&["s4"], 100, 2);
    bases.extend(held);
    let mut cfg = ProjectionConfig::tiny();
    cfg.train.epochs = 40;
    for direction in [Direction::MeshToImage, Direction::ImageToMesh] {
        let mse = |mode| {
            let (p, report) = train_projection(direction, mode, &train, &train, &bases, &cfg, 7).unwrap();
            assert_eq!(p.best_val_loss, report.best_val_loss);
            projection_mse(&p, &val, &bases).unwrap()
        };
        let (split, nosplit) = (mse(PipelineMode::Split), mse(PipelineMode::NoSplit));
        assert!(split <= nosplit, "{direction}: split {split} vs nosplit {nosplit}");
    }
}

#[test]
fn training_contract() {
    let (train, bases) = toy_pairs(&["s0", "s1"], 40, 3);
    let (val, _) = toy_pairs(&["s0", "s1"], 10, 4);
    let mut cfg = ProjectionConfig::tiny();
    cfg.train.epochs = 0;
    let (p, _) = train_projection(Direction::MeshToImage, PipelineMode::Split, &train, &val, &bases, &cfg, 5).unwrap();
    let init = tiny_projection(Direction::MeshToImage, PipelineMode::Split, 5);
    assert_eq!(checkpoint::state_of(&p.net), checkpoint::state_of(&init.net));

    cfg.train.epochs = 5;
    let (a, _) = train_projection(Direction::ImageToMesh, PipelineMode::Split, &train, &val, &bases, &cfg, 5).unwrap();
    let (b, _) = train_projection(Direction::ImageToMesh, PipelineMode::Split, &train, &val, &bases, &cfg, 5).unwrap();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.save(da.path()).unwrap();
    b.save(db.path()).unwrap();
    for f in [checkpoint::MANIFEST_FILE, checkpoint::WEIGHTS_FILE] {
        assert_eq!(std::fs::read(da.path().join(f)).unwrap(), std::fs::read(db.path().join(f)).unwrap());
    }
    let (manifest, _) = checkpoint::load::<f32>(da.path()).unwrap();
    assert_eq!(manifest.extra["direction"], "i2m");
    assert_eq!(manifest.extra["mode"], "split");
    let loaded = Projection::load(da.path()).unwrap();
    let z = &val[0].z_image;
    assert_eq!(loaded.apply(z).unwrap(), a.apply(z).unwrap());

    // SPLIT needs every sensor's background latent; NOSPLIT does not.
    let partial: BTreeMap<String, LatentVec> = bases.iter().take(1).map(|(k, v)| (k.clone(), v.clone())).collect();
    let err = train_projection(Direction::MeshToImage, PipelineMode::Split, &train, &val, &partial, &cfg, 5);
    assert!(matches!(err, Err(Error::Missing(_))), "{err:?}");
    train_projection(Direction::MeshToImage, PipelineMode::NoSplit, &train, &val, &BTreeMap::new(), &cfg, 5).unwrap();
}

#[test]
fn background_vectors() {
    use crate::synth::make_style;
    let cfg = ImageVaeConfig {
        preset: "toy".into(),
        input: [16, 24],
        blocks: vec![1, 1, 1],
        factors: vec![2, 2],
        base_width: 4,
        latent_dim: 8,
        beta: 1e-5,
        anneal_epochs: 2,
        augment: AugmentConfig::off(),
        train: TrainConfig {
            epochs: 15,
            batch_size: 8,
            lr: 5e-3,
            ..ImageVaeConfig::tiny().train
        },
    };
    let profiles: Vec<SensorProfile> = (0..4)
        .map(|s| {
            let bg = crate::data::TactileImage::new(make_style(s).background(16, 24)).unwrap();
            SensorProfile::new(crate::synth::sensor_id(s as usize), bg)
        })
        .collect();
    // Backgrounds with small jitter so there is something to fit.
    let mut r = rng::rng(8);
    let images: Vec<crate::data::TactileImage> = (0..64)
        .map(|k| {
            let mut px = profiles[k % 4].background.pixels.clone();
            px.mapv_inplace(|v| (v + r.random_range(-0.02f32..0.02)).clamp(-1.0, 1.0));
            crate::data::TactileImage::new(px).unwrap()
        })
        .collect();
    let refs: Vec<&crate::data::TactileImage> = images.iter().collect();
    let mut vae = ImageVae::new(cfg, 1).unwrap();
    train_image_vae(&mut vae, &refs[..48], &refs[48..], 1).unwrap();

    let mut profiles = profiles;
    let z: Vec<LatentVec> = profiles.iter_mut().map(|p| background_vector(p, &vae).unwrap()).collect();
    for (p, zb) in profiles.iter_mut().zip(&z) {
        assert_eq!(p.z_base().unwrap(), zb);
        assert_eq!(&background_vector(p, &vae).unwrap(), zb);
        assert_eq!(zb.dim(), 8);
    }
    let mse = |a: &crate::data::TactileImage, b: &crate::data::TactileImage| {
        (&a.pixels - &b.pixels).mapv(|d| f64::from(d * d)).mean().unwrap()
    };
    for (i, p) in profiles.iter().enumerate() {
        let own = mse(&vae.decode_image(&z[i]).unwrap(), &p.background);
        for (j, zj) in z.iter().enumerate().filter(|(j, _)| *j != i) {
            let other = mse(&vae.decode_image(zj).unwrap(), &p.background);
            assert!(own < other, "profile {i}: own {own} vs profile {j} {other}");
        }
    }
    assert_eq!(base_map(&profiles).len(), 4);

    let mut empty = SensorProfile::new("s9", crate::data::TactileImage::zeros(0, 0));
    assert!(matches!(background_vector(&mut empty, &vae), Err(Error::Missing(_))));
}
