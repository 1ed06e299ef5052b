use super::*;
use crate::nn::Module;
use crate::gel::{find_indenter, gel_topology, GelParams, IndenterPose, ToyGel};
use crate::nn::gradcheck::check_params;
use crate::synth::{make_style, render_pseudo_image};
use approx::assert_abs_diff_eq;
use ndarray::{Array1, IxDyn};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use std::sync::Arc;

/// Small enough for finite differences and quick training.
fn micro() -> ImageVaeConfig {
    ImageVaeConfig {
        preset: "micro".into(),
        input: [8, 8],
        blocks: vec![1, 1],
        factors: vec![2],
        base_width: 2,
        latent_dim: 3,
        augment: AugmentConfig::off(),
        ..ImageVaeConfig::tiny()
    }
}

fn rand_image(h: usize, w: usize, seed: u64) -> TactileImage {
    let mut r = rng::rng(seed);
    TactileImage::new(Array3::from_shape_fn((h, w, 3), |_| r.random_range(-1.0f32..=1.0))).unwrap()
}

#[test]
fn preset_shapes() {
    for p in Preset::ALL {
        let c = ImageVaeConfig::preset(p);
        c.validate().unwrap();
        assert_eq!(c.preset, p.name());
    }
    let full = ImageVaeConfig::full();
    assert_eq!(full.bottleneck(), (512, 3, 4));
    assert_eq!(ImageVaeConfig::tiny().bottleneck(), (32, 3, 4));
    assert_eq!(ImageVaeConfig::desk().bottleneck(), (64, 2, 3));
    let mut bad = ImageVaeConfig::tiny();
    bad.input = [50, 64];
    assert!(bad.validate().is_err());
}

#[test]
fn beta_ramp() {
    assert_eq!(beta_schedule(0, 50, 0.001), 0.0);
    assert_abs_diff_eq!(beta_schedule(25, 50, 0.001), 0.0005, epsilon = 1e-15);
    for e in [50, 51, 300] {
        assert_eq!(beta_schedule(e, 50, 0.001), 0.001);
    }
    for e in 0..80 {
        assert!(beta_schedule(e + 1, 50, 0.001) >= beta_schedule(e, 50, 0.001));
    }
}

#[test]
fn loss_fixtures() {
    let img = TactileImage::zeros(8, 8);
    let one = Posterior::new(Array1::ones(256), Array1::zeros(256)).unwrap();
    assert_abs_diff_eq!(image_vae_loss(&img, &img, &one, 0.001).unwrap(), 0.128, epsilon = 1e-12);

    // 8x8 brute force.
    let a = rand_image(8, 8, 1);
    let b = rand_image(8, 8, 2);
    let mut r = rng::rng(3);
    let mu: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
    let lv: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
    let post = Posterior::new(Array1::from(mu.clone()), Array1::from(lv.clone())).unwrap();
    let mut sq = 0.0;
    for y in 0..8 {
        for x in 0..8 {
            for c in 0..3 {
                let d = f64::from(a.pixels[[y, x, c]]) - f64::from(b.pixels[[y, x, c]]);
                sq += d * d;
            }
        }
    }
    let kl: f64 = (0..5).map(|j| -0.5 * (1.0 + lv[j] - mu[j] * mu[j] - lv[j].exp())).sum();
    assert_abs_diff_eq!(image_vae_loss(&a, &b, &post, 0.01).unwrap(), sq / 192.0 + 0.01 * kl, epsilon = 1e-10);
    assert!(image_vae_loss(&a, &TactileImage::zeros(8, 4), &post, 0.01).is_err());
}

#[test]
fn gradients_micro() {
    let mut vae = build_image_vae::<f64>(&micro(), 5).unwrap();
    let mut r = rng::rng(6);
    let x = ArrayD::from_shape_fn(IxDyn(&[2, 3, 8, 8]), |_| r.random_range(-1.0..1.0));
    vae.zero_grad();
    vae.accumulate(&x, 0.01, &mut rng::rng(7));
    let res = check_params(
        &mut vae,
        &mut |m: &Vae<f64>| m.clone().accumulate(&x, 0.01, &mut rng::rng(7)).total,
        4,
        1e-6,
    );
    assert!(res.checked > 50);
    assert!(res.max_rel_err < 1e-4, "{res:?}");
}

#[test]
fn zero_weights_give_bias() {
    let mut m = ImageVae::new(micro(), 1).unwrap();
    m.vae.zero_weights();
    let Some(Layer::Linear(last)) = m.vae.encoder.layers.last_mut() else {
        panic!("encoder ends in a dense layer")
    };
    let bias = [0.5f32, -0.25, 1.0, 0.0, -1.0, 2.0];
    last.b.value = ArrayD::from_shape_vec(IxDyn(&[6]), bias.to_vec()).unwrap();
    let post = m.encode_image(&TactileImage::zeros(8, 8)).unwrap();
    assert_eq!(post.mean.to_vec(), vec![0.5, -0.25, 1.0]);
    assert_eq!(post.log_variance.to_vec(), vec![0.0, -1.0, 2.0]);
}

#[test]
fn encoding_deterministic_and_pinned() {
    let m = ImageVae::new(micro(), 7).unwrap();
    let img = rand_image(8, 8, 3);
    let a = m.encode_image(&img).unwrap();
    assert_eq!(a, m.encode_image(&img).unwrap());
    assert_eq!(a, ImageVae::new(micro(), 7).unwrap().encode_image(&img).unwrap());
    assert_abs_diff_eq!(a.mean[0], GOLDEN_MU0, epsilon = 1e-6);
    assert_abs_diff_eq!(a.log_variance[2], GOLDEN_LV2, epsilon = 1e-6);
    let out = m.decode_image(&a.mean_latent(LatentSpace::Image)).unwrap();
    assert_abs_diff_eq!(out.pixels[[4, 3, 1]], GOLDEN_DEC, epsilon = 1e-6);
}

const GOLDEN_MU0: f64 = -0.5662540793418884;
const GOLDEN_LV2: f64 = -0.556820273399353;
const GOLDEN_DEC: f32 = 0.28878945;

#[test]
fn input_checks() {
    let m = ImageVae::new(micro(), 1).unwrap();
    assert!(m.encode_image(&TactileImage::zeros(8, 16)).is_err());
    let mut bad = TactileImage::zeros(8, 8);
    bad.pixels[[0, 0, 0]] = 1.5;
    assert!(matches!(m.encode_image(&bad), Err(Error::InvalidArgument(_))));
    assert!(m.decode_image(&LatentVec::zeros(4, LatentSpace::Image)).is_err());
    assert!(m.decode_image(&LatentVec::zeros(3, LatentSpace::Mesh)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn decoder_output_in_range(z in proptest::collection::vec(-50.0f64..50.0, 3), seed in 0u64..1000) {
        let m = ImageVae::new(micro(), seed).unwrap();
        let out = m.decode_image(&LatentVec::new(Array1::from(z), LatentSpace::Image)).unwrap();
        prop_assert!(out.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn augmentation_stays_in_range(seed in 0u64..10_000) {
        let img = rand_image(12, 16, seed);
        let mut x = img.pixels.clone().permuted_axes([2, 0, 1]).as_standard_layout().into_owned();
        augment(&mut x, &AugmentConfig::default(), &mut rng::rng(seed));
        prop_assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn flips_only_permute_pixels() {
    let img = rand_image(6, 10, 4);
    let cfg = AugmentConfig {
        rotation_deg: 0.0,
        flip_p: 1.0,
        noise_sigma: 0.0,
        brightness: 0.0,
        contrast: 0.0,
        enabled: true,
    };
    let mut x = img.pixels.clone().permuted_axes([2, 0, 1]).as_standard_layout().into_owned();
    augment(&mut x, &cfg, &mut rng::rng(1));
    for c in 0..3 {
        for y in 0..6 {
            for xx in 0..10 {
                assert_eq!(x[[c, y, xx]], img.pixels[[5 - y, 9 - xx, c]]);
            }
        }
    }
    let mut y = img.pixels.clone().permuted_axes([2, 0, 1]).into_owned();
    let before = y.clone();
    augment(&mut y, &AugmentConfig::off(), &mut rng::rng(1));
    assert_eq!(y, before);
}

/// Rendered presses at `h` x `w` under one optical style.
fn rendered(n: usize, h: usize, w: usize, style_seed: u64, seed: u64) -> Vec<TactileImage> {
    let t = Arc::new(gel_topology(21, 16).unwrap());
    let gel = ToyGel::new(Arc::clone(&t));
    let ind = find_indenter("sphere_large").unwrap();
    let style = make_style(style_seed);
    let mut r = rng::rng(seed);
    (0..n)
        .map(|_| {
            let pose = IndenterPose {
                x: r.random_range(-8.0..8.0),
                y: r.random_range(-6.0..6.0),
                depth: r.random_range(0.3..1.5),
                tilt: [0.0, 0.0],
                slide: [0.0, 0.0],
            };
            let mesh = gel.simulate(&ind, &pose, &GelParams::CALIBRATED).unwrap().0;
            render_pseudo_image(&mesh, &style, h, w).unwrap()
        })
        .collect()
}

fn toy_config() -> ImageVaeConfig {
    ImageVaeConfig {
        preset: "toy".into(),
        input: [16, 24],
        blocks: vec![1, 1, 1],
        factors: vec![2, 2],
        base_width: 4,
        latent_dim: 8,
        anneal_epochs: 5,
        beta: 1e-5,
        augment: AugmentConfig::off(),
        train: TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 5e-3,
            ..ImageVaeConfig::tiny().train
        },
    }
}

fn mean_image_mse(train: &[TactileImage], val: &[TactileImage]) -> f64 {
    let mut mean = Array3::<f64>::zeros(train[0].pixels.dim());
    for img in train {
        mean += &img.pixels.mapv(f64::from);
    }
    mean /= train.len() as f64;
    let mut sq = 0.0;
    for img in val {
        sq += (&img.pixels.mapv(f64::from) - &mean).mapv(|d| d * d).sum();
    }
    sq / (val.len() * mean.len()) as f64
}

fn recon_mse(m: &ImageVae, val: &[TactileImage]) -> f64 {
    let refs: Vec<&TactileImage> = val.iter().collect();
    let out = m.reconstruct(&refs).unwrap();
    let mut sq = 0.0;
    for (a, b) in val.iter().zip(&out) {
        sq += (&a.pixels - &b.pixels).mapv(|d| f64::from(d * d)).sum();
    }
    sq / (val.len() * val[0].pixels.len()) as f64
}

#[test]
fn training_beats_mean_image_and_finetunes() {
    // Two optical styles, interleaved: the mean image fits neither.
    let imgs: Vec<TactileImage> = rendered(100, 16, 24, 1, 9).into_iter().zip(rendered(100, 16, 24, 2, 19)).flat_map(|(a, b)| [a, b]).collect();
    let (train, val) = imgs.split_at(160);
    let tr: Vec<&TactileImage> = train.iter().collect();
    let va: Vec<&TactileImage> = val.iter().collect();
    let mut m = ImageVae::new(toy_config(), 3).unwrap();
    let report = train_image_vae(&mut m, &tr, &va, 3).unwrap();
    let baseline = mean_image_mse(train, val);
    let mse = recon_mse(&m, val);
    assert!(mse < 0.8 * baseline, "recon {mse} vs mean-image {baseline}");
    assert!(report.best_val_loss.is_finite());

    // Same seed, augmentation off: bitwise identical weights.
    let mut again = ImageVae::new(toy_config(), 3).unwrap();
    train_image_vae(&mut again, &tr, &va, 3).unwrap();
    assert_eq!(checkpoint::state_of(&m.vae), checkpoint::state_of(&again.vae));

    // Encoding does not depend on the augmentation toggle.
    let mut aug_on = m.clone();
    aug_on.config.augment = AugmentConfig::default();
    assert_eq!(aug_on.encode_image(&val[0]).unwrap(), m.encode_image(&val[0]).unwrap());

    // Save/load roundtrip and manifest contents.
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let loaded = ImageVae::load(dir.path()).unwrap();
    assert_eq!(loaded.encode_image(&val[0]).unwrap(), m.encode_image(&val[0]).unwrap());
    let (manifest, _) = checkpoint::load::<f32>(dir.path()).unwrap();
    assert_eq!(manifest.extra["input_shape"], serde_json::json!([16, 24, 3]));
    assert_eq!(manifest.extra["preset"], "toy");

    let before = checkpoint::state_of(&m.vae);
    let schedule = TrainConfig {
        epochs: 8,
        lr: 1e-3,
        ..m.config.train
    };

    // Zero epochs: unchanged weights.
    let zero = TrainConfig { epochs: 0, ..schedule };
    let (same, _) = finetune_image_vae(&m, &zero, 8, &tr, &va, 4).unwrap();
    assert_eq!(checkpoint::state_of(&same.vae), before);

    // Same data: validation loss does not get worse by more than 5%.
    let beta = m.config.beta;
    let val_before = vae::dataset_loss(&m.vae, va.len(), 64, beta, &|i| images_to_batch(&i.iter().map(|&k| va[k]).collect::<Vec<_>>())).total;
    let (tuned, _) = finetune_image_vae(&m, &schedule, 8, &tr, &va, 4).unwrap();
    let val_after = vae::dataset_loss(&tuned.vae, va.len(), 64, beta, &|i| images_to_batch(&i.iter().map(|&k| va[k]).collect::<Vec<_>>())).total;
    assert!(val_after <= 1.05 * val_before, "{val_after} vs {val_before}");

    // A second optical style: reconstruction improves.
    let other = rendered(120, 16, 24, 4, 10);
    let (otr, oval) = other.split_at(96);
    let otr_r: Vec<&TactileImage> = otr.iter().collect();
    let oval_r: Vec<&TactileImage> = oval.iter().collect();
    let (adapted, _) = finetune_image_vae(&m, &schedule, 8, &otr_r, &oval_r, 5).unwrap();
    assert!(recon_mse(&adapted, oval) < recon_mse(&m, oval));

    // Source untouched; latent mismatch rejected.
    assert_eq!(checkpoint::state_of(&m.vae), before);
    assert!(finetune_image_vae(&m, &schedule, 16, &tr, &va, 4).is_err());
}

#[test]
fn zero_epochs_keep_init_and_divergence_is_reported() {
    let imgs = rendered(8, 16, 24, 1, 2);
    let refs: Vec<&TactileImage> = imgs.iter().collect();
    let mut cfg = toy_config();
    cfg.train.epochs = 0;
    let mut m = ImageVae::new(cfg.clone(), 1).unwrap();
    let init = checkpoint::state_of(&m.vae);
    train_image_vae(&mut m, &refs[..6], &refs[6..], 1).unwrap();
    assert_eq!(checkpoint::state_of(&m.vae), init);

    cfg.train.epochs = 3;
    cfg.train.lr = 1e30;
    let mut m = ImageVae::new(cfg, 1).unwrap();
    let res = train_image_vae(&mut m, &refs[..6], &refs[6..], 1);
    assert!(matches!(res, Err(Error::Diverged { .. })), "{res:?}");
}
