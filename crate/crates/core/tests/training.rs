mod common;

use exreg::dataset::{generate_latent, render_ev, Scene};
use exreg::model::{network_gradchecks, ExReg};
use exreg::params::Params;
use exreg::training::{train, Adam, AdamConfig, Checkpoint, Profile, Stage, TrainConfig};
use exreg::{Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenes(n: usize, size: usize, seed: u64) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let latent = generate_latent(size, 0.5, &mut rng);
            let lit = latent.lit();
            Scene {
                id: format!("t{i}"),
                ground_truth: latent.ground_truth(),
                renditions: exreg::dataset::DEFAULT_EV_SET
                    .iter()
                    .map(|&e| (e, render_ev(&lit, e).unwrap()))
                    .collect(),
            }
        })
        .collect()
}

fn micro(stage: Stage) -> TrainConfig {
    let mut c = TrainConfig::for_stage(stage);
    c.profile = Profile::Micro;
    c.epochs = 2;
    c.batch_size = 2;
    c.patch_size = 16;
    c.samples_per_scene = 1;
    c.val_every = 1;
    c.seed = 9;
    c
}

#[test]
fn adam_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut params = Params::new();
    params.insert("a", common::rand_tensor(&[3, 2], &mut rng));
    params.insert("b", common::rand_tensor(&[4], &mut rng));
    let mut flat: Vec<Real> = params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
    let mut adam = Adam::new(cfg, &params);
    let mut reference = common::ScalarAdam::new(flat.len(), 0.01);
    for _ in 0..25 {
        let grads = vec![common::rand_tensor(&[3, 2], &mut rng), common::rand_tensor(&[4], &mut rng)];
        let g: Vec<Real> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
        adam.step(&mut params, &grads).unwrap();
        reference.step(&mut flat, &g);
    }
    let got: Vec<Real> = params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    assert!(common::max_abs_diff(&got, &flat) <= 1e-12);
}

#[test]
fn adam_rejects_non_finite_gradient_without_moving() {
    let mut params = Params::new();
    params.insert("w", Tensor::ones([2]));
    let mut adam = Adam::new(AdamConfig::default(), &params);
    let bad = vec![Tensor::new([2], vec![0.0, Real::INFINITY]).unwrap()];
    let err = adam.step(&mut params, &bad).unwrap_err().to_string();
    assert!(err.contains('w'), "{err}");
    assert_eq!(params.get("w").unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn staged_training_and_checkpoint_roundtrip() {
    let data = scenes(4, 16, 3);
    let (fit, val) = data.split_at(3);

    assert!(train(&micro(Stage::Regnet), fit, val, None).is_err(), "regnet stage needs a generator");

    let m = train(&micro(Stage::Megnet), fit, val, None).unwrap();
    assert_eq!(m.checkpoint.stages, vec![Stage::Megnet]);
    assert!(m.checkpoint.regnet.is_none());
    assert!(m.log.iter().filter_map(|r| r.loss).all(Real::is_finite));

    let r = train(&micro(Stage::Regnet), fit, val, Some(&m.checkpoint)).unwrap();
    assert_eq!(r.checkpoint.stages, vec![Stage::Megnet, Stage::Regnet]);
    assert_eq!(r.checkpoint.megnet, m.checkpoint.megnet, "generator is frozen in the regnet stage");
    assert!(r.checkpoint.step > m.checkpoint.step);

    let c = train(&micro(Stage::Cotrain), fit, val, Some(&r.checkpoint)).unwrap();
    assert_ne!(c.checkpoint.megnet, r.checkpoint.megnet, "joint stage updates the generator");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("c.exrg");
    c.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, c.checkpoint);

    let a = ExReg::from_checkpoint(&c.checkpoint).unwrap();
    let b = ExReg::from_checkpoint(&loaded).unwrap();
    let input = &val[0].renditions[1].1;
    let (ya, ea) = a.correct(input).unwrap();
    let (yb, eb) = b.correct(input).unwrap();
    assert_eq!(ya.pixels(), yb.pixels());
    assert_eq!(ea.data(), eb.data());
}

#[test]
fn profile_mismatch_is_rejected() {
    let data = scenes(3, 16, 4);
    let m = train(&micro(Stage::Megnet), &data[..2], &data[2..], None).unwrap();
    let mut cfg = micro(Stage::Regnet);
    cfg.profile = Profile::Desk;
    cfg.patch_size = 16;
    assert!(train(&cfg, &data[..2], &data[2..], Some(&m.checkpoint)).is_err());
}

#[test]
fn whole_network_gradients_match_finite_differences() {
    for report in network_gradchecks(1, 48).unwrap() {
        assert!(report.passed(), "{}: {:e}", report.name, report.max_rel_err);
        assert!(report.checked > 0);
    }
}
