mod common;

use fabco::nn::{l1_loss, train, Checkpoint, Mlp, NetSpec, OutputActivation, Sample, TrainConfig, WeightedL1};
use fabco::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(widths: &[usize], act: OutputActivation) -> NetSpec {
    NetSpec::new(widths.to_vec(), act).unwrap()
}

#[test]
fn zero_network_outputs() {
    let s = Mlp::<f64>::zeros(&spec(&[4, 6, 3], OutputActivation::Sigmoid)).unwrap();
    assert_eq!(s.forward(&[0.3, -2.0, 5.0, 1.0]).unwrap(), vec![0.5; 3]);
    let i = Mlp::<f64>::zeros(&spec(&[4, 6, 3], OutputActivation::Identity)).unwrap();
    assert_eq!(i.forward(&[0.3, -2.0, 5.0, 1.0]).unwrap(), vec![0.0; 3]);
}

#[test]
fn seeded_forward_matches_golden_vectors() {
    // recorded from the first verified run
    let net = Mlp::<f64>::init(&spec(&[3, 5, 4, 2], OutputActivation::Sigmoid), 2024).unwrap();
    assert_eq!(net.forward(&[0.1, -0.4, 0.7]).unwrap(), vec![0.29634960302327495, 0.5010599324617073]);
    let net = Mlp::<f64>::init(&spec(&[3, 5, 2], OutputActivation::Identity), 7).unwrap();
    assert_eq!(net.forward(&[0.3, 0.2, 0.9]).unwrap(), vec![0.17924725888601764, -0.0654401214290992]);
}

#[test]
fn forward_rejects_wrong_width() {
    let net = Mlp::<f64>::init(&spec(&[3, 5, 2], OutputActivation::Identity), 0).unwrap();
    assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(NetSpec::new(vec![3], OutputActivation::Identity).is_err());
    assert!(NetSpec::new(vec![3, 0, 2], OutputActivation::Identity).is_err());
}

#[test]
fn l1_examples() {
    assert_eq!(l1_loss(&[0.2, 0.7], &[0.2, 0.7], 1.0).unwrap(), 0.0);
    assert_eq!(l1_loss(&[1.0, 0.0], &[0.0, 0.0], 0.5).unwrap(), 0.5);
    assert_eq!(l1_loss(&[9.0, -3.0], &[0.0, 1.0], 0.0).unwrap(), 0.0);
    assert!(l1_loss(&[1.0], &[1.0, 2.0], 1.0).is_err());
}

#[test]
fn zero_weight_and_exact_fit_give_zero_gradients() {
    for seed in 0..10 {
        let c = common::grad_case(seed);
        let (_, g) = c.net.backward(&c.input, &c.target, 0.0).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
        let exact = c.net.forward(&c.input).unwrap();
        let (loss, g) = c.net.backward(&c.input, &exact, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn backward_rejects_wrong_shapes() {
    let c = common::grad_case(1);
    let mut short = c.input.clone();
    short.pop();
    assert!(c.net.backward(&short, &c.target, 1.0).is_err());
    let mut long = c.target.clone();
    long.push(0.0);
    assert!(c.net.backward(&c.input, &long, 1.0).is_err());
}

fn identity_data(n: usize, seed: u64) -> Vec<Sample<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..1.0);
            Sample::unweighted(vec![x], vec![x])
        })
        .collect()
}

#[test]
fn learns_scalar_identity() {
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 150,
        learning_rate: 3e-3,
        seed: 5,
        ..Default::default()
    };
    let out = train(&spec(&[1, 16, 16, 1], OutputActivation::Identity), &identity_data(1000, 0), &cfg, &WeightedL1).unwrap();
    assert!(out.best_val_loss < 0.01, "validation L1 {}", out.best_val_loss);
    assert_eq!(out.n_train + out.n_val, 1000);
}

#[test]
fn all_zero_weights_leave_the_initialization() {
    let data: Vec<Sample<f64>> = identity_data(50, 1).into_iter().map(|s| Sample::new(s.input, s.target, 0.0)).collect();
    let s = spec(&[1, 8, 1], OutputActivation::Identity);
    let cfg = TrainConfig { epochs: 5, seed: 9, ..Default::default() };
    let out = train(&s, &data, &cfg, &WeightedL1).unwrap();
    assert_eq!(out.params, Mlp::init(&s, 9).unwrap());
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn training_is_deterministic() {
    let s = spec(&[1, 8, 1], OutputActivation::Sigmoid);
    let cfg = TrainConfig { epochs: 10, batch_size: 16, seed: 4, ..Default::default() };
    let data = identity_data(200, 2);
    let a = train(&s, &data, &cfg, &WeightedL1).unwrap();
    let b = train(&s, &data, &cfg, &WeightedL1).unwrap();
    assert_eq!(a.train_losses, b.train_losses);
    assert_eq!(a.val_losses, b.val_losses);
    assert_eq!(a.params, b.params);
}

#[test]
fn empty_data_is_an_error() {
    let s = spec(&[1, 1], OutputActivation::Identity);
    assert!(matches!(train::<f64, _>(&s, &[], &TrainConfig::default(), &WeightedL1), Err(Error::Empty(_))));
}

#[test]
fn divergence_aborts_with_diagnostic() {
    let s = spec(&[1, 8, 1], OutputActivation::Identity);
    let data: Vec<Sample<f64>> = identity_data(100, 3)
        .into_iter()
        .map(|x| Sample::unweighted(x.input, vec![1e308 * 10.0]))
        .collect();
    let err = train(&s, &data, &TrainConfig { epochs: 2, ..Default::default() }, &WeightedL1).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
}

#[test]
fn invalid_train_config_is_rejected() {
    let s = spec(&[1, 1], OutputActivation::Identity);
    for cfg in [
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { epochs: 0, ..Default::default() },
        TrainConfig { validation_fraction: 1.0, ..Default::default() },
    ] {
        assert!(train(&s, &identity_data(10, 0), &cfg, &WeightedL1).is_err());
    }
}

#[test]
fn checkpoint_json_round_trip() {
    let s = spec(&[2, 4, 1], OutputActivation::Sigmoid);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, ..Default::default() };
    let data: Vec<Sample<f64>> = identity_data(40, 0).into_iter().map(|x| Sample::unweighted(vec![x.input[0], 0.5], x.target)).collect();
    let out = train(&s, &data, &cfg, &WeightedL1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let reg = fabco::nn::Regressor::new(
        out.params.clone(),
        fabco::nn::Normalization {
            input: fabco::nn::AffineMap::uniform(2, 0.0, 1.0).unwrap(),
            output: fabco::nn::AffineMap::uniform(1, 0.0, 1.0).unwrap(),
        },
    )
    .unwrap();
    reg.to_checkpoint(out.best_val_loss, Default::default()).save(&path).unwrap();
    let back = fabco::nn::Regressor::from_checkpoint(&Checkpoint::<f64>::load(&path).unwrap()).unwrap();
    assert_eq!(back.net(), &out.params);
    assert_eq!(back.predict(&[0.3, 0.5]).unwrap(), reg.predict(&[0.3, 0.5]).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn best_checkpoint_has_the_minimum_validation_loss(seed in 0u64..1000) {
        let s = spec(&[1, 6, 1], OutputActivation::Identity);
        let cfg = TrainConfig { epochs: 6, batch_size: 16, learning_rate: 3e-2, seed, ..Default::default() };
        let out = train(&s, &identity_data(80, seed), &cfg, &WeightedL1).unwrap();
        let min = out.val_losses.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(out.best_val_loss <= min);
        prop_assert_eq!(out.val_losses.len(), 6);
        if out.best_epoch > 0 {
            prop_assert_eq!(out.best_val_loss, out.val_losses[out.best_epoch - 1]);
        }
    }

    #[test]
    fn l1_is_weight_linear(p in proptest::collection::vec(-5.0f64..5.0, 1..6), w in 0.0f64..3.0) {
        let t: Vec<f64> = p.iter().map(|x| x * 0.5 + 0.1).collect();
        let unit = l1_loss(&p, &t, 1.0).unwrap();
        prop_assert!((l1_loss(&p, &t, w).unwrap() - w * unit).abs() <= 1e-12 * (1.0 + unit * w));
        prop_assert!(unit >= 0.0);
    }
}
