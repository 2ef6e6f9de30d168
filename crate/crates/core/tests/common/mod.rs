//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use fabco::nn::{l1_loss, Mlp, NetSpec, OutputActivation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-3;

pub struct GradCase {
    pub net: Mlp<f64>,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub weight: f64,
}

/// Random architecture, parameters, input, target and weight from one seed.
pub fn grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(1..=7);
    let output_dim = rng.random_range(1..=4);
    let n_hidden = rng.random_range(0..=3);
    let mut widths = vec![input_dim];
    for _ in 0..n_hidden {
        widths.push(rng.random_range(1..=9));
    }
    widths.push(output_dim);
    let act = if rng.random_bool(0.5) {
        OutputActivation::Sigmoid
    } else {
        OutputActivation::Identity
    };
    let spec = NetSpec::new(widths, act).unwrap();
    let net = Mlp::init(&spec, rng.random()).unwrap();
    let input = (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target = (0..output_dim).map(|_| rng.random_range(-0.5..1.5)).collect();
    let weight = rng.random_range(0.05..2.0);
    GradCase {
        net,
        input,
        target,
        weight,
    }
}

fn loss_at(net: &Mlp<f64>, c: &GradCase) -> f64 {
    l1_loss(&net.forward(&c.input).unwrap(), &c.target, c.weight).unwrap()
}

/// Sign pattern of every ReLU pre-activation and every output residual.
fn kink_pattern(net: &Mlp<f64>, c: &GradCase) -> Vec<i8> {
    let pre = net.pre_activations(&c.input).unwrap();
    let n = pre.len();
    let mut pat = Vec::new();
    for z in &pre[..n - 1] {
        pat.extend(z.iter().map(|v| (*v > 0.0) as i8));
    }
    let out = net.forward(&c.input).unwrap();
    pat.extend(out.iter().zip(&c.target).map(|(p, t)| (p - t).signum() as i8));
    pat
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
    pub failures: Vec<(usize, f64, f64)>,
}

/// Compares the analytic gradient against central differences, skipping
/// components whose perturbation crosses a kink of the objective.
pub fn check_case(c: &GradCase) -> GradReport {
    let (_, g) = c.net.backward(&c.input, &c.target, c.weight).unwrap();
    let analytic = g.flatten();
    let base = c.net.flatten();
    let mut probe = c.net.clone();
    let mut rep = GradReport::default();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + FD_STEP;
        probe.set_flat(&p).unwrap();
        let (lp, kp) = (loss_at(&probe, c), kink_pattern(&probe, c));
        p[i] = base[i] - FD_STEP;
        probe.set_flat(&p).unwrap();
        let (lm, km) = (loss_at(&probe, c), kink_pattern(&probe, c));
        if kp != km {
            rep.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        rep.checked += 1;
        rep.worst_rel = rep.worst_rel.max(rel);
        if rel > FD_REL_TOL {
            rep.failures.push((i, a, numeric));
        }
    }
    rep
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
