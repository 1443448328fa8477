//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use hggdp::rng::seeded;
use hggdp::scorenet::{Grid, Network, NetworkConfig};
use hggdp::NoiseSchedule;
use rand::Rng;

fn loss(net: &Network<f64>, x: &[f64], z: &[f64], g: Grid, sigmas: &[f64]) -> f64 {
    let out = net.forward(x, g, sigmas).unwrap();
    out.iter().zip(z).map(|(o, e)| 0.5 * (o + e) * (o + e)).sum::<f64>() / g.batch as f64
}

fn analytic(net: &Network<f64>, x: &[f64], z: &[f64], g: Grid, sigmas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (out, cache) = net.forward_train(x, g, sigmas).unwrap();
    let d: Vec<f64> = out.iter().zip(z).map(|(o, e)| (o + e) / g.batch as f64).collect();
    let (gp, gx) = net.backward(&cache, &d, true);
    (gp, gx.unwrap())
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-9 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

/// A random network and a training-like input: one base image per item,
/// replicas spread around it by noise on the item's level.
fn setup(cfg: NetworkConfig, g: Grid, sigmas: &[f64], seed: u64) -> (Network<f64>, Vec<f64>, Vec<f64>) {
    let mut net: Network<f64> = Network::new(cfg.clone(), NoiseSchedule::default(), seed).unwrap();
    let mut rng = seeded(seed + 100);
    // move conditioning away from its identity initialization
    for p in net.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let (p, cols) = (g.height * g.width, g.cols());
    let base: Vec<f64> = (0..2 * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut x = Vec::with_capacity(cfg.channels() * cols);
    for _ in 0..cfg.replicas {
        x.extend(base.iter().enumerate().map(|(j, b)| b + sigmas[(j % cols) / p] * rng.random_range(-1.0..1.0)));
    }
    let z = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, x, z)
}

/// Worst relative error over `per_group` random entries of every parameter
/// group, with the name of the worst entry.
pub fn check_params(cfg: NetworkConfig, g: Grid, sigmas: &[f64], per_group: usize) -> (f64, String) {
    let (mut net, x, z) = setup(cfg, g, sigmas, 7);
    let (grad, _) = analytic(&net, &x, &z, g, sigmas);
    let h = 1e-5;
    let mut rng = seeded(3);
    let mut worst = (0.0, String::new());
    for (name, range) in net.parameter_groups() {
        for _ in 0..per_group.min(range.len()) {
            let i = rng.random_range(range.clone());
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let lp = loss(&net, &x, &z, g, sigmas);
            net.params_mut()[i] = orig - h;
            let lm = loss(&net, &x, &z, g, sigmas);
            net.params_mut()[i] = orig;
            let e = rel_err(grad[i], (lp - lm) / (2.0 * h));
            if e >= worst.0 {
                worst = (e, format!("{name}[{i}]"));
            }
        }
    }
    worst
}

/// Worst relative error of the input gradient over every `stride`-th entry.
pub fn check_input(cfg: NetworkConfig, g: Grid, sigmas: &[f64], stride: usize) -> f64 {
    let (net, mut x, z) = setup(cfg, g, sigmas, 11);
    let (_, gx) = analytic(&net, &x, &z, g, sigmas);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in (0..x.len()).step_by(stride) {
        let orig = x[i];
        x[i] = orig + h;
        let lp = loss(&net, &x, &z, g, sigmas);
        x[i] = orig - h;
        let lm = loss(&net, &x, &z, g, sigmas);
        x[i] = orig;
        worst = worst.max(rel_err(gx[i], (lp - lm) / (2.0 * h)));
    }
    worst
}

pub fn unet_config() -> NetworkConfig {
    NetworkConfig { replicas: 2, widths: vec![3, 4, 5], depth: 2, kernel: 3, zero_init_output: false, sigma_data: Some(0.5) }
}

pub fn mlp_config() -> NetworkConfig {
    NetworkConfig { replicas: 1, widths: vec![6], depth: 3, kernel: 1, zero_init_output: false, sigma_data: Some(0.5) }
}

/// Exact levels, a value between levels and one off the grid.
pub fn unet_sigmas() -> [f64; 3] {
    let s = NoiseSchedule::default();
    [s.level(0), (s.level(3) * s.level(4)).sqrt(), 0.0137]
}
