use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use hggdp::density::NoiseSchedule;
use hggdp::kspace::{data_consistency, dft2, make_mask, undersample, Dft2Plan, MaskKind, MaskParams};
use hggdp::metrics::{hfen, ssim};
use hggdp::scorenet::{Grid, Network, NetworkConfig};
use hggdp_bench::phantom;

fn fourier(c: &mut Criterion) {
    let img = phantom(128);
    let plan = Dft2Plan::new(128, 128).unwrap();
    c.bench_function("dft2 128x128", |b| b.iter(|| dft2(black_box(&img)).unwrap()));
    c.bench_function("planned dft2 128x128", |b| b.iter(|| plan.forward(black_box(&img)).unwrap()));
    let mask = make_mask(MaskKind::PseudoRadial, 128, 128, 4.0, 1, &MaskParams::default()).unwrap();
    let y = undersample(&img, &mask, 0.0, 0).unwrap();
    c.bench_function("data consistency 128x128", |b| {
        b.iter(|| data_consistency(black_box(&img), &y, &mask, 0.0).unwrap())
    });
}

fn masks(c: &mut Criterion) {
    let p = MaskParams::default();
    c.bench_function("pseudo-radial mask R=4", |b| {
        b.iter(|| make_mask(MaskKind::PseudoRadial, 128, 128, black_box(4.0), 3, &p).unwrap())
    });
    c.bench_function("cartesian mask R=4", |b| {
        b.iter(|| make_mask(MaskKind::Cartesian1d, 128, 128, black_box(4.0), 3, &p).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let a = phantom(128);
    let b2 = generate_noisy(&a);
    c.bench_function("ssim 128x128", |b| b.iter(|| ssim(black_box(&b2), &a).unwrap()));
    c.bench_function("hfen 128x128", |b| b.iter(|| hfen(black_box(&b2), &a).unwrap()));
}

fn generate_noisy(img: &hggdp::ComplexImage) -> hggdp::ComplexImage {
    let mask = make_mask(MaskKind::PseudoRadial, 128, 128, 3.0, 2, &MaskParams::default()).unwrap();
    hggdp::kspace::zero_filled(&undersample(img, &mask, 0.0, 0).unwrap(), &mask).unwrap()
}

fn network(c: &mut Criterion) {
    let schedule = NoiseSchedule::geometric(1.0, 0.01, 10).unwrap();
    let config = NetworkConfig { replicas: 3, widths: vec![8, 16, 32, 32], ..Default::default() };
    let mut net = Network::<f32>::new(config, schedule, 0).unwrap();
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        *p += 1e-3 * ((i % 7) as f32 - 3.0);
    }
    let grid = Grid { batch: 1, height: 128, width: 128 };
    let x: Vec<f32> = (0..6 * 128 * 128).map(|i| ((i % 13) as f32 - 6.0) / 6.0).collect();
    let mut g = c.benchmark_group("network");
    g.sample_size(20);
    g.bench_function("forward 6x128x128", |b| b.iter(|| net.forward(black_box(&x), grid, &[0.1]).unwrap()));
    g.finish();
}

criterion_group!(benches, fourier, masks, metrics, network);
criterion_main!(benches);
