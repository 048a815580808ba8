use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use wamair_core::init::param_uniform;
use wamair_core::loss::{mte_loss, LossWeights};
use wamair_core::net::{build, NetConfig};
use wamair_core::ssm::{ssm_scan, SsmParams};
use wamair_core::tensor::{conv2d, fft2, Conv2dOpts};
use wamair_core::wavelet::dwt2_stacked;

fn bench_conv2d(c: &mut Criterion) {
    let x = param_uniform(0, "bench.conv.x", &[1, 16, 64, 64], 1.0);
    let w = param_uniform(0, "bench.conv.w", &[16, 16, 3, 3], 0.2);
    let b = param_uniform(0, "bench.conv.b", &[16], 0.1);
    c.bench_function("conv2d 16x16ch 3x3 on 64x64", |bench| {
        bench.iter(|| conv2d(black_box(&x), &w, Some(&b), Conv2dOpts::same(3)).unwrap())
    });
}

fn bench_dwt2(c: &mut Criterion) {
    let x = param_uniform(0, "bench.dwt.x", &[1, 16, 128, 128], 1.0);
    c.bench_function("dwt2 16ch 128x128", |bench| {
        bench.iter(|| dwt2_stacked(black_box(&x)).unwrap())
    });
}

fn bench_fft2(c: &mut Criterion) {
    let x = param_uniform(0, "bench.fft.x", &[1, 3, 128, 128], 1.0);
    c.bench_function("fft2 3ch 128x128", |bench| {
        bench.iter(|| fft2(black_box(&x)).unwrap())
    });
}

fn bench_ssm_scan(c: &mut Criterion) {
    let p = SsmParams::init(0, "bench.ssm", 64, 32, true);
    let u = param_uniform(0, "bench.ssm.u", &[4, 128, 64], 1.0);
    c.bench_function("ssm scan B4 L128 d64 n32", |bench| {
        bench.iter(|| ssm_scan(black_box(&u), &p).unwrap())
    });
}

fn bench_net_forward(c: &mut Criterion) {
    let net = build(&NetConfig::default(), 0).unwrap();
    let img = param_uniform(0, "bench.net.img", &[1, 3, 64, 64], 1.0);
    c.bench_function("net forward C8 64x64", |bench| {
        bench.iter(|| net.forward(black_box(&img)).unwrap())
    });
}

fn bench_mte_loss(c: &mut Criterion) {
    let preds: Vec<_> = [(64, "f"), (32, "h"), (16, "q")]
        .iter()
        .map(|(s, tag)| param_uniform(0, &format!("bench.loss.p{tag}"), &[2, 3, *s, *s], 1.0))
        .collect();
    let targets: Vec<_> = [(64, "f"), (32, "h"), (16, "q")]
        .iter()
        .map(|(s, tag)| param_uniform(1, &format!("bench.loss.t{tag}"), &[2, 3, *s, *s], 1.0))
        .collect();
    c.bench_function("mte loss pyramid 64/32/16", |bench| {
        bench.iter(|| {
            mte_loss(black_box(&preds), &targets, LossWeights::default(), false).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_dwt2,
    bench_fft2,
    bench_ssm_scan,
    bench_net_forward,
    bench_mte_loss
);
criterion_main!(benches);
