//! Rough wall-clock breakdown of one training step's building blocks.

use std::time::Instant;
use wamair_core::init::param_uniform;
use wamair_core::loss::{mte_loss, LossWeights};
use wamair_core::net::{build, NetConfig};
use wamair_core::tensor::{conv2d, resize, Conv2dOpts, ResizeMode};
use wamair_core::tensor::tape::Tape;

fn time(label: &str, mut f: impl FnMut()) {
    let n = 5;
    let t0 = Instant::now();
    for _ in 0..n {
        f();
    }
    println!("{label:<40} {:>9.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
}

fn main() {
    let net = build(&NetConfig::default(), 0).unwrap();
    let img1 = param_uniform(0, "p.img1", &[1, 3, 64, 64], 0.5);
    let img8 = param_uniform(0, "p.img8", &[8, 3, 64, 64], 0.5);

    time("forward b=1", || {
        net.forward(&img1).unwrap();
    });
    time("forward b=8", || {
        net.forward(&img8).unwrap();
    });

    let x = param_uniform(0, "p.x", &[8, 8, 64, 64], 1.0);
    let w = param_uniform(0, "p.w", &[8, 8, 3, 3], 0.2);
    time("conv2d 8->8 3x3 b8 64x64", || {
        conv2d(&x, &w, None, Conv2dOpts::same(3)).unwrap();
    });
    time("resize up2 bilinear b8 8ch 32->64", || {
        let small = param_uniform(0, "p.s", &[8, 8, 32, 32], 1.0);
        resize(&small, ResizeMode::Up2Bilinear).unwrap();
    });

    let clean = param_uniform(1, "p.clean", &[8, 3, 64, 64], 0.5);
    let clean_h = resize(&clean, ResizeMode::Down2Avg).unwrap();
    let clean_q = resize(&clean_h, ResizeMode::Down2Avg).unwrap();

    time("tape fwd b=8", || {
        let tape = Tape::new();
        let live = net.map_params(&mut |_, t| tape.watch(t));
        live.forward(&img8).unwrap();
    });
    time("tape fwd+loss b=8", || {
        let tape = Tape::new();
        let live = net.map_params(&mut |_, t| tape.watch(t));
        let (f, h, q) = live.forward(&img8).unwrap();
        mte_loss(
            &[f, h, q],
            &[clean.clone(), clean_h.clone(), clean_q.clone()],
            LossWeights::default(),
            false,
        )
        .unwrap();
    });
    time("full step fwd+loss+bwd b=8", || {
        let tape = Tape::new();
        let live = net.map_params(&mut |_, t| tape.watch(t));
        let (f, h, q) = live.forward(&img8).unwrap();
        let (loss, _) = mte_loss(
            &[f, h, q],
            &[clean.clone(), clean_h.clone(), clean_q.clone()],
            LossWeights::default(),
            false,
        )
        .unwrap();
        tape.backward(&loss).unwrap();
    });
    let pf = param_uniform(0, "p.pf", &[8, 3, 64, 64], 0.5);
    let ph = param_uniform(0, "p.ph", &[8, 3, 32, 32], 0.5);
    let pq = param_uniform(0, "p.pq", &[8, 3, 16, 16], 0.5);
    time("mte loss fwd only b=8", || {
        mte_loss(
            &[pf.clone(), ph.clone(), pq.clone()],
            &[clean.clone(), clean_h.clone(), clean_q.clone()],
            LossWeights::default(),
            false,
        )
        .unwrap();
    });
}
