//! Optimizer, learning-rate schedule, training loop and evaluation.
//!
//! The whole trajectory is a deterministic function of (seed, config,
//! corpus): batches come from seeded per-epoch shuffles, the optimizer is
//! plain Adam, and nothing samples randomness at run time. Resuming from a
//! checkpoint therefore continues the exact same parameter sequence.

pub mod ablate;
pub mod checkpoint;

use crate::data::{epoch_samples, stack_batch, Sample};
use crate::error::{Error, Result};
use crate::loss::{mte_loss, psnr, ssim, LossReport, LossWeights};
use crate::net::RestorationNet;
use crate::tensor::tape::Tape;
use crate::tensor::{resize, ResizeMode, Tensor};
use std::f64::consts::PI;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weights: LossWeights,
    /// Use the 1-SSIM wavelet term without the mean-over-subbands rescale.
    pub raw_wavelet_ssim: bool,
    pub log_every: u64,
    /// Global-norm gradient clipping threshold; off by default.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            lr_max: 1e-4,
            lr_min: 1e-6,
            weights: LossWeights::default(),
            raw_wavelet_ssim: false,
            log_every: 50,
            grad_clip: None,
            seed: 0,
        }
    }
}

/// Complete optimizer state; everything needed to continue training lives
/// here (plus the corpus, which is rebuilt from its own spec).
#[derive(Debug, Clone)]
pub struct TrainState {
    /// Number of optimizer steps already applied.
    pub step: u64,
    pub total_steps: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub raw_wavelet_ssim: bool,
    pub log_every: u64,
    pub grad_clip: Option<f64>,
    /// Adam moments, one per parameter in net traversal order.
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

pub fn init_state(cfg: &TrainConfig, net: &RestorationNet) -> TrainState {
    let mut m = Vec::new();
    net.visit(&mut |_, t| m.push(Tensor::zeros(t.shape())));
    TrainState {
        step: 0,
        total_steps: cfg.steps,
        lr_max: cfg.lr_max,
        lr_min: cfg.lr_min,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        weights: cfg.weights,
        raw_wavelet_ssim: cfg.raw_wavelet_ssim,
        log_every: cfg.log_every,
        grad_clip: cfg.grad_clip,
        v: m.clone(),
        m,
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total`; steps
/// beyond `total` stay at `lr_min`. The endpoints are returned exactly.
pub fn cosine_lr(step: u64, total: u64, lr_max: f64, lr_min: f64) -> f64 {
    if step == 0 {
        return lr_max;
    }
    if total == 0 || step >= total {
        return lr_min;
    }
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// One Adam update for a single parameter; returns (param, m, v).
/// `t` is the 1-based step count used for bias correction.
pub fn adam_tensor(p: &Tensor, g: &Tensor, m: &Tensor, v: &Tensor, t: u64, lr: f64) -> (Tensor, Tensor, Tensor) {
    assert_eq!(p.numel(), g.numel(), "grad size mismatch");
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let (pd, gd, md, vd) = (p.data(), g.data(), m.data(), v.data());
    let mut pn = Vec::with_capacity(pd.len());
    let mut mn = Vec::with_capacity(pd.len());
    let mut vn = Vec::with_capacity(pd.len());
    for i in 0..pd.len() {
        let mi = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gd[i];
        let vi = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gd[i] * gd[i];
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        pn.push(pd[i] - lr * mhat / (vhat.sqrt() + ADAM_EPS));
        mn.push(mi);
        vn.push(vi);
    }
    (
        Tensor::from_vec(pn, p.shape()),
        Tensor::from_vec(mn, p.shape()),
        Tensor::from_vec(vn, p.shape()),
    )
}

/// Apply one Adam step to every parameter. `grads` must align with the net's
/// traversal order; `state.step` advances by one.
pub fn adam_step(net: &RestorationNet, grads: &[Tensor], state: &mut TrainState, lr: f64) -> Result<RestorationNet> {
    if grads.len() != state.m.len() {
        return Err(Error::InvalidArg {
            op: "adam_step",
            msg: format!("got {} grads for {} parameters", grads.len(), state.m.len()),
        });
    }
    let t = state.step + 1;
    let mut idx = 0;
    let updated = net.map_params(&mut |_, p| {
        let (pn, mn, vn) = adam_tensor(p, &grads[idx], &state.m[idx], &state.v[idx], t, lr);
        state.m[idx] = mn;
        state.v[idx] = vn;
        idx += 1;
        pn
    });
    state.step = t;
    Ok(updated)
}

fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let sq: f64 = grads.iter().flat_map(|g| g.data().iter().map(|v| v * v)).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
}

/// Deterministic batch source: global sample index `step*batch + j` walks
/// seeded per-epoch shuffles of the corpus, so the batch for any step is a
/// pure function of (seed, step) and resume needs no extra state.
struct Scheduler<'a> {
    items: &'a [Sample],
    seed: u64,
    epoch: u64,
    cache: Vec<Sample>,
}

impl<'a> Scheduler<'a> {
    fn new(items: &'a [Sample], seed: u64) -> Scheduler<'a> {
        Scheduler { items, seed, epoch: 0, cache: epoch_samples(items, seed, 0) }
    }

    fn batch(&mut self, step: u64, batch_size: usize) -> Vec<Sample> {
        let n = self.items.len() as u64;
        (0..batch_size as u64)
            .map(|j| {
                let k = step * batch_size as u64 + j;
                let e = k / n;
                if e != self.epoch {
                    self.epoch = e;
                    self.cache = epoch_samples(self.items, self.seed, e);
                }
                self.cache[(k % n) as usize].clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LogEntry {
    /// 1-based index of the step this entry describes.
    pub step: u64,
    pub lr: f64,
    pub report: LossReport,
}

pub fn format_log(e: &LogEntry) -> String {
    format!(
        "step={} lr={:.3e} total={:.6} spatial={:.6} frequency={:.6} wavelet={:.6}",
        e.step, e.lr, e.report.total, e.report.spatial, e.report.frequency, e.report.wavelet
    )
}

/// Run optimizer steps until `state.step == until`. Returns the updated net
/// and state plus log entries for step 1, every `log_every`-th step, and the
/// final step. A non-finite loss aborts with the step number and the last
/// finite record.
pub fn train_until(
    net: RestorationNet,
    mut state: TrainState,
    items: &[Sample],
    until: u64,
) -> Result<(RestorationNet, TrainState, Vec<LogEntry>)> {
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut net = net;
    let mut logs = Vec::new();
    let mut sched = Scheduler::new(items, state.seed);
    let mut last_finite = String::from("none");
    while state.step < until {
        let step = state.step;
        let lr = cosine_lr(step, state.total_steps, state.lr_max, state.lr_min);
        let batch = sched.batch(step, state.batch_size);
        let (deg, clean) = stack_batch(&batch)?;
        let clean_h = resize(&clean, ResizeMode::Down2Avg)?;
        let clean_q = resize(&clean_h, ResizeMode::Down2Avg)?;

        let tape = Tape::new();
        let live = net.map_params(&mut |_, t| tape.watch(t));
        let (f, h, q) = live.forward(&deg)?;
        let (loss, report) =
            mte_loss(&[f, h, q], &[clean, clean_h, clean_q], state.weights, state.raw_wavelet_ssim)?;
        if !report.total.is_finite() {
            return Err(Error::NanAbort { step: step + 1, last: last_finite });
        }
        let grads_map = tape.backward(&loss)?;
        let mut grads = Vec::with_capacity(state.m.len());
        let mut missing = Vec::new();
        live.visit(&mut |name, t| match grads_map.get(t) {
            Some(g) => grads.push(g),
            None => missing.push(name.to_string()),
        });
        drop(tape);
        if !missing.is_empty() {
            return Err(Error::MissingGrads { names: missing });
        }
        if let Some(c) = state.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        net = adam_step(&net, &grads, &mut state, lr)?;

        let entry = LogEntry { step: state.step, lr, report };
        last_finite = format_log(&entry);
        if state.step == 1 || state.step == until || (state.log_every > 0 && state.step % state.log_every == 0) {
            logs.push(entry);
        }
    }
    Ok((net, state, logs))
}

#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
}

pub fn clamp01(t: &Tensor) -> Tensor {
    Tensor::from_vec(t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(), t.shape())
}

/// Mean full-resolution PSNR/SSIM over a corpus split. Outputs are clamped
/// to [0,1] before scoring, matching how saved images would be quantized.
pub fn evaluate(net: &RestorationNet, samples: &[Sample]) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for s in samples {
        let shape = s.degraded.shape();
        let batched = [&[1][..], shape].concat();
        let img = s.degraded.reshape(&batched);
        let (full, _, _) = net.forward(&img)?;
        let pred = clamp01(&full);
        let clean = s.clean.reshape(&batched);
        psnr_sum += psnr(&pred, &clean, 1.0);
        ssim_sum += ssim(&pred, &clean)?.item();
    }
    let n = samples.len();
    Ok(EvalResult { psnr: psnr_sum / n as f64, ssim: ssim_sum / n as f64, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_corpus, CorpusSpec, DegradationKind};
    use crate::net::{build, HeadInit, NetConfig};
    use crate::testutil::assert_close;

    fn tiny_net_cfg() -> NetConfig {
        NetConfig {
            base_channels: 4,
            d_model: 4,
            d_state: 4,
            d_conv: 2,
            head_init: HeadInit::Random,
            ..Default::default()
        }
    }

    fn tiny_corpus(count: usize, seed: u64) -> Vec<Sample> {
        let spec = CorpusSpec {
            count,
            patch: 16,
            val_fraction: 0.0,
            kind: DegradationKind::Noise,
            seed,
            ..Default::default()
        };
        build_corpus(&spec).unwrap().train
    }

    #[test]
    fn cosine_schedule_hits_both_endpoints_exactly() {
        assert_eq!(cosine_lr(0, 1000, 1e-4, 1e-6), 1e-4);
        assert_eq!(cosine_lr(1000, 1000, 1e-4, 1e-6), 1e-6);
        assert_eq!(cosine_lr(2000, 1000, 1e-4, 1e-6), 1e-6);
        assert_close(cosine_lr(500, 1000, 1e-4, 1e-6), 5.05e-5, 1e-12);
    }

    #[test]
    fn cosine_schedule_never_increases() {
        let mut prev = f64::INFINITY;
        for s in 0..=300 {
            let lr = cosine_lr(s, 300, 1e-4, 1e-6);
            assert!(lr <= prev, "lr rose at step {s}");
            prev = lr;
        }
    }

    #[test]
    fn first_adam_step_matches_hand_algebra() {
        let p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        let z = Tensor::scalar(0.0);
        let (pn, mn, vn) = adam_tensor(&p, &g, &z, &z, 1, 1e-4);
        // mhat = vhat = 1 after bias correction, so the move is -lr/(1+eps)
        assert_close(pn.item(), -1e-4, 1e-11);
        assert_close(mn.item(), 0.1, 1e-15);
        assert_close(vn.item(), 0.001, 1e-15);
    }

    #[test]
    fn zero_gradients_leave_parameters_untouched() {
        let p = Tensor::from_vec(vec![0.3, -0.7], &[2]);
        let g = Tensor::zeros(&[2]);
        let z = Tensor::zeros(&[2]);
        let (pn, mn, vn) = adam_tensor(&p, &g, &z, &z, 1, 1e-4);
        assert_eq!(pn.data(), p.data());
        assert_eq!(mn.data(), &[0.0, 0.0]);
        assert_eq!(vn.data(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_is_stateful_two_half_steps_differ_from_one_full() {
        let p = Tensor::scalar(1.0);
        let g = Tensor::scalar(1.0);
        let z = Tensor::scalar(0.0);
        let (one, _, _) = adam_tensor(&p, &g, &z, &z, 1, 1e-4);
        let (half, m1, v1) = adam_tensor(&p, &g, &z, &z, 1, 5e-5);
        let (two, _, _) = adam_tensor(&half, &g, &m1, &v1, 2, 5e-5);
        assert!(one.item() != two.item(), "stateless would coincide: {}", one.item());
    }

    #[test]
    fn first_step_loss_with_zero_heads_matches_standalone_recomputation() {
        let cfg = NetConfig { base_channels: 4, d_model: 4, d_state: 4, d_conv: 2, ..Default::default() };
        let net = build(&cfg, 0).unwrap();
        let items = tiny_corpus(4, 3);
        let tc = TrainConfig { batch_size: 2, steps: 1, log_every: 1, seed: 9, ..Default::default() };
        let state = init_state(&tc, &net);
        let (_, _, logs) = train_until(net, state, &items, 1).unwrap();

        // with zero heads the outputs are exactly the degraded pyramid
        let first = epoch_samples(&items, 9, 0);
        let (deg, clean) = stack_batch(&first[..2]).unwrap();
        let deg_h = resize(&deg, ResizeMode::Down2Avg).unwrap();
        let deg_q = resize(&deg_h, ResizeMode::Down2Avg).unwrap();
        let clean_h = resize(&clean, ResizeMode::Down2Avg).unwrap();
        let clean_q = resize(&clean_h, ResizeMode::Down2Avg).unwrap();
        let (standalone, _) = mte_loss(
            &[deg, deg_h, deg_q],
            &[clean, clean_h, clean_q],
            LossWeights::default(),
            false,
        )
        .unwrap();
        assert_eq!(logs[0].step, 1);
        assert_eq!(logs[0].report.total, standalone.item());
    }

    #[test]
    fn a_few_steps_reduce_the_training_loss() {
        let net = build(&tiny_net_cfg(), 1).unwrap();
        let items = tiny_corpus(4, 5);
        let tc = TrainConfig { batch_size: 2, steps: 12, log_every: 1, lr_max: 1e-3, seed: 4, ..Default::default() };
        let state = init_state(&tc, &net);
        let (_, _, logs) = train_until(net, state, &items, 12).unwrap();
        let first = logs.first().unwrap().report.total;
        let last = logs.last().unwrap().report.total;
        assert!(last < first, "loss did not move down: {first} -> {last}");
    }

    #[test]
    fn non_finite_loss_aborts_with_step_number() {
        let net = build(&tiny_net_cfg(), 2).unwrap();
        // poison a head bias so the first forward pass goes NaN; biases feed
        // the output additively, so nothing downstream can mask the NaN
        // (relu would: f64::max(NAN, 0.0) is 0.0)
        let poisoned = net.map_params(&mut |name, t| {
            if name == "head0.b" {
                Tensor::full(t.shape(), f64::NAN)
            } else {
                t.clone()
            }
        });
        let items = tiny_corpus(2, 6);
        let tc = TrainConfig { batch_size: 1, steps: 3, seed: 1, ..Default::default() };
        let state = init_state(&tc, &poisoned);
        match train_until(poisoned, state, &items, 3) {
            Err(Error::NanAbort { step, last }) => {
                assert_eq!(step, 1);
                assert_eq!(last, "none");
            }
            other => panic!("expected NanAbort, got {other:?}"),
        }
    }

    #[test]
    fn evaluating_a_perfect_restorer_gives_the_sentinels() {
        // zero-strength noise means degraded == clean; zero heads pass it through
        let cfg = NetConfig { base_channels: 4, d_model: 4, d_state: 4, d_conv: 2, ..Default::default() };
        let net = build(&cfg, 0).unwrap();
        let spec = CorpusSpec {
            count: 3,
            patch: 16,
            val_fraction: 0.0,
            strength: (0.0, 0.0),
            ..Default::default()
        };
        let items = build_corpus(&spec).unwrap().train;
        let r = evaluate(&net, &items).unwrap();
        assert!(r.psnr.is_infinite() && r.psnr > 0.0);
        assert_eq!(r.ssim, 1.0);
        assert_eq!(r.n, 3);
    }

    #[test]
    fn training_is_deterministic_end_to_end() {
        let run = || {
            let net = build(&tiny_net_cfg(), 3).unwrap();
            let items = tiny_corpus(3, 8);
            let tc = TrainConfig { batch_size: 2, steps: 4, seed: 2, ..Default::default() };
            let state = init_state(&tc, &net);
            let (net, _, _) = train_until(net, state, &items, 4).unwrap();
            let mut flat = Vec::new();
            net.visit(&mut |_, t| flat.extend_from_slice(t.data()));
            flat
        };
        assert_eq!(run(), run());
    }
}
