//! Ablation driver: retrains the network over a fixed grid of architecture
//! and loss-weight toggles on one shared corpus and seed, so metric
//! differences are attributable to the toggles alone.

use super::{evaluate, init_state, train_until, TrainConfig};
use crate::config::{net_to_settings, train_to_settings, Settings};
use crate::data::Sample;
use crate::error::Result;
use crate::loss::LossWeights;
use crate::net::{build, NetConfig};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub config_hash: String,
    pub psnr: f64,
    pub ssim: f64,
}

fn config_hash(cfg: &NetConfig, tc: &TrainConfig) -> String {
    let mut s = Settings::default();
    net_to_settings(cfg, &mut s);
    train_to_settings(tc, &mut s);
    let digest = Sha256::digest(s.serialize().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn run_one(
    label: &str,
    cfg: &NetConfig,
    tc: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<AblationRow> {
    let net = build(cfg, tc.seed)?;
    let state = init_state(tc, &net);
    let (net, _, _) = train_until(net, state, train_set, tc.steps)?;
    let m = evaluate(&net, val_set)?;
    Ok(AblationRow { label: label.to_string(), config_hash: config_hash(cfg, tc), psnr: m.psnr, ssim: m.ssim })
}

/// Architecture grid (stem and channel-attention toggles, full loss) followed
/// by the loss grid (full architecture, loss terms switched on one by one).
/// Returns exactly seven rows.
pub fn ablation_grid(
    base_cfg: &NetConfig,
    base_tc: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(7);
    let arch = [
        ("arch:baseline", false, false),
        ("arch:+stem", true, false),
        ("arch:+attention", false, true),
        ("arch:full", true, true),
    ];
    for (label, gmwt, mcam) in arch {
        let cfg = NetConfig { use_gmwt: gmwt, use_mcam: mcam, ..base_cfg.clone() };
        rows.push(run_one(label, &cfg, base_tc, train_set, val_set)?);
    }

    let w = base_tc.weights;
    let losses = [
        ("loss:spatial", LossWeights { theta: 0.0, lambda: 0.0 }),
        ("loss:+frequency", LossWeights { theta: w.theta, lambda: 0.0 }),
        ("loss:full", w),
    ];
    for (label, weights) in losses {
        let tc = TrainConfig { weights, ..base_tc.clone() };
        rows.push(run_one(label, base_cfg, &tc, train_set, val_set)?);
    }
    Ok(rows)
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("label             config        psnr      ssim\n");
    for r in rows {
        out.push_str(&format!("{:<17} {:<13} {:>8.3} {:>9.4}\n", r.label, r.config_hash, r.psnr, r.ssim));
    }
    out
}
