//! Plain-text `key=value` configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys are dot-scoped (`net.base_channels`, `train.steps`, `data.kind`);
//! command-line overrides use the same `key=value` syntax. Serialization is
//! sorted by key, so equal settings produce identical text.

use crate::data::{CorpusSpec, DegradationKind};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::net::{HeadInit, NetConfig};
use crate::train::TrainConfig;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Settings> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1)));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Settings { map })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    /// Apply one `key=value` override (the `--set` mechanism).
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(Error::Config(format!("override must be key=value, got {kv:?}")));
        };
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for key {key}"))),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.typed(key, default)
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        self.typed(key, default)
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.typed(key, default)
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        self.typed(key, default)
    }
}

pub fn net_from_settings(s: &Settings) -> Result<NetConfig> {
    let d = NetConfig::default();
    let head_init = match s.get("net.head_init").unwrap_or("zero") {
        "zero" => HeadInit::Zero,
        "random" => HeadInit::Random,
        other => return Err(Error::Config(format!("net.head_init must be zero|random, got {other:?}"))),
    };
    Ok(NetConfig {
        base_channels: s.get_usize("net.base_channels", d.base_channels)?,
        blocks_per_stage: s.get_usize("net.blocks_per_stage", d.blocks_per_stage)?,
        wtconv_levels: s.get_usize("net.wtconv_levels", d.wtconv_levels)?,
        wt_kernel: s.get_usize("net.wt_kernel", d.wt_kernel)?,
        use_gmwt: s.get_bool("net.use_gmwt", d.use_gmwt)?,
        use_mcam: s.get_bool("net.use_mcam", d.use_mcam)?,
        use_msm: s.get_bool("net.use_msm", d.use_msm)?,
        d_model: s.get_usize("net.d_model", d.d_model)?,
        d_state: s.get_usize("net.d_state", d.d_state)?,
        d_conv: s.get_usize("net.d_conv", d.d_conv)?,
        expand: s.get_usize("net.expand", d.expand)?,
        selective: s.get_bool("net.selective", d.selective)?,
        separate_pools: s.get_bool("net.separate_pools", d.separate_pools)?,
        head_init,
    })
}

pub fn net_to_settings(cfg: &NetConfig, s: &mut Settings) {
    s.set("net.base_channels", cfg.base_channels);
    s.set("net.blocks_per_stage", cfg.blocks_per_stage);
    s.set("net.wtconv_levels", cfg.wtconv_levels);
    s.set("net.wt_kernel", cfg.wt_kernel);
    s.set("net.use_gmwt", cfg.use_gmwt);
    s.set("net.use_mcam", cfg.use_mcam);
    s.set("net.use_msm", cfg.use_msm);
    s.set("net.d_model", cfg.d_model);
    s.set("net.d_state", cfg.d_state);
    s.set("net.d_conv", cfg.d_conv);
    s.set("net.expand", cfg.expand);
    s.set("net.selective", cfg.selective);
    s.set("net.separate_pools", cfg.separate_pools);
    s.set("net.head_init", if cfg.head_init == HeadInit::Zero { "zero" } else { "random" });
}

pub fn corpus_from_settings(s: &Settings) -> Result<CorpusSpec> {
    let d = CorpusSpec::default();
    Ok(CorpusSpec {
        base_dir: s.get("data.base_dir").map(PathBuf::from),
        patch: s.get_usize("data.patch", d.patch)?,
        val_fraction: s.get_f64("data.val_fraction", d.val_fraction)?,
        kind: match s.get("data.kind") {
            Some(k) => DegradationKind::parse(k)?,
            None => d.kind,
        },
        strength: (
            s.get_f64("data.strength_lo", d.strength.0)?,
            s.get_f64("data.strength_hi", d.strength.1)?,
        ),
        seed: s.get_u64("data.seed", d.seed)?,
        count: s.get_usize("data.count", d.count)?,
    })
}

pub fn corpus_to_settings(spec: &CorpusSpec, s: &mut Settings) {
    if let Some(dir) = &spec.base_dir {
        s.set("data.base_dir", dir.display());
    }
    s.set("data.patch", spec.patch);
    s.set("data.val_fraction", spec.val_fraction);
    s.set("data.kind", spec.kind.name());
    s.set("data.strength_lo", spec.strength.0);
    s.set("data.strength_hi", spec.strength.1);
    s.set("data.seed", spec.seed);
    s.set("data.count", spec.count);
}

pub fn train_from_settings(s: &Settings) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let dw = LossWeights::default();
    let grad_clip = match s.get("train.grad_clip") {
        None => d.grad_clip,
        Some(v) => Some(
            v.parse::<f64>().map_err(|_| Error::Config(format!("bad value {v:?} for key train.grad_clip")))?,
        ),
    };
    Ok(TrainConfig {
        steps: s.get_u64("train.steps", d.steps)?,
        batch_size: s.get_usize("train.batch_size", d.batch_size)?,
        lr_max: s.get_f64("train.lr_max", d.lr_max)?,
        lr_min: s.get_f64("train.lr_min", d.lr_min)?,
        weights: LossWeights {
            theta: s.get_f64("train.theta", dw.theta)?,
            lambda: s.get_f64("train.lambda", dw.lambda)?,
        },
        raw_wavelet_ssim: s.get_bool("train.raw_wavelet_ssim", d.raw_wavelet_ssim)?,
        log_every: s.get_u64("train.log_every", d.log_every)?,
        grad_clip,
        seed: s.get_u64("train.seed", d.seed)?,
    })
}

pub fn train_to_settings(cfg: &TrainConfig, s: &mut Settings) {
    s.set("train.steps", cfg.steps);
    s.set("train.batch_size", cfg.batch_size);
    s.set("train.lr_max", cfg.lr_max);
    s.set("train.lr_min", cfg.lr_min);
    s.set("train.theta", cfg.weights.theta);
    s.set("train.lambda", cfg.weights.lambda);
    s.set("train.raw_wavelet_ssim", cfg.raw_wavelet_ssim);
    s.set("train.log_every", cfg.log_every);
    if let Some(c) = cfg.grad_clip {
        s.set("train.grad_clip", c);
    }
    s.set("train.seed", cfg.seed);
}
