//! Bit-exact checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WAMA"  u32 version  u64 echo_len  echo (key=value text)
//! u32 tensor_count
//! per tensor: u32 name_len, name, u8 dtype (0 = f64), u32 ndim, u64 dims…,
//!             u64 offset into payload (8-byte aligned)
//! padding to 8-byte file offset
//! u64 payload_len  payload (f64 values)  32-byte sha256 of payload
//! ```
//!
//! The echo holds the network config and the scalar optimizer state; the
//! tensor table holds every parameter by traversal name plus its Adam
//! moments as `m:<name>` / `v:<name>`. Floats in the echo are printed with
//! the shortest round-trip representation, so save → load → save is
//! byte-identical.

use super::TrainState;
use crate::config::{net_from_settings, net_to_settings, Settings};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::net::{build, RestorationNet};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"WAMA";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint(net: &RestorationNet, state: &TrainState) -> Vec<u8> {
    let mut echo = Settings::default();
    net_to_settings(&net.cfg, &mut echo);
    echo.set("state.step", state.step);
    echo.set("state.total_steps", state.total_steps);
    echo.set("state.lr_max", state.lr_max);
    echo.set("state.lr_min", state.lr_min);
    echo.set("state.batch_size", state.batch_size);
    echo.set("state.seed", state.seed);
    echo.set("state.theta", state.weights.theta);
    echo.set("state.lambda", state.weights.lambda);
    echo.set("state.raw_wavelet_ssim", state.raw_wavelet_ssim);
    echo.set("state.log_every", state.log_every);
    if let Some(c) = state.grad_clip {
        echo.set("state.grad_clip", c);
    }
    let echo = echo.serialize().into_bytes();

    let mut names = Vec::new();
    net.visit(&mut |n, _| names.push(n.to_string()));
    assert_eq!(names.len(), state.m.len(), "moment count mismatch");
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    net.visit(&mut |n, t| tensors.push((n.to_string(), t.clone())));
    for (i, name) in names.iter().enumerate() {
        tensors.push((format!("m:{name}"), state.m[i].clone()));
    }
    for (i, name) in names.iter().enumerate() {
        tensors.push((format!("v:{name}"), state.v[i].clone()));
    }

    let mut payload = Vec::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(echo.len() as u64).to_le_bytes());
    out.extend_from_slice(&echo);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(0); // dtype f64
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    while out.len() % 8 != 0 {
        out.push(0);
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&payload);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad(format!("truncated file: wanted {n} bytes at offset {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(RestorationNet, TrainState)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}, want {VERSION}")));
    }
    let echo_len = r.u64()? as usize;
    let echo_bytes = r.take(echo_len)?;
    let echo = Settings::parse(
        std::str::from_utf8(echo_bytes).map_err(|_| bad("config echo is not utf-8"))?,
    )?;

    let count = r.u32()? as usize;
    let mut table: HashMap<String, (Vec<usize>, usize)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("tensor name is not utf-8"))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(bad(format!("tensor {name}: unsupported dtype {dtype}")));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()? as usize;
        if offset % 8 != 0 {
            return Err(bad(format!("tensor {name}: offset {offset} not 8-byte aligned")));
        }
        if table.insert(name.clone(), (shape, offset)).is_some() {
            return Err(bad(format!("duplicate tensor name {name}")));
        }
    }
    r.pos = (r.pos + 7) & !7;
    let payload_len = r.u64()? as usize;
    let payload = r.take(payload_len)?;
    let digest = r.take(32)?;
    if Sha256::digest(payload).as_slice() != digest {
        return Err(bad("payload checksum mismatch (file corrupted)"));
    }

    let cfg = net_from_settings(&echo)?;
    let skeleton = build(&cfg, 0)?;
    let mut used: HashSet<String> = HashSet::with_capacity(table.len());
    let mut problems: Vec<String> = Vec::new();
    let mut fetch = |name: &str, want: &[usize]| -> Option<Tensor> {
        let Some((shape, offset)) = table.get(name) else {
            problems.push(format!("missing tensor {name}"));
            return None;
        };
        if shape != want {
            problems.push(format!("tensor {name}: shape {shape:?} in file, {want:?} expected"));
            return None;
        }
        let numel: usize = shape.iter().product::<usize>().max(1);
        let end = offset + 8 * numel;
        if end > payload.len() {
            problems.push(format!("tensor {name}: payload overrun"));
            return None;
        }
        used.insert(name.to_string());
        let data = payload[*offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Some(Tensor::from_vec(data, shape))
    };

    let net = skeleton.map_params(&mut |name, t| fetch(name, t.shape()).unwrap_or_else(|| t.clone()));
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    net.visit(&mut |n, t| {
        names.push(n.to_string());
        shapes.push(t.shape().to_vec());
    });
    let mut m = Vec::with_capacity(names.len());
    let mut v = Vec::with_capacity(names.len());
    for (name, shape) in names.iter().zip(&shapes) {
        m.push(fetch(&format!("m:{name}"), shape).unwrap_or_else(|| Tensor::zeros(shape)));
        v.push(fetch(&format!("v:{name}"), shape).unwrap_or_else(|| Tensor::zeros(shape)));
    }
    if !problems.is_empty() {
        return Err(bad(problems.join("; ")));
    }
    if used.len() != table.len() {
        let extras: Vec<&String> = table.keys().filter(|k| !used.contains(*k)).collect();
        return Err(bad(format!("unknown tensor names in file: {extras:?}")));
    }

    let grad_clip = match echo.get("state.grad_clip") {
        None => None,
        Some(val) => {
            Some(val.parse().map_err(|_| bad(format!("bad state.grad_clip value {val:?}")))?)
        }
    };
    let state = TrainState {
        step: echo.get_u64("state.step", 0)?,
        total_steps: echo.get_u64("state.total_steps", 0)?,
        lr_max: echo.get_f64("state.lr_max", 1e-4)?,
        lr_min: echo.get_f64("state.lr_min", 1e-6)?,
        batch_size: echo.get_usize("state.batch_size", 8)?,
        seed: echo.get_u64("state.seed", 0)?,
        weights: LossWeights {
            theta: echo.get_f64("state.theta", LossWeights::default().theta)?,
            lambda: echo.get_f64("state.lambda", LossWeights::default().lambda)?,
        },
        raw_wavelet_ssim: echo.get_bool("state.raw_wavelet_ssim", false)?,
        log_every: echo.get_u64("state.log_every", 50)?,
        grad_clip,
        m,
        v,
    };
    Ok((net, state))
}

pub fn save_checkpoint(net: &RestorationNet, state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path.as_ref(), encode_checkpoint(net, state))?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RestorationNet, TrainState)> {
    decode_checkpoint(&fs::read(path.as_ref())?)
}
