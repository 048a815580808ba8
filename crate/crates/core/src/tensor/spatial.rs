//! Global pooling and fixed factor-2 resampling over the spatial axes of
//! `[B, C, H, W]` tensors.

use super::tape::record;
use super::Tensor;
use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    /// Bilinear ×2 upsampling (half-pixel centers, edges clamped).
    Up2Bilinear,
    /// 2×2 average pooling; needs even H and W.
    Down2Avg,
}

fn expect_4d(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArg { op, msg: format!("expected 4-D input, got {s:?}") });
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// Collapse H and W to 1: `[B, C, H, W] -> [B, C, 1, 1]`.
///
/// Max pooling routes the gradient to the first maximal element in row-major
/// order (ties broken deterministically).
pub fn pool_global(x: &Tensor, kind: PoolKind) -> Result<Tensor> {
    let (b, c, h, w) = expect_4d(x, "pool_global")?;
    let hw = h * w;
    let xd = x.data_arc();
    let mut out = vec![0.0; b * c];
    let mut argmax = vec![0usize; if kind == PoolKind::Max { b * c } else { 0 }];
    for bc in 0..b * c {
        let plane = &xd[bc * hw..][..hw];
        match kind {
            PoolKind::Avg => out[bc] = plane.iter().sum::<f64>() / hw as f64,
            PoolKind::Max => {
                let mut best = plane[0];
                let mut at = 0;
                for (i, &v) in plane.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        at = i;
                    }
                }
                out[bc] = best;
                argmax[bc] = at;
            }
        }
    }
    record(&[x], vec![b, c, 1, 1], out, move |g, _| {
        let mut gx = vec![0.0; b * c * hw];
        match kind {
            PoolKind::Avg => {
                let inv = 1.0 / hw as f64;
                for bc in 0..b * c {
                    let gv = g[bc] * inv;
                    for v in &mut gx[bc * hw..(bc + 1) * hw] {
                        *v = gv;
                    }
                }
            }
            PoolKind::Max => {
                for bc in 0..b * c {
                    gx[bc * hw + argmax[bc]] = g[bc];
                }
            }
        }
        vec![Some(gx)]
    })
    .pipe()
}

/// Two-tap sampling positions and weights for one ×2-upsampled axis.
fn up2_taps(out_dim: usize, in_dim: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..out_dim)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let i0 = src.floor();
            let frac = src - i0;
            let a = (i0 as i64).clamp(0, in_dim as i64 - 1) as usize;
            let b = (i0 as i64 + 1).clamp(0, in_dim as i64 - 1) as usize;
            (a, b, 1.0 - frac, frac)
        })
        .collect()
}

pub fn resize(x: &Tensor, mode: ResizeMode) -> Result<Tensor> {
    let (b, c, h, w) = expect_4d(x, "resize")?;
    match mode {
        ResizeMode::Up2Bilinear => up2_bilinear(x, b, c, h, w),
        ResizeMode::Down2Avg => down2_avg(x, b, c, h, w),
    }
}

fn up2_bilinear(x: &Tensor, b: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let (oh, ow) = (2 * h, 2 * w);
    let ytaps = up2_taps(oh, h);
    let xtaps = up2_taps(ow, w);
    let xd = x.data_arc();
    let mut out = vec![0.0; b * c * oh * ow];
    {
        let (ytaps, xtaps, xd) = (&ytaps, &xtaps, &xd);
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(bc, chunk)| {
            let plane = &xd[bc * h * w..][..h * w];
            for (oy, &(y0, y1, wy0, wy1)) in ytaps.iter().enumerate() {
                let r0 = &plane[y0 * w..][..w];
                let r1 = &plane[y1 * w..][..w];
                let orow = &mut chunk[oy * ow..][..ow];
                for (ox, &(x0, x1, wx0, wx1)) in xtaps.iter().enumerate() {
                    orow[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
                }
            }
        });
    }
    record(&[x], vec![b, c, oh, ow], out, move |g, _| {
        let mut gx = vec![0.0; b * c * h * w];
        let (ytaps, xtaps) = (&ytaps, &xtaps);
        gx.par_chunks_mut(h * w).enumerate().for_each(|(bc, plane)| {
            let gout = &g[bc * oh * ow..][..oh * ow];
            for (oy, &(y0, y1, wy0, wy1)) in ytaps.iter().enumerate() {
                let grow = &gout[oy * ow..][..ow];
                for (ox, &(x0, x1, wx0, wx1)) in xtaps.iter().enumerate() {
                    let gv = grow[ox];
                    plane[y0 * w + x0] += wy0 * wx0 * gv;
                    plane[y0 * w + x1] += wy0 * wx1 * gv;
                    plane[y1 * w + x0] += wy1 * wx0 * gv;
                    plane[y1 * w + x1] += wy1 * wx1 * gv;
                }
            }
        });
        vec![Some(gx)]
    })
    .pipe()
}

fn down2_avg(x: &Tensor, b: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Divisibility { h, w, multiple: 2 });
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data_arc();
    let mut out = vec![0.0; b * c * oh * ow];
    {
        let xd = &xd;
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(bc, chunk)| {
            let plane = &xd[bc * h * w..][..h * w];
            for oy in 0..oh {
                let r0 = &plane[(2 * oy) * w..][..w];
                let r1 = &plane[(2 * oy + 1) * w..][..w];
                let orow = &mut chunk[oy * ow..][..ow];
                for ox in 0..ow {
                    orow[ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
                }
            }
        });
    }
    record(&[x], vec![b, c, oh, ow], out, move |g, _| {
        let mut gx = vec![0.0; b * c * h * w];
        gx.par_chunks_mut(h * w).enumerate().for_each(|(bc, plane)| {
            let gout = &g[bc * oh * ow..][..oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = 0.25 * gout[oy * ow + ox];
                    plane[(2 * oy) * w + 2 * ox] += gv;
                    plane[(2 * oy) * w + 2 * ox + 1] += gv;
                    plane[(2 * oy + 1) * w + 2 * ox] += gv;
                    plane[(2 * oy + 1) * w + 2 * ox + 1] += gv;
                }
            }
        });
        vec![Some(gx)]
    })
    .pipe()
}

trait Pipe {
    fn pipe(self) -> Result<Tensor>;
}
impl Pipe for Tensor {
    fn pipe(self) -> Result<Tensor> {
        Ok(self)
    }
}
