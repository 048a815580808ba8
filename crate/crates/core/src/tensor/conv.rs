//! 2-D convolution (stride / zero-pad / dilation / groups) and the causal
//! depthwise 1-D convolution used by the sequence blocks.
//!
//! Parallelism is over disjoint output slices only, and every output element
//! accumulates its terms in a fixed loop order, so results do not depend on
//! the worker count.

use super::tape::record;
use super::Tensor;
use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Conv2dOpts { stride: 1, pad: 0, dilation: 1, groups: 1 }
    }
}

impl Conv2dOpts {
    /// Stride-1 convolution padded so the output keeps the input size.
    pub fn same(k: usize) -> Conv2dOpts {
        Conv2dOpts { pad: k / 2, ..Default::default() }
    }
}

/// Valid output range along one axis: the `o` in `lo..hi` are exactly those
/// with `0 <= o*stride + off < in_dim`.
#[inline]
fn out_range(o_count: usize, stride: usize, off: i64, in_dim: usize) -> (usize, usize) {
    let s = stride as i64;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi_raw = if (in_dim as i64) > off { (in_dim as i64 - off + s - 1) / s } else { 0 };
    let lo = lo.clamp(0, o_count as i64);
    let hi = hi_raw.clamp(lo, o_count as i64);
    (lo as usize, hi as usize)
}

/// `x`: `[B, Cin, H, W]`, `w`: `[Cout, Cin/groups, k, k]` (k odd),
/// `bias`: `[Cout]` if given. Output: `[B, Cout, H', W']` with
/// `H' = (H + 2*pad - dilation*(k-1) - 1) / stride + 1`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, opts: Conv2dOpts) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::ShapeMismatch { op: "conv2d".into(), lhs: xs.to_vec(), rhs: ws.to_vec() });
    }
    let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, cin_pg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let Conv2dOpts { stride, pad, dilation, groups } = opts;
    if kh != kw || kh % 2 == 0 {
        return Err(Error::InvalidArg { op: "conv2d".into(), msg: format!("kernel must be odd square, got {kh}x{kw}") });
    }
    if stride == 0 || dilation == 0 || groups == 0 {
        return Err(Error::InvalidArg { op: "conv2d".into(), msg: "stride/dilation/groups must be >= 1".into() });
    }
    if cin % groups != 0 || cout % groups != 0 || cin_pg != cin / groups {
        return Err(Error::InvalidArg {
            op: "conv2d".into(),
            msg: format!("groups {groups} incompatible with cin {cin}, cout {cout}, w-cin {cin_pg}"),
        });
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(Error::ShapeMismatch { op: "conv2d.bias".into(), lhs: vec![cout], rhs: b.shape().to_vec() });
        }
    }
    let k = kh;
    let span = dilation * (k - 1) + 1;
    if h + 2 * pad < span || wd + 2 * pad < span {
        return Err(Error::InvalidArg {
            op: "conv2d".into(),
            msg: format!("input {h}x{wd} (pad {pad}) smaller than kernel span {span}"),
        });
    }
    let oh = (h + 2 * pad - span) / stride + 1;
    let ow = (wd + 2 * pad - span) / stride + 1;
    let cout_pg = cout / groups;

    let xd = x.data_arc();
    let wdat = w.data_arc();
    let bd = bias.map(|b| b.data_arc());

    let mut out = vec![0.0; bsz * cout * oh * ow];
    {
        let xd = &xd;
        let wdat = &wdat;
        let bd = &bd;
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(bc, chunk)| {
            let b = bc / cout;
            let co = bc % cout;
            let gidx = co / cout_pg;
            if let Some(bv) = bd {
                chunk.fill(bv[co]);
            }
            for cig in 0..cin_pg {
                let ci = gidx * cin_pg + cig;
                let xplane = &xd[(b * cin + ci) * h * wd..][..h * wd];
                for ky in 0..k {
                    let offy = (ky * dilation) as i64 - pad as i64;
                    let (loy, hiy) = out_range(oh, stride, offy, h);
                    for kx in 0..k {
                        let wv = wdat[((co * cin_pg + cig) * k + ky) * k + kx];
                        let offx = (kx * dilation) as i64 - pad as i64;
                        let (lox, hix) = out_range(ow, stride, offx, wd);
                        if hix <= lox {
                            continue;
                        }
                        if stride == 1 {
                            // unit-stride slices: bounds-check-free, vectorizes
                            let n = hix - lox;
                            let x0 = (lox as i64 + offx) as usize;
                            for oy in loy..hiy {
                                let iy = (oy as i64 + offy) as usize;
                                let xs = &xplane[iy * wd + x0..][..n];
                                let cs = &mut chunk[oy * ow + lox..][..n];
                                for i in 0..n {
                                    cs[i] = wv.mul_add(xs[i], cs[i]);
                                }
                            }
                        } else {
                            for oy in loy..hiy {
                                let iy = ((oy * stride) as i64 + offy) as usize;
                                let xrow = &xplane[iy * wd..][..wd];
                                let crow = &mut chunk[oy * ow..][..ow];
                                for ox in lox..hix {
                                    let ix = ((ox * stride) as i64 + offx) as usize;
                                    crow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    let has_bias = bias.is_some();
    let inputs: Vec<&Tensor> = match bias {
        Some(b) => vec![x, w, b],
        None => vec![x, w],
    };
    record(&inputs, vec![bsz, cout, oh, ow], out, move |g, needs| {
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; bsz * cin * h * wd];
            let wdat = &wdat;
            gx.par_chunks_mut(h * wd).enumerate().for_each(|(bc, chunk)| {
                let b = bc / cin;
                let ci = bc % cin;
                let gidx = ci / cin_pg;
                let cig = ci % cin_pg;
                for cog in 0..cout_pg {
                    let co = gidx * cout_pg + cog;
                    let gplane = &g[(b * cout + co) * oh * ow..][..oh * ow];
                    for ky in 0..k {
                        let offy = (ky * dilation) as i64 - pad as i64;
                        let (loy, hiy) = out_range(oh, stride, offy, h);
                        for kx in 0..k {
                            let wv = wdat[((co * cin_pg + cig) * k + ky) * k + kx];
                            let offx = (kx * dilation) as i64 - pad as i64;
                            let (lox, hix) = out_range(ow, stride, offx, wd);
                            if hix <= lox {
                                continue;
                            }
                            if stride == 1 {
                                let n = hix - lox;
                                let x0 = (lox as i64 + offx) as usize;
                                for oy in loy..hiy {
                                    let iy = (oy as i64 + offy) as usize;
                                    let gs = &gplane[oy * ow + lox..][..n];
                                    let xs = &mut chunk[iy * wd + x0..][..n];
                                    for i in 0..n {
                                        xs[i] = wv.mul_add(gs[i], xs[i]);
                                    }
                                }
                            } else {
                                for oy in loy..hiy {
                                    let iy = ((oy * stride) as i64 + offy) as usize;
                                    let grow = &gplane[oy * ow..][..ow];
                                    let gxrow = &mut chunk[iy * wd..][..wd];
                                    for ox in lox..hix {
                                        let ix = ((ox * stride) as i64 + offx) as usize;
                                        gxrow[ix] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            });
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![0.0; cout * cin_pg * k * k];
            let xd = &xd;
            gw.par_chunks_mut(cin_pg * k * k).enumerate().for_each(|(co, chunk)| {
                let gidx = co / cout_pg;
                for cig in 0..cin_pg {
                    let ci = gidx * cin_pg + cig;
                    for ky in 0..k {
                        let offy = (ky * dilation) as i64 - pad as i64;
                        let (loy, hiy) = out_range(oh, stride, offy, h);
                        for kx in 0..k {
                            let offx = (kx * dilation) as i64 - pad as i64;
                            let (lox, hix) = out_range(ow, stride, offx, wd);
                            if hix <= lox {
                                chunk[(cig * k + ky) * k + kx] = 0.0;
                                continue;
                            }
                            // four independent partial sums break the serial
                            // dependence of a single accumulator and let the
                            // reduction vectorize; the grouping is fixed, so
                            // results stay run-to-run identical
                            let mut a = [0.0f64; 4];
                            for b in 0..bsz {
                                let gplane = &g[(b * cout + co) * oh * ow..][..oh * ow];
                                let xplane = &xd[(b * cin + ci) * h * wd..][..h * wd];
                                if stride == 1 {
                                    let n = hix - lox;
                                    let x0 = (lox as i64 + offx) as usize;
                                    for oy in loy..hiy {
                                        let iy = (oy as i64 + offy) as usize;
                                        let gs = &gplane[oy * ow + lox..][..n];
                                        let xs = &xplane[iy * wd + x0..][..n];
                                        let mut i = 0;
                                        while i + 4 <= n {
                                            a[0] = gs[i].mul_add(xs[i], a[0]);
                                            a[1] = gs[i + 1].mul_add(xs[i + 1], a[1]);
                                            a[2] = gs[i + 2].mul_add(xs[i + 2], a[2]);
                                            a[3] = gs[i + 3].mul_add(xs[i + 3], a[3]);
                                            i += 4;
                                        }
                                        while i < n {
                                            a[0] = gs[i].mul_add(xs[i], a[0]);
                                            i += 1;
                                        }
                                    }
                                } else {
                                    for oy in loy..hiy {
                                        let iy = ((oy * stride) as i64 + offy) as usize;
                                        let grow = &gplane[oy * ow..][..ow];
                                        let xrow = &xplane[iy * wd..][..wd];
                                        for ox in lox..hix {
                                            let ix = ((ox * stride) as i64 + offx) as usize;
                                            a[0] += grow[ox] * xrow[ix];
                                        }
                                    }
                                }
                            }
                            chunk[(cig * k + ky) * k + kx] = (a[0] + a[1]) + (a[2] + a[3]);
                        }
                    }
                }
            });
            gw
        });
        let mut contribs = vec![gx, gw];
        if has_bias {
            contribs.push(needs[2].then(|| {
                let mut gb = vec![0.0; cout];
                for (co, gco) in gb.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for b in 0..bsz {
                        let base = (b * cout + co) * oh * ow;
                        for v in &g[base..base + oh * ow] {
                            acc += v;
                        }
                    }
                    *gco = acc;
                }
                gb
            }));
        }
        contribs
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

/// Causal per-channel 1-D convolution over the middle axis.
///
/// `x`: `[B, L, D]`, `w`: `[D, K]`, `bias`: `[D]`.
/// `y[b,l,d] = bias[d] + sum_j w[d,j] * x[b, l-(K-1)+j, d]` with zero padding
/// on the left, so position `l` sees only inputs at `<= l`.
pub fn conv1d_causal_depthwise(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 3 || ws.len() != 2 || ws[0] != xs[2] || bias.numel() != xs[2] {
        return Err(Error::ShapeMismatch { op: "conv1d_causal".into(), lhs: xs.to_vec(), rhs: ws.to_vec() });
    }
    let (bsz, l, d) = (xs[0], xs[1], xs[2]);
    let k = ws[1];
    if k == 0 {
        return Err(Error::InvalidArg { op: "conv1d_causal".into(), msg: "zero-width kernel".into() });
    }
    let xd = x.data_arc();
    let wd = w.data_arc();
    let bd = bias.data_arc();

    let mut out = vec![0.0; bsz * l * d];
    for b in 0..bsz {
        let xb = &xd[b * l * d..][..l * d];
        let ob = &mut out[b * l * d..][..l * d];
        for t in 0..l {
            let orow = &mut ob[t * d..][..d];
            orow.copy_from_slice(&bd);
            let jlo = (k - 1).saturating_sub(t);
            for j in jlo..k {
                let src = t + j + 1 - k;
                let xrow = &xb[src * d..][..d];
                for c in 0..d {
                    orow[c] += wd[c * k + j] * xrow[c];
                }
            }
        }
    }

    record(&[x, w, bias], xs.to_vec(), out, move |g, needs| {
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; bsz * l * d];
            for b in 0..bsz {
                let gb = &g[b * l * d..][..l * d];
                let gxb = &mut gx[b * l * d..][..l * d];
                for t in 0..l {
                    let grow = &gb[t * d..][..d];
                    let jlo = (k - 1).saturating_sub(t);
                    for j in jlo..k {
                        let src = t + j + 1 - k;
                        let gxrow = &mut gxb[src * d..][..d];
                        for c in 0..d {
                            gxrow[c] += wd[c * k + j] * grow[c];
                        }
                    }
                }
            }
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![0.0; d * k];
            for b in 0..bsz {
                let xb = &xd[b * l * d..][..l * d];
                let gb = &g[b * l * d..][..l * d];
                for t in 0..l {
                    let grow = &gb[t * d..][..d];
                    let jlo = (k - 1).saturating_sub(t);
                    for j in jlo..k {
                        let src = t + j + 1 - k;
                        let xrow = &xb[src * d..][..d];
                        for c in 0..d {
                            gw[c * k + j] += grow[c] * xrow[c];
                        }
                    }
                }
            }
            gw
        });
        let gbias = needs[2].then(|| {
            let mut gbv = vec![0.0; d];
            for b in 0..bsz {
                for t in 0..l {
                    let grow = &g[(b * l + t) * d..][..d];
                    for c in 0..d {
                        gbv[c] += grow[c];
                    }
                }
            }
            gbv
        });
        vec![gx, gw, gbias]
    })
    .pipe()
}
