//! Selective state-space sequence block and the channel-attention wrapper
//! built on it.
//!
//! The recurrence, per batch item and inner channel `d` with state size `N`:
//!
//! ```text
//! A[d,n]   = -exp(a_log[d,n])                 (continuous, negative real)
//! abar     = exp(delta[t,d] * A[d,n])         (zero-order hold)
//! h[t,n]   = abar * h[t-1,n] + delta[t,d] * B[t,n] * u[t,d]
//! y[t,d]   = sum_n C[t,n] * h[t,n] + D[d] * u[t,d]
//! ```
//!
//! The scan is one fused tape op whose backward runs the adjoint recurrence
//! `lam[t] = g[t]*C[t] + abar[t+1]*lam[t+1]` in reverse; forward states and
//! decay factors are saved, and the reverse sweep is strictly sequential, so
//! gradients are bitwise reproducible.

use crate::error::{Error, Result};
use crate::init::{kaiming_bound, param_uniform, stream_rng};
use crate::tensor::tape::record;
use crate::tensor::{conv1d_causal_depthwise, pool_global, PoolKind, Tensor};
use crate::ParamFn;
use rand::Rng;
use rayon::prelude::*;
use std::sync::Arc;

/// Fused scan core. `u`, `delta`: `[B, L, D]`; `bseq`, `cseq`: `[B, L, N]`;
/// `a_log`: `[D, N]`; `d_vec`: `[D]`. All `delta` entries must be positive.
pub fn scan_core(
    u: &Tensor,
    delta: &Tensor,
    bseq: &Tensor,
    cseq: &Tensor,
    a_log: &Tensor,
    d_vec: &Tensor,
) -> Result<Tensor> {
    let us = u.shape();
    if us.len() != 3 {
        return Err(Error::InvalidArg { op: "scan_core", msg: format!("u must be [B,L,D], got {us:?}") });
    }
    let (bsz, l, d) = (us[0], us[1], us[2]);
    let n = bseq.shape()[2];
    let shapes_ok = delta.shape() == us
        && bseq.shape() == [bsz, l, n]
        && cseq.shape() == [bsz, l, n]
        && a_log.shape() == [d, n]
        && d_vec.numel() == d;
    if !shapes_ok {
        return Err(Error::ShapeMismatch { op: "scan_core", lhs: us.to_vec(), rhs: bseq.shape().to_vec() });
    }
    // softplus guarantees delta >= 0 for any finite input; zero (underflow)
    // freezes the state and NaN propagates to the loss, where training
    // aborts cleanly. A genuinely negative delta is a caller bug.
    debug_assert!(
        delta.data().iter().all(|&v| !(v < 0.0)),
        "scan_core: delta must be non-negative"
    );

    let ud = u.data_arc();
    let dd = delta.data_arc();
    let bd = bseq.data_arc();
    let cd = cseq.data_arc();
    let dv = d_vec.data_arc();
    let a: Arc<Vec<f64>> = Arc::new(a_log.data().iter().map(|&v| -v.exp()).collect());

    let dn = d * n;
    let mut y = vec![0.0; bsz * l * d];
    let mut h_all = vec![0.0; bsz * l * dn];
    let mut abar_all = vec![0.0; bsz * l * dn];
    {
        let (ud, dd, bd, cd, dv, a) = (&ud, &dd, &bd, &cd, &dv, &a);
        y.par_chunks_mut(l * d)
            .zip(h_all.par_chunks_mut(l * dn))
            .zip(abar_all.par_chunks_mut(l * dn))
            .enumerate()
            .for_each(|(b, ((yb, hb), ab))| {
                let mut h = vec![0.0; dn];
                for t in 0..l {
                    let urow = &ud[(b * l + t) * d..][..d];
                    let drow = &dd[(b * l + t) * d..][..d];
                    let brow = &bd[(b * l + t) * n..][..n];
                    let crow = &cd[(b * l + t) * n..][..n];
                    let ht = &mut hb[t * dn..][..dn];
                    let at = &mut ab[t * dn..][..dn];
                    for dch in 0..d {
                        let dt = drow[dch];
                        let dtu = dt * urow[dch];
                        let hrow = &mut h[dch * n..][..n];
                        let arow = &a[dch * n..][..n];
                        let mut acc = 0.0;
                        for k in 0..n {
                            let abar = (dt * arow[k]).exp();
                            let hv = abar * hrow[k] + dtu * brow[k];
                            hrow[k] = hv;
                            acc += crow[k] * hv;
                            ht[dch * n + k] = hv;
                            at[dch * n + k] = abar;
                        }
                        yb[t * d + dch] = acc + dv[dch] * urow[dch];
                    }
                }
            });
    }
    let h_all = Arc::new(h_all);
    let abar_all = Arc::new(abar_all);

    Ok(record(
        &[u, delta, bseq, cseq, a_log, d_vec],
        vec![bsz, l, d],
        y,
        move |g, needs| {
            let mut gu = needs[0].then(|| vec![0.0; bsz * l * d]);
            let mut gdelta = needs[1].then(|| vec![0.0; bsz * l * d]);
            let mut gb = needs[2].then(|| vec![0.0; bsz * l * n]);
            let mut gc = needs[3].then(|| vec![0.0; bsz * l * n]);
            let mut ga = needs[4].then(|| vec![0.0; dn]);
            let mut gd = needs[5].then(|| vec![0.0; d]);
            let mut lam = vec![0.0; dn];
            let zeros = vec![0.0; dn];
            for b in 0..bsz {
                lam.fill(0.0);
                for t in (0..l).rev() {
                    let urow = &ud[(b * l + t) * d..][..d];
                    let drow = &dd[(b * l + t) * d..][..d];
                    let brow = &bd[(b * l + t) * n..][..n];
                    let crow = &cd[(b * l + t) * n..][..n];
                    let grow = &g[(b * l + t) * d..][..d];
                    let ht = &h_all[(b * l + t) * dn..][..dn];
                    let at = &abar_all[(b * l + t) * dn..][..dn];
                    let hprev: &[f64] =
                        if t > 0 { &h_all[(b * l + t - 1) * dn..][..dn] } else { &zeros };
                    for dch in 0..d {
                        let gt = grow[dch];
                        let dt = drow[dch];
                        let uv = urow[dch];
                        let arow = &a[dch * n..][..n];
                        let lrow = &mut lam[dch * n..][..n];
                        let mut acc_u = 0.0;
                        let mut acc_dt = 0.0;
                        for k in 0..n {
                            // entering iteration t, lrow holds abar[t+1]*lam[t+1]
                            let lt = gt * crow[k] + lrow[k];
                            let hp = hprev[dch * n + k];
                            let abar = at[dch * n + k];
                            acc_u += lt * dt * brow[k];
                            acc_dt += lt * (hp * abar * arow[k] + brow[k] * uv);
                            if let Some(gb) = &mut gb {
                                gb[(b * l + t) * n + k] += lt * dt * uv;
                            }
                            if let Some(gc) = &mut gc {
                                gc[(b * l + t) * n + k] += gt * ht[dch * n + k];
                            }
                            if let Some(ga) = &mut ga {
                                // dA accumulated here; chain to a_log afterwards
                                ga[dch * n + k] += lt * hp * abar * dt;
                            }
                            lrow[k] = lt * abar;
                        }
                        if let Some(gu) = &mut gu {
                            gu[(b * l + t) * d + dch] = gt * dv[dch] + acc_u;
                        }
                        if let Some(gdelta) = &mut gdelta {
                            gdelta[(b * l + t) * d + dch] = acc_dt;
                        }
                        if let Some(gd) = &mut gd {
                            gd[dch] += gt * uv;
                        }
                    }
                }
            }
            if let Some(ga) = &mut ga {
                // dL/da_log = dL/dA * dA/da_log = dL/dA * (-exp(a_log)) = dL/dA * A
                for (i, v) in ga.iter_mut().enumerate() {
                    *v *= a[i];
                }
            }
            vec![gu, gdelta, gb, gc, ga, gd]
        },
    ))
}

/// Input-dependent ("selective") or constant projections for the scan.
#[derive(Debug, Clone)]
pub enum SsmProj {
    Selective {
        /// `[d_inner, d_inner]`
        w_delta: Tensor,
        /// `[d_state, d_inner]`
        w_b: Tensor,
        /// `[d_state, d_inner]`
        w_c: Tensor,
    },
    Invariant {
        /// `[d_state]`
        b: Tensor,
        /// `[d_state]`
        c: Tensor,
    },
}

#[derive(Debug, Clone)]
pub struct SsmParams {
    /// `[d_inner, d_state]`, stores `log(-A)`.
    pub a_log: Tensor,
    /// Feedthrough `[d_inner]`.
    pub d: Tensor,
    /// Pre-softplus step-size offset `[d_inner]`.
    pub delta_bias: Tensor,
    pub proj: SsmProj,
}

fn inv_softplus(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

impl SsmParams {
    pub fn d_inner(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn d_state(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn init(seed: u64, name: &str, d_inner: usize, d_state: usize, selective: bool) -> SsmParams {
        // A rows count 1..d_state so the pole spectrum is spread out
        let a_log = Tensor::from_vec(
            (0..d_inner * d_state).map(|i| (((i % d_state) + 1) as f64).ln()).collect(),
            &[d_inner, d_state],
        );
        let d = Tensor::full(&[d_inner], 1.0);
        // step sizes log-uniform in [1e-3, 1e-1], stored pre-softplus
        let mut rng = stream_rng(seed, &["param", &format!("{name}.delta_bias")]);
        let (lo, hi) = ((1e-3f64).ln(), (1e-1f64).ln());
        let delta_bias = Tensor::from_vec(
            (0..d_inner).map(|_| inv_softplus(rng.gen_range(lo..hi).exp())).collect(),
            &[d_inner],
        );
        let proj = if selective {
            let bound = kaiming_bound(d_inner);
            SsmProj::Selective {
                w_delta: param_uniform(seed, &format!("{name}.w_delta"), &[d_inner, d_inner], bound),
                w_b: param_uniform(seed, &format!("{name}.w_b"), &[d_state, d_inner], bound),
                w_c: param_uniform(seed, &format!("{name}.w_c"), &[d_state, d_inner], bound),
            }
        } else {
            let bound = kaiming_bound(d_state);
            SsmProj::Invariant {
                b: param_uniform(seed, &format!("{name}.b_const"), &[d_state], bound),
                c: param_uniform(seed, &format!("{name}.c_const"), &[d_state], bound),
            }
        };
        SsmParams { a_log, d, delta_bias, proj }
    }

    /// Walks the parameter tensors in declaration order, rebuilding the
    /// struct from the visitor's outputs. This order is the persistence and
    /// optimizer-state order.
    pub fn map_params(&self, prefix: &str, f: &mut ParamFn) -> SsmParams {
        let a_log = f(&format!("{prefix}.a_log"), &self.a_log);
        let d = f(&format!("{prefix}.d"), &self.d);
        let delta_bias = f(&format!("{prefix}.delta_bias"), &self.delta_bias);
        let proj = match &self.proj {
            SsmProj::Selective { w_delta, w_b, w_c } => SsmProj::Selective {
                w_delta: f(&format!("{prefix}.w_delta"), w_delta),
                w_b: f(&format!("{prefix}.w_b"), w_b),
                w_c: f(&format!("{prefix}.w_c"), w_c),
            },
            SsmProj::Invariant { b, c } => SsmProj::Invariant {
                b: f(&format!("{prefix}.b_const"), b),
                c: f(&format!("{prefix}.c_const"), c),
            },
        };
        SsmParams { a_log, d, delta_bias, proj }
    }
}

/// Run the recurrence on `u: [B, L, d_inner]`, deriving the step size and the
/// B/C sequences from `p`.
pub fn ssm_scan(u: &Tensor, p: &SsmParams) -> Result<Tensor> {
    let us = u.shape();
    if us.len() != 3 || us[2] != p.d_inner() {
        return Err(Error::ShapeMismatch { op: "ssm_scan", lhs: us.to_vec(), rhs: p.a_log.shape().to_vec() });
    }
    let (bsz, l) = (us[0], us[1]);
    let n = p.d_state();
    let (delta, bseq, cseq) = match &p.proj {
        SsmProj::Selective { w_delta, w_b, w_c } => {
            let dpre = u.linear(w_delta, Some(&p.delta_bias))?;
            (dpre.softplus(), u.linear(w_b, None)?, u.linear(w_c, None)?)
        }
        SsmProj::Invariant { b, c } => {
            // lift the constant vectors to per-token sequences through a
            // ones-input linear so gradients still reach them
            let ones = Tensor::full(&[bsz, l, 1], 1.0);
            let dpre = ones.linear(&p.delta_bias.reshape(&[p.d_inner(), 1]), None)?;
            (
                dpre.softplus(),
                ones.linear(&b.reshape(&[n, 1]), None)?,
                ones.linear(&c.reshape(&[n, 1]), None)?,
            )
        }
    };
    scan_core(u, &delta, &bseq, &cseq, &p.a_log, &p.d)
}

#[derive(Debug, Clone)]
pub struct MambaBlockParams {
    /// `[2*d_inner, width_io]`, no bias; splits into main and gate paths.
    pub in_proj: Tensor,
    /// Causal depthwise conv `[d_inner, d_conv]` + bias `[d_inner]`.
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub ssm: SsmParams,
    /// `[width_io, d_inner]`, no bias.
    pub out_proj: Tensor,
}

impl MambaBlockParams {
    pub fn d_inner(&self) -> usize {
        self.ssm.d_inner()
    }

    pub fn width_io(&self) -> usize {
        self.out_proj.shape()[0]
    }

    #[allow(clippy::too_many_arguments)]
    pub fn init(
        seed: u64,
        name: &str,
        width_io: usize,
        d_model: usize,
        d_state: usize,
        d_conv: usize,
        expand: usize,
        selective: bool,
    ) -> MambaBlockParams {
        let d_inner = expand * d_model;
        let ib = kaiming_bound(width_io);
        let cb = kaiming_bound(d_conv);
        MambaBlockParams {
            in_proj: param_uniform(seed, &format!("{name}.in_proj"), &[2 * d_inner, width_io], ib),
            conv_w: param_uniform(seed, &format!("{name}.conv_w"), &[d_inner, d_conv], cb),
            conv_b: param_uniform(seed, &format!("{name}.conv_b"), &[d_inner], cb),
            ssm: SsmParams::init(seed, &format!("{name}.ssm"), d_inner, d_state, selective),
            // small start so residual wrappers begin near the identity
            out_proj: param_uniform(seed, &format!("{name}.out_proj"), &[width_io, d_inner], 0.02 * 3f64.sqrt()),
        }
    }

    pub fn map_params(&self, prefix: &str, f: &mut ParamFn) -> MambaBlockParams {
        MambaBlockParams {
            in_proj: f(&format!("{prefix}.in_proj"), &self.in_proj),
            conv_w: f(&format!("{prefix}.conv_w"), &self.conv_w),
            conv_b: f(&format!("{prefix}.conv_b"), &self.conv_b),
            ssm: self.ssm.map_params(&format!("{prefix}.ssm"), f),
            out_proj: f(&format!("{prefix}.out_proj"), &self.out_proj),
        }
    }
}

/// Gated sequence block: project in, causal conv + silu, scan, gate, project
/// out. Shape-preserving on `[B, L, width_io]`.
pub fn mamba_block(seq: &Tensor, p: &MambaBlockParams) -> Result<Tensor> {
    let d_inner = p.d_inner();
    let xz = seq.linear(&p.in_proj, None)?;
    let main = xz.narrow(2, 0, d_inner)?;
    let gate = xz.narrow(2, d_inner, d_inner)?;
    let conv = conv1d_causal_depthwise(&main, &p.conv_w, &p.conv_b)?.silu();
    let scanned = ssm_scan(&conv, &p.ssm)?;
    scanned.mul(&gate.silu())?.linear(&p.out_proj, None)
}

/// Channel attention: pooled channel statistics are read as length-C
/// sequences by a shared sequence block; its outputs modulate the feature
/// map multiplicatively around an identity residual.
#[derive(Debug, Clone)]
pub struct McamParams {
    pub block: MambaBlockParams,
    /// Separate parameters for the max-pool branch; the default shares `block`.
    pub second: Option<MambaBlockParams>,
}

impl McamParams {
    pub fn map_params(&self, prefix: &str, f: &mut ParamFn) -> McamParams {
        McamParams {
            block: self.block.map_params(&format!("{prefix}.block"), f),
            second: self.second.as_ref().map(|s| s.map_params(&format!("{prefix}.second"), f)),
        }
    }
}

pub fn mcam_apply(x: &Tensor, p: &McamParams) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArg { op: "mcam", msg: format!("expected 4-D input, got {s:?}") });
    }
    let (b, c) = (s[0], s[1]);
    let ap = pool_global(x, PoolKind::Avg)?.reshape(&[b, c, 1]);
    let mp = pool_global(x, PoolKind::Max)?.reshape(&[b, c, 1]);
    let wa = mamba_block(&ap, &p.block)?;
    let wm = mamba_block(&mp, p.second.as_ref().unwrap_or(&p.block))?;
    let weights = wa.add(&wm)?.reshape(&[b, c, 1, 1]);
    let modulated = x.mul(&weights)?;
    x.add(&modulated)
}
