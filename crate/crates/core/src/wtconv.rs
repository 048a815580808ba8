//! Wavelet-domain convolution: depthwise kernels applied to stacked Haar
//! subbands at several scales, recomposed bottom-up, plus a direct depthwise
//! spatial path. A stem of four 3x3 conv+relu layers in front of it turns a
//! 3-channel image into stage features.
//!
//! The wavelet path is bias-free and activation-free, so the whole operator
//! is linear in its input for fixed kernels.

use crate::error::{Error, Result};
use crate::init::{kaiming_bound, param_uniform};
use crate::tensor::{concat, conv2d, Conv2dOpts, Tensor};
use crate::wavelet::{dwt2_stacked, idwt2_stacked};
use crate::ParamFn;

#[derive(Debug, Clone)]
pub struct WtConvParams {
    /// Depthwise `[C, 1, k, k]` kernel on the unchanged input.
    pub spatial: Tensor,
    /// One depthwise `[4C, 1, k, k]` kernel stack per decomposition level.
    pub subband: Vec<Tensor>,
}

impl WtConvParams {
    pub fn levels(&self) -> usize {
        self.subband.len()
    }

    pub fn kernel(&self) -> usize {
        self.spatial.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.spatial.shape()[0]
    }

    /// Near-identity start: spatial kernel = centered delta plus noise,
    /// subband kernels small noise.
    pub fn init(seed: u64, name: &str, channels: usize, k: usize, levels: usize) -> WtConvParams {
        let noise_bound = 0.02 * 3f64.sqrt(); // uniform with std 0.02
        let mut spatial = param_uniform(seed, &format!("{name}.spatial"), &[channels, 1, k, k], noise_bound)
            .data()
            .to_vec();
        let center = (k / 2) * k + k / 2;
        for c in 0..channels {
            spatial[c * k * k + center] += 1.0;
        }
        let spatial = Tensor::from_vec(spatial, &[channels, 1, k, k]);
        let subband = (0..levels)
            .map(|l| param_uniform(seed, &format!("{name}.subband{l}"), &[4 * channels, 1, k, k], noise_bound))
            .collect();
        WtConvParams { spatial, subband }
    }

    pub fn map_params(&self, prefix: &str, f: &mut ParamFn) -> WtConvParams {
        WtConvParams {
            spatial: f(&format!("{prefix}.spatial"), &self.spatial),
            subband: self
                .subband
                .iter()
                .enumerate()
                .map(|(l, t)| f(&format!("{prefix}.subband{l}"), t))
                .collect(),
        }
    }
}

/// Apply the wavelet-domain convolution. Shape-preserving; needs H and W
/// divisible by `2^levels`.
pub fn wtconv_apply(x: &Tensor, p: &WtConvParams) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || s[1] != p.channels() {
        return Err(Error::ShapeMismatch { op: "wtconv", lhs: s.to_vec(), rhs: p.spatial.shape().to_vec() });
    }
    let levels = p.levels();
    if levels == 0 {
        return Err(Error::InvalidArg { op: "wtconv", msg: "needs at least one level".into() });
    }
    let c = s[1];
    let k = p.kernel();
    let same = Conv2dOpts { pad: k / 2, ..Default::default() };

    // analysis: each level decomposes the *raw* low-pass of the previous one
    let mut stacks = Vec::with_capacity(levels);
    let mut cur = x.clone();
    for _ in 0..levels {
        let st = dwt2_stacked(&cur)?;
        cur = st.narrow(1, 0, c)?;
        stacks.push(st);
    }

    // synthesis: convolve subbands, fold the deeper reconstruction into the
    // low-pass quarter, invert
    let mut carry: Option<Tensor> = None;
    for (lvl, st) in stacks.iter().enumerate().rev() {
        let convd = conv2d(st, &p.subband[lvl], None, Conv2dOpts { groups: 4 * c, ..same })?;
        let convd = match carry.take() {
            Some(deeper) => {
                let ll = convd.narrow(1, 0, c)?.add(&deeper)?;
                let rest = convd.narrow(1, c, 3 * c)?;
                concat(&[&ll, &rest], 1)?
            }
            None => convd,
        };
        carry = Some(idwt2_stacked(&convd)?);
    }

    let direct = conv2d(x, &p.spatial, None, Conv2dOpts { groups: c, ..same })?;
    direct.add(&carry.unwrap())
}

#[derive(Debug, Clone)]
pub struct StemParams {
    /// Four 3x3 conv layers (image -> C, then C -> C), each followed by relu.
    pub convs: Vec<(Tensor, Tensor)>,
    pub wt: WtConvParams,
}

impl StemParams {
    pub fn init(seed: u64, name: &str, in_ch: usize, out_ch: usize, k_wt: usize, levels: usize) -> StemParams {
        let mut convs = Vec::with_capacity(4);
        let mut cin = in_ch;
        for i in 0..4 {
            let bound = kaiming_bound(cin * 9);
            let w = param_uniform(seed, &format!("{name}.conv{i}.w"), &[out_ch, cin, 3, 3], bound);
            let b = param_uniform(seed, &format!("{name}.conv{i}.b"), &[out_ch], bound);
            convs.push((w, b));
            cin = out_ch;
        }
        StemParams { convs, wt: WtConvParams::init(seed, &format!("{name}.wt"), out_ch, k_wt, levels) }
    }

    pub fn map_params(&self, prefix: &str, f: &mut ParamFn) -> StemParams {
        StemParams {
            convs: self
                .convs
                .iter()
                .enumerate()
                .map(|(i, (w, b))| {
                    (f(&format!("{prefix}.conv{i}.w"), w), f(&format!("{prefix}.conv{i}.b"), b))
                })
                .collect(),
            wt: self.wt.map_params(&format!("{prefix}.wt"), f),
        }
    }
}

/// Feature stem: four 3x3 conv+relu layers, then the wavelet-domain conv.
pub fn gmwtconvs_apply(img: &Tensor, p: &StemParams) -> Result<Tensor> {
    let mut cur = img.clone();
    for (w, b) in &p.convs {
        cur = conv2d(&cur, w, Some(b), Conv2dOpts::same(3))?.relu();
    }
    wtconv_apply(&cur, &p.wt)
}
