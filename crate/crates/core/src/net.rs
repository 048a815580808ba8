//! U-shaped multi-input/multi-output restoration network.
//!
//! Three stems read the image at full, half and quarter resolution; the lower
//! two are concatenated into the main path and fused by a 3x3 conv at the
//! inputs of the second and third encoder stages. Channel width doubles per
//! encoder stage (C, 2C, 4C). The decoder mirrors the encoder with bilinear
//! upsampling and skip concatenations, and every scale ends in a 3x3 head
//! plus an image-level skip, so the network starts out predicting the
//! (downsampled) input and learns a residual on top of it.

use crate::error::{Error, Result};
use crate::init::{kaiming_bound, param_uniform};
use crate::ssm::{mcam_apply, MambaBlockParams, McamParams};
use crate::tensor::{concat, conv2d, resize, Conv2dOpts, ResizeMode, Tensor};
use crate::wtconv::{gmwtconvs_apply, StemParams};
use crate::ParamFn;

/// A conv2d weight/bias pair.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConvLayer {
    pub fn init(seed: u64, name: &str, cout: usize, cin: usize, k: usize) -> ConvLayer {
        let bound = kaiming_bound(cin * k * k);
        ConvLayer {
            w: param_uniform(seed, &format!("{name}.w"), &[cout, cin, k, k], bound),
            b: param_uniform(seed, &format!("{name}.b"), &[cout], bound),
        }
    }

    pub fn map_params(&self, prefix: &str, f: &mut ParamFn) -> ConvLayer {
        ConvLayer { w: f(&format!("{prefix}.w"), &self.w), b: f(&format!("{prefix}.b"), &self.b) }
    }

    pub fn apply(&self, x: &Tensor, opts: Conv2dOpts) -> Result<Tensor> {
        conv2d(x, &self.w, Some(&self.b), opts)
    }
}

/// Image stem: the wavelet-domain stack, or a plain 3x3 conv + relu for the
/// ablation baseline.
#[derive(Debug, Clone)]
pub enum Stem {
    Gmwt(StemParams),
    Plain(ConvLayer),
}

impl Stem {
    fn apply(&self, img: &Tensor) -> Result<Tensor> {
        match self {
            Stem::Gmwt(p) => gmwtconvs_apply(img, p),
            Stem::Plain(c) => Ok(c.apply(img, Conv2dOpts::same(3))?.relu()),
        }
    }

    fn map_params(&self, prefix: &str, f: &mut ParamFn) -> Stem {
        match self {
            Stem::Gmwt(p) => Stem::Gmwt(p.map_params(prefix, f)),
            Stem::Plain(c) => Stem::Plain(c.map_params(&format!("{prefix}.conv"), f)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInit {
    /// Heads start at zero so the untrained network is the identity
    /// restoration and the first-step loss has a computable reference value.
    Zero,
    /// Randomized heads, needed when every parameter must receive gradient
    /// from step one (zero head kernels block gradient into the trunk).
    Random,
}

#[derive(Debug, Clone)]
pub struct NetConfig {
    /// Width of the first stage; doubles per encoder stage.
    pub base_channels: usize,
    /// Residual conv units per stage.
    pub blocks_per_stage: usize,
    /// Wavelet decomposition depth inside the stems.
    pub wtconv_levels: usize,
    /// Kernel size of the wavelet-domain convolution (odd).
    pub wt_kernel: usize,
    /// Wavelet-domain stems instead of a single plain conv per scale.
    pub use_gmwt: bool,
    /// Channel attention at the end of every stage.
    pub use_mcam: bool,
    /// Multiscale dilated-conv module after the channel attention.
    pub use_msm: bool,
    /// Channel-attention sequence block: embedding width, state size, causal
    /// conv width, expansion factor.
    pub d_model: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    /// Input-dependent step/B/C projections vs. learned constants.
    pub selective: bool,
    /// Separate parameters for the max-pool branch of the channel attention.
    pub separate_pools: bool,
    pub head_init: HeadInit,
}

impl Default for NetConfig {
    fn default() -> NetConfig {
        NetConfig {
            base_channels: 8,
            blocks_per_stage: 1,
            wtconv_levels: 1,
            wt_kernel: 5,
            use_gmwt: true,
            use_mcam: true,
            use_msm: true,
            d_model: 16,
            d_state: 32,
            d_conv: 4,
            expand: 2,
            selective: true,
            separate_pools: false,
            head_init: HeadInit::Zero,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.base_channels < 4 {
            return bad(format!("base_channels must be >= 4, got {}", self.base_channels));
        }
        if self.blocks_per_stage < 1 {
            return bad("blocks_per_stage must be >= 1".into());
        }
        if self.wtconv_levels < 1 {
            return bad("wtconv_levels must be >= 1".into());
        }
        if self.wt_kernel % 2 == 0 || self.wt_kernel < 3 {
            return bad(format!("wt_kernel must be odd and >= 3, got {}", self.wt_kernel));
        }
        if self.d_model < 1 || self.d_state < 1 || self.d_conv < 1 || self.expand < 1 {
            return bad("d_model, d_state, d_conv, expand must all be >= 1".into());
        }
        Ok(())
    }

    /// Input sides must be divisible by this: two stride-2 encoder halvings,
    /// then the stem's wavelet decompositions at quarter resolution.
    pub fn size_multiple(&self) -> usize {
        4 << self.wtconv_levels
    }
}

/// Depthwise dilated 3x3 branches (dilations 1, 2, 3) summed and fused by a
/// 1x1 conv around an identity residual.
#[derive(Debug, Clone)]
pub struct MsmParams {
    /// `[C, 1, 3, 3]` per dilation.
    pub branch: Vec<Tensor>,
    pub fuse: ConvLayer,
}

impl MsmParams {
    pub fn init(seed: u64, name: &str, channels: usize) -> MsmParams {
        let bound = kaiming_bound(9);
        let branch = (0..3)
            .map(|i| param_uniform(seed, &format!("{name}.branch{i}"), &[channels, 1, 3, 3], bound))
            .collect();
        // small fuse start: near the identity but with live gradients
        let fuse = ConvLayer {
            w: param_uniform(seed, &format!("{name}.fuse.w"), &[channels, channels, 1, 1], 0.02 * 3f64.sqrt()),
            b: Tensor::zeros(&[channels]),
        };
        MsmParams { branch, fuse }
    }

    pub fn map_params(&self, prefix: &str, f: &mut ParamFn) -> MsmParams {
        MsmParams {
            branch: self
                .branch
                .iter()
                .enumerate()
                .map(|(i, t)| f(&format!("{prefix}.branch{i}"), t))
                .collect(),
            fuse: self.fuse.map_params(&format!("{prefix}.fuse"), f),
        }
    }
}

pub fn msm_standin(x: &Tensor, p: &MsmParams) -> Result<Tensor> {
    let c = x.shape()[1];
    let mut acc: Option<Tensor> = None;
    for (i, w) in p.branch.iter().enumerate() {
        let d = i + 1;
        let opts = Conv2dOpts { pad: d, dilation: d, groups: c, ..Default::default() };
        let y = conv2d(x, w, None, opts)?;
        acc = Some(match acc {
            Some(a) => a.add(&y)?,
            None => y,
        });
    }
    let fused = p.fuse.apply(&acc.unwrap(), Conv2dOpts::same(1))?;
    x.add(&fused)
}

#[derive(Debug, Clone)]
pub struct ResUnit {
    pub c1: ConvLayer,
    pub c2: ConvLayer,
}

/// One encoder or decoder stage: residual conv units, then channel
/// attention, then the multiscale module, each step optional by config.
#[derive(Debug, Clone)]
pub struct StageParams {
    pub units: Vec<ResUnit>,
    pub mcam: Option<McamParams>,
    pub msm: Option<MsmParams>,
}

impl StageParams {
    fn init(seed: u64, name: &str, cfg: &NetConfig, width: usize) -> StageParams {
        let units = (0..cfg.blocks_per_stage)
            .map(|i| ResUnit {
                c1: ConvLayer::init(seed, &format!("{name}.unit{i}.c1"), width, width, 3),
                c2: ConvLayer::init(seed, &format!("{name}.unit{i}.c2"), width, width, 3),
            })
            .collect();
        let block = |part: &str| {
            MambaBlockParams::init(
                seed,
                &format!("{name}.mcam.{part}"),
                1,
                cfg.d_model,
                cfg.d_state,
                cfg.d_conv,
                cfg.expand,
                cfg.selective,
            )
        };
        let mcam = cfg.use_mcam.then(|| McamParams {
            block: block("block"),
            second: cfg.separate_pools.then(|| block("second")),
        });
        let msm = cfg.use_msm.then(|| MsmParams::init(seed, &format!("{name}.msm"), width));
        StageParams { units, mcam, msm }
    }

    pub fn map_params(&self, prefix: &str, f: &mut ParamFn) -> StageParams {
        StageParams {
            units: self
                .units
                .iter()
                .enumerate()
                .map(|(i, u)| ResUnit {
                    c1: u.c1.map_params(&format!("{prefix}.unit{i}.c1"), f),
                    c2: u.c2.map_params(&format!("{prefix}.unit{i}.c2"), f),
                })
                .collect(),
            mcam: self.mcam.as_ref().map(|m| m.map_params(&format!("{prefix}.mcam"), f)),
            msm: self.msm.as_ref().map(|m| m.map_params(&format!("{prefix}.msm"), f)),
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let same3 = Conv2dOpts::same(3);
        let mut cur = x.clone();
        for u in &self.units {
            let y = u.c1.apply(&cur, same3)?.relu();
            let y = u.c2.apply(&y, same3)?;
            cur = cur.add(&y)?;
        }
        if let Some(m) = &self.mcam {
            cur = mcam_apply(&cur, m)?;
        }
        if let Some(m) = &self.msm {
            cur = msm_standin(&cur, m)?;
        }
        Ok(cur)
    }
}

#[derive(Debug, Clone)]
pub struct RestorationNet {
    pub cfg: NetConfig,
    /// Image stems at full, half, quarter resolution; widths C, 2C, 4C.
    pub stems: Vec<Stem>,
    /// Encoder stages at widths C, 2C, 4C.
    pub enc: Vec<StageParams>,
    /// Strided 3x3 downsampling convs C->2C and 2C->4C.
    pub down: Vec<ConvLayer>,
    /// 3x3 convs fusing concat(downsampled main path, stem output).
    pub enc_fuse: Vec<ConvLayer>,
    /// Decoder stages at widths 4C, 2C, C (quarter to full).
    pub dec: Vec<StageParams>,
    /// 3x3 convs after bilinear up2: 4C->2C and 2C->C.
    pub up: Vec<ConvLayer>,
    /// 3x3 convs fusing concat(upsampled path, encoder skip).
    pub dec_fuse: Vec<ConvLayer>,
    /// 3x3 convs to 3 channels at full, half, quarter resolution.
    pub heads: Vec<ConvLayer>,
}

pub fn build(cfg: &NetConfig, seed: u64) -> Result<RestorationNet> {
    cfg.validate()?;
    let widths = [cfg.base_channels, 2 * cfg.base_channels, 4 * cfg.base_channels];
    let stems = (0..3)
        .map(|s| {
            if cfg.use_gmwt {
                Stem::Gmwt(StemParams::init(
                    seed,
                    &format!("stem{s}"),
                    3,
                    widths[s],
                    cfg.wt_kernel,
                    cfg.wtconv_levels,
                ))
            } else {
                Stem::Plain(ConvLayer::init(seed, &format!("stem{s}.conv"), widths[s], 3, 3))
            }
        })
        .collect();
    let enc = (0..3).map(|s| StageParams::init(seed, &format!("enc{s}"), cfg, widths[s])).collect();
    let down = (0..2)
        .map(|s| ConvLayer::init(seed, &format!("down{s}"), widths[s + 1], widths[s], 3))
        .collect();
    let enc_fuse = (0..2)
        .map(|s| ConvLayer::init(seed, &format!("enc_fuse{s}"), widths[s + 1], 2 * widths[s + 1], 3))
        .collect();
    let dec = (0..3).map(|i| StageParams::init(seed, &format!("dec{i}"), cfg, widths[2 - i])).collect();
    let up = (0..2)
        .map(|i| ConvLayer::init(seed, &format!("up{i}"), widths[1 - i], widths[2 - i], 3))
        .collect();
    let dec_fuse = (0..2)
        .map(|i| ConvLayer::init(seed, &format!("dec_fuse{i}"), widths[1 - i], 2 * widths[1 - i], 3))
        .collect();
    let heads = (0..3)
        .map(|s| match cfg.head_init {
            HeadInit::Zero => ConvLayer {
                w: Tensor::zeros(&[3, widths[s], 3, 3]),
                b: Tensor::zeros(&[3]),
            },
            HeadInit::Random => ConvLayer::init(seed, &format!("head{s}"), 3, widths[s], 3),
        })
        .collect();
    Ok(RestorationNet { cfg: cfg.clone(), stems, enc, down, enc_fuse, dec, up, dec_fuse, heads })
}

impl RestorationNet {
    /// Walks every parameter in a fixed order (the persistence order),
    /// rebuilding the net from the visitor's outputs. Used for watching
    /// parameters on a tape, applying optimizer updates, and serialization.
    pub fn map_params(&self, f: &mut ParamFn) -> RestorationNet {
        RestorationNet {
            cfg: self.cfg.clone(),
            stems: self.stems.iter().enumerate().map(|(i, s)| s.map_params(&format!("stem{i}"), f)).collect(),
            enc: self.enc.iter().enumerate().map(|(i, s)| s.map_params(&format!("enc{i}"), f)).collect(),
            down: self.down.iter().enumerate().map(|(i, c)| c.map_params(&format!("down{i}"), f)).collect(),
            enc_fuse: self
                .enc_fuse
                .iter()
                .enumerate()
                .map(|(i, c)| c.map_params(&format!("enc_fuse{i}"), f))
                .collect(),
            dec: self.dec.iter().enumerate().map(|(i, s)| s.map_params(&format!("dec{i}"), f)).collect(),
            up: self.up.iter().enumerate().map(|(i, c)| c.map_params(&format!("up{i}"), f)).collect(),
            dec_fuse: self
                .dec_fuse
                .iter()
                .enumerate()
                .map(|(i, c)| c.map_params(&format!("dec_fuse{i}"), f))
                .collect(),
            heads: self.heads.iter().enumerate().map(|(i, c)| c.map_params(&format!("head{i}"), f)).collect(),
        }
    }

    /// Read-only walk in the same order as [`map_params`](Self::map_params).
    pub fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.map_params(&mut |name, t| {
            f(name, t);
            t.clone()
        });
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Forward pass on `[B, 3, H, W]`; returns restored images at full, half
    /// and quarter resolution.
    pub fn forward(&self, img: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let s = img.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::InvalidArg {
                op: "net_forward",
                msg: format!("expected [B,3,H,W] input, got {s:?}"),
            });
        }
        let multiple = self.cfg.size_multiple();
        if s[2] % multiple != 0 || s[3] % multiple != 0 {
            return Err(Error::Divisibility { h: s[2], w: s[3], multiple });
        }
        let same3 = Conv2dOpts::same(3);
        let down2 = Conv2dOpts { stride: 2, pad: 1, ..Default::default() };

        let img_half = resize(img, ResizeMode::Down2Avg)?;
        let img_quarter = resize(&img_half, ResizeMode::Down2Avg)?;

        let e1 = self.enc[0].apply(&self.stems[0].apply(img)?)?;
        let x = self.down[0].apply(&e1, down2)?;
        let x = self.enc_fuse[0].apply(&concat(&[&x, &self.stems[1].apply(&img_half)?], 1)?, same3)?;
        let e2 = self.enc[1].apply(&x)?;
        let x = self.down[1].apply(&e2, down2)?;
        let x = self.enc_fuse[1].apply(&concat(&[&x, &self.stems[2].apply(&img_quarter)?], 1)?, same3)?;
        let e3 = self.enc[2].apply(&x)?;

        let dq = self.dec[0].apply(&e3)?;
        let out_quarter = self.heads[2].apply(&dq, same3)?.add(&img_quarter)?;

        let x = self.up[0].apply(&resize(&dq, ResizeMode::Up2Bilinear)?, same3)?;
        let x = self.dec_fuse[0].apply(&concat(&[&x, &e2], 1)?, same3)?;
        let dh = self.dec[1].apply(&x)?;
        let out_half = self.heads[1].apply(&dh, same3)?.add(&img_half)?;

        let x = self.up[1].apply(&resize(&dh, ResizeMode::Up2Bilinear)?, same3)?;
        let x = self.dec_fuse[1].apply(&concat(&[&x, &e1], 1)?, same3)?;
        let df = self.dec[2].apply(&x)?;
        let out_full = self.heads[0].apply(&df, same3)?.add(img)?;

        Ok((out_full, out_half, out_quarter))
    }

    /// Approximate forward cost on a `[1, 3, h, w]` input, in FLOPs (two per
    /// multiply-add). Counts convolution, projection and scan arithmetic;
    /// wavelet butterflies are charged one multiply-add per coefficient per
    /// direction, and resizes, poolings and activations are ignored.
    pub fn flops_estimate(&self, h: usize, w: usize) -> u64 {
        let cfg = &self.cfg;
        let conv = |cout: usize, cin_per_group: usize, k: usize, px: u64| {
            (cout * cin_per_group * k * k) as u64 * px
        };
        let mut macs: u64 = 0;
        for s in 0..3 {
            let width = cfg.base_channels << s;
            let px = ((h >> s) * (w >> s)) as u64;
            if cfg.use_gmwt {
                macs += conv(width, 3, 3, px) + 3 * conv(width, width, 3, px);
                macs += conv(width, 1, cfg.wt_kernel, px);
                for l in 0..cfg.wtconv_levels {
                    let sub_px = px >> (2 * (l + 1));
                    macs += conv(4 * width, 1, cfg.wt_kernel, sub_px);
                    macs += 2 * (4 * width as u64) * sub_px;
                }
            } else {
                macs += conv(width, 3, 3, px);
            }
            // one encoder and one decoder stage live at each scale
            let mut stage = cfg.blocks_per_stage as u64 * 2 * conv(width, width, 3, px);
            if cfg.use_mcam {
                let di = cfg.expand * cfg.d_model;
                let l = width as u64;
                let mut branch = l * (3 * di) as u64; // in/out projections at width 1
                branch += l * (di * cfg.d_conv) as u64;
                if cfg.selective {
                    branch += l * ((di + 2 * cfg.d_state) * di) as u64;
                }
                branch += 4 * l * (di * cfg.d_state) as u64;
                stage += 2 * branch; // avg and max pooled sequences
            }
            if cfg.use_msm {
                stage += 3 * conv(width, 1, 3, px) + conv(width, width, 1, px);
            }
            macs += 2 * stage;
            macs += conv(3, width, 3, px); // head
        }
        for s in 0..2 {
            let (win, wout) = (cfg.base_channels << s, cfg.base_channels << (s + 1));
            let px_coarse = ((h >> (s + 1)) * (w >> (s + 1))) as u64;
            let px_fine = ((h >> s) * (w >> s)) as u64;
            macs += conv(wout, win, 3, px_coarse); // strided down
            macs += conv(wout, 2 * wout, 3, px_coarse); // encoder fuse
            macs += conv(win, wout, 3, px_fine); // conv after up2
            macs += conv(win, 2 * win, 3, px_fine); // decoder fuse
        }
        2 * macs
    }
}
