//! Composite training objective and evaluation metrics.
//!
//! The loss combines, over the network's three output scales:
//! - a per-element-normalized spatial L1 term,
//! - an L1 term on the concatenated real/imaginary DFT spectra,
//! - a structural-dissimilarity term (`1 - SSIM`) on the four Haar subbands
//!   of each scale,
//!
//! weighted `spatial + theta * frequency + lambda * wavelet`.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, fft2, Conv2dOpts, Tensor};
use crate::wavelet::dwt2;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub theta: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { theta: 0.1, lambda: 0.05 }
    }
}

/// Scalar breakdown of one loss evaluation ([`mte_loss`]).
#[derive(Debug, Clone)]
pub struct LossReport {
    pub spatial: f64,
    pub frequency: f64,
    pub wavelet: f64,
    pub total: f64,
    pub spatial_scales: Vec<f64>,
    pub frequency_scales: Vec<f64>,
    pub wavelet_scales: Vec<f64>,
}

fn check_pairs(preds: &[Tensor], targets: &[Tensor], op: &'static str) -> Result<()> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::InvalidArg { op, msg: format!("{} preds vs {} targets", preds.len(), targets.len()) });
    }
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != t.shape() {
            return Err(Error::ShapeMismatch { op, lhs: p.shape().to_vec(), rhs: t.shape().to_vec() });
        }
    }
    Ok(())
}

/// Mean absolute error per scale, summed over scales.
pub fn spatial_loss(preds: &[Tensor], targets: &[Tensor]) -> Result<(Tensor, Vec<f64>)> {
    check_pairs(preds, targets, "spatial_loss")?;
    let mut per_scale = Vec::with_capacity(preds.len());
    let mut total: Option<Tensor> = None;
    for (p, t) in preds.iter().zip(targets) {
        let term = p.sub(t)?.abs().sum_all().scale(1.0 / p.numel() as f64);
        per_scale.push(term.item());
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok((total.unwrap(), per_scale))
}

/// L1 distance between the stacked (re, im) spectra, normalized by the
/// element count of the concatenation (twice the image size) per scale.
pub fn frequency_loss(preds: &[Tensor], targets: &[Tensor]) -> Result<(Tensor, Vec<f64>)> {
    check_pairs(preds, targets, "frequency_loss")?;
    let mut per_scale = Vec::with_capacity(preds.len());
    let mut total: Option<Tensor> = None;
    for (p, t) in preds.iter().zip(targets) {
        let (pre, pim) = fft2(p)?;
        let (tre, tim) = fft2(t)?;
        let l1 = pre.sub(&tre)?.abs().sum_all().add(&pim.sub(&tim)?.abs().sum_all())?;
        let term = l1.scale(1.0 / (2 * p.numel()) as f64);
        per_scale.push(term.item());
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok((total.unwrap(), per_scale))
}

/// Normalized 11x11 Gaussian window as a depthwise conv kernel.
pub fn gaussian_window(channels: usize) -> Tensor {
    let k = SSIM_WINDOW;
    let half = (k / 2) as f64;
    let mut axis = [0.0; SSIM_WINDOW];
    for (i, v) in axis.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let mut plane = vec![0.0; k * k];
    let mut sum = 0.0;
    for y in 0..k {
        for x in 0..k {
            plane[y * k + x] = axis[y] * axis[x];
            sum += plane[y * k + x];
        }
    }
    for v in &mut plane {
        *v /= sum;
    }
    let mut data = Vec::with_capacity(channels * k * k);
    for _ in 0..channels {
        data.extend_from_slice(&plane);
    }
    Tensor::from_vec(data, &[channels, 1, k, k])
}

/// Mean structural similarity over all valid window positions (no padding),
/// dynamic range 1.0. Differentiable in both arguments.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s != y.shape() {
        return Err(Error::ShapeMismatch { op: "ssim", lhs: s.to_vec(), rhs: y.shape().to_vec() });
    }
    if s.len() != 4 {
        return Err(Error::InvalidArg { op: "ssim", msg: format!("expected 4-D input, got {s:?}") });
    }
    if s[2] < SSIM_WINDOW || s[3] < SSIM_WINDOW {
        return Err(Error::InvalidArg {
            op: "ssim",
            msg: format!("image {}x{} smaller than the {}x{} window", s[2], s[3], SSIM_WINDOW, SSIM_WINDOW),
        });
    }
    let c = s[1];
    let win = gaussian_window(c);
    let opts = Conv2dOpts { groups: c, ..Default::default() };
    let blur = |t: &Tensor| conv2d(t, &win, None, opts);

    let c1 = SSIM_K1 * SSIM_K1; // dynamic range 1.0
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_x = blur(x)?;
    let mu_y = blur(y)?;
    let sig_x = blur(&x.square())?.sub(&mu_x.square())?;
    let sig_y = blur(&y.square())?.sub(&mu_y.square())?;
    let sig_xy = blur(&x.mul(y)?)?.sub(&mu_x.mul(&mu_y)?)?;

    let lum = mu_x.mul(&mu_y)?.scale(2.0).add_scalar(c1);
    let con = sig_xy.scale(2.0).add_scalar(c2);
    let lum_d = mu_x.square().add(&mu_y.square())?.add_scalar(c1);
    let con_d = sig_x.add(&sig_y)?.add_scalar(c2);
    let map = lum.mul(&con)?.div(&lum_d.mul(&con_d)?)?;
    Ok(map.mean_all())
}

/// Structural dissimilarity summed over the four Haar subbands of every
/// scale. Subbands smaller than the SSIM window contribute nothing (deep
/// scales of small patches have no valid window positions).
///
/// `raw_ssim` switches the per-subband term from `1 - SSIM` to raw `SSIM`.
pub fn wavelet_loss(preds: &[Tensor], targets: &[Tensor], raw_ssim: bool) -> Result<(Tensor, Vec<f64>)> {
    check_pairs(preds, targets, "wavelet_loss")?;
    let mut per_scale = Vec::with_capacity(preds.len());
    let mut total: Option<Tensor> = None;
    for (p, t) in preds.iter().zip(targets) {
        let sp = dwt2(p)?;
        let st = dwt2(t)?;
        let mut scale_term: Option<Tensor> = None;
        for (pb, tb) in [(&sp.ll, &st.ll), (&sp.lh, &st.lh), (&sp.hl, &st.hl), (&sp.hh, &st.hh)] {
            let shape = pb.shape();
            if shape[2] < SSIM_WINDOW || shape[3] < SSIM_WINDOW {
                continue;
            }
            let sim = ssim(pb, tb)?;
            let term = if raw_ssim { sim } else { sim.scale(-1.0).add_scalar(1.0) };
            scale_term = Some(match scale_term {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        let term = scale_term.unwrap_or_else(|| Tensor::scalar(0.0));
        per_scale.push(term.item());
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok((total.unwrap(), per_scale))
}

/// Full objective; returns the differentiable total and a scalar report.
pub fn mte_loss(
    preds: &[Tensor],
    targets: &[Tensor],
    w: LossWeights,
    raw_wavelet_ssim: bool,
) -> Result<(Tensor, LossReport)> {
    let (sp, spatial_scales) = spatial_loss(preds, targets)?;
    let (fr, frequency_scales) = frequency_loss(preds, targets)?;
    let (wv, wavelet_scales) = wavelet_loss(preds, targets, raw_wavelet_ssim)?;
    let total = sp.add(&fr.scale(w.theta))?.add(&wv.scale(w.lambda))?;
    let report = LossReport {
        spatial: sp.item(),
        frequency: fr.item(),
        wavelet: wv.item(),
        total: total.item(),
        spatial_scales,
        frequency_scales,
        wavelet_scales,
    };
    Ok((total, report))
}

/// Peak signal-to-noise ratio in dB; +inf when the images are identical.
pub fn psnr(x: &Tensor, y: &Tensor, peak: f64) -> f64 {
    assert_eq!(x.shape(), y.shape(), "psnr shape mismatch");
    let mse: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.numel() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / mse).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::Tape;
    use crate::testutil::{assert_close, gradcheck_subset, sample_indices};
    use std::f64::consts::PI;

    fn pseudo(len: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 33) as f64 / (1u64 << 31) as f64 * 0.9 + 0.05
            })
            .collect()
    }

    fn scales(seed: u64, sizes: &[usize]) -> Vec<Tensor> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &hw)| Tensor::from_vec(pseudo(3 * hw * hw, seed + i as u64), &[1, 3, hw, hw]))
            .collect()
    }

    #[test]
    fn spatial_zero_on_match_and_unit_on_unit_residual() {
        let preds = vec![Tensor::full(&[1, 3, 4, 4], 1.0), Tensor::full(&[1, 3, 2, 2], 1.0), Tensor::full(&[2, 1, 2, 2], 1.0)];
        let targets: Vec<Tensor> = preds.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let (same, _) = spatial_loss(&preds, &preds).unwrap();
        assert_eq!(same.item(), 0.0);
        let (l, per) = spatial_loss(&preds, &targets).unwrap();
        assert_close(l.item(), 3.0, 1e-12);
        assert_eq!(per.len(), 3);
        assert!(per.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn spatial_grad_is_sign_over_count() {
        let tape = Tape::new();
        let p = tape.watch(&Tensor::from_vec(vec![0.7, 0.2, 0.5, 0.5], &[1, 1, 2, 2]));
        let t = Tensor::from_vec(vec![0.1, 0.9, 0.5, 0.4], &[1, 1, 2, 2]);
        let (l, _) = spatial_loss(&[p.clone()], &[t]).unwrap();
        let g = tape.backward(&l).unwrap();
        // residuals: +, -, 0, + -> signs scaled by 1/4
        assert_eq!(g.get(&p).unwrap().data(), &[0.25, -0.25, 0.0, 0.25]);
    }

    #[test]
    fn frequency_zero_on_match_and_dc_for_constant_residual() {
        let preds = scales(1, &[16, 8, 4]);
        let (same, _) = frequency_loss(&preds, &preds).unwrap();
        assert_eq!(same.item(), 0.0);
        let c = 0.4;
        let shifted: Vec<Tensor> = preds.iter().map(|p| p.add_scalar(c)).collect();
        let (l, per) = frequency_loss(&shifted, &preds).unwrap();
        // constant residual only reaches the DC bin of each channel:
        // per scale = (C * c * H * W) / (2 * C * H * W) = c / 2
        for v in &per {
            assert_close(*v, c / 2.0, 1e-9);
        }
        assert_close(l.item(), 3.0 * c / 2.0, 1e-9);
    }

    #[test]
    fn frequency_matches_naive_dft_oracle() {
        let (h, w) = (8, 8);
        let p = Tensor::from_vec(pseudo(h * w, 3), &[1, 1, h, w]);
        let t = Tensor::from_vec(pseudo(h * w, 4), &[1, 1, h, w]);
        let (l, _) = frequency_loss(&[p.clone()], &[t.clone()]).unwrap();
        // direct O(N^2) evaluation
        let mut acc = 0.0;
        for u in 0..h {
            for v in 0..w {
                let (mut dre, mut dim) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        let diff = p.data()[y * w + x] - t.data()[y * w + x];
                        dre += diff * ang.cos();
                        dim += diff * ang.sin();
                    }
                }
                acc += dre.abs() + dim.abs();
            }
        }
        assert_close(l.item(), acc / (2 * h * w) as f64, 1e-9);
    }

    #[test]
    fn frequency_invariant_to_half_period_shift() {
        // shifting both images by (H/2, W/2) flips bin signs only
        let (h, w) = (8, 8);
        let pd = pseudo(h * w, 5);
        let td = pseudo(h * w, 6);
        let roll = |d: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    out[((y + h / 2) % h) * w + (x + w / 2) % w] = d[y * w + x];
                }
            }
            out
        };
        let (l1, _) = frequency_loss(
            &[Tensor::from_vec(pd.clone(), &[1, 1, h, w])],
            &[Tensor::from_vec(td.clone(), &[1, 1, h, w])],
        )
        .unwrap();
        let (l2, _) = frequency_loss(
            &[Tensor::from_vec(roll(&pd), &[1, 1, h, w])],
            &[Tensor::from_vec(roll(&td), &[1, 1, h, w])],
        )
        .unwrap();
        assert_close(l1.item(), l2.item(), 1e-9);
    }

    #[test]
    fn frequency_requires_pow2() {
        let p = Tensor::zeros(&[1, 1, 6, 8]);
        assert!(frequency_loss(&[p.clone()], &[p]).is_err());
    }

    /// Direct sliding-window SSIM evaluation over raw slices.
    fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
        let k = SSIM_WINDOW;
        let win = gaussian_window(1);
        let wd = win.data();
        let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut acc = 0.0;
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = wd[dy * k + dx];
                        let xv = x[(oy + dy) * w + ox + dx];
                        let yv = y[(oy + dy) * w + ox + dx];
                        mx += wv * xv;
                        my += wv * yv;
                        mxx += wv * xv * xv;
                        myy += wv * yv * yv;
                        mxy += wv * xv * yv;
                    }
                }
                let (sx, sy, sxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
                acc += (2.0 * mx * my + c1) * (2.0 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
            }
        }
        acc / (oh * ow) as f64
    }

    #[test]
    fn ssim_self_is_one_and_symmetric() {
        let x = Tensor::from_vec(pseudo(3 * 12 * 12, 7), &[1, 3, 12, 12]);
        let y = Tensor::from_vec(pseudo(3 * 12 * 12, 8), &[1, 3, 12, 12]);
        assert_close(ssim(&x, &x).unwrap().item(), 1.0, 1e-9);
        assert_close(ssim(&x, &y).unwrap().item(), ssim(&y, &x).unwrap().item(), 1e-12);
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        let (h, w) = (14, 13);
        let xd = pseudo(h * w, 9);
        let yd = pseudo(h * w, 10);
        let got = ssim(
            &Tensor::from_vec(xd.clone(), &[1, 1, h, w]),
            &Tensor::from_vec(yd.clone(), &[1, 1, h, w]),
        )
        .unwrap()
        .item();
        assert_close(got, ssim_oracle(&xd, &yd, h, w), 1e-9);
    }

    #[test]
    fn ssim_checkerboard_inversion_is_strongly_negative() {
        let (h, w) = (16, 16);
        let xd: Vec<f64> = (0..h * w).map(|i| ((i / w + i % w) % 2) as f64).collect();
        let yd: Vec<f64> = xd.iter().map(|v| 1.0 - v).collect();
        let got = ssim(
            &Tensor::from_vec(xd.clone(), &[1, 1, h, w]),
            &Tensor::from_vec(yd.clone(), &[1, 1, h, w]),
        )
        .unwrap()
        .item();
        assert_close(got, ssim_oracle(&xd, &yd, h, w), 1e-9);
        assert!(got < -0.5, "inverted checkerboard should be strongly dissimilar, got {got}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = Tensor::zeros(&[1, 1, 10, 16]);
        assert!(ssim(&x, &x).is_err());
    }

    #[test]
    fn wavelet_zero_on_match_and_bounded() {
        let preds = scales(11, &[32, 32, 32]);
        let (same, _) = wavelet_loss(&preds, &preds, false).unwrap();
        assert!(same.item().abs() < 1e-9);
        let others = scales(40, &[32, 32, 32]);
        let (l, per) = wavelet_loss(&preds, &others, false).unwrap();
        assert!(l.item() > 0.0 && l.item() <= 24.0);
        assert_eq!(per.len(), 3);
    }

    #[test]
    fn wavelet_skips_subbands_below_window() {
        // 16x16 scale -> 8x8 subbands -> no valid SSIM windows -> zero term
        let p = scales(13, &[16])[0].clone();
        let t = scales(14, &[16])[0].clone();
        let (l, _) = wavelet_loss(&[p], &[t], false).unwrap();
        assert_eq!(l.item(), 0.0);
    }

    #[test]
    fn wavelet_grad_matches_finite_differences() {
        let p0 = scales(15, &[32])[0].clone();
        let t = scales(16, &[32])[0].clone();
        let tt = vec![t];
        let worst = gradcheck_subset(
            &|p: &Tensor| wavelet_loss(&[p.clone()], &tt, false).unwrap().0,
            &p0,
            &sample_indices(p0.numel(), 12),
            1e-5,
            1e-6,
        );
        assert!(worst < 1e-3, "wavelet grad rel err {worst}");
    }

    #[test]
    fn raw_ssim_flag_flips_the_term() {
        let p = scales(17, &[32])[0].clone();
        let t = scales(18, &[32])[0].clone();
        let (dissim, _) = wavelet_loss(&[p.clone()], &[t.clone()], false).unwrap();
        let (raw, _) = wavelet_loss(&[p], &[t], true).unwrap();
        assert_close(dissim.item() + raw.item(), 4.0, 1e-9); // 4 subbands x (1-s) + s
    }

    #[test]
    fn mte_combines_terms_bitwise() {
        let preds = scales(19, &[32, 16, 8]);
        let targets = scales(25, &[32, 16, 8]);
        let w = LossWeights::default();
        assert_eq!(w.theta, 0.1);
        assert_eq!(w.lambda, 0.05);
        let (total, rep) = mte_loss(&preds, &targets, w, false).unwrap();
        assert_eq!(total.item(), rep.total);
        assert_eq!(rep.total, rep.spatial + w.theta * rep.frequency + w.lambda * rep.wavelet);
        let (zero, rep0) = mte_loss(&preds, &preds, w, false).unwrap();
        assert!(zero.item().abs() < 1e-9);
        assert!(rep0.spatial == 0.0 && rep0.frequency == 0.0);
    }

    #[test]
    fn mte_grad_matches_finite_differences_on_one_scale() {
        let p0 = scales(21, &[32])[0].clone();
        let t = scales(22, &[32])[0].clone();
        let tt = vec![t];
        let worst = gradcheck_subset(
            &|p: &Tensor| mte_loss(&[p.clone()], &tt, LossWeights::default(), false).unwrap().0,
            &p0,
            &sample_indices(p0.numel(), 10),
            1e-5,
            1e-6,
        );
        assert!(worst < 1e-3, "mte grad rel err {worst}");
    }

    #[test]
    fn psnr_reference_points() {
        let x = Tensor::from_vec(pseudo(48, 23), &[1, 3, 4, 4]);
        assert_eq!(psnr(&x, &x, 1.0), f64::INFINITY);
        let y = x.add_scalar(0.5);
        assert_close(psnr(&x, &y, 1.0), 6.0206, 1e-3);
        let y2 = x.add_scalar(0.25);
        assert_close(psnr(&x, &y2, 1.0) - psnr(&x, &y, 1.0), 10.0 * 4f64.log10(), 1e-9);
    }
}
