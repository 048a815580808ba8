//! 2-D discrete Fourier transform over the spatial axes, used by the
//! frequency-domain loss term.
//!
//! Radix-2 iterative transform; H and W must be powers of two. The transform
//! is unnormalized: `X[u,v] = sum_{y,x} x[y,x] * exp(-2*pi*i*(u*y/H + v*x/W))`.
//! The backward pass applies the adjoint (positive-sign transform, real part).

use super::tape::record;
use super::Tensor;
use crate::error::{Error, Result};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn is_pow2(n: usize) -> bool {
    n >= 1 && n & (n - 1) == 0
}

/// In-place radix-2 FFT. `sign` is the sign of the exponent (-1 forward).
fn fft_1d(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let (wsin, wcos) = ang.sin_cos();
        let mut start = 0;
        while start < n {
            let (mut wr, mut wi) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let nwr = wr * wcos - wi * wsin;
                wi = wr * wsin + wi * wcos;
                wr = nwr;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// 2-D transform of one H*W plane, rows then columns.
fn fft2_plane(re: &mut [f64], im: &mut [f64], h: usize, w: usize, sign: f64) {
    for y in 0..h {
        fft_1d(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w], sign);
    }
    let mut cre = vec![0.0; h];
    let mut cim = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            cre[y] = re[y * w + x];
            cim[y] = im[y * w + x];
        }
        fft_1d(&mut cre, &mut cim, sign);
        for y in 0..h {
            re[y * w + x] = cre[y];
            im[y * w + x] = cim[y];
        }
    }
}

/// Apply the positive-sign transform to the complex plane stack `(re, im)`
/// and keep the real part: the adjoint of `fft2` as a map on real inputs.
fn adjoint_real(gre: Option<&[f64]>, gim: Option<&[f64]>, planes: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; planes * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(p, chunk)| {
        let mut re = match gre {
            Some(g) => g[p * hw..(p + 1) * hw].to_vec(),
            None => vec![0.0; hw],
        };
        let mut im = match gim {
            Some(g) => g[p * hw..(p + 1) * hw].to_vec(),
            None => vec![0.0; hw],
        };
        fft2_plane(&mut re, &mut im, h, w, 1.0);
        chunk.copy_from_slice(&re);
    });
    out
}

/// Real-to-complex 2-D DFT of each `[H, W]` plane. Returns `(re, im)`, both
/// shaped like `x`.
pub fn fft2(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArg { op: "fft2".into(), msg: format!("expected 4-D input, got {s:?}") });
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if !is_pow2(h) || !is_pow2(w) {
        return Err(Error::InvalidArg { op: "fft2".into(), msg: format!("H and W must be powers of two, got {h}x{w}") });
    }
    let planes = b * c;
    let hw = h * w;
    let xd = x.data_arc();
    let mut re = vec![0.0; planes * hw];
    let mut im = vec![0.0; planes * hw];
    {
        let xd = &xd;
        re.par_chunks_mut(hw).zip(im.par_chunks_mut(hw)).enumerate().for_each(|(p, (rc, ic))| {
            rc.copy_from_slice(&xd[p * hw..(p + 1) * hw]);
            fft2_plane(rc, ic, h, w, -1.0);
        });
    }
    let im_arc = Arc::new(im);
    let re_t = record(&[x], s.to_vec(), re, move |g, _| {
        vec![Some(adjoint_real(Some(g), None, planes, h, w))]
    });
    let im_vec = Arc::try_unwrap(im_arc).unwrap_or_else(|a| a.as_ref().clone());
    let im_t = record(&[x], s.to_vec(), im_vec, move |g, _| {
        vec![Some(adjoint_real(None, Some(g), planes, h, w))]
    });
    Ok((re_t, im_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::Tape;
    use crate::testutil::{assert_slices_close, gradcheck_subset, sample_indices};

    /// O(n^2)-per-axis reference transform.
    fn naive_dft2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * PI * (u * y) as f64 / h as f64
                            + -2.0 * PI * (v * xx) as f64 / w as f64;
                        sr += x[y * w + xx] * ang.cos();
                        si += x[y * w + xx] * ang.sin();
                    }
                }
                re[u * w + v] = sr;
                im[u * w + v] = si;
            }
        }
        (re, im)
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut d = vec![0.0; 16];
        d[0] = 1.0;
        let x = Tensor::from_vec(d, &[1, 1, 4, 4]);
        let (re, im) = fft2(&x).unwrap();
        assert!(re.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(im.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_concentrates_at_dc() {
        let x = Tensor::full(&[1, 1, 4, 8], 0.5);
        let (re, im) = fft2(&x).unwrap();
        assert!((re.data()[0] - 0.5 * 32.0).abs() < 1e-12);
        assert!(re.data()[1..].iter().all(|&v| v.abs() < 1e-9));
        assert!(im.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn matches_naive_dft_on_random_planes() {
        let (h, w) = (8, 16);
        let data = pseudo(2 * h * w, 7);
        let x = Tensor::from_vec(data.clone(), &[1, 2, h, w]);
        let (re, im) = fft2(&x).unwrap();
        for p in 0..2 {
            let (nre, nim) = naive_dft2(&data[p * h * w..(p + 1) * h * w], h, w);
            assert_slices_close(&re.data()[p * h * w..(p + 1) * h * w], &nre, 1e-9);
            assert_slices_close(&im.data()[p * h * w..(p + 1) * h * w], &nim, 1e-9);
        }
    }

    #[test]
    fn parseval_energy_identity() {
        let (h, w) = (16, 8);
        let data = pseudo(h * w, 21);
        let x = Tensor::from_vec(data.clone(), &[1, 1, h, w]);
        let (re, im) = fft2(&x).unwrap();
        let spatial: f64 = data.iter().map(|v| v * v).sum();
        let spectral: f64 = re.data().iter().zip(im.data()).map(|(r, i)| r * r + i * i).sum();
        assert!((spatial - spectral / (h * w) as f64).abs() < 1e-9 * spatial.max(1.0));
    }

    #[test]
    fn rejects_non_pow2() {
        let x = Tensor::zeros(&[1, 1, 6, 8]);
        assert!(fft2(&x).is_err());
    }

    #[test]
    fn grads_match_finite_differences() {
        let x0 = Tensor::from_vec(pseudo(2 * 4 * 8, 3), &[1, 2, 4, 8]);
        // loss touching both re and im nonlinearly
        let worst = gradcheck_subset(
            &|t: &Tensor| {
                let (re, im) = fft2(t).unwrap();
                let a = re.mul(&re).unwrap().sum_all();
                let b = im.abs().sum_all();
                a.add(&b).unwrap()
            },
            &x0,
            &sample_indices(x0.numel(), 20),
            1e-5,
            1e-6,
        );
        assert!(worst < 1e-6, "rel err {worst}");
    }

    #[test]
    fn backward_replays_bitwise() {
        let x0 = Tensor::from_vec(pseudo(64, 9), &[1, 1, 8, 8]);
        let tape = Tape::new();
        let x = tape.watch(&x0);
        let (re, im) = fft2(&x).unwrap();
        let loss = re.square().sum_all().add(&im.square().sum_all()).unwrap();
        let g1 = tape.backward(&loss).unwrap();
        let g2 = tape.backward(&loss).unwrap();
        assert_eq!(g1.get(&x).unwrap().data(), g2.get(&x).unwrap().data());
    }
}
