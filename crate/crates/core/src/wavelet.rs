//! Orthonormal 2-D Haar wavelet transform.
//!
//! Each 2x2 block `[[a, b], [c, d]]` maps to four half-resolution
//! coefficients:
//!
//! ```text
//! ll = (a + b + c + d) / 2      (local average, x sqrt(2) per axis)
//! lh = (a + b - c - d) / 2      (vertical detail: top minus bottom rows)
//! hl = (a - b + c - d) / 2      (horizontal detail: left minus right cols)
//! hh = (a - b - c + d) / 2      (diagonal detail)
//! ```
//!
//! The transform matrix is orthogonal, so the inverse is its transpose and
//! both directions preserve energy exactly; backward passes reuse the same
//! butterflies.

use crate::error::{Error, Result};
use crate::tensor::tape::record;
use crate::tensor::{concat, Tensor};
use rayon::prelude::*;

/// One decomposition level: four `[B, C, H/2, W/2]` coefficient planes.
#[derive(Debug, Clone)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl SubbandSet {
    /// Channel-stacked view `[B, 4C, h, w]`, ordered `[ll | lh | hl | hh]`.
    pub fn stack(&self) -> Result<Tensor> {
        concat(&[&self.ll, &self.lh, &self.hl, &self.hh], 1)
    }

    /// Split a `[B, 4C, h, w]` stack back into the four planes.
    pub fn from_stacked(t: &Tensor) -> Result<SubbandSet> {
        let s = t.shape();
        if s.len() != 4 || s[1] % 4 != 0 {
            return Err(Error::InvalidArg {
                op: "from_stacked",
                msg: format!("expected [B, 4C, h, w], got {s:?}"),
            });
        }
        let c = s[1] / 4;
        Ok(SubbandSet {
            ll: t.narrow(1, 0, c)?,
            lh: t.narrow(1, c, c)?,
            hl: t.narrow(1, 2 * c, c)?,
            hh: t.narrow(1, 3 * c, c)?,
        })
    }
}

/// Analysis butterflies for one plane: `src` is `[h, w]`, the four outputs
/// are `[h/2, w/2]`.
fn analyze_plane(src: &[f64], w: usize, h2: usize, w2: usize, ll: &mut [f64], lh: &mut [f64], hl: &mut [f64], hh: &mut [f64]) {
    for oy in 0..h2 {
        let r0 = &src[(2 * oy) * w..][..w];
        let r1 = &src[(2 * oy + 1) * w..][..w];
        let base = oy * w2;
        for ox in 0..w2 {
            let a = r0[2 * ox];
            let b = r0[2 * ox + 1];
            let c = r1[2 * ox];
            let d = r1[2 * ox + 1];
            ll[base + ox] = 0.5 * (a + b + c + d);
            lh[base + ox] = 0.5 * (a + b - c - d);
            hl[base + ox] = 0.5 * (a - b + c - d);
            hh[base + ox] = 0.5 * (a - b - c + d);
        }
    }
}

/// Synthesis butterflies for one plane (exact inverse of [`analyze_plane`]).
fn synthesize_plane(ll: &[f64], lh: &[f64], hl: &[f64], hh: &[f64], w2: usize, w: usize, dst: &mut [f64]) {
    let h2 = ll.len() / w2;
    for oy in 0..h2 {
        let base = oy * w2;
        for ox in 0..w2 {
            let (l, v, hz, dg) = (ll[base + ox], lh[base + ox], hl[base + ox], hh[base + ox]);
            let a = 0.5 * (l + v + hz + dg);
            let b = 0.5 * (l + v - hz - dg);
            let c = 0.5 * (l - v + hz - dg);
            let d = 0.5 * (l - v - hz + dg);
            dst[(2 * oy) * w + 2 * ox] = a;
            dst[(2 * oy) * w + 2 * ox + 1] = b;
            dst[(2 * oy + 1) * w + 2 * ox] = c;
            dst[(2 * oy + 1) * w + 2 * ox + 1] = d;
        }
    }
}

/// One analysis level producing the channel-stacked form
/// `[B, C, H, W] -> [B, 4C, H/2, W/2]` (subband order `[ll | lh | hl | hh]`).
pub fn dwt2_stacked(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArg { op: "dwt2", msg: format!("expected 4-D input, got {s:?}") });
    }
    let (bsz, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Divisibility { h, w, multiple: 2 });
    }
    let (h2, w2) = (h / 2, w / 2);
    let plane = h2 * w2;
    let xd = x.data_arc();
    let mut out = vec![0.0; bsz * 4 * c * plane];
    {
        let xd = &xd;
        out.par_chunks_mut(4 * c * plane).enumerate().for_each(|(b, chunk)| {
            let (llb, rest) = chunk.split_at_mut(c * plane);
            let (lhb, rest) = rest.split_at_mut(c * plane);
            let (hlb, hhb) = rest.split_at_mut(c * plane);
            for ci in 0..c {
                let src = &xd[((b * c) + ci) * h * w..][..h * w];
                analyze_plane(
                    src,
                    w,
                    h2,
                    w2,
                    &mut llb[ci * plane..][..plane],
                    &mut lhb[ci * plane..][..plane],
                    &mut hlb[ci * plane..][..plane],
                    &mut hhb[ci * plane..][..plane],
                );
            }
        });
    }
    Ok(record(&[x], vec![bsz, 4 * c, h2, w2], out, move |g, _| {
        let mut gx = vec![0.0; bsz * c * h * w];
        gx.par_chunks_mut(c * h * w).enumerate().for_each(|(b, chunk)| {
            let gb = &g[b * 4 * c * plane..][..4 * c * plane];
            for ci in 0..c {
                synthesize_plane(
                    &gb[ci * plane..][..plane],
                    &gb[(c + ci) * plane..][..plane],
                    &gb[(2 * c + ci) * plane..][..plane],
                    &gb[(3 * c + ci) * plane..][..plane],
                    w2,
                    w,
                    &mut chunk[ci * h * w..][..h * w],
                );
            }
        });
        vec![Some(gx)]
    }))
}

/// Inverse of [`dwt2_stacked`]: `[B, 4C, h, w] -> [B, C, 2h, 2w]`.
pub fn idwt2_stacked(y: &Tensor) -> Result<Tensor> {
    let s = y.shape();
    if s.len() != 4 || s[1] % 4 != 0 {
        return Err(Error::InvalidArg { op: "idwt2", msg: format!("expected [B, 4C, h, w], got {s:?}") });
    }
    let (bsz, c4, h2, w2) = (s[0], s[1], s[2], s[3]);
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let plane = h2 * w2;
    let yd = y.data_arc();
    let mut out = vec![0.0; bsz * c * h * w];
    {
        let yd = &yd;
        out.par_chunks_mut(c * h * w).enumerate().for_each(|(b, chunk)| {
            let gb = &yd[b * 4 * c * plane..][..4 * c * plane];
            for ci in 0..c {
                synthesize_plane(
                    &gb[ci * plane..][..plane],
                    &gb[(c + ci) * plane..][..plane],
                    &gb[(2 * c + ci) * plane..][..plane],
                    &gb[(3 * c + ci) * plane..][..plane],
                    w2,
                    w,
                    &mut chunk[ci * h * w..][..h * w],
                );
            }
        });
    }
    Ok(record(&[y], vec![bsz, c, h, w], out, move |g, _| {
        let mut gy = vec![0.0; bsz * 4 * c * plane];
        gy.par_chunks_mut(4 * c * plane).enumerate().for_each(|(b, chunk)| {
            let (llb, rest) = chunk.split_at_mut(c * plane);
            let (lhb, rest) = rest.split_at_mut(c * plane);
            let (hlb, hhb) = rest.split_at_mut(c * plane);
            for ci in 0..c {
                analyze_plane(
                    &g[((b * c) + ci) * h * w..][..h * w],
                    w,
                    h2,
                    w2,
                    &mut llb[ci * plane..][..plane],
                    &mut lhb[ci * plane..][..plane],
                    &mut hlb[ci * plane..][..plane],
                    &mut hhb[ci * plane..][..plane],
                );
            }
        });
        vec![Some(gy)]
    }))
}

/// One analysis level as named planes.
pub fn dwt2(x: &Tensor) -> Result<SubbandSet> {
    SubbandSet::from_stacked(&dwt2_stacked(x)?)
}

/// Exact inverse of [`dwt2`].
pub fn idwt2(s: &SubbandSet) -> Result<Tensor> {
    idwt2_stacked(&s.stack()?)
}

/// Recursive decomposition of the `ll` plane: entry `i` holds the detail
/// planes at scale `1/2^(i+1)`. Requires H and W divisible by `2^levels`.
pub fn dwt2_multi(x: &Tensor, levels: usize) -> Result<Vec<SubbandSet>> {
    if levels == 0 {
        return Err(Error::InvalidArg { op: "dwt2_multi", msg: "levels must be >= 1".into() });
    }
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArg { op: "dwt2_multi", msg: format!("expected 4-D input, got {s:?}") });
    }
    let m = 1usize << levels;
    if s[2] % m != 0 || s[3] % m != 0 {
        return Err(Error::Divisibility { h: s[2], w: s[3], multiple: m });
    }
    let mut out = Vec::with_capacity(levels);
    let mut cur = x.clone();
    for _ in 0..levels {
        let set = dwt2(&cur)?;
        cur = set.ll.clone();
        out.push(set);
    }
    Ok(out)
}

/// Rebuild the full-resolution signal from [`dwt2_multi`] output.
pub fn idwt2_multi(pyramid: &[SubbandSet]) -> Result<Tensor> {
    let Some(deepest) = pyramid.last() else {
        return Err(Error::InvalidArg { op: "idwt2_multi", msg: "empty pyramid".into() });
    };
    let mut rec = deepest.ll.clone();
    for set in pyramid.iter().rev() {
        rec = idwt2(&SubbandSet { ll: rec, lh: set.lh.clone(), hl: set.hl.clone(), hh: set.hh.clone() })?;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::Tape;
    use crate::testutil::assert_slices_close;

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
    fn constant_block_goes_to_ll() {
        let x = Tensor::full(&[1, 1, 2, 2], 1.0);
        let s = dwt2(&x).unwrap();
        assert_eq!(s.ll.data(), &[2.0]);
        assert_eq!(s.lh.data(), &[0.0]);
        assert_eq!(s.hl.data(), &[0.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn top_row_block_splits_into_ll_and_lh() {
        let x = Tensor::from_vec(vec![1.0, 1.0, 0.0, 0.0], &[1, 1, 2, 2]);
        let s = dwt2(&x).unwrap();
        assert_eq!(s.ll.data(), &[1.0]);
        assert_eq!(s.lh.data(), &[1.0]);
        assert_eq!(s.hl.data(), &[0.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn left_column_block_activates_hl() {
        let x = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0], &[1, 1, 2, 2]);
        let s = dwt2(&x).unwrap();
        assert_eq!(s.ll.data(), &[1.0]);
        assert_eq!(s.lh.data(), &[0.0]);
        assert_eq!(s.hl.data(), &[1.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn perfect_reconstruction() {
        let x = Tensor::from_vec(pseudo(2 * 3 * 8 * 8, 5), &[2, 3, 8, 8]);
        let rec = idwt2(&dwt2(&x).unwrap()).unwrap();
        assert_slices_close(rec.data(), x.data(), 1e-12);
    }

    #[test]
    fn energy_is_preserved() {
        let x = Tensor::from_vec(pseudo(4 * 4 * 16, 11), &[1, 4, 8, 8]);
        let s = dwt2(&x).unwrap();
        let e_in: f64 = x.data().iter().map(|v| v * v).sum();
        let e_out: f64 = [&s.ll, &s.lh, &s.hl, &s.hh]
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum();
        assert!((e_in - e_out).abs() < 1e-10 * e_in);
    }

    #[test]
    fn analysis_backward_is_synthesis() {
        // loss = <dwt2(x), y>  =>  dloss/dx = idwt2(y)
        let x0 = Tensor::from_vec(pseudo(1 * 1 * 4 * 4, 2), &[1, 1, 4, 4]);
        let y = Tensor::from_vec(pseudo(1 * 4 * 2 * 2, 3), &[1, 4, 2, 2]);
        let tape = Tape::new();
        let x = tape.watch(&x0);
        let loss = dwt2_stacked(&x).unwrap().mul(&y).unwrap().sum_all();
        let g = tape.backward(&loss).unwrap();
        drop(tape);
        let expect = idwt2_stacked(&y).unwrap();
        assert_slices_close(g.get(&x).unwrap().data(), expect.data(), 1e-12);
    }

    #[test]
    fn multi_level_shapes_and_roundtrip() {
        let x = Tensor::from_vec(pseudo(1 * 2 * 16 * 16, 9), &[1, 2, 16, 16]);
        let pyr = dwt2_multi(&x, 3).unwrap();
        assert_eq!(pyr.len(), 3);
        assert_eq!(pyr[0].lh.shape(), &[1, 2, 8, 8]);
        assert_eq!(pyr[1].lh.shape(), &[1, 2, 4, 4]);
        assert_eq!(pyr[2].lh.shape(), &[1, 2, 2, 2]);
        let rec = idwt2_multi(&pyr).unwrap();
        assert_slices_close(rec.data(), x.data(), 1e-11);
    }

    #[test]
    fn odd_sizes_are_rejected() {
        assert!(matches!(dwt2(&Tensor::zeros(&[1, 1, 3, 4])), Err(Error::Divisibility { .. })));
        assert!(matches!(
            dwt2_multi(&Tensor::zeros(&[1, 1, 4, 4]), 3),
            Err(Error::Divisibility { multiple: 8, .. })
        ));
    }

    #[test]
    fn stack_roundtrip_keeps_subband_order() {
        let x = Tensor::from_vec(pseudo(1 * 2 * 4 * 4, 13), &[1, 2, 4, 4]);
        let s = dwt2(&x).unwrap();
        let stacked = s.stack().unwrap();
        let s2 = SubbandSet::from_stacked(&stacked).unwrap();
        assert_eq!(s.ll.data(), s2.ll.data());
        assert_eq!(s.hh.data(), s2.hh.data());
    }
}
