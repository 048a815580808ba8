//! Elementwise arithmetic, activations, reductions, slicing and matmul-style
//! ops on [`Tensor`], each recording its own backward rule.

use super::tape::record;
use super::Tensor;
use crate::error::{Error, Result};

/// How the right operand of a binary op lines up with the left.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Align {
    /// Identical shapes.
    Same,
    /// Right side has one element.
    Scalar,
    /// Right side matches the leading dims and has trailing dims of 1;
    /// each of its elements covers `block` consecutive left elements.
    Trailing { block: usize },
}

fn align(a: &[usize], b: &[usize], n_a: usize, n_b: usize, op: &'static str) -> Result<Align> {
    if a == b {
        return Ok(Align::Same);
    }
    if n_b == 1 {
        return Ok(Align::Scalar);
    }
    if a.len() == b.len() {
        // find split: leading dims equal, all remaining b-dims 1
        let mut p = a.len();
        for i in 0..a.len() {
            if a[i] != b[i] {
                p = i;
                break;
            }
        }
        if b[p..].iter().all(|&d| d == 1) && p < a.len() {
            let block: usize = a[p..].iter().product();
            debug_assert_eq!(n_b * block, n_a);
            return Ok(Align::Trailing { block });
        }
    }
    Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() })
}

/// Shared skeleton for broadcasting binary ops. `f` is the forward map,
/// `dfa`/`dfb` are ∂out/∂a and ∂out/∂b as functions of the operand values.
fn binary(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: fn(f64, f64) -> f64,
    dfa: fn(f64, f64) -> f64,
    dfb: fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let al = align(a.shape(), b.shape(), a.numel(), b.numel(), op)?;
    let (ad, bd) = (a.data_arc(), b.data_arc());
    let n = ad.len();
    let mut out = Vec::with_capacity(n);
    match al {
        Align::Same => out.extend(ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y))),
        Align::Scalar => {
            let y = bd[0];
            out.extend(ad.iter().map(|&x| f(x, y)));
        }
        Align::Trailing { block } => {
            for (i, &x) in ad.iter().enumerate() {
                out.push(f(x, bd[i / block]));
            }
        }
    }
    let shape = a.shape().to_vec();
    let (na, nb) = (a.numel(), b.numel());
    record(&[a, b], shape, out, move |g, needs| {
        let ga = needs[0].then(|| match al {
            Align::Same => g.iter().zip(ad.iter().zip(bd.iter())).map(|(&gi, (&x, &y))| gi * dfa(x, y)).collect(),
            Align::Scalar => g.iter().zip(ad.iter()).map(|(&gi, &x)| gi * dfa(x, bd[0])).collect(),
            Align::Trailing { block } => {
                g.iter().zip(ad.iter()).enumerate().map(|(i, (&gi, &x))| gi * dfa(x, bd[i / block])).collect()
            }
        });
        let gb = needs[1].then(|| match al {
            Align::Same => g.iter().zip(ad.iter().zip(bd.iter())).map(|(&gi, (&x, &y))| gi * dfb(x, y)).collect(),
            Align::Scalar => {
                let mut s = 0.0;
                for (i, &gi) in g.iter().enumerate() {
                    s += gi * dfb(ad[i], bd[0]);
                }
                vec![s]
            }
            Align::Trailing { block } => {
                let mut acc = vec![0.0; nb];
                for (i, &gi) in g.iter().enumerate() {
                    acc[i / block] += gi * dfb(ad[i], bd[i / block]);
                }
                acc
            }
        });
        debug_assert_eq!(na, g.len());
        vec![ga, gb]
    })
    .pipe_ok()
}

// small helper so `binary` can end with `?`-free plumbing
trait PipeOk {
    fn pipe_ok(self) -> Result<Tensor>;
}
impl PipeOk for Tensor {
    fn pipe_ok(self) -> Result<Tensor> {
        Ok(self)
    }
}

/// Unary elementwise op: `f` forward, `df(x, y)` = ∂y/∂x given input x and
/// output y (whichever is cheaper to use).
fn unary(t: &Tensor, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
    let xd = t.data_arc();
    let out: Vec<f64> = xd.iter().map(|&x| f(x)).collect();
    let yd = std::sync::Arc::new(out.clone());
    record(&[t], t.shape().to_vec(), out, move |g, _| {
        vec![Some(
            g.iter()
                .zip(xd.iter().zip(yd.iter()))
                .map(|(&gi, (&x, &y))| gi * df(x, y))
                .collect(),
        )]
    })
}

impl Tensor {
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, "div", |a, b| a / b, |_, b| 1.0 / b, |a, b| -a / (b * b))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        unary(self, |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, |x| x + c, |_, _| 1.0)
    }

    pub fn abs(&self) -> Tensor {
        // subgradient 0 at the kink
        unary(self, f64::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn square(&self) -> Tensor {
        unary(self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn relu(&self) -> Tensor {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, sigmoid_f, |_, y| y * (1.0 - y))
    }

    /// x * sigmoid(x)
    pub fn silu(&self) -> Tensor {
        unary(self, |x| x * sigmoid_f(x), |x, _| {
            let s = sigmoid_f(x);
            s + x * s * (1.0 - s)
        })
    }

    /// ln(1 + e^x), evaluated without overflow for large |x|.
    pub fn softplus(&self) -> Tensor {
        unary(self, softplus_f, |x, _| sigmoid_f(x))
    }

    pub fn exp(&self) -> Tensor {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        record(&[self], vec![1], vec![s], move |g, _| vec![Some(vec![g[0]; n])])
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Contiguous slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::InvalidArg {
                op: "narrow".into(),
                msg: format!("axis {axis} range {start}..{} of shape {:?}", start + len, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let span = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * span + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let total = self.numel();
        record(&[self], out_shape, out, move |g, _| {
            let mut gx = vec![0.0; total];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * span + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            vec![Some(gx)]
        })
        .pipe_ok()
    }

    /// `x @ w^T + b` over the last axis: `x` is `[.., d_in]`, `w` is
    /// `[d_out, d_in]`, `b` (optional) is `[d_out]`.
    pub fn linear(&self, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        let xs = self.shape();
        let ws = w.shape();
        if ws.len() != 2 || *xs.last().unwrap() != ws[1] {
            return Err(Error::ShapeMismatch { op: "linear".into(), lhs: xs.to_vec(), rhs: ws.to_vec() });
        }
        let d_in = ws[1];
        let d_out = ws[0];
        if let Some(bias) = b {
            if bias.numel() != d_out {
                return Err(Error::ShapeMismatch {
                    op: "linear.bias".into(),
                    lhs: vec![d_out],
                    rhs: bias.shape().to_vec(),
                });
            }
        }
        let rows = self.numel() / d_in;
        let xd = self.data_arc();
        let wd = w.data_arc();
        let bd = b.map(|t| t.data_arc());
        let mut out = vec![0.0; rows * d_out];
        for r in 0..rows {
            let xrow = &xd[r * d_in..(r + 1) * d_in];
            let orow = &mut out[r * d_out..(r + 1) * d_out];
            for o in 0..d_out {
                let wrow = &wd[o * d_in..(o + 1) * d_in];
                let mut acc = match &bd {
                    Some(bv) => bv[o],
                    None => 0.0,
                };
                for i in 0..d_in {
                    acc += xrow[i] * wrow[i];
                }
                orow[o] = acc;
            }
        }
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = d_out;
        let n_inputs = if b.is_some() { 3 } else { 2 };
        let inputs: Vec<&Tensor> = match b {
            Some(bias) => vec![self, w, bias],
            None => vec![self, w],
        };
        record(&inputs, out_shape, out, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; rows * d_in];
                for r in 0..rows {
                    let grow = &g[r * d_out..(r + 1) * d_out];
                    let gxrow = &mut gx[r * d_in..(r + 1) * d_in];
                    for o in 0..d_out {
                        let go = grow[o];
                        let wrow = &wd[o * d_in..(o + 1) * d_in];
                        for i in 0..d_in {
                            gxrow[i] += go * wrow[i];
                        }
                    }
                }
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![0.0; d_out * d_in];
                for r in 0..rows {
                    let grow = &g[r * d_out..(r + 1) * d_out];
                    let xrow = &xd[r * d_in..(r + 1) * d_in];
                    for o in 0..d_out {
                        let go = grow[o];
                        let gwrow = &mut gw[o * d_in..(o + 1) * d_in];
                        for i in 0..d_in {
                            gwrow[i] += go * xrow[i];
                        }
                    }
                }
                gw
            });
            let mut contribs = vec![gx, gw];
            if n_inputs == 3 {
                contribs.push(needs[2].then(|| {
                    let mut gb = vec![0.0; d_out];
                    for r in 0..rows {
                        for o in 0..d_out {
                            gb[o] += g[r * d_out + o];
                        }
                    }
                    gb
                }));
            }
            contribs
        })
        .pipe_ok()
    }
}

fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_f(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Concatenate along `axis`; all other dims must match.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::InvalidArg { op: "concat".into(), msg: "no inputs".into() });
    }
    let first = parts[0].shape();
    if axis >= first.len() {
        return Err(Error::InvalidArg { op: "concat".into(), msg: format!("axis {axis} of {first:?}") });
    }
    let mut axis_total = 0;
    for p in parts {
        let s = p.shape();
        let compatible = s.len() == first.len()
            && s.iter().zip(first.iter()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch { op: "concat".into(), lhs: first.to_vec(), rhs: s.to_vec() });
        }
        axis_total += s[axis];
    }
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut out_shape = first.to_vec();
    out_shape[axis] = axis_total;
    let mut out = Vec::with_capacity(outer * axis_total * inner);
    for o in 0..outer {
        for p in parts {
            let span = p.shape()[axis];
            let base = o * span * inner;
            out.extend_from_slice(&p.data()[base..base + span * inner]);
        }
    }
    let spans: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
    record(parts, out_shape, out, move |g, needs| {
        let mut outs: Vec<Option<Vec<f64>>> =
            needs.iter().zip(&sizes).map(|(need, &n)| need.then(|| vec![0.0; n])).collect();
        let row = axis_total * inner;
        for o in 0..outer {
            let mut off = o * row;
            for (k, &span) in spans.iter().enumerate() {
                let chunk = span * inner;
                if let Some(gp) = &mut outs[k] {
                    gp[o * chunk..(o + 1) * chunk].copy_from_slice(&g[off..off + chunk]);
                }
                off += chunk;
            }
        }
        outs
    })
    .pipe_ok()
}

#[cfg(test)]
mod tests {
    use super::super::tape::Tape;
    use super::*;
    use crate::testutil::assert_close;

    #[test]
    fn add_same_shape() {
        let a = Tensor::from_vec(vec![1.0, 2.0], &[2]);
        let b = Tensor::from_vec(vec![10.0, 20.0], &[2]);
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0]);
    }

    #[test]
    fn mul_scalar_broadcast() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[3]);
        let s = Tensor::scalar(2.0);
        assert_eq!(a.mul(&s).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn trailing_broadcast_per_channel() {
        // [1,2,2,2] * [1,2,1,1]: channel 0 scaled by 10, channel 1 by 100
        let a = Tensor::from_vec((1..=8).map(f64::from).collect(), &[1, 2, 2, 2]);
        let b = Tensor::from_vec(vec![10.0, 100.0], &[1, 2, 1, 1]);
        let y = a.mul(&b).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 30.0, 40.0, 500.0, 600.0, 700.0, 800.0]);
    }

    #[test]
    fn trailing_broadcast_grad_reduces() {
        let tape = Tape::new();
        let a = tape.watch(&Tensor::from_vec((1..=8).map(f64::from).collect(), &[1, 2, 2, 2]));
        let b = tape.watch(&Tensor::from_vec(vec![10.0, 100.0], &[1, 2, 1, 1]));
        let y = a.mul(&b).unwrap().sum_all();
        let g = tape.backward(&y).unwrap();
        // d/db_c = sum of channel-c elements of a
        assert_eq!(g.get(&b).unwrap().data(), &[1.0 + 2.0 + 3.0 + 4.0, 5.0 + 6.0 + 7.0 + 8.0]);
        assert_eq!(g.get(&a).unwrap().data(), &[10.0; 4].iter().chain([100.0; 4].iter()).copied().collect::<Vec<_>>()[..]);
    }

    #[test]
    fn mismatched_shapes_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn div_grad() {
        let tape = Tape::new();
        let a = tape.watch(&Tensor::scalar(6.0));
        let b = tape.watch(&Tensor::scalar(2.0));
        let y = a.div(&b).unwrap();
        let g = tape.backward(&y).unwrap();
        assert_close(g.get(&a).unwrap().data()[0], 0.5, 1e-12);
        assert_close(g.get(&b).unwrap().data()[0], -6.0 / 4.0, 1e-12);
    }

    #[test]
    fn activations_match_reference_points() {
        let x = Tensor::from_vec(vec![-2.0, 0.0, 3.0], &[3]);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 3.0]);
        let s = x.sigmoid();
        assert_close(s.data()[1], 0.5, 1e-15);
        let sp = x.softplus();
        assert_close(sp.data()[1], (2.0f64).ln(), 1e-15);
        // softplus stays finite and accurate for large inputs
        let big = Tensor::from_vec(vec![800.0, -800.0], &[2]);
        let spb = big.softplus();
        assert_close(spb.data()[0], 800.0, 1e-9);
        assert!(spb.data()[1].abs() < 1e-300);
    }

    #[test]
    fn silu_grad_matches_formula() {
        let tape = Tape::new();
        let x = tape.watch(&Tensor::scalar(1.3));
        let y = x.silu();
        let g = tape.backward(&y).unwrap();
        let s = 1.0 / (1.0 + (-1.3f64).exp());
        assert_close(g.get(&x).unwrap().data()[0], s + 1.3 * s * (1.0 - s), 1e-12);
    }

    #[test]
    fn narrow_and_grad_scatter() {
        let tape = Tape::new();
        let x = tape.watch(&Tensor::from_vec((0..12).map(|v| v as f64).collect(), &[3, 4]));
        let y = x.narrow(1, 1, 2).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 5.0, 6.0, 9.0, 10.0]);
        let s = y.sum_all();
        let g = tape.backward(&s).unwrap();
        assert_eq!(
            g.get(&x).unwrap().data(),
            &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]
        );
    }

    #[test]
    fn concat_splits_grads() {
        let tape = Tape::new();
        let a = tape.watch(&Tensor::from_vec(vec![1.0, 2.0], &[1, 2]));
        let b = tape.watch(&Tensor::from_vec(vec![3.0], &[1, 1]));
        let y = concat(&[&a, &b], 1).unwrap();
        assert_eq!(y.shape(), &[1, 3]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
        let s = y.mul(&Tensor::from_vec(vec![10.0, 20.0, 30.0], &[1, 3])).unwrap().sum_all();
        let g = tape.backward(&s).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(g.get(&b).unwrap().data(), &[30.0]);
    }

    #[test]
    fn linear_forward_and_grads() {
        let tape = Tape::new();
        // x: [2,3], w: [2,3], b: [2]
        let x = tape.watch(&Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]));
        let w = tape.watch(&Tensor::from_vec(vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5], &[2, 3]));
        let b = tape.watch(&Tensor::from_vec(vec![10.0, -10.0], &[2]));
        let y = x.linear(&w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[1.0 - 3.0 + 10.0, 3.0 - 10.0, 4.0 - 6.0 + 10.0, 7.5 - 10.0]);
        let s = y.sum_all();
        let g = tape.backward(&s).unwrap();
        // gx row = column sums of w
        assert_eq!(g.get(&x).unwrap().data(), &[1.5, 0.5, -0.5, 1.5, 0.5, -0.5]);
        // gw[o][i] = sum_r x[r][i]
        assert_eq!(g.get(&w).unwrap().data(), &[5.0, 7.0, 9.0, 5.0, 7.0, 9.0]);
        assert_eq!(g.get(&b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn reshape_grad_passthrough() {
        let tape = Tape::new();
        let x = tape.watch(&Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]));
        let y = x.reshape(&[4]).scale(2.0).sum_all();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&x).unwrap().shape(), &[2, 2]);
        assert_eq!(g.get(&x).unwrap().data(), &[2.0; 4]);
    }
}
