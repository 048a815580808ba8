//! Numeric comparison and finite-difference helpers shared by the unit and
//! integration test suites.

use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!(
        (a - b).abs() <= tol,
        "values differ: {a} vs {b} (|diff|={}, tol={tol})",
        (a - b).abs()
    );
}

pub fn assert_slices_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch: {} vs {}", a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "slices differ at {i}: {x} vs {y} (|diff|={}, tol={tol})",
            (x - y).abs()
        );
    }
}

/// Relative error with an absolute floor, symmetric in its arguments.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central-difference partial derivative of `f` w.r.t. element `i` of `x`.
pub fn fd_partial(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, i: usize, eps: f64) -> f64 {
    let mut plus = x.data().to_vec();
    let mut minus = plus.clone();
    plus[i] += eps;
    minus[i] -= eps;
    let fp = f(&Tensor::from_vec(plus, x.shape()));
    let fm = f(&Tensor::from_vec(minus, x.shape()));
    (fp - fm) / (2.0 * eps)
}

/// Compare the tape gradient of `f` at `x` against central differences on
/// the element subset `indices` (all elements when empty). `f` must build a
/// scalar loss from its (already watched, when a tape is active) argument.
///
/// Returns the worst relative error seen.
pub fn gradcheck_subset(
    f: &dyn Fn(&Tensor) -> Tensor,
    x: &Tensor,
    indices: &[usize],
    eps: f64,
    floor: f64,
) -> f64 {
    let tape = Tape::new();
    let xw = tape.watch(x);
    let loss = f(&xw);
    let grads = tape.backward(&loss).expect("backward failed in gradcheck");
    let g = grads.get(&xw).expect("no gradient for checked input");
    drop(tape);

    let eval = |t: &Tensor| f(t).item();
    let all: Vec<usize>;
    let idx: &[usize] = if indices.is_empty() {
        all = (0..x.numel()).collect();
        &all
    } else {
        indices
    };
    let mut worst = 0.0f64;
    for &i in idx {
        let fd = fd_partial(&eval, x, i, eps);
        let ad = g.data()[i];
        worst = worst.max(rel_err(ad, fd, floor));
    }
    worst
}

/// Deterministic index sample: roughly `count` evenly spaced positions.
pub fn sample_indices(numel: usize, count: usize) -> Vec<usize> {
    if numel <= count {
        return (0..numel).collect();
    }
    let step = numel / count;
    (0..count).map(|k| k * step + step / 2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_matches_analytic_on_square() {
        let x = Tensor::from_vec(vec![1.5, -2.0, 0.3], &[3]);
        let f = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
        let d0 = fd_partial(&f, &x, 0, 1e-5);
        assert_close(d0, 3.0, 1e-8);
    }

    #[test]
    fn gradcheck_passes_for_composite() {
        let x = Tensor::from_vec(vec![0.4, -1.1, 2.2, -0.7], &[4]);
        let worst = gradcheck_subset(
            &|t: &Tensor| t.silu().mul(t).unwrap().sum_all(),
            &x,
            &[],
            1e-5,
            1e-6,
        );
        assert!(worst < 1e-7, "worst rel err {worst}");
    }
}
