//! Wengert-list tape for reverse-mode differentiation.
//!
//! One tape may be active per thread. Creating a [`Tape`] installs it as the
//! active tape; ops consult the active tape and append a record whenever any
//! input tensor is watched. `backward` replays the list in reverse, summing
//! gradient contributions into per-node buffers. Replay order is the fixed
//! recording order, so repeated backward passes over the same tape produce
//! bitwise-identical gradients.

use super::{NodeId, Tensor};
use crate::error::{Error, Result};
use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Receives the output gradient, returns one contribution per parent
/// (in the order the parents were passed to `record`).
type BackFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Node {
    parents: Vec<usize>,
    len: usize,
    backward: Option<BackFn>,
}

struct TapeInner {
    gen: u64,
    nodes: Vec<Node>,
}

thread_local! {
    static ACTIVE: RefCell<Option<Rc<RefCell<TapeInner>>>> = const { RefCell::new(None) };
}

static NEXT_GEN: AtomicU64 = AtomicU64::new(1);

/// Gradient-recording context. Dropping the tape deactivates it; tensors
/// holding records of a dropped tape can no longer reach `backward`.
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    /// Install a fresh tape as this thread's active tape.
    ///
    /// Panics if a tape is already active: nested tapes are not supported.
    pub fn new() -> Tape {
        let gen = NEXT_GEN.fetch_add(1, Ordering::Relaxed);
        let inner = Rc::new(RefCell::new(TapeInner { gen, nodes: Vec::new() }));
        ACTIVE.with(|a| {
            let mut slot = a.borrow_mut();
            assert!(slot.is_none(), "a tape is already active on this thread");
            *slot = Some(Rc::clone(&inner));
        });
        Tape { inner }
    }

    /// Register a leaf whose gradient should be tracked. Returns a copy of
    /// `t` (same storage) carrying the new record.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        let gen = inner.gen;
        inner.nodes.push(Node { parents: Vec::new(), len: t.numel(), backward: None });
        t.detach().with_node(Some(NodeId { gen, idx }))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node
    /// reached from the loss; leaves that were never watched have none.
    pub fn backward(&self, loss: &Tensor) -> Result<GradMap> {
        let inner = self.inner.borrow();
        let node = match loss.node() {
            Some(n) if n.gen == inner.gen => n,
            _ => return Err(Error::DeadTape),
        };
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss { numel: loss.numel() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
        grads[node.idx] = Some(vec![1.0]);
        for idx in (0..=node.idx).rev() {
            if grads[idx].is_none() {
                continue;
            }
            let n = &inner.nodes[idx];
            let Some(back) = &n.backward else { continue };
            let g = grads[idx].as_ref().unwrap();
            let contribs = back(g);
            debug_assert_eq!(contribs.len(), n.parents.len());
            for (p, c) in n.parents.iter().zip(contribs) {
                let pn = &inner.nodes[*p];
                debug_assert_eq!(c.len(), pn.len, "grad size mismatch for parent node {p}");
                match &mut grads[*p] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&c) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(GradMap {
            gen: inner.gen,
            grads: grads.into_iter().map(|g| g.map(Arc::new)).collect(),
        })
    }

}

impl Drop for Tape {
    fn drop(&mut self) {
        let gen = self.inner.borrow().gen;
        ACTIVE.with(|a| {
            let mut slot = a.borrow_mut();
            if slot.as_ref().map(|i| i.borrow().gen) == Some(gen) {
                *slot = None;
            }
        });
    }
}

/// Gradients produced by one backward sweep, addressed by the tensors they
/// belong to.
pub struct GradMap {
    gen: u64,
    grads: Vec<Option<Arc<Vec<f64>>>>,
}

impl GradMap {
    /// Gradient of the swept loss w.r.t. `t`, shaped like `t`. `None` when
    /// `t` has no record on the swept tape or the loss does not reach it.
    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        let node = t.node()?;
        if node.gen != self.gen {
            return None;
        }
        let data = self.grads.get(node.idx)?.as_ref()?;
        Some(Tensor { shape: t.shape().to_vec(), data: Arc::clone(data), node: None })
    }
}

/// Append an op to the active tape, if any input is watched there.
///
/// `back(grad_out, needs)` must return one `Some(contribution)` per input
/// whose `needs` flag is set (others may be `None`); contributions are flat
/// and sized like the corresponding input.
pub(crate) fn record(
    inputs: &[&Tensor],
    shape: Vec<usize>,
    data: Vec<f64>,
    back: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
) -> Tensor {
    let out = Tensor { shape, data: Arc::new(data), node: None };
    ACTIVE.with(|a| {
        let slot = a.borrow();
        let Some(inner_rc) = slot.as_ref() else { return out };
        let mut inner = inner_rc.borrow_mut();
        let gen = inner.gen;
        let mut needs = vec![false; inputs.len()];
        let mut parents = Vec::new();
        for (i, t) in inputs.iter().enumerate() {
            if let Some(node) = t.node() {
                assert_eq!(node.gen, gen, "input tensor belongs to a different tape");
                needs[i] = true;
                parents.push(node.idx);
            }
        }
        if parents.is_empty() {
            return out;
        }
        let idx = inner.nodes.len();
        let adapter: BackFn = Box::new(move |g: &[f64]| {
            let contribs = back(g, &needs);
            needs
                .iter()
                .zip(contribs)
                .filter(|(need, _)| **need)
                .map(|(_, c)| c.expect("op produced no gradient for a watched input"))
                .collect()
        });
        inner.nodes.push(Node { parents, len: out.numel(), backward: Some(adapter) });
        out.with_node(Some(NodeId { gen, idx }))
    })
}
