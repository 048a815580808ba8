//! Dense N-D tensor with reverse-mode autodiff.
//!
//! Storage is a flat row-major `Arc<Vec<f64>>`. Tensors are immutable after
//! creation and cheap to clone. A tensor participates in autodiff when it has
//! been `watch`ed on the thread's active [`tape::Tape`]; ops record themselves
//! on that tape whenever any input is watched.

mod conv;
mod fft;
mod ops;
mod spatial;
pub mod tape;

pub use conv::{conv1d_causal_depthwise, conv2d, Conv2dOpts};
pub use fft::fft2;
pub use ops::concat;
pub use spatial::{pool_global, resize, PoolKind, ResizeMode};

use std::sync::Arc;

/// Position of a tensor's record on a tape. `gen` identifies which tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    pub(crate) gen: u64,
    pub(crate) idx: usize,
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "shape {:?} does not fit {} elements", shape, data.len());
        assert!(shape.iter().all(|&d| d >= 1), "shape dims must be >= 1, got {:?}", shape);
        Tensor { shape: shape.to_vec(), data: Arc::new(data), node: None }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(vec![value; numel], shape)
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(vec![value], &[1])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: Option<NodeId>) -> Tensor {
        self.node = node;
        self
    }

    /// True when this tensor was watched on (or derives from) a tape.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Detached copy: same storage, no tape record.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    /// Same data reinterpreted under a new shape (element count must match).
    /// Differentiable: the gradient is reshaped back.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.numel(), "reshape {:?} -> {:?}", self.shape, shape);
        assert!(shape.iter().all(|&d| d >= 1));
        tape::record(
            &[self],
            shape.to_vec(),
            self.data.as_ref().clone(),
            move |g, _| vec![Some(g.to_vec())],
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor(shape={:?}, grad={})", self.shape, self.node.is_some())?;
        if self.numel() <= 8 {
            write!(f, " {:?}", &self.data[..])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_and_full() {
        let s = Tensor::scalar(3.5);
        assert_eq!(s.shape(), &[1]);
        assert_eq!(s.item(), 3.5);
        let f = Tensor::full(&[2, 3], 1.0);
        assert_eq!(f.numel(), 6);
    }

    #[test]
    #[should_panic]
    fn shape_must_fit_data() {
        let _ = Tensor::from_vec(vec![1.0, 2.0], &[3]);
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let r = t.reshape(&[4]);
        assert_eq!(r.shape(), &[4]);
        assert_eq!(r.data(), t.data());
    }
}
