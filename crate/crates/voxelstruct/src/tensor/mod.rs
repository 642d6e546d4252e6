//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a plain value: shape, row-major `f64` storage, and an
//! optional handle into the [`Tape`] that recorded it. Recording happens by
//! calling ops on a `Tape`; calling [`Tape::backward`] consumes the tape and
//! returns per-leaf gradient buffers.
//!
//! ```
//! use voxelstruct::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.watch(&Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap().tracked());
//! let y = tape.mul(&x, &x).unwrap();
//! let loss = tape.sum(&y);
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

mod conv;
mod gradcheck;
mod tape;

pub use gradcheck::{gradient_check, GRADCHECK_EPS};
pub(crate) use tape::consistency_search;
pub use tape::{Activation, ConsistencyHit, ConsistencySpec, Gradients, NodeRef, Tape};

use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` values in row-major order.
///
/// Cloning is cheap (the storage is shared); mutation goes through
/// [`Tensor::data_mut`] which copies on write.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    node: Option<NodeRef>,
}

// Equality is by shape and values; tape bookkeeping does not participate.
impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Config(format!(
                "tensor shape {:?} needs {} values, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
            node: None,
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![0.0; n]),
            requires_grad: false,
            node: None,
        }
    }

    /// Tensor filled with a constant.
    pub fn full(shape: Vec<usize>, value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![value; n]),
            requires_grad: false,
            node: None,
        }
    }

    /// Scalar (rank-0 is represented as shape `[1]`).
    pub fn scalar(value: f64) -> Tensor {
        Tensor::full(vec![1], value)
    }

    /// Marks this tensor as wanting a gradient buffer when watched on a tape.
    pub fn tracked(mut self) -> Tensor {
        self.requires_grad = true;
        self
    }

    /// Sets the requires-grad flag explicitly.
    pub fn with_requires_grad(mut self, requires_grad: bool) -> Tensor {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the storage; copies when the storage is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        let v: &mut Vec<f64> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Handle into the tape that recorded this tensor, if any.
    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: NodeRef, tracked: bool) -> Tensor {
        self.node = Some(node);
        self.requires_grad = tracked;
        self
    }

    /// True when every value is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn ensure_finite(data: &[f64], op: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric(format!(
            "non-finite value at index {i} in output of {op}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
        let t = Tensor::from_vec(vec![2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn clone_shares_storage() {
        let t = Tensor::full(vec![4], 2.0);
        let mut u = t.clone();
        u.data_mut()[0] = 9.0;
        assert_eq!(t.data()[0], 2.0);
        assert_eq!(u.data()[0], 9.0);
    }
}
