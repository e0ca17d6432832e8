//! Dense tensors with reverse-mode gradient tracking.
//!
//! The graph is built eagerly: every op allocates a node holding its value,
//! its parents, and a closure that scatters an upstream gradient into the
//! parents. `backward` walks the graph in reverse topological order.
//! Gradients accumulate across backward calls until explicitly zeroed.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NwsError, Result};

#[cfg(feature = "f64")]
pub type Float = f64;
#[cfg(not(feature = "f64"))]
pub type Float = f32;

/// Relative tolerance for finite-difference gradient checks at the crate's
/// precision.
#[cfg(feature = "f64")]
pub const GRAD_CHECK_RTOL: Float = 1e-6;
#[cfg(not(feature = "f64"))]
pub const GRAD_CHECK_RTOL: Float = 1e-3;

type BackwardFn = Box<dyn Fn(&[Float])>;

pub(crate) struct Inner {
    pub shape: Vec<usize>,
    pub data: Vec<Float>,
    pub grad: Option<Vec<Float>>,
    pub requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<RefCell<Inner>>);

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Float>, requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(NwsError::dim(
                "Tensor::new",
                format!("{} elements for shape {:?}", numel, shape),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor(Rc::new(RefCell::new(Inner {
            shape,
            data,
            grad: None,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))))
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel], requires_grad).unwrap()
    }

    pub fn scalar(value: Float) -> Tensor {
        Tensor::new(vec![], vec![value], false).unwrap()
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn<R: Rng>(shape: Vec<usize>, std: Float, rng: &mut R, requires_grad: bool) -> Tensor {
        let normal = Normal::new(0.0f64, std as f64).unwrap();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| normal.sample(rng) as Float).collect();
        Tensor::new(shape, data, requires_grad).unwrap()
    }

    /// Internal constructor for op results.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<Float>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Tensor(Rc::new(RefCell::new(Inner {
            shape,
            data,
            grad: None,
            requires_grad,
            parents,
            backward: if requires_grad { Some(backward) } else { None },
        })))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    pub fn data(&self) -> Vec<Float> {
        self.0.borrow().data.clone()
    }

    pub fn item(&self) -> Float {
        let inner = self.0.borrow();
        debug_assert_eq!(inner.data.len(), 1);
        inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<Float>> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    /// Overwrites the stored values. Shape must be unchanged; the graph edge
    /// history of this node is not touched (use on leaves only).
    pub fn set_data(&self, data: Vec<Float>) -> Result<()> {
        let mut inner = self.0.borrow_mut();
        if data.len() != inner.data.len() {
            return Err(NwsError::dim(
                "Tensor::set_data",
                format!("{}", inner.data.len()),
                format!("{}", data.len()),
            ));
        }
        inner.data = data;
        Ok(())
    }

    /// In-place SGD-style update on a leaf: data -= step.
    pub(crate) fn apply_step(&self, step: &[Float]) {
        let mut inner = self.0.borrow_mut();
        for (d, s) in inner.data.iter_mut().zip(step) {
            *d -= *s;
        }
    }

    pub(crate) fn accumulate_grad(&self, delta: &[Float]) {
        let mut inner = self.0.borrow_mut();
        let n = inner.data.len();
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d;
        }
    }

    /// Copy of the values with no graph history.
    pub fn detached(&self) -> Tensor {
        let inner = self.0.borrow();
        Tensor::new(inner.shape.clone(), inner.data.clone(), false).unwrap()
    }

    fn ptr(&self) -> *const Inner {
        self.0.as_ptr() as *const Inner
    }

    /// Reverse-mode backward from a scalar. Populates grads of every
    /// requires_grad leaf reachable from `self`; grads accumulate across
    /// calls until `zero_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(NwsError::InvalidInput(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Iterative post-order DFS over parents.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.ptr()) {
                continue;
            }
            stack.push((node.clone(), true));
            let parents = node.0.borrow().parents.clone();
            for p in parents {
                if p.requires_grad() && !visited.contains(&p.ptr()) {
                    stack.push((p, false));
                }
            }
        }
        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let (grad, has_fn) = {
                let inner = node.0.borrow();
                (inner.grad.clone(), inner.backward.is_some())
            };
            if !has_fn {
                continue;
            }
            let grad = match grad {
                Some(g) => g,
                None => continue,
            };
            let inner = node.0.borrow();
            (inner.backward.as_ref().unwrap())(&grad);
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.0.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5], false).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let w = Tensor::new(vec![2, 3], vec![1.0; 6], true).unwrap();
        let loss = ops::sum(&w);
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let w = Tensor::new(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
        let sq = ops::mul(&w, &w);
        let loss = ops::sum(&sq);
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let w = Tensor::new(vec![2], vec![1.0, 2.0], true).unwrap();
        assert!(w.backward().is_err());
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let w = Tensor::new(vec![2], vec![1.0, 2.0], true).unwrap();
        ops::sum(&w).backward().unwrap();
        ops::sum(&w).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
        w.zero_grad();
        ops::sum(&w).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0]);
    }
}
