//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record a node pointing back at their
//! inputs; [`Tensor::backward`] walks that graph once in reverse topological
//! order and accumulates gradients into the leaves.

mod conv;
mod gemm;
mod nn;
mod ops;

pub use conv::{conv2d, conv3d, conv_output_extent, ConvSpec};
pub use nn::{
    batchnorm, dropout, gap2d_spatial, gap3d, linear, softmax_cross_entropy, BatchNormStats,
};
pub use ops::{add, broadcast_shape, concat, mul, sub};

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any differentiation graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of a recorded operation.
pub(crate) trait Backward: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient buffer per input, `None` for inputs that do not
    /// require a gradient. `out` is the forward output, `grad` its gradient.
    fn backward(&self, inputs: &[Tensor], out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    op: Box<dyn Backward>,
    inputs: Vec<Tensor>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    node: Option<Node>,
    grad: Mutex<Option<Vec<f64>>>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Config(format!(
            "tensor shape {shape:?} has a zero extent on axis {axis}"
        )));
    }
    if numel(shape) != len {
        return Err(Error::Config(format!(
            "tensor shape {shape:?} needs {} elements, got {len}",
            numel(shape)
        )));
    }
    Ok(())
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                node,
                grad: Mutex::new(None),
            }),
        }
    }

    /// A constant leaf.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// A leaf that accumulates gradients during [`Tensor::backward`].
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::make(shape.to_vec(), data, true, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::make(Vec::new(), vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(shape, vec![value; numel(shape)])
    }

    /// Output of a differentiable operation. The node is only kept when
    /// recording is enabled and some input needs a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[&Tensor],
        op: impl Backward + 'static,
    ) -> Self {
        let requires_grad = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| Node {
            op: Box::new(op),
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
        });
        Self::make(shape, data, requires_grad, node)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.inner.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Usage(format!(
                "item() on a tensor of shape {:?}",
                self.shape()
            ))),
        }
    }

    /// Accumulated gradient, if backward has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.shape().to_vec(), self.to_vec(), false, None)
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op.name())
    }

    /// Reverse-mode sweep from a scalar. Leaves that require gradients get
    /// their contribution added to whatever they already hold.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS: inputs always precede their consumers.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for input in &node.inputs {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.inner.node {
                Some(node) => {
                    let input_grads = node.op.backward(&node.inputs, t.data(), &g);
                    debug_assert_eq!(input_grads.len(), node.inputs.len());
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{}", node.op.name());
                        match grads.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(input.id(), ig);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.inner.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape, self.numel())?;
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            &[self],
            ops::ReshapeBackward,
        ))
    }

    pub fn sigmoid(&self) -> Tensor {
        ops::sigmoid(self)
    }

    pub fn relu(&self) -> Tensor {
        ops::relu(self)
    }

    /// `scale * x + shift` elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        ops::affine(self, scale, shift)
    }

    pub fn sum(&self) -> Tensor {
        ops::sum_all(self)
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        ops::sum_all(self).affine(1.0 / n, 0.0)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_must_agree() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(Error::Config(_))
        ));
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = w.affine(2.0, 0.0);
        assert!(matches!(y.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn grad_of_weighted_sum_is_input() {
        let x = Tensor::new(&[3], vec![1.5, -2.0, 4.0]).unwrap();
        let w = Tensor::parameter(&[3], vec![0.3, 0.1, -0.7]).unwrap();
        let loss = mul(&w, &x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), x.to_vec());
    }

    #[test]
    fn shared_input_sums_both_paths() {
        let w = Tensor::parameter(&[2], vec![0.5, -1.0]).unwrap();
        let a = w.affine(3.0, 0.0).sum();
        let b = mul(&w, &w).unwrap().sum();

        a.backward().unwrap();
        let ga = w.grad().unwrap();
        w.zero_grad();
        b.backward().unwrap();
        let gb = w.grad().unwrap();
        w.zero_grad();

        add(&a, &b).unwrap().backward().unwrap();
        let both = w.grad().unwrap();
        for i in 0..2 {
            assert_eq!(both[i], ga[i] + gb[i]);
        }
    }

    #[test]
    fn no_grad_skips_recording() {
        let w = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| w.affine(2.0, 1.0));
        assert!(!y.requires_grad());
        assert!(y.op_name().is_none());
        assert!(w.affine(2.0, 1.0).requires_grad());
    }

    #[test]
    fn diamond_graph_visits_each_node_once() {
        // y = (2w) * (2w); dy/dw = 8w
        let w = Tensor::parameter(&[], vec![1.5]).unwrap();
        let h = w.affine(2.0, 0.0);
        let y = mul(&h, &h).unwrap();
        y.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![12.0]);
    }
}
